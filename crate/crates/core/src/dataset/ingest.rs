//! Ingestion of PromptSpeech-style tables.
//!
//! The expected input is a delimited text table with a header row holding at
//! least `item_name` and `style_prompt`, plus optional `speaker_id`,
//! `speech_ref`, `gender`, `pitch`, `speed`, `volume` columns. LibriTTS
//! utterance names (`<speaker>_<chapter>_<...>`) supply the speaker when no
//! speaker column exists, and `speech_ref` defaults to `<item_name>.wav`.

use std::collections::HashSet;
use std::path::Path;

use super::{DatasetRecord, Gender, Level, Manifest, SplitTag, StyleFactors};
use crate::{Error, Result};

pub fn speaker_from_libritts_id(item: &str) -> &str {
    item.split('_').next().unwrap_or(item)
}

fn parse_level(s: &str) -> Option<Level> {
    match s.trim().to_ascii_lowercase().as_str() {
        "low" => Some(Level::Low),
        "mid" | "normal" | "medium" => Some(Level::Mid),
        "high" => Some(Level::High),
        _ => None,
    }
}

fn parse_gender(s: &str) -> Option<Gender> {
    match s.trim().to_ascii_lowercase().as_str() {
        "male" | "m" => Some(Gender::Male),
        "female" | "f" => Some(Gender::Female),
        _ => None,
    }
}

pub fn load_promptspeech_table(path: &Path, delimiter: u8) -> Result<Manifest> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(false)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let item_col = col("item_name").ok_or_else(|| Error::MissingField {
        path: path.to_path_buf(),
        line: 1,
        field: "item_name",
    })?;
    let prompt_col = col("style_prompt").ok_or_else(|| Error::MissingField {
        path: path.to_path_buf(),
        line: 1,
        field: "style_prompt",
    })?;
    let speaker_col = col("speaker_id");
    let ref_col = col("speech_ref");
    let factor_cols = [col("gender"), col("pitch"), col("speed"), col("volume")];

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row?;
        let field = |c: usize| row.get(c).unwrap_or("").trim().to_string();
        let id = field(item_col);
        let caption = field(prompt_col);
        if id.is_empty() || caption.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: "empty item_name or style_prompt".into(),
            });
        }
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId {
                path: path.to_path_buf(),
                line,
                id,
            });
        }
        let factors = match factor_cols {
            [Some(g), Some(p), Some(s), Some(v)] => {
                let bad = |what: &str, val: String| Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    msg: format!("unknown {what} label `{val}`"),
                };
                Some(StyleFactors {
                    gender: parse_gender(&field(g)).ok_or_else(|| bad("gender", field(g)))?,
                    pitch: parse_level(&field(p)).ok_or_else(|| bad("pitch", field(p)))?,
                    speed: parse_level(&field(s)).ok_or_else(|| bad("speed", field(s)))?,
                    volume: parse_level(&field(v)).ok_or_else(|| bad("volume", field(v)))?,
                })
            }
            _ => None,
        };
        records.push(DatasetRecord {
            speaker_id: speaker_col
                .map(field)
                .unwrap_or_else(|| speaker_from_libritts_id(&id).to_string()),
            speech_ref: ref_col.map(field).unwrap_or_else(|| format!("{id}.wav")),
            id,
            caption,
            factors,
            source_id: None,
        });
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Manifest::new(records, SplitTag::Unsplit)?.with_base_dir(base))
}
