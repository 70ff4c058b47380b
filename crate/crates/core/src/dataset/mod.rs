//! Speech-caption corpora: records, JSON-lines manifests, speaker-disjoint
//! splits, the binary feature container, and the synthetic corpus generator.

pub mod container;
mod ingest;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use ingest::{load_promptspeech_table, speaker_from_libritts_id};
pub use synthetic::{generate_synthetic, write_synthetic, SyntheticCorpus, SyntheticSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Low,
    Mid,
    High,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Low, Level::Mid, Level::High];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StyleFactors {
    pub gender: Gender,
    pub pitch: Level,
    pub speed: Level,
    pub volume: Level,
}

/// One of the four labelled style factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Factor {
    Gender,
    Pitch,
    Speed,
    Volume,
}

impl Factor {
    pub const ALL: [Factor; 4] = [Factor::Gender, Factor::Pitch, Factor::Speed, Factor::Volume];

    pub fn name(self) -> &'static str {
        match self {
            Factor::Gender => "gender",
            Factor::Pitch => "pitch",
            Factor::Speed => "speed",
            Factor::Volume => "volume",
        }
    }

    pub fn num_classes(self) -> usize {
        match self {
            Factor::Gender => 2,
            _ => 3,
        }
    }

    pub fn label(self, f: &StyleFactors) -> usize {
        match self {
            Factor::Gender => f.gender as usize,
            Factor::Pitch => f.pitch.index(),
            Factor::Speed => f.speed.index(),
            Factor::Volume => f.volume.index(),
        }
    }

    /// Caption word used for class `label` of this factor. Words are
    /// distinct across factors so a caption can be checked word by word.
    pub fn word(self, label: usize) -> &'static str {
        const GENDER: [&str; 2] = ["male", "female"];
        const PITCH: [&str; 3] = ["low", "normal", "high"];
        const SPEED: [&str; 3] = ["slow", "moderate", "fast"];
        const VOLUME: [&str; 3] = ["quiet", "medium", "loud"];
        match self {
            Factor::Gender => GENDER[label],
            Factor::Pitch => PITCH[label],
            Factor::Speed => SPEED[label],
            Factor::Volume => VOLUME[label],
        }
    }

    pub fn words(self) -> Vec<&'static str> {
        (0..self.num_classes()).map(|c| self.word(c)).collect()
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub speech_ref: String,
    pub caption: String,
    pub speaker_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factors: Option<StyleFactors>,
    /// Id of the record this one was derived from (rephrased captions).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Dev,
    Test,
    Unsplit,
}

impl FromStr for SplitTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitTag::Train),
            "dev" => Ok(SplitTag::Dev),
            "test" => Ok(SplitTag::Test),
            "unsplit" => Ok(SplitTag::Unsplit),
            other => Err(Error::Config(format!("unknown split tag `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub records: Vec<DatasetRecord>,
    pub split_tag: SplitTag,
    /// Directory that relative `speech_ref`s are resolved against.
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn new(records: Vec<DatasetRecord>, split_tag: SplitTag) -> Result<Self> {
        let mut seen = HashSet::new();
        for (i, r) in records.iter().enumerate() {
            validate_record(r).map_err(|msg| Error::Parse {
                path: PathBuf::from("<memory>"),
                line: i + 1,
                msg,
            })?;
            if !seen.insert(r.id.as_str()) {
                return Err(Error::DuplicateId {
                    path: PathBuf::from("<memory>"),
                    line: i + 1,
                    id: r.id.clone(),
                });
            }
        }
        Ok(Self {
            records,
            split_tag,
            base_dir: PathBuf::from("."),
        })
    }

    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = dir.into();
        self
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn speakers(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.speaker_id.as_str()).collect()
    }

    pub fn resolve(&self, speech_ref: &str) -> PathBuf {
        self.base_dir.join(speech_ref)
    }
}

fn validate_record(r: &DatasetRecord) -> std::result::Result<(), String> {
    if r.id.is_empty() {
        return Err("record id is empty".into());
    }
    if r.caption.trim().is_empty() {
        return Err(format!("record `{}` has an empty caption", r.id));
    }
    if r.speech_ref.is_empty() {
        return Err(format!("record `{}` has an empty speech_ref", r.id));
    }
    Ok(())
}

const REQUIRED: [&str; 4] = ["id", "speech_ref", "caption", "speaker_id"];

/// Reads a JSON-lines manifest. Blank lines are skipped; line numbers in
/// errors are 1-based file lines.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let file = fs::File::open(path)?;
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            msg,
        };
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| parse_err("expected a JSON object".into()))?;
        if let Some(field) = REQUIRED.iter().find(|f| !obj.contains_key(**f)) {
            return Err(Error::MissingField {
                path: path.to_path_buf(),
                line: line_no,
                field,
            });
        }
        let record: DatasetRecord =
            serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?;
        validate_record(&record).map_err(parse_err)?;
        if !seen.insert(record.id.clone()) {
            return Err(Error::DuplicateId {
                path: path.to_path_buf(),
                line: line_no,
                id: record.id,
            });
        }
        records.push(record);
    }
    let split_tag = path
        .file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.parse().ok())
        .unwrap_or(SplitTag::Unsplit);
    let base_dir = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    Ok(Manifest {
        records,
        split_tag,
        base_dir,
    })
}

pub fn save_manifest(m: &Manifest, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for r in &m.records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Speaker-disjoint split. Speakers are shuffled with `seed` and assigned
/// greedily until each split reaches its share of records; every split with
/// a positive fraction receives at least one speaker.
pub fn split_manifest(
    m: &Manifest,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Manifest, Manifest, Manifest)> {
    let (ft, fd, fs_) = fractions;
    if [ft, fd, fs_].iter().any(|f| !(0.0..=1.0).contains(f)) || ((ft + fd + fs_) - 1.0).abs() > 1e-6
    {
        return Err(Error::Config(format!(
            "split fractions {fractions:?} must be in [0, 1] and sum to 1"
        )));
    }
    let speakers: Vec<&str> = m.speakers().into_iter().collect();
    if speakers.len() < 3 {
        return Err(Error::TooFewSpeakers {
            need: 3,
            found: speakers.len(),
        });
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &m.records {
        *counts.entry(r.speaker_id.as_str()).or_default() += 1;
    }
    let mut order = speakers;
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let n = m.len() as f64;
    let targets = [ft * n, fd * n];
    let reserve_after = [(fd > 0.0) as usize + (fs_ > 0.0) as usize, (fs_ > 0.0) as usize];
    let mut assign: BTreeMap<&str, usize> = BTreeMap::new();
    let mut split = 0usize;
    let mut filled = [0usize; 3];
    for (i, spk) in order.iter().enumerate() {
        let remaining = order.len() - i;
        while split < 2 {
            let share = [ft, fd][split];
            let full = filled[split] as f64 >= targets[split] && (filled[split] > 0 || share == 0.0);
            if full || remaining <= reserve_after[split] {
                split += 1;
            } else {
                break;
            }
        }
        assign.insert(spk, split);
        filled[split] += counts[spk];
    }
    let mut parts = [Vec::new(), Vec::new(), Vec::new()];
    for r in &m.records {
        parts[assign[r.speaker_id.as_str()]].push(r.clone());
    }
    let [train, dev, test] = parts;
    let make = |records, split_tag| Manifest {
        records,
        split_tag,
        base_dir: m.base_dir.clone(),
    };
    Ok((
        make(train, SplitTag::Train),
        make(dev, SplitTag::Dev),
        make(test, SplitTag::Test),
    ))
}

/// Split by published speaker lists. Records whose speaker is in no list
/// are an error.
pub fn split_by_speaker_lists(
    m: &Manifest,
    lists: [&HashSet<String>; 3],
) -> Result<(Manifest, Manifest, Manifest)> {
    for (i, a) in lists.iter().enumerate() {
        for b in &lists[i + 1..] {
            if let Some(s) = a.intersection(b).next() {
                return Err(Error::Config(format!("speaker `{s}` appears in two split lists")));
            }
        }
    }
    let mut parts = [Vec::new(), Vec::new(), Vec::new()];
    for r in &m.records {
        let idx = lists
            .iter()
            .position(|l| l.contains(&r.speaker_id))
            .ok_or_else(|| Error::Config(format!("speaker `{}` is in no split list", r.speaker_id)))?;
        parts[idx].push(r.clone());
    }
    let [train, dev, test] = parts;
    let make = |records, split_tag| Manifest {
        records,
        split_tag,
        base_dir: m.base_dir.clone(),
    };
    Ok((
        make(train, SplitTag::Train),
        make(dev, SplitTag::Dev),
        make(test, SplitTag::Test),
    ))
}
