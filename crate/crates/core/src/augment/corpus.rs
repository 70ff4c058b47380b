use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::client::{parse_candidates, LlmClient, LlmRequest};
use super::gate::{select_rephrase, DEFAULT_THRESHOLD};
use super::prompt::build_prompt;
use super::scorer::SimilarityScorer;
use crate::dataset::{DatasetRecord, Manifest};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentOptions {
    pub threshold: f64,
    pub n_candidates: usize,
    pub max_tokens: usize,
    pub temperature: f64,
    /// Requests in flight at once.
    pub parallelism: usize,
}

impl Default for AugmentOptions {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            n_candidates: 5,
            max_tokens: 64,
            temperature: 0.7,
            parallelism: 4,
        }
    }
}

/// One line of the journal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub record_id: String,
    pub candidates: Vec<String>,
    pub scores: Vec<f64>,
    pub chosen: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct AugmentOutcome {
    pub manifest: Manifest,
    pub accepted: usize,
    pub rejected: usize,
    /// Records whose request or scoring failed; they are retried on resume.
    pub failed: Vec<String>,
    /// Records answered from the journal without a new request.
    pub replayed: usize,
}

/// Id given to the paraphrase of record `id`.
pub fn augmented_id(id: &str) -> String {
    format!("{id}#rephrase")
}

/// Reads a journal; a torn final line is ignored, later entries for the same
/// record replace earlier ones.
pub fn read_journal(path: &Path) -> Result<HashMap<String, JournalEntry>> {
    let mut out = HashMap::new();
    if !path.exists() {
        return Ok(out);
    }
    let lines: Vec<String> = BufReader::new(File::open(path)?).lines().collect::<std::io::Result<_>>()?;
    let last = lines.len();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<JournalEntry>(line) {
            Ok(e) => {
                out.insert(e.record_id.clone(), e);
            }
            Err(e) if i + 1 == last => warn!("ignoring torn journal tail: {e}"),
            Err(e) => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

fn process(
    record: &DatasetRecord,
    client: &dyn LlmClient,
    scorer: &dyn SimilarityScorer,
    opts: &AugmentOptions,
) -> JournalEntry {
    let attempt = || -> Result<JournalEntry> {
        let request = LlmRequest {
            prompt: build_prompt(&record.caption)?,
            n: opts.n_candidates,
            max_tokens: opts.max_tokens,
            temperature: opts.temperature,
        };
        let mut candidates = parse_candidates(&client.complete(&request)?);
        candidates.truncate(opts.n_candidates);
        if candidates.is_empty() {
            return Err(Error::Client("no usable candidates in the reply".into()));
        }
        let d = select_rephrase(&record.caption, &candidates, scorer, opts.threshold)?;
        Ok(JournalEntry {
            record_id: record.id.clone(),
            candidates,
            scores: d.scores,
            chosen: d.chosen,
            error: None,
        })
    };
    attempt().unwrap_or_else(|e| JournalEntry {
        record_id: record.id.clone(),
        candidates: vec![],
        scores: vec![],
        chosen: None,
        error: Some(e.to_string()),
    })
}

/// Adds one rephrased caption per record whose best candidate passes the
/// gate. Paraphrases follow the originals, in original order, and share the
/// source's speech, speaker and factors.
///
/// With a journal, every finished record is appended as soon as it is done
/// and finished records are not requested again on a later run. Setting
/// `cancel` stops issuing requests; the call then returns
/// [`Error::Interrupted`] after journaling what was in flight.
pub fn augment_corpus(
    m: &Manifest,
    client: &dyn LlmClient,
    scorer: &dyn SimilarityScorer,
    opts: &AugmentOptions,
    journal: Option<&Path>,
    cancel: Option<Arc<AtomicBool>>,
) -> Result<AugmentOutcome> {
    if m.is_empty() {
        return Err(Error::Precondition("empty manifest".into()));
    }
    if opts.n_candidates == 0 || opts.parallelism == 0 {
        return Err(Error::Config("n_candidates and parallelism must be positive".into()));
    }
    let mut done: HashMap<String, JournalEntry> = match journal {
        Some(p) => read_journal(p)?,
        None => HashMap::new(),
    };
    done.retain(|_, e| e.error.is_none());
    let replayed = m.records.iter().filter(|r| done.contains_key(&r.id)).count();
    let pending: Vec<&DatasetRecord> = m.records.iter().filter(|r| !done.contains_key(&r.id)).collect();
    info!("augmenting {} records ({replayed} from the journal)", pending.len());

    let mut writer = match journal {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            drop_torn_tail(p)?;
            Some(OpenOptions::new().create(true).append(true).open(p)?)
        }
        None => None,
    };
    let cancel = cancel.unwrap_or_default();
    let next = AtomicUsize::new(0);
    let mut failures = Vec::new();
    let mut io_error: Option<std::io::Error> = None;
    std::thread::scope(|s| {
        let (tx, rx) = mpsc::channel::<JournalEntry>();
        for _ in 0..opts.parallelism.min(pending.len().max(1)) {
            let tx = tx.clone();
            let (next, cancel, pending) = (&next, &cancel, &pending);
            s.spawn(move || loop {
                if cancel.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(r) = pending.get(i) else { break };
                if tx.send(process(r, client, scorer, opts)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for entry in rx {
            if let Some(w) = writer.as_mut() {
                let line = serde_json::to_string(&entry).expect("journal entries serialize");
                if let Err(e) = writeln!(w, "{line}").and_then(|_| w.flush()) {
                    io_error.get_or_insert(e);
                    cancel.store(true, Ordering::SeqCst);
                }
            }
            match &entry.error {
                Some(e) => {
                    warn!("record {}: {e}", entry.record_id);
                    failures.push(entry.record_id.clone());
                }
                None => {
                    done.insert(entry.record_id.clone(), entry);
                }
            }
        }
    });
    if let Some(e) = io_error {
        return Err(e.into());
    }
    if cancel.load(Ordering::SeqCst) && m.records.iter().any(|r| !done.contains_key(&r.id) && !failures.contains(&r.id)) {
        return Err(Error::Interrupted);
    }

    let mut records = m.records.clone();
    let (mut accepted, mut rejected) = (0, 0);
    for r in &m.records {
        let Some(e) = done.get(&r.id) else { continue };
        match &e.chosen {
            Some(text) => {
                accepted += 1;
                records.push(DatasetRecord {
                    id: augmented_id(&r.id),
                    caption: text.clone(),
                    source_id: Some(r.id.clone()),
                    ..r.clone()
                });
            }
            None => rejected += 1,
        }
    }
    let manifest = Manifest::new(records, m.split_tag)?.with_base_dir(m.base_dir.clone());
    failures.sort();
    Ok(AugmentOutcome {
        manifest,
        accepted,
        rejected,
        failed: failures,
        replayed,
    })
}

/// Cuts an unterminated final line so appended entries start on a fresh line.
fn drop_torn_tail(path: &Path) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let bytes = std::fs::read(path)?;
    if bytes.last().is_some_and(|b| *b != b'\n') {
        let keep = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
        OpenOptions::new().write(true).open(path)?.set_len(keep as u64)?;
    }
    Ok(())
}

/// Default journal location next to an output manifest.
pub fn journal_path_for(output: &Path) -> PathBuf {
    let mut p = output.as_os_str().to_owned();
    p.push(".journal.jsonl");
    PathBuf::from(p)
}
