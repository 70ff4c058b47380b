//! Caption metrics: BLEU@4, ROUGE-L, a stem-matching METEOR variant,
//! CIDEr-D, distinct-n, and adapters for externally computed scores.

mod bleu;
mod cider;
mod distinct;
mod external;
mod meteor;
mod ngram;
mod rouge;

use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::text::{tokenize, TOKENIZER_ID};
use crate::{Error, Result};

pub use bleu::{bleu4, bleu_counts, BleuCounts, BLEU_MAX_N};
pub use cider::{cider_d, cider_d_samples, CIDER_SIGMA};
pub use distinct::distinct_n;
pub use external::{ExternalScorer, TransportScorer};
pub use meteor::{align, chunks, meteor_lite, meteor_lite_sample, METEOR_ALPHA, METEOR_BETA, METEOR_GAMMA};
pub use rouge::{rouge_l, rouge_l_sample, ROUGE_BETA};

pub const BLEU: &str = "B@4";
pub const ROUGE: &str = "R";
pub const METEOR: &str = "M-lite";
pub const CIDER: &str = "C";
pub const DISTINCT_1: &str = "distinct-1";
pub const DISTINCT_2: &str = "distinct-2";

/// One generated caption and its references, tokenized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPair {
    pub sample_id: String,
    pub candidate: Vec<String>,
    pub references: Vec<Vec<String>>,
}

impl EvalPair {
    pub fn new(sample_id: impl Into<String>, candidate: Vec<String>, references: Vec<Vec<String>>) -> Result<Self> {
        if references.is_empty() {
            return Err(Error::Precondition("a pair needs at least one reference".into()));
        }
        Ok(Self {
            sample_id: sample_id.into(),
            candidate,
            references,
        })
    }

    pub fn from_text<S: AsRef<str>>(sample_id: impl Into<String>, candidate: &str, references: &[S]) -> Result<Self> {
        Self::new(
            sample_id,
            tokenize(candidate),
            references.iter().map(|r| tokenize(r.as_ref())).collect(),
        )
    }
}

/// Settings that determine the scores, embedded in every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub tokenizer: String,
    pub bleu_max_n: usize,
    pub bleu_smoothing: String,
    pub rouge_beta: f64,
    pub meteor_variant: String,
    pub meteor_alpha: f64,
    pub meteor_beta: f64,
    pub meteor_gamma: f64,
    pub cider_sigma: f64,
    pub cider_idf: String,
    pub external: Vec<String>,
}

impl MetricConfig {
    fn new(external: Vec<String>) -> Self {
        Self {
            tokenizer: TOKENIZER_ID.to_string(),
            bleu_max_n: BLEU_MAX_N,
            bleu_smoothing: "none".into(),
            rouge_beta: ROUGE_BETA,
            meteor_variant: "exact+snowball-english-stem; synonym stage omitted".into(),
            meteor_alpha: METEOR_ALPHA,
            meteor_beta: METEOR_BETA,
            meteor_gamma: METEOR_GAMMA,
            cider_sigma: CIDER_SIGMA,
            cider_idf: "references of the evaluated set".into(),
            external,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub corpus_scores: BTreeMap<String, f64>,
    /// Sample id to per-sample metric values (ROUGE-L, METEOR-lite,
    /// CIDEr-D and any external scores).
    pub per_sample: BTreeMap<String, BTreeMap<String, f64>>,
    pub config: MetricConfig,
    pub config_digest: String,
    pub notes: Vec<String>,
}

impl MetricReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Per-sample values of one metric.
    pub fn column(&self, metric: &str) -> BTreeMap<String, f64> {
        self.per_sample
            .iter()
            .filter_map(|(id, m)| m.get(metric).map(|v| (id.clone(), *v)))
            .collect()
    }
}

pub(crate) fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Scores `pairs` with every native metric plus `external` scorers.
///
/// A failing external scorer is logged and left out of the report.
pub fn evaluate_corpus(pairs: &[EvalPair], external: &[&dyn ExternalScorer]) -> Result<MetricReport> {
    if pairs.is_empty() {
        return Err(Error::Precondition("no pairs to evaluate".into()));
    }
    let mut ids = std::collections::HashSet::new();
    for p in pairs {
        if p.references.is_empty() {
            return Err(Error::Precondition(format!("pair `{}` has no references", p.sample_id)));
        }
        if !ids.insert(p.sample_id.as_str()) {
            return Err(Error::Precondition(format!("duplicate sample id `{}`", p.sample_id)));
        }
    }
    let mut corpus = BTreeMap::new();
    let mut per_sample: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    let mut notes = vec!["METEOR-lite omits the synonym matching stage".to_string()];

    corpus.insert(BLEU.to_string(), bleu4(pairs));
    let ciders = cider_d_samples(pairs);
    for (p, c) in pairs.iter().zip(&ciders) {
        let row = per_sample.entry(p.sample_id.clone()).or_default();
        row.insert(ROUGE.to_string(), rouge_l_sample(&p.candidate, &p.references));
        row.insert(METEOR.to_string(), meteor_lite_sample(&p.candidate, &p.references));
        row.insert(CIDER.to_string(), *c);
    }
    for m in [ROUGE, METEOR, CIDER] {
        corpus.insert(m.to_string(), mean(per_sample.values().map(|r| r[m])));
    }
    let cands: Vec<&[String]> = pairs.iter().map(|p| p.candidate.as_slice()).collect();
    for (name, n) in [(DISTINCT_1, 1), (DISTINCT_2, 2)] {
        match distinct_n(&cands, n) {
            Ok(v) => {
                corpus.insert(name.to_string(), v);
            }
            Err(e) => notes.push(format!("{name} omitted: {e}")),
        }
    }

    let mut registered = Vec::new();
    for scorer in external {
        match scorer.score(pairs) {
            Ok(scores) => {
                for (p, s) in pairs.iter().zip(&scores) {
                    per_sample
                        .get_mut(&p.sample_id)
                        .expect("row exists")
                        .insert(scorer.name().to_string(), *s);
                }
                corpus.insert(scorer.name().to_string(), mean(scores.into_iter()));
                registered.push(scorer.name().to_string());
            }
            Err(e) => {
                warn!("external scorer {} failed: {e}", scorer.name());
                notes.push(format!("{} omitted: {e}", scorer.name()));
            }
        }
    }
    let config = MetricConfig::new(registered);
    let config_digest = crate::nn::hex(&Sha256::digest(serde_json::to_vec(&config)?));
    Ok(MetricReport {
        corpus_scores: corpus,
        per_sample,
        config,
        config_digest,
        notes,
    })
}

#[cfg(test)]
mod tests;
