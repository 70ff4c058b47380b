use std::collections::HashMap;

use serde_json::json;

use crate::text::tokenize;
use crate::transport::JsonTransport;
use crate::{Error, Result};

/// Semantic similarity between a candidate and a reference sentence.
pub trait SimilarityScorer: Send + Sync {
    fn score(&self, candidate: &str, reference: &str) -> Result<f64>;

    /// One score per candidate; failures carry the candidate index.
    fn score_all(&self, candidates: &[String], reference: &str) -> Result<Vec<f64>> {
        candidates
            .iter()
            .enumerate()
            .map(|(i, c)| {
                self.score(c, reference).map_err(|e| Error::Scorer {
                    index: i,
                    msg: e.to_string(),
                })
            })
            .collect()
    }
}

/// 1.0 for identical token sequences, else 0.0.
pub struct ExactMatchScorer;

impl SimilarityScorer for ExactMatchScorer {
    fn score(&self, candidate: &str, reference: &str) -> Result<f64> {
        Ok(if tokenize(candidate) == tokenize(reference) { 1.0 } else { 0.0 })
    }
}

/// Bag-of-tokens F1.
pub struct TokenF1Scorer;

impl SimilarityScorer for TokenF1Scorer {
    fn score(&self, candidate: &str, reference: &str) -> Result<f64> {
        let (c, r) = (tokenize(candidate), tokenize(reference));
        if c.is_empty() || r.is_empty() {
            return Ok(0.0);
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in &r {
            *counts.entry(t).or_default() += 1;
        }
        let mut overlap = 0usize;
        for t in &c {
            if let Some(n) = counts.get_mut(t.as_str()) {
                if *n > 0 {
                    *n -= 1;
                    overlap += 1;
                }
            }
        }
        if overlap == 0 {
            return Ok(0.0);
        }
        let p = overlap as f64 / c.len() as f64;
        let rc = overlap as f64 / r.len() as f64;
        Ok(2.0 * p * rc / (p + rc))
    }
}

/// Scorer service: sends `{"pairs": [{"candidate", "reference"}]}` and
/// expects `{"scores": [..]}`.
pub struct TransportSimilarity {
    transport: JsonTransport,
}

impl TransportSimilarity {
    pub fn new(transport: JsonTransport) -> Self {
        Self { transport }
    }
}

impl SimilarityScorer for TransportSimilarity {
    fn score(&self, candidate: &str, reference: &str) -> Result<f64> {
        Ok(self.score_all(&[candidate.to_string()], reference)?[0])
    }

    fn score_all(&self, candidates: &[String], reference: &str) -> Result<Vec<f64>> {
        let pairs: Vec<_> = candidates
            .iter()
            .map(|c| json!({ "candidate": c, "reference": reference }))
            .collect();
        let fail = |index: usize, msg: String| Error::Scorer { index, msg };
        let reply = self
            .transport
            .call(&json!({ "pairs": pairs }))
            .map_err(|e| fail(0, e.to_string()))?;
        let scores = reply
            .get("scores")
            .and_then(|s| s.as_array())
            .ok_or_else(|| fail(0, "reply lacks a `scores` array".into()))?;
        if scores.len() != candidates.len() {
            return Err(fail(
                scores.len().min(candidates.len()),
                format!("{} scores for {} candidates", scores.len(), candidates.len()),
            ));
        }
        scores
            .iter()
            .enumerate()
            .map(|(i, s)| s.as_f64().ok_or_else(|| fail(i, "score is not a number".into())))
            .collect()
    }
}
