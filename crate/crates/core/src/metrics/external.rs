use serde_json::json;

use super::EvalPair;
use crate::text::detokenize;
use crate::transport::JsonTransport;
use crate::{Error, Result};

/// A metric computed outside this crate, one score per pair.
pub trait ExternalScorer: Send + Sync {
    fn name(&self) -> &str;
    fn score(&self, pairs: &[EvalPair]) -> Result<Vec<f64>>;
}

/// Sends `{"metric", "pairs": [{"id", "candidate", "references"}]}` and
/// expects `{"scores": [..]}` back, in pair order.
pub struct TransportScorer {
    name: String,
    transport: JsonTransport,
}

impl TransportScorer {
    pub fn new(name: impl Into<String>, transport: JsonTransport) -> Self {
        Self {
            name: name.into(),
            transport,
        }
    }
}

impl ExternalScorer for TransportScorer {
    fn name(&self) -> &str {
        &self.name
    }

    fn score(&self, pairs: &[EvalPair]) -> Result<Vec<f64>> {
        let body = json!({
            "metric": self.name,
            "pairs": pairs
                .iter()
                .map(|p| json!({
                    "id": p.sample_id,
                    "candidate": detokenize(&p.candidate),
                    "references": p.references.iter().map(|r| detokenize(r)).collect::<Vec<_>>(),
                }))
                .collect::<Vec<_>>(),
        });
        let reply = self.transport.call(&body)?;
        let scores: Vec<f64> = serde_json::from_value(
            reply
                .get("scores")
                .cloned()
                .ok_or_else(|| Error::External("reply lacks `scores`".into()))?,
        )?;
        if scores.len() != pairs.len() {
            return Err(Error::External(format!(
                "{} scores for {} pairs",
                scores.len(),
                pairs.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::External("non-finite score".into()));
        }
        Ok(scores)
    }
}
