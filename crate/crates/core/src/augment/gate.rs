use serde::{Deserialize, Serialize};

use super::scorer::SimilarityScorer;
use crate::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.80;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateDecision {
    pub chosen: Option<String>,
    pub chosen_index: Option<usize>,
    pub scores: Vec<f64>,
    pub threshold: f64,
}

/// Scores every candidate against `original` and keeps the best one if its
/// score is strictly above `threshold`. Ties go to the earliest candidate.
pub fn select_rephrase(
    original: &str,
    candidates: &[String],
    scorer: &dyn SimilarityScorer,
    threshold: f64,
) -> Result<GateDecision> {
    if candidates.is_empty() {
        return Err(Error::Precondition("no candidates to select from".into()));
    }
    let scores = scorer.score_all(candidates, original)?;
    if scores.len() != candidates.len() {
        return Err(Error::Scorer {
            index: scores.len().min(candidates.len()),
            msg: "scorer returned the wrong number of scores".into(),
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Scorer {
            index: i,
            msg: "non-finite score".into(),
        });
    }
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    let pass = scores[best] > threshold;
    Ok(GateDecision {
        chosen: pass.then(|| candidates[best].clone()),
        chosen_index: pass.then_some(best),
        scores,
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Scores are parsed from the candidate text.
    pub(crate) struct Scripted;

    impl SimilarityScorer for Scripted {
        fn score(&self, candidate: &str, _: &str) -> Result<f64> {
            candidate.parse::<f64>().map_err(|e| Error::External(e.to_string()))
        }
    }

    fn cands(s: &[f64]) -> Vec<String> {
        s.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn picks_argmax_above_gate() {
        let d = select_rephrase("o", &cands(&[0.85, 0.90, 0.70, 0.81, 0.79]), &Scripted, 0.80).unwrap();
        assert_eq!(d.chosen_index, Some(1));
        assert_eq!(d.chosen.as_deref(), Some("0.9"));
    }

    #[test]
    fn gate_is_strict() {
        let d = select_rephrase("o", &cands(&[0.80, 0.5, 0.8]), &Scripted, 0.80).unwrap();
        assert_eq!(d.chosen, None);
    }

    #[test]
    fn first_index_wins_ties() {
        let d = select_rephrase("o", &cands(&[0.9, 0.9, 0.1, 0.1, 0.1]), &Scripted, 0.80).unwrap();
        assert_eq!(d.chosen_index, Some(0));
    }

    #[test]
    fn scorer_errors_carry_the_index() {
        let c = vec!["0.9".to_string(), "oops".to_string()];
        assert!(matches!(
            select_rephrase("o", &c, &Scripted, 0.8),
            Err(Error::Scorer { index: 1, .. })
        ));
        assert!(select_rephrase("o", &[], &Scripted, 0.8).is_err());
    }
}
