use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ProbePrediction;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSummary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

/// Samples grouped by how many of the four factors the probe got right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectnessBins {
    /// `k -> [(sample_id, value)]` for every `k` in `0..=4`, in input order.
    pub bins: BTreeMap<usize, Vec<(String, f64)>>,
    /// Present only for non-empty bins.
    pub summary: BTreeMap<usize, BinSummary>,
}

/// Linear-interpolated quantile of sorted values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn summarize(values: &[f64]) -> BinSummary {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    BinSummary {
        count: s.len(),
        mean: s.iter().sum::<f64>() / s.len() as f64,
        median: quantile(&s, 0.5),
        q1: quantile(&s, 0.25),
        q3: quantile(&s, 0.75),
        min: s[0],
        max: s[s.len() - 1],
    }
}

/// Assigns each predicted sample to bin `k` = number of correct factors and
/// attaches its metric value. Every prediction must have a value; values for
/// samples without a prediction are ignored.
pub fn bin_by_correctness(predictions: &[ProbePrediction], metric: &BTreeMap<String, f64>) -> Result<CorrectnessBins> {
    let mut bins: BTreeMap<usize, Vec<(String, f64)>> = (0..=4).map(|k| (k, Vec::new())).collect();
    let mut seen = std::collections::HashSet::new();
    for p in predictions {
        if !seen.insert(&p.sample_id) {
            return Err(Error::Misaligned(format!("sample `{}` predicted twice", p.sample_id)));
        }
        let v = metric
            .get(&p.sample_id)
            .ok_or_else(|| Error::Misaligned(format!("no metric value for sample `{}`", p.sample_id)))?;
        bins.get_mut(&p.correct()).expect("k in 0..=4").push((p.sample_id.clone(), *v));
    }
    let summary = bins
        .iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|(k, v)| (*k, summarize(&v.iter().map(|x| x.1).collect::<Vec<_>>())))
        .collect();
    Ok(CorrectnessBins { bins, summary })
}

impl CorrectnessBins {
    pub fn total(&self) -> usize {
        self.bins.values().map(Vec::len).sum()
    }

    /// Long-format `bin,sample_id,value` rows for external plotting.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["bin", "sample_id", "value"])?;
        for (k, rows) in &self.bins {
            for (id, v) in rows {
                w.write_record([k.to_string(), id.clone(), v.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
