use std::collections::{HashMap, HashSet};

use super::ngram::{ngrams, Counts};
use super::EvalPair;

pub const CIDER_SIGMA: f64 = 6.0;
const CIDER_N: usize = 4;

struct Vectors<'a> {
    vec: Vec<HashMap<&'a [String], f64>>,
    norm: Vec<f64>,
    len: usize,
}

fn vectors<'a>(tokens: &'a [String], df: &HashMap<&[String], usize>, log_n: f64) -> Vectors<'a> {
    let mut vec = Vec::with_capacity(CIDER_N);
    let mut norm = Vec::with_capacity(CIDER_N);
    for n in 1..=CIDER_N {
        let counts: Counts<'a> = ngrams(tokens, n);
        let v: HashMap<&[String], f64> = counts
            .into_iter()
            .map(|(g, tf)| {
                let d = df.get(g).copied().unwrap_or(0).max(1) as f64;
                (g, tf as f64 * (log_n - d.ln()))
            })
            .collect();
        norm.push(v.values().map(|x| x * x).sum::<f64>().sqrt());
        vec.push(v);
    }
    Vectors {
        vec,
        norm,
        len: tokens.len(),
    }
}

fn similarity(h: &Vectors, r: &Vectors) -> [f64; CIDER_N] {
    let delta = h.len as f64 - r.len as f64;
    let lp = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
    let mut out = [0.0; CIDER_N];
    for n in 0..CIDER_N {
        let mut dot = 0.0;
        for (g, vh) in &h.vec[n] {
            if let Some(vr) = r.vec[n].get(g) {
                dot += vh.min(*vr) * vr;
            }
        }
        if h.norm[n] != 0.0 && r.norm[n] != 0.0 {
            dot /= h.norm[n] * r.norm[n];
        }
        out[n] = dot * lp;
    }
    out
}

/// Per-sample CIDEr-D with document frequencies taken over the references
/// of `pairs` (one document per pair).
pub fn cider_d_samples(pairs: &[EvalPair]) -> Vec<f64> {
    let mut df: HashMap<&[String], usize> = HashMap::new();
    for p in pairs {
        let mut seen: HashSet<&[String]> = HashSet::new();
        for r in &p.references {
            for n in 1..=CIDER_N {
                seen.extend(ngrams(r, n).into_keys());
            }
        }
        for g in seen {
            *df.entry(g).or_insert(0) += 1;
        }
    }
    let log_n = (pairs.len() as f64).ln();
    pairs
        .iter()
        .map(|p| {
            let h = vectors(&p.candidate, &df, log_n);
            let mut total = 0.0;
            for r in &p.references {
                let s = similarity(&h, &vectors(r, &df, log_n));
                total += s.iter().sum::<f64>() / CIDER_N as f64;
            }
            10.0 * total / p.references.len() as f64
        })
        .collect()
}

pub fn cider_d(pairs: &[EvalPair]) -> f64 {
    super::mean(cider_d_samples(pairs).into_iter())
}
