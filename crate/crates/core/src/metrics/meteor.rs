use std::sync::OnceLock;

use rust_stemmers::{Algorithm, Stemmer};

use super::EvalPair;

pub const METEOR_ALPHA: f64 = 0.9;
pub const METEOR_BETA: f64 = 3.0;
pub const METEOR_GAMMA: f64 = 0.5;

fn stemmer() -> &'static Stemmer {
    static S: OnceLock<Stemmer> = OnceLock::new();
    S.get_or_init(|| Stemmer::create(Algorithm::English))
}

/// Unigram alignment as `(candidate index, reference index)` pairs, exact
/// matches first, then stem matches among the leftovers. Within a stage a
/// candidate word prefers the reference position right after the previous
/// word's match, then the earliest free one.
pub fn align(candidate: &[String], reference: &[String]) -> Vec<(usize, usize)> {
    let stems_c: Vec<String> = candidate.iter().map(|w| stemmer().stem(w).into_owned()).collect();
    let stems_r: Vec<String> = reference.iter().map(|w| stemmer().stem(w).into_owned()).collect();
    let mut cand_used = vec![false; candidate.len()];
    let mut ref_used = vec![false; reference.len()];
    let mut ref_of: Vec<Option<usize>> = vec![None; candidate.len()];
    let stages: [(&[String], &[String]); 2] = [(candidate, reference), (&stems_c, &stems_r)];
    for (c, r) in stages {
        for i in 0..c.len() {
            if cand_used[i] {
                continue;
            }
            let free = |j: usize| !ref_used[j] && r[j] == c[i];
            let after_prev = i
                .checked_sub(1)
                .and_then(|p| ref_of[p])
                .map(|j| j + 1)
                .filter(|&j| j < r.len() && free(j));
            if let Some(j) = after_prev.or_else(|| (0..r.len()).find(|&j| free(j))) {
                cand_used[i] = true;
                ref_used[j] = true;
                ref_of[i] = Some(j);
            }
        }
    }
    ref_of
        .iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| (i, j)))
        .collect()
}

/// Runs of alignments contiguous in both candidate and reference.
pub fn chunks(alignment: &[(usize, usize)]) -> usize {
    let mut n = 0;
    let mut last: Option<(usize, usize)> = None;
    for &(i, j) in alignment {
        match last {
            Some((pi, pj)) if i == pi + 1 && j == pj + 1 => {}
            _ => n += 1,
        }
        last = Some((i, j));
    }
    n
}

fn score_one(candidate: &[String], reference: &[String]) -> f64 {
    let a = align(candidate, reference);
    let m = a.len();
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / candidate.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let fmean = p * r / (METEOR_ALPHA * p + (1.0 - METEOR_ALPHA) * r);
    let pen = METEOR_GAMMA * (chunks(&a) as f64 / m as f64).powf(METEOR_BETA);
    fmean * (1.0 - pen)
}

/// Exact-plus-stem METEOR (no synonym stage), best over references.
pub fn meteor_lite_sample(candidate: &[String], references: &[Vec<String>]) -> f64 {
    references
        .iter()
        .map(|r| score_one(candidate, r))
        .fold(0.0, f64::max)
}

pub fn meteor_lite(pairs: &[EvalPair]) -> f64 {
    super::mean(pairs.iter().map(|p| meteor_lite_sample(&p.candidate, &p.references)))
}
