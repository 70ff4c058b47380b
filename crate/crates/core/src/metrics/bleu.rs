use super::ngram::ngrams;
use super::EvalPair;

pub const BLEU_MAX_N: usize = 4;

/// Corpus totals behind BLEU.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BleuCounts {
    /// Clipped matches per order `n = 1..=4`.
    pub matches: [usize; BLEU_MAX_N],
    /// Candidate n-gram totals per order.
    pub totals: [usize; BLEU_MAX_N],
    pub candidate_len: usize,
    /// Sum over pairs of the reference length closest to the candidate's
    /// (the shorter one on ties).
    pub reference_len: usize,
}

pub fn bleu_counts(pairs: &[EvalPair]) -> BleuCounts {
    let mut c = BleuCounts::default();
    for p in pairs {
        let cand = &p.candidate;
        for n in 1..=BLEU_MAX_N {
            let cn = ngrams(cand, n);
            let mut max_ref: std::collections::HashMap<&[String], usize> = Default::default();
            for r in &p.references {
                for (g, k) in ngrams(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(k);
                }
            }
            c.matches[n - 1] += cn
                .iter()
                .map(|(g, k)| (*k).min(max_ref.get(g).copied().unwrap_or(0)))
                .sum::<usize>();
            c.totals[n - 1] += cand.len().saturating_sub(n - 1);
        }
        c.candidate_len += cand.len();
        c.reference_len += p
            .references
            .iter()
            .map(|r| r.len())
            .min_by_key(|&l| (l.abs_diff(cand.len()), l))
            .unwrap_or(0);
    }
    c
}

impl BleuCounts {
    /// Geometric mean of the clipped precisions times the brevity penalty,
    /// unsmoothed: any order without matches gives zero.
    pub fn score(&self) -> f64 {
        if self.candidate_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for n in 0..BLEU_MAX_N {
            if self.matches[n] == 0 || self.totals[n] == 0 {
                return 0.0;
            }
            log_sum += (self.matches[n] as f64 / self.totals[n] as f64).ln();
        }
        let (c, r) = (self.candidate_len as f64, self.reference_len as f64);
        let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
        bp * (log_sum / BLEU_MAX_N as f64).exp()
    }
}

/// Corpus-level BLEU@4.
pub fn bleu4(pairs: &[EvalPair]) -> f64 {
    bleu_counts(pairs).score()
}
