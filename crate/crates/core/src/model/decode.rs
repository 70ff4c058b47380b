use candle_core::{Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::decoder::DecoderInterface;
use super::vocab::EOS;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Strategy {
    Greedy,
    Beam { width: usize },
    Sample { temperature: f64, seed: u64 },
}

impl Default for Strategy {
    fn default() -> Self {
        Strategy::Greedy
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeOptions {
    pub strategy: Strategy,
    pub max_len: usize,
    /// End-of-sequence is suppressed until this many tokens are out.
    pub min_len: usize,
    pub eos: u32,
    pub banned: Vec<u32>,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self {
            strategy: Strategy::Greedy,
            max_len: 64,
            min_len: 1,
            eos: EOS,
            banned: vec![super::vocab::PAD, super::vocab::BOS],
        }
    }
}

/// Anything that scores the next token for a batch of equal-length
/// partial sequences.
pub trait StepModel {
    fn next_logits(&self, seqs: &[Vec<u32>]) -> Result<Vec<Vec<f32>>>;
}

/// Prefix-conditioned step model over a [`DecoderInterface`].
pub struct PrefixStep<'a> {
    prefix: Tensor,
    decoder: &'a dyn DecoderInterface,
}

impl<'a> PrefixStep<'a> {
    /// `prefix` is `[K, d_w]` or `[1, K, d_w]`.
    pub fn new(prefix: &Tensor, decoder: &'a dyn DecoderInterface) -> Result<Self> {
        let prefix = if prefix.rank() == 2 { prefix.unsqueeze(0)? } else { prefix.clone() };
        let (one, _, d) = prefix.dims3()?;
        if one != 1 {
            return Err(Error::Shape("decode takes a single prefix".into()));
        }
        if d != decoder.d_w() {
            return Err(Error::Shape(format!(
                "prefix width {d} but decoder width {}",
                decoder.d_w()
            )));
        }
        Ok(Self { prefix, decoder })
    }
}

impl StepModel for PrefixStep<'_> {
    fn next_logits(&self, seqs: &[Vec<u32>]) -> Result<Vec<Vec<f32>>> {
        let b = seqs.len();
        let n = seqs[0].len();
        let (_, k, d) = self.prefix.dims3()?;
        let prefix = self.prefix.broadcast_as((b, k, d))?.contiguous()?;
        let inputs = if n == 0 {
            prefix
        } else {
            let flat: Vec<u32> = seqs.iter().flatten().copied().collect();
            let ids = Tensor::from_vec(flat, (b, n), &Device::Cpu)?;
            Tensor::cat(&[&prefix, &self.decoder.embed(&ids)?], 1)?
        };
        let logits = self.decoder.forward(&inputs)?;
        let p = logits.dim(1)?;
        let last = logits.narrow(1, p - 1, 1)?.squeeze(1)?;
        Ok(last.to_dtype(candle_core::DType::F32)?.to_vec2::<f32>()?)
    }
}

/// Log-probabilities in f64 with banned tokens at negative infinity.
fn masked_log_probs(logits: &[f32], banned: &[u32]) -> Vec<f64> {
    let mut x: Vec<f64> = logits.iter().map(|&v| v as f64).collect();
    for &b in banned {
        if let Some(v) = x.get_mut(b as usize) {
            *v = f64::NEG_INFINITY;
        }
    }
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    x.iter().map(|v| v - lse).collect()
}

fn argmax_first(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in x.iter().enumerate() {
        if *v > x[best] {
            best = i;
        }
    }
    best
}

fn banned_at(opts: &DecodeOptions, produced: usize) -> Vec<u32> {
    let mut banned = opts.banned.clone();
    if produced < opts.min_len {
        banned.push(opts.eos);
    }
    banned
}

/// Runs the configured strategy; returns tokens without the end marker.
pub fn generate(model: &dyn StepModel, opts: &DecodeOptions) -> Result<Vec<u32>> {
    if opts.max_len == 0 {
        return Err(Error::Precondition("max_len must be positive".into()));
    }
    match &opts.strategy {
        Strategy::Greedy => greedy(model, opts),
        Strategy::Beam { width } => {
            if *width == 0 {
                return Err(Error::Precondition("beam width must be positive".into()));
            }
            beam(model, opts, *width)
        }
        Strategy::Sample { temperature, seed } => {
            if !(*temperature > 0.0) {
                return Err(Error::Precondition("temperature must be positive".into()));
            }
            sample(model, opts, *temperature, *seed)
        }
    }
}

/// Decodes one prefix (`[K, d_w]` or `[1, K, d_w]`) with `decoder`.
pub fn decode(prefix: &Tensor, decoder: &dyn DecoderInterface, opts: &DecodeOptions) -> Result<Vec<u32>> {
    generate(&PrefixStep::new(prefix, decoder)?, opts)
}

fn greedy(model: &dyn StepModel, opts: &DecodeOptions) -> Result<Vec<u32>> {
    let mut seq: Vec<u32> = Vec::new();
    while seq.len() < opts.max_len {
        let logits = model.next_logits(std::slice::from_ref(&seq))?;
        let lp = masked_log_probs(&logits[0], &banned_at(opts, seq.len()));
        let tok = argmax_first(&lp) as u32;
        if tok == opts.eos {
            break;
        }
        seq.push(tok);
    }
    Ok(seq)
}

fn beam(model: &dyn StepModel, opts: &DecodeOptions, width: usize) -> Result<Vec<u32>> {
    let mut alive: Vec<(Vec<u32>, f64)> = vec![(Vec::new(), 0.0)];
    let mut finished: Vec<(Vec<u32>, f64)> = Vec::new();
    for step in 0..opts.max_len {
        let seqs: Vec<Vec<u32>> = alive.iter().map(|(s, _)| s.clone()).collect();
        let logits = model.next_logits(&seqs)?;
        let banned = banned_at(opts, step);
        // (total, hypothesis, token log-prob, token)
        let mut cands: Vec<(f64, usize, f64, u32)> = Vec::new();
        for (h, ((_, score), row)) in alive.iter().zip(&logits).enumerate() {
            for (t, lp) in masked_log_probs(row, &banned).into_iter().enumerate() {
                if lp.is_finite() {
                    cands.push((score + lp, h, lp, t as u32));
                }
            }
        }
        cands.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then(a.1.cmp(&b.1))
                .then(b.2.total_cmp(&a.2))
                .then(a.3.cmp(&b.3))
        });
        let mut next = Vec::with_capacity(width);
        for (total, h, _, tok) in cands.into_iter().take(width) {
            if tok == opts.eos {
                finished.push((alive[h].0.clone(), total));
            } else {
                let mut s = alive[h].0.clone();
                s.push(tok);
                next.push((s, total));
            }
        }
        alive = next;
        if alive.is_empty() {
            break;
        }
        let best_alive = alive.iter().map(|a| a.1).fold(f64::NEG_INFINITY, f64::max);
        let best_done = finished.iter().map(|a| a.1).fold(f64::NEG_INFINITY, f64::max);
        if finished.len() >= width && best_done >= best_alive {
            break;
        }
    }
    let pool = if finished.is_empty() { alive } else { finished };
    let best = pool
        .iter()
        .enumerate()
        .fold(0, |best, (i, c)| if c.1 > pool[best].1 { i } else { best });
    Ok(pool[best].0.clone())
}

fn sample(model: &dyn StepModel, opts: &DecodeOptions, temperature: f64, seed: u64) -> Result<Vec<u32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seq: Vec<u32> = Vec::new();
    while seq.len() < opts.max_len {
        let logits = model.next_logits(std::slice::from_ref(&seq))?;
        let scaled: Vec<f32> = logits[0].iter().map(|v| (*v as f64 / temperature) as f32).collect();
        let probs: Vec<f64> = masked_log_probs(&scaled, &banned_at(opts, seq.len()))
            .into_iter()
            .map(f64::exp)
            .collect();
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut tok = probs.iter().rposition(|p| *p > 0.0).unwrap_or(0);
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                tok = i;
                break;
            }
        }
        if tok as u32 == opts.eos {
            break;
        }
        seq.push(tok as u32);
    }
    Ok(seq)
}
