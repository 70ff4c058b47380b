use candle_core::Tensor;

use super::batch::TargetBatch;
use super::decoder::DecoderInterface;
use crate::nn::ops::log_softmax_last;
use crate::{Error, Result};

/// Mean token-level cross entropy with teacher forcing.
///
/// The decoder input is the prefix followed by the embeddings of all target
/// tokens but the last; the output at position `K - 1 + i` is scored against
/// target token `i`. Prefix positions and padding contribute nothing.
pub fn compute_loss(prefix: &Tensor, targets: &TargetBatch, decoder: &dyn DecoderInterface) -> Result<Tensor> {
    let (b, k, d) = prefix.dims3()?;
    if d != decoder.d_w() {
        return Err(Error::Shape(format!(
            "prefix width {d} but decoder width {}",
            decoder.d_w()
        )));
    }
    let (tb, s) = targets.ids.dims2()?;
    if tb != b {
        return Err(Error::Shape(format!("{b} prefixes for {tb} targets")));
    }
    let inputs = if s > 1 {
        let tokens = decoder.embed(&targets.ids.narrow(1, 0, s - 1)?)?;
        Tensor::cat(&[prefix, &tokens], 1)?
    } else {
        prefix.clone()
    };
    let logits = decoder.forward(&inputs)?.narrow(1, k - 1, s)?;
    token_cross_entropy(&logits, targets)
}

/// `logits` is `[B, S, V]`, aligned with `targets`.
pub fn token_cross_entropy(logits: &Tensor, targets: &TargetBatch) -> Result<Tensor> {
    let logp = log_softmax_last(logits)?;
    let picked = logp
        .gather(&targets.ids.unsqueeze(2)?.contiguous()?, 2)?
        .squeeze(2)?;
    let total = (picked * &targets.mask)?.sum_all()?;
    let count = targets.mask.sum_all()?;
    Ok((total.neg()? / count)?)
}
