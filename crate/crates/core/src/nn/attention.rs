use candle_core::{DType, Device, Tensor};

use super::ops::{softmax_last, NEG_INF};
use super::{Linear, ParamGroup};
use crate::{Error, Result};

#[derive(Clone)]
pub struct MultiHeadAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
    head_dim: usize,
}

impl MultiHeadAttention {
    /// Attention of width `width` split over `heads`, reading queries of size
    /// `q_dim`, keys/values of size `kv_dim`, and projecting to `out_dim`.
    pub fn new(
        g: &mut ParamGroup,
        prefix: &str,
        q_dim: usize,
        kv_dim: usize,
        width: usize,
        out_dim: usize,
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 || width % heads != 0 {
            return Err(Error::Config(format!(
                "{heads} attention heads do not divide width {width}"
            )));
        }
        Ok(Self {
            q: Linear::new(g, &format!("{prefix}.q"), q_dim, width, true)?,
            k: Linear::new(g, &format!("{prefix}.k"), kv_dim, width, true)?,
            v: Linear::new(g, &format!("{prefix}.v"), kv_dim, width, true)?,
            o: Linear::new(g, &format!("{prefix}.o"), width, out_dim, true)?,
            heads,
            head_dim: width / heads,
        })
    }

    fn split_heads(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, _) = x.dims3()?;
        Ok(x.reshape((b, t, self.heads, self.head_dim))?
            .transpose(1, 2)?
            .contiguous()?)
    }

    /// `query` is `[B, Tq, q_dim]`, `kv` is `[B, Tk, kv_dim]`. `mask` is an
    /// additive bias broadcastable to `[B, heads, Tq, Tk]`.
    pub fn forward(&self, query: &Tensor, kv: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
        let (b, tq, _) = query.dims3()?;
        let q = self.split_heads(&self.q.forward(query)?)?;
        let k = self.split_heads(&self.k.forward(kv)?)?;
        let v = self.split_heads(&self.v.forward(kv)?)?;
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let mut scores = (q.matmul(&k.t()?.contiguous()?)? * scale)?;
        if let Some(m) = mask {
            scores = scores.broadcast_add(m)?;
        }
        let attn = softmax_last(&scores)?;
        let ctx = attn
            .matmul(&v)?
            .transpose(1, 2)?
            .contiguous()?
            .reshape((b, tq, self.heads * self.head_dim))?;
        self.o.forward(&ctx)
    }
}

/// Additive `[1, 1, S, S]` mask hiding future positions.
pub fn causal_mask(len: usize, dtype: DType) -> Result<Tensor> {
    let data: Vec<f64> = (0..len * len)
        .map(|i| if i % len > i / len { NEG_INF } else { 0.0 })
        .collect();
    Ok(Tensor::from_vec(data, (1, 1, len, len), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Additive `[B, 1, 1, T]` mask from a `[B, T]` validity mask of ones/zeros.
pub fn padding_mask(valid: &Tensor) -> Result<Tensor> {
    let (b, t) = valid.dims2()?;
    let bias = ((valid - 1.0)? * (-NEG_INF))?;
    Ok(bias.reshape((b, 1, 1, t))?)
}
