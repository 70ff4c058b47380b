use candle_core::{DType, Tensor};

use super::config::{AggregatorConfig, Pooling};
use super::StyleEmbedding;
use crate::frontend::FeatureSequence;
use crate::nn::{ops, padding_mask, BiLstm, MultiHeadAttention, ParamGroup};
use crate::{Error, Result};

/// BLSTM stack, one self-attention layer over its outputs, then pooling
/// along frames.
pub struct Aggregator {
    cfg: AggregatorConfig,
    in_dim: usize,
    blstm: Vec<BiLstm>,
    mha: MultiHeadAttention,
}

impl Aggregator {
    pub fn new(g: &mut ParamGroup, cfg: &AggregatorConfig, in_dim: usize) -> Result<Self> {
        cfg.validate()?;
        let mut blstm = Vec::with_capacity(cfg.blstm_layers);
        let mut d = in_dim;
        for i in 0..cfg.blstm_layers {
            let layer = BiLstm::new(g, &format!("blstm{i}"), d, cfg.blstm_hidden)?;
            d = layer.out_dim();
            blstm.push(layer);
        }
        let mha = MultiHeadAttention::new(g, "mha", d, d, d, cfg.d_z, cfg.mha_heads)?;
        Ok(Self {
            cfg: cfg.clone(),
            in_dim,
            blstm,
            mha,
        })
    }

    pub fn config(&self) -> &AggregatorConfig {
        &self.cfg
    }

    /// `x` is `[B, T, D]`, `mask` is `[B, T]`; returns per-frame `[B, T, d_z]`.
    pub fn pre_pool(&self, x: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let (_, t, d) = x.dims3()?;
        if d != self.in_dim {
            return Err(Error::Shape(format!(
                "aggregator expects {}-dim frames, got {d}",
                self.in_dim
            )));
        }
        if t == 0 {
            return Err(Error::Precondition("empty feature sequence".into()));
        }
        let mut h = x.clone();
        for layer in &self.blstm {
            h = layer.forward(&h, mask)?;
        }
        let keep = padding_mask(mask)?;
        self.mha.forward(&h, &h, Some(&keep))
    }

    /// Pools `[B, T, d_z]` over valid frames.
    pub fn pool(h: &Tensor, mask: &Tensor, pooling: Pooling) -> Result<Tensor> {
        let summed = h.broadcast_mul(&mask.unsqueeze(2)?)?.sum(1)?;
        Ok(match pooling {
            Pooling::Sum => summed,
            Pooling::Mean => summed.broadcast_div(&mask.sum_keepdim(1)?)?,
        })
    }

    pub fn forward(&self, x: &Tensor, mask: &Tensor) -> Result<Tensor> {
        Self::pool(&self.pre_pool(x, mask)?, mask, self.cfg.pooling)
    }

    /// Single-utterance convenience over an already layer-combined sequence.
    pub fn aggregate(&self, features: &FeatureSequence, dtype: DType) -> Result<StyleEmbedding> {
        let (t, d) = (features.frames(), features.dim());
        let x = ops::tensor_from_f32(features.data(), &[1, t, d], dtype)?;
        let mask = ops::tensor_from_f32(&vec![1.0; t], &[1, t], dtype)?;
        StyleEmbedding::new(ops::to_f32_vec(&self.forward(&x, &mask)?)?)
    }
}
