use candle_core::Tensor;

use super::{Ctx, FeedForward, LayerNorm, MultiHeadAttention, ParamGroup};
use crate::Result;

/// Pre-norm self-attention block.
#[derive(Clone)]
pub struct EncoderBlock {
    ln1: LayerNorm,
    attn: MultiHeadAttention,
    ln2: LayerNorm,
    ff: FeedForward,
    dropout: f64,
}

impl EncoderBlock {
    pub fn new(
        g: &mut ParamGroup,
        prefix: &str,
        dim: usize,
        heads: usize,
        ff_hidden: usize,
        dropout: f64,
    ) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(g, &format!("{prefix}.ln1"), dim)?,
            attn: MultiHeadAttention::new(g, &format!("{prefix}.attn"), dim, dim, dim, dim, heads)?,
            ln2: LayerNorm::new(g, &format!("{prefix}.ln2"), dim)?,
            ff: FeedForward::new(g, &format!("{prefix}.ff"), dim, ff_hidden)?,
            dropout,
        })
    }

    pub fn forward(&self, x: &Tensor, mask: Option<&Tensor>, ctx: &Ctx) -> Result<Tensor> {
        let h = self.ln1.forward(x)?;
        let x = (x + ctx.dropout(&self.attn.forward(&h, &h, mask)?, self.dropout)?)?;
        let h = self.ln2.forward(&x)?;
        Ok((&x + ctx.dropout(&self.ff.forward(&h)?, self.dropout)?)?)
    }
}

/// Pre-norm block with causal self-attention followed by cross-attention.
#[derive(Clone)]
pub struct CrossDecoderBlock {
    ln1: LayerNorm,
    self_attn: MultiHeadAttention,
    ln2: LayerNorm,
    cross_attn: MultiHeadAttention,
    ln3: LayerNorm,
    ff: FeedForward,
    dropout: f64,
}

impl CrossDecoderBlock {
    pub fn new(
        g: &mut ParamGroup,
        prefix: &str,
        dim: usize,
        heads: usize,
        ff_hidden: usize,
        dropout: f64,
    ) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(g, &format!("{prefix}.ln1"), dim)?,
            self_attn: MultiHeadAttention::new(
                g,
                &format!("{prefix}.self_attn"),
                dim,
                dim,
                dim,
                dim,
                heads,
            )?,
            ln2: LayerNorm::new(g, &format!("{prefix}.ln2"), dim)?,
            cross_attn: MultiHeadAttention::new(
                g,
                &format!("{prefix}.cross_attn"),
                dim,
                dim,
                dim,
                dim,
                heads,
            )?,
            ln3: LayerNorm::new(g, &format!("{prefix}.ln3"), dim)?,
            ff: FeedForward::new(g, &format!("{prefix}.ff"), dim, ff_hidden)?,
            dropout,
        })
    }

    pub fn forward(
        &self,
        x: &Tensor,
        self_mask: &Tensor,
        memory: &Tensor,
        memory_mask: Option<&Tensor>,
        ctx: &Ctx,
    ) -> Result<Tensor> {
        let h = self.ln1.forward(x)?;
        let x = (x + ctx.dropout(&self.self_attn.forward(&h, &h, Some(self_mask))?, self.dropout)?)?;
        let h = self.ln2.forward(&x)?;
        let x = (&x
            + ctx.dropout(
                &self.cross_attn.forward(&h, memory, memory_mask)?,
                self.dropout,
            )?)?;
        let h = self.ln3.forward(&x)?;
        Ok((&x + ctx.dropout(&self.ff.forward(&h)?, self.dropout)?)?)
    }
}
