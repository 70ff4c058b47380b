use candle_core::Tensor;

use super::config::MapperConfig;
use crate::nn::{Ctx, EncoderBlock, Init, Linear, ParamGroup};
use crate::{Error, Result};

/// Transformer mapping network from a style embedding to K prefix vectors.
///
/// The embedding is projected to `z_tokens` vectors of width `d_w`, the K
/// trainable constants are projected to the same width and appended, and
/// the outputs at the constant positions form the prefix.
pub struct Mapper {
    cfg: MapperConfig,
    d_z: usize,
    z_proj: Linear,
    c_proj: Linear,
    constants: Tensor,
    blocks: Vec<EncoderBlock>,
}

impl Mapper {
    /// Mapper weights go in `g`; the constants in their own group `constants`.
    pub fn new(g: &mut ParamGroup, constants: &mut ParamGroup, cfg: &MapperConfig, d_z: usize) -> Result<Self> {
        cfg.validate()?;
        let z_proj = Linear::new(g, "z_proj", d_z, cfg.z_tokens * cfg.d_w, true)?;
        let c_proj = Linear::new(g, "c_proj", d_z, cfg.d_w, true)?;
        let blocks = (0..cfg.transformer_layers)
            .map(|i| {
                EncoderBlock::new(
                    g,
                    &format!("block{i}"),
                    cfg.d_w,
                    cfg.heads,
                    cfg.ff_mult * cfg.d_w,
                    cfg.dropout,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let constants = constants.get("c", &[cfg.prefix_length, d_z], Init::Normal(1.0))?;
        Ok(Self {
            cfg: cfg.clone(),
            d_z,
            z_proj,
            c_proj,
            constants,
            blocks,
        })
    }

    pub fn config(&self) -> &MapperConfig {
        &self.cfg
    }

    /// `z` is `[B, d_z]`; returns `[B, K, d_w]`.
    pub fn forward(&self, z: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        let (b, d) = z.dims2()?;
        if d != self.d_z {
            return Err(Error::Shape(format!("mapper expects d_z {}, got {d}", self.d_z)));
        }
        let (k, d_w) = (self.cfg.prefix_length, self.cfg.d_w);
        let zt = self.z_proj.forward(z)?.reshape((b, self.cfg.z_tokens, d_w))?;
        let c = self
            .c_proj
            .forward(&self.constants)?
            .unsqueeze(0)?
            .broadcast_as((b, k, d_w))?
            .contiguous()?;
        let mut x = Tensor::cat(&[&zt, &c], 1)?;
        for block in &self.blocks {
            x = block.forward(&x, None, ctx)?;
        }
        Ok(x.narrow(1, self.cfg.z_tokens, k)?)
    }
}

impl Mapper {
    /// Single-embedding inference with dropout off.
    pub fn map_to_prefix(&self, z: &super::StyleEmbedding, dtype: candle_core::DType) -> Result<super::PrefixEmbeddings> {
        let zt = crate::nn::ops::tensor_from_f32(z.values(), &[1, z.dim()], dtype)?;
        let p = self.forward(&zt, &Ctx::eval())?.squeeze(0)?;
        super::PrefixEmbeddings::from_tensor(&p)
    }
}
