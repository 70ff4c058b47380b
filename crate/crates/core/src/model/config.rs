use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Sum,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AggregatorConfig {
    pub blstm_layers: usize,
    /// Hidden size per direction; the attention width is twice this.
    pub blstm_hidden: usize,
    pub mha_heads: usize,
    pub d_z: usize,
    pub pooling: Pooling,
}

impl Default for AggregatorConfig {
    fn default() -> Self {
        Self {
            blstm_layers: 4,
            blstm_hidden: 128,
            mha_heads: 8,
            d_z: 256,
            pooling: Pooling::Sum,
        }
    }
}

impl AggregatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blstm_layers == 0 || self.blstm_hidden == 0 || self.mha_heads == 0 || self.d_z == 0 {
            return Err(Error::Config("aggregator sizes must be positive".into()));
        }
        if (2 * self.blstm_hidden) % self.mha_heads != 0 {
            return Err(Error::Config(format!(
                "{} heads do not divide the attention width {}",
                self.mha_heads,
                2 * self.blstm_hidden
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapperConfig {
    pub transformer_layers: usize,
    pub prefix_length: usize,
    pub dropout: f64,
    /// Word-embedding width of the text decoder.
    pub d_w: usize,
    /// Number of tokens the style embedding is projected to.
    pub z_tokens: usize,
    pub heads: usize,
    pub ff_mult: usize,
}

impl Default for MapperConfig {
    fn default() -> Self {
        Self {
            transformer_layers: 8,
            prefix_length: 40,
            dropout: 0.2,
            d_w: 768,
            z_tokens: 1,
            heads: 8,
            ff_mult: 2,
        }
    }
}

impl MapperConfig {
    pub fn validate(&self) -> Result<()> {
        if self.prefix_length == 0 {
            return Err(Error::Config("prefix_length must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.d_w == 0 || self.z_tokens == 0 || self.heads == 0 || self.ff_mult == 0 {
            return Err(Error::Config("mapper sizes must be positive".into()));
        }
        if self.d_w % self.heads != 0 {
            return Err(Error::Config(format!(
                "{} mapper heads do not divide d_w {}",
                self.heads, self.d_w
            )));
        }
        Ok(())
    }
}

/// The small causal transformer used as the text decoder at desk scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub ff_mult: usize,
    pub max_positions: usize,
    pub frozen: bool,
    /// Language-model pretraining on the training captions before freezing.
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 4,
            ff_mult: 4,
            max_positions: 128,
            frozen: true,
            pretrain_epochs: 10,
            pretrain_lr: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrontendKind {
    /// Mel-spectrograms computed from waveforms (a one-layer stack).
    Mel,
    /// Precomputed per-layer hidden states.
    Layered,
    /// Fixed-length utterance vectors; bypasses the aggregator.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptionerConfig {
    pub frontend: FrontendKind,
    /// Feature dimension D (or D_x for fixed vectors).
    pub input_dim: usize,
    /// Number of stacked layers L (1 for mel and fixed inputs).
    pub input_layers: usize,
    #[serde(default)]
    pub aggregator: AggregatorConfig,
    #[serde(default)]
    pub mapper: MapperConfig,
    #[serde(default)]
    pub decoder: DecoderConfig,
}

impl CaptionerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.input_layers == 0 {
            return Err(Error::Config("input dimensions must be positive".into()));
        }
        self.aggregator.validate()?;
        self.mapper.validate()?;
        let d = &self.decoder;
        if d.layers == 0 || d.heads == 0 || self.mapper.d_w % d.heads != 0 {
            return Err(Error::Config(format!(
                "{} decoder heads do not divide d_w {}",
                d.heads, self.mapper.d_w
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub heads: usize,
    pub width: usize,
    pub ff_mult: usize,
    pub dropout: f64,
    pub max_positions: usize,
    /// Start the output projection at zero so initial logits are uniform.
    pub zero_init_head: bool,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            encoder_layers: 12,
            decoder_layers: 6,
            heads: 4,
            width: 256,
            ff_mult: 4,
            dropout: 0.1,
            max_positions: 128,
            zero_init_head: true,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.heads == 0 || self.width % self.heads != 0 {
            return Err(Error::Config(format!(
                "{} heads do not divide width {}",
                self.heads, self.width
            )));
        }
        if self.encoder_layers == 0 || self.decoder_layers == 0 {
            return Err(Error::Config("baseline needs at least one block per side".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reported_setup() {
        let a = AggregatorConfig::default();
        assert_eq!((a.blstm_layers, a.mha_heads, a.pooling), (4, 8, Pooling::Sum));
        let m = MapperConfig::default();
        assert_eq!((m.transformer_layers, m.prefix_length, m.dropout), (8, 40, 0.2));
        let b = BaselineConfig::default();
        assert_eq!((b.encoder_layers, b.decoder_layers, b.heads, b.width), (12, 6, 4, 256));
    }

    #[test]
    fn validation() {
        let bad_heads = AggregatorConfig {
            blstm_hidden: 5,
            mha_heads: 4,
            ..Default::default()
        };
        assert!(bad_heads.validate().is_err());
        assert!(MapperConfig { dropout: 1.0, ..Default::default() }.validate().is_err());
        assert!(MapperConfig { prefix_length: 0, ..Default::default() }.validate().is_err());
    }
}
