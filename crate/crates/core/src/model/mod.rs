//! The captioning network: aggregation, mapping to prefix embeddings, the
//! prefix-conditioned decoder, the encoder-decoder baseline and training.

mod aggregator;
mod baseline;
mod batch;
mod captioner;
mod checkpoint;
mod config;
mod decode;
mod decoder;
mod loss;
mod mapper;
mod train;
mod vocab;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::dataset::StyleFactors;
use crate::nn::ops;
use crate::{Error, Result};

pub use aggregator::Aggregator;
pub use baseline::BaselineModel;
pub use batch::{collate, Batch, Example, InputBatch, TargetBatch};
pub use captioner::{
    build_examples, project_fixed, PrefixCaptioner, GROUP_AGGREGATOR, GROUP_CONSTANTS, GROUP_DECODER,
    GROUP_FIXED_PROJECTION, GROUP_LAYER_WEIGHTS, GROUP_MAPPER,
};
pub use captioner::{dtype_name, parse_dtype};
pub(crate) use baseline::KIND as BASELINE_KIND;
pub(crate) use captioner::KIND as CAPTIONER_KIND;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT};
pub use config::{
    AggregatorConfig, BaselineConfig, CaptionerConfig, DecoderConfig, FrontendKind, MapperConfig, Pooling,
};
pub use decode::{decode, generate, DecodeOptions, PrefixStep, StepModel, Strategy};
pub use decoder::{DecoderInterface, ServiceDecoder, TinyDecoder};
pub use loss::{compute_loss, token_cross_entropy};
pub use mapper::Mapper;
pub use train::{evaluate_loss, pretrain_decoder, train, train_from, TrainConfig, TrainState, Trainable};
pub use vocab::{Vocabulary, BOS, EOS, PAD, UNK};

/// Fixed-length style embedding `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleEmbedding {
    values: Vec<f32>,
}

impl StyleEmbedding {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Shape("empty style embedding".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape("non-finite style embedding".into()));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// `K x d_w` prefix matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefixEmbeddings {
    k: usize,
    d_w: usize,
    values: Vec<f32>,
}

impl PrefixEmbeddings {
    pub fn new(k: usize, d_w: usize, values: Vec<f32>) -> Result<Self> {
        if k == 0 || d_w == 0 || values.len() != k * d_w {
            return Err(Error::Shape(format!("{} values for a {k} x {d_w} prefix", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape("non-finite prefix".into()));
        }
        Ok(Self { k, d_w, values })
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (k, d_w) = t.dims2()?;
        Self::new(k, d_w, ops::to_f32_vec(t)?)
    }

    /// `(K, d_w)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.k, self.d_w)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn to_tensor(&self, dtype: candle_core::DType) -> Result<Tensor> {
        ops::tensor_from_f32(&self.values, &[self.k, self.d_w], dtype)
    }
}

/// A caption as token ids plus its rendered text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub tokens: Vec<u32>,
    pub text: String,
    pub tokenizer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factors: Option<StyleFactors>,
}

impl CaptionRecord {
    pub fn from_tokens(tokens: Vec<u32>, vocab: &Vocabulary) -> Self {
        Self {
            text: vocab.decode(&tokens),
            tokens,
            tokenizer: crate::text::TOKENIZER_ID.to_string(),
            factors: None,
        }
    }
}
