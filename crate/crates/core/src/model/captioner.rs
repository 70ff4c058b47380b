use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use candle_core::{DType, Tensor};

use super::aggregator::Aggregator;
use super::batch::{Batch, Example, InputBatch};
use super::checkpoint::{self, Checkpoint};
use super::config::{CaptionerConfig, FrontendKind};
use super::decode::{decode, DecodeOptions};
use super::decoder::{DecoderInterface, TinyDecoder};
use super::loss::compute_loss;
use super::mapper::Mapper;
use super::train::{TrainState, Trainable};
use super::vocab::Vocabulary;
use super::{CaptionRecord, PrefixEmbeddings, StyleEmbedding};
use crate::dataset::Manifest;
use crate::frontend::{load_features, FixedVector, LayerWeights, SpeechInput};
use crate::nn::{ops, Ctx, Init, Linear, ParamGroup};
use crate::{Error, Result};

pub const GROUP_MAPPER: &str = "mapper";
pub const GROUP_CONSTANTS: &str = "prefix_constants";
pub const GROUP_AGGREGATOR: &str = "aggregator";
pub const GROUP_LAYER_WEIGHTS: &str = "layer_weights";
pub const GROUP_FIXED_PROJECTION: &str = "fixed_projection";
pub const GROUP_DECODER: &str = "decoder";

pub(crate) const KIND: &str = "captioner";

enum Encoder {
    Sequence {
        weights_group: ParamGroup,
        logits: Tensor,
        group: ParamGroup,
        aggregator: Aggregator,
    },
    Fixed {
        group: ParamGroup,
        proj: Linear,
    },
}

/// Speech encoder, mapping network and text decoder.
pub struct PrefixCaptioner {
    cfg: CaptionerConfig,
    vocab: Vocabulary,
    dtype: DType,
    seed: u64,
    encoder: Encoder,
    mapper_group: ParamGroup,
    constants_group: ParamGroup,
    mapper: Mapper,
    decoder: TinyDecoder,
}

impl PrefixCaptioner {
    pub fn new(cfg: &CaptionerConfig, vocab: Vocabulary, dtype: DType, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let d_z = cfg.aggregator.d_z;
        let encoder = match cfg.frontend {
            FrontendKind::Fixed => {
                let mut group = ParamGroup::new(GROUP_FIXED_PROJECTION, dtype, seed);
                let proj = Linear::new(&mut group, "proj", cfg.input_dim, d_z, true)?;
                Encoder::Fixed { group, proj }
            }
            FrontendKind::Mel | FrontendKind::Layered => {
                if cfg.frontend == FrontendKind::Mel && cfg.input_layers != 1 {
                    return Err(Error::Config("mel features form a single layer".into()));
                }
                let mut weights_group = ParamGroup::new(GROUP_LAYER_WEIGHTS, dtype, seed);
                let logits = weights_group.get("logits", &[cfg.input_layers], Init::Zeros)?;
                let mut group = ParamGroup::new(GROUP_AGGREGATOR, dtype, seed);
                let aggregator = Aggregator::new(&mut group, &cfg.aggregator, cfg.input_dim)?;
                Encoder::Sequence {
                    weights_group,
                    logits,
                    group,
                    aggregator,
                }
            }
        };
        let mut mapper_group = ParamGroup::new(GROUP_MAPPER, dtype, seed);
        let mut constants_group = ParamGroup::new(GROUP_CONSTANTS, dtype, seed);
        let mapper = Mapper::new(&mut mapper_group, &mut constants_group, &cfg.mapper, d_z)?;
        let decoder = TinyDecoder::new(&cfg.decoder, vocab.len(), cfg.mapper.d_w, dtype, seed)?;
        Ok(Self {
            cfg: cfg.clone(),
            vocab,
            dtype,
            seed,
            encoder,
            mapper_group,
            constants_group,
            mapper,
            decoder,
        })
    }

    pub fn config(&self) -> &CaptionerConfig {
        &self.cfg
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn decoder(&self) -> &TinyDecoder {
        &self.decoder
    }

    pub fn mapper(&self) -> &Mapper {
        &self.mapper
    }

    pub fn aggregator(&self) -> Option<&Aggregator> {
        match &self.encoder {
            Encoder::Sequence { aggregator, .. } => Some(aggregator),
            Encoder::Fixed { .. } => None,
        }
    }

    /// Current (softmax-normalized at use) layer weights, if the input is layered.
    pub fn layer_weights(&self) -> Result<Option<LayerWeights>> {
        match &self.encoder {
            Encoder::Sequence { logits, .. } => Ok(Some(LayerWeights {
                logits: ops::to_f32_vec(logits)?,
            })),
            Encoder::Fixed { .. } => Ok(None),
        }
    }

    fn check_input(&self, input: &SpeechInput) -> Result<()> {
        let ok = match (input, self.cfg.frontend) {
            (SpeechInput::Fixed(v), FrontendKind::Fixed) => v.dim() == self.cfg.input_dim,
            (SpeechInput::Layered(s), FrontendKind::Mel | FrontendKind::Layered) => {
                s.dim() == self.cfg.input_dim && s.layers() == self.cfg.input_layers
            }
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "input does not match the configured {:?} frontend ({} layers x {} dims)",
                self.cfg.frontend, self.cfg.input_layers, self.cfg.input_dim
            )))
        }
    }

    /// Batched style embeddings `[B, d_z]`.
    pub fn encode(&self, input: &InputBatch) -> Result<Tensor> {
        match (&self.encoder, input) {
            (Encoder::Fixed { proj, .. }, InputBatch::Fixed { feats }) => proj.forward(feats),
            (
                Encoder::Sequence {
                    logits, aggregator, ..
                },
                InputBatch::Layered { feats, mask },
            ) => {
                let x = ops::weighted_layer_sum(feats, logits)?;
                aggregator.forward(&x, mask)
            }
            _ => Err(Error::Shape("input batch kind does not match the encoder".into())),
        }
    }

    /// Batched prefixes `[B, K, d_w]`.
    pub fn prefix(&self, input: &InputBatch, ctx: &Ctx) -> Result<Tensor> {
        self.mapper.forward(&self.encode(input)?, ctx)
    }

    pub fn batch_loss(&self, batch: &Batch, ctx: &Ctx) -> Result<Tensor> {
        let prefix = self.prefix(&batch.input, ctx)?;
        compute_loss(&prefix, &batch.targets, &self.decoder)
    }

    pub fn embed_style(&self, input: &SpeechInput) -> Result<StyleEmbedding> {
        self.check_input(input)?;
        let batch = InputBatch::from_inputs(&[input], self.dtype)?;
        StyleEmbedding::new(ops::to_f32_vec(&self.encode(&batch)?)?)
    }

    pub fn map_to_prefix(&self, z: &StyleEmbedding) -> Result<PrefixEmbeddings> {
        self.mapper.map_to_prefix(z, self.dtype)
    }

    /// Fixed-vector path only.
    pub fn project_fixed(&self, v: &FixedVector) -> Result<StyleEmbedding> {
        match &self.encoder {
            Encoder::Fixed { proj, .. } => project_fixed(v, proj),
            Encoder::Sequence { .. } => Err(Error::Config("model is not configured for fixed vectors".into())),
        }
    }

    pub fn caption(&self, input: &SpeechInput, opts: &DecodeOptions) -> Result<CaptionRecord> {
        self.caption_with(input, &self.decoder, opts)
    }

    /// Decodes with an alternative decoder of the same width, e.g. a
    /// service-backed one.
    pub fn caption_with(
        &self,
        input: &SpeechInput,
        decoder: &dyn DecoderInterface,
        opts: &DecodeOptions,
    ) -> Result<CaptionRecord> {
        let prefix = self.map_to_prefix(&self.embed_style(input)?)?;
        let tokens = decode(&prefix.to_tensor(self.dtype)?, decoder, opts)?;
        Ok(CaptionRecord::from_tokens(tokens, &self.vocab))
    }

    fn encoder_groups(&self) -> Vec<&ParamGroup> {
        match &self.encoder {
            Encoder::Sequence {
                weights_group, group, ..
            } => vec![weights_group, group],
            Encoder::Fixed { group, .. } => vec![group],
        }
    }

    /// Every parameter group, trainable or not.
    pub fn groups(&self) -> Vec<&ParamGroup> {
        let mut g = vec![&self.mapper_group, &self.constants_group];
        g.extend(self.encoder_groups());
        g.push(self.decoder.group());
        g
    }

    pub fn trainable_groups(&self) -> Vec<&ParamGroup> {
        let mut g = vec![&self.mapper_group, &self.constants_group];
        g.extend(self.encoder_groups());
        if !self.decoder.is_frozen() {
            g.push(self.decoder.group());
        }
        g
    }

    /// Names of the groups the optimizer updates.
    pub fn trainable_parameters(&self) -> BTreeSet<String> {
        self.trainable_groups().iter().map(|g| g.name().to_string()).collect()
    }

    pub fn frozen_digests(&self) -> Result<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        if self.decoder.is_frozen() {
            out.insert(GROUP_DECODER.to_string(), self.decoder.group().digest()?);
        }
        Ok(out)
    }

    /// Pretraining runs while the decoder is still unfrozen.
    pub fn decoder_mut(&mut self) -> &mut TinyDecoder {
        &mut self.decoder
    }

    /// `run` is stored alongside the model configuration when given.
    pub fn save(&self, path: &Path, state: Option<&TrainState>, run: Option<&serde_json::Value>) -> Result<()> {
        checkpoint::save_checkpoint(
            path,
            KIND,
            &serde_json::json!({
                "model": self.cfg,
                "seed": self.seed,
                "dtype": dtype_name(self.dtype),
                "run": run,
            }),
            &self.vocab,
            state,
            &self.groups(),
        )
    }

    pub fn load(path: &Path) -> Result<(Self, Option<TrainState>)> {
        let ckpt = checkpoint::load_checkpoint(path)?;
        let model = Self::from_checkpoint(&ckpt)?;
        Ok((model, ckpt.state))
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.kind != KIND {
            return Err(Error::Checkpoint(format!("expected a {KIND} checkpoint, found `{}`", ckpt.kind)));
        }
        let cfg: CaptionerConfig = serde_json::from_value(ckpt.config["model"].clone())?;
        let seed = ckpt.config["seed"].as_u64().unwrap_or(0);
        let dtype = parse_dtype(ckpt.config["dtype"].as_str().unwrap_or("f32"))?;
        let model = Self::new(&cfg, ckpt.vocab.clone(), dtype, seed)?;
        for g in model.groups() {
            ckpt.restore(g)?;
        }
        if let Some(state) = &ckpt.state {
            for (name, digest) in &state.frozen_digests {
                if ckpt.digests.get(name) != Some(digest) {
                    return Err(Error::Checkpoint(format!("frozen group `{name}` changed during training")));
                }
            }
        }
        Ok(model)
    }
}

impl Trainable for PrefixCaptioner {
    fn batch_loss(&self, batch: &Batch, ctx: &Ctx) -> Result<Tensor> {
        PrefixCaptioner::batch_loss(self, batch, ctx)
    }

    fn trainable_groups(&self) -> Vec<&ParamGroup> {
        PrefixCaptioner::trainable_groups(self)
    }

    fn frozen_digests(&self) -> Result<BTreeMap<String, String>> {
        PrefixCaptioner::frozen_digests(self)
    }

    fn dtype(&self) -> DType {
        self.dtype
    }

    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }
}

/// Linear map of a fixed utterance vector to a style embedding.
pub fn project_fixed(v: &FixedVector, proj: &Linear) -> Result<StyleEmbedding> {
    if v.dim() != proj.in_dim() {
        return Err(Error::Shape(format!(
            "projection expects {} dims, got {}",
            proj.in_dim(),
            v.dim()
        )));
    }
    let x = ops::tensor_from_f32(v.values(), &[1, v.dim()], proj.weight().dtype())?;
    StyleEmbedding::new(ops::to_f32_vec(&proj.forward(&x)?)?)
}

/// Loads features and encodes captions for every record.
pub fn build_examples(manifest: &Manifest, vocab: &Vocabulary) -> Result<Vec<Example>> {
    manifest
        .records
        .iter()
        .map(|r| {
            Ok(Example {
                id: r.id.clone(),
                input: load_features(r, &manifest.base_dir)?,
                tokens: vocab.encode_target(&r.caption),
            })
        })
        .collect()
}

pub fn dtype_name(d: DType) -> &'static str {
    match d {
        DType::F64 => "f64",
        _ => "f32",
    }
}

pub fn parse_dtype(s: &str) -> Result<DType> {
    match s {
        "f32" => Ok(DType::F32),
        "f64" => Ok(DType::F64),
        other => Err(Error::Config(format!("unsupported dtype `{other}`"))),
    }
}
