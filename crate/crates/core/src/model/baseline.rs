use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};

use super::batch::{Batch, InputBatch, TargetBatch};
use super::checkpoint::{self, Checkpoint};
use super::config::BaselineConfig;
use super::decode::{generate, DecodeOptions, StepModel};
use super::loss::token_cross_entropy;
use super::train::{TrainState, Trainable};
use super::vocab::{Vocabulary, BOS};
use super::CaptionRecord;
use crate::frontend::SpeechInput;
use crate::nn::{
    causal_mask, ops, padding_mask, Ctx, CrossDecoderBlock, EncoderBlock, Init, LayerNorm, Linear, ParamGroup,
};
use crate::{Error, Result};

pub(crate) const KIND: &str = "baseline";

/// Transformer encoder-decoder over frame sequences, with cross-attention
/// in place of the prefix path. Every parameter is trainable.
pub struct BaselineModel {
    cfg: BaselineConfig,
    vocab: Vocabulary,
    input_dim: usize,
    input_layers: usize,
    seed: u64,
    group: ParamGroup,
    layer_logits: Tensor,
    in_proj: Linear,
    encoder: Vec<EncoderBlock>,
    enc_ln: LayerNorm,
    tok_emb: Tensor,
    pos_emb: Tensor,
    decoder: Vec<CrossDecoderBlock>,
    dec_ln: LayerNorm,
    head: Linear,
}

impl BaselineModel {
    pub fn new(
        cfg: &BaselineConfig,
        vocab: Vocabulary,
        input_dim: usize,
        input_layers: usize,
        dtype: DType,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        if input_dim == 0 || input_layers == 0 {
            return Err(Error::Config("input dimensions must be positive".into()));
        }
        let w = cfg.width;
        let ff = cfg.ff_mult * w;
        let mut g = ParamGroup::new("baseline", dtype, seed);
        let layer_logits = g.get("layer_weights.logits", &[input_layers], Init::Zeros)?;
        let in_proj = Linear::new(&mut g, "in_proj", input_dim, w, true)?;
        let encoder = (0..cfg.encoder_layers)
            .map(|i| EncoderBlock::new(&mut g, &format!("enc{i}"), w, cfg.heads, ff, cfg.dropout))
            .collect::<Result<Vec<_>>>()?;
        let enc_ln = LayerNorm::new(&mut g, "enc_ln", w)?;
        let tok_emb = g.get("tok_emb", &[vocab.len(), w], Init::Normal(0.02 * (w as f64).sqrt()))?;
        let pos_emb = g.get("pos_emb", &[cfg.max_positions, w], Init::Normal(0.1))?;
        let decoder = (0..cfg.decoder_layers)
            .map(|i| CrossDecoderBlock::new(&mut g, &format!("dec{i}"), w, cfg.heads, ff, cfg.dropout))
            .collect::<Result<Vec<_>>>()?;
        let dec_ln = LayerNorm::new(&mut g, "dec_ln", w)?;
        let head = if cfg.zero_init_head {
            let weight = g.get("head.weight", &[vocab.len(), w], Init::Zeros)?;
            let bias = g.get("head.bias", &[vocab.len()], Init::Zeros)?;
            Linear::from_tensors(weight, Some(bias))
        } else {
            Linear::new(&mut g, "head", w, vocab.len(), true)?
        };
        Ok(Self {
            cfg: cfg.clone(),
            vocab,
            input_dim,
            input_layers,
            seed,
            group: g,
            layer_logits,
            in_proj,
            encoder,
            enc_ln,
            tok_emb,
            pos_emb,
            decoder,
            dec_ln,
            head,
        })
    }

    pub fn config(&self) -> &BaselineConfig {
        &self.cfg
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn group(&self) -> &ParamGroup {
        &self.group
    }

    /// Memory `[B, T, W]` and its additive key mask.
    pub fn encode(&self, input: &InputBatch, ctx: &Ctx) -> Result<(Tensor, Tensor)> {
        let InputBatch::Layered { feats, mask } = input else {
            return Err(Error::Config("the baseline needs frame sequences, not fixed vectors".into()));
        };
        let (_, l, t, d) = feats.dims4()?;
        if l != self.input_layers || d != self.input_dim {
            return Err(Error::Shape(format!(
                "baseline expects {} layers x {} dims, got {l} x {d}",
                self.input_layers, self.input_dim
            )));
        }
        let x = ops::weighted_layer_sum(feats, &self.layer_logits)?;
        let x = self.in_proj.forward(&x)?;
        let x = x.broadcast_add(&sinusoidal(t, self.cfg.width, x.dtype())?.unsqueeze(0)?)?;
        let keep = padding_mask(mask)?;
        let mut h = x;
        for block in &self.encoder {
            h = block.forward(&h, Some(&keep), ctx)?;
        }
        Ok((self.enc_ln.forward(&h)?, keep))
    }

    fn decode_logits(&self, ids: &Tensor, memory: &Tensor, keep: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        let (b, s) = ids.dims2()?;
        if s > self.cfg.max_positions {
            return Err(Error::Shape(format!("{s} tokens exceed {} positions", self.cfg.max_positions)));
        }
        let w = self.cfg.width;
        let x = self
            .tok_emb
            .index_select(&ids.flatten_all()?, 0)?
            .reshape((b, s, w))?
            .broadcast_add(&self.pos_emb.narrow(0, 0, s)?.unsqueeze(0)?)?;
        let causal = causal_mask(s, x.dtype())?;
        let mut h = x;
        for block in &self.decoder {
            h = block.forward(&h, &causal, memory, Some(keep), ctx)?;
        }
        self.head.forward(&self.dec_ln.forward(&h)?)
    }

    /// Teacher-forced logits `[B, S, V]`: position `i` sees the begin
    /// marker and target tokens before `i`.
    pub fn baseline_forward(&self, input: &InputBatch, targets: &TargetBatch, ctx: &Ctx) -> Result<Tensor> {
        let (memory, keep) = self.encode(input, ctx)?;
        let (b, s) = targets.ids.dims2()?;
        let bos = Tensor::full(BOS, (b, 1), &Device::Cpu)?;
        let ids = if s > 1 {
            Tensor::cat(&[&bos, &targets.ids.narrow(1, 0, s - 1)?], 1)?
        } else {
            bos
        };
        self.decode_logits(&ids, &memory, &keep, ctx)
    }

    pub fn batch_loss(&self, batch: &Batch, ctx: &Ctx) -> Result<Tensor> {
        token_cross_entropy(&self.baseline_forward(&batch.input, &batch.targets, ctx)?, &batch.targets)
    }

    pub fn baseline_decode(&self, input: &SpeechInput, opts: &DecodeOptions) -> Result<CaptionRecord> {
        let batch = InputBatch::from_inputs(&[input], self.group.dtype())?;
        let (memory, keep) = self.encode(&batch, &Ctx::eval())?;
        let step = BaselineStep {
            model: self,
            memory,
            keep,
        };
        Ok(CaptionRecord::from_tokens(generate(&step, opts)?, &self.vocab))
    }

    pub fn save(&self, path: &Path, state: Option<&TrainState>, run: Option<&serde_json::Value>) -> Result<()> {
        checkpoint::save_checkpoint(
            path,
            KIND,
            &serde_json::json!({
                "model": self.cfg,
                "input_dim": self.input_dim,
                "input_layers": self.input_layers,
                "seed": self.seed,
                "dtype": super::captioner::dtype_name(self.group.dtype()),
                "run": run,
            }),
            &self.vocab,
            state,
            &[&self.group],
        )
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.kind != KIND {
            return Err(Error::Checkpoint(format!("expected a {KIND} checkpoint, found `{}`", ckpt.kind)));
        }
        let c = &ckpt.config;
        let cfg: BaselineConfig = serde_json::from_value(c["model"].clone())?;
        let dim = |k: &str| {
            c[k].as_u64()
                .map(|v| v as usize)
                .ok_or_else(|| Error::Checkpoint(format!("missing `{k}`")))
        };
        let dtype = super::captioner::parse_dtype(c["dtype"].as_str().unwrap_or("f32"))?;
        let model = Self::new(
            &cfg,
            ckpt.vocab.clone(),
            dim("input_dim")?,
            dim("input_layers")?,
            dtype,
            c["seed"].as_u64().unwrap_or(0),
        )?;
        ckpt.restore(&model.group)?;
        Ok(model)
    }
}

impl Trainable for BaselineModel {
    fn batch_loss(&self, batch: &Batch, ctx: &Ctx) -> Result<Tensor> {
        BaselineModel::batch_loss(self, batch, ctx)
    }

    fn trainable_groups(&self) -> Vec<&ParamGroup> {
        vec![&self.group]
    }

    fn frozen_digests(&self) -> Result<BTreeMap<String, String>> {
        Ok(BTreeMap::new())
    }

    fn dtype(&self) -> DType {
        self.group.dtype()
    }

    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }
}

struct BaselineStep<'a> {
    model: &'a BaselineModel,
    memory: Tensor,
    keep: Tensor,
}

impl StepModel for BaselineStep<'_> {
    fn next_logits(&self, seqs: &[Vec<u32>]) -> Result<Vec<Vec<f32>>> {
        let b = seqs.len();
        let n = seqs[0].len() + 1;
        let flat: Vec<u32> = seqs.iter().flat_map(|s| std::iter::once(BOS).chain(s.iter().copied())).collect();
        let ids = Tensor::from_vec(flat, (b, n), &Device::Cpu)?;
        let (_, t, w) = self.memory.dims3()?;
        let memory = self.memory.broadcast_as((b, t, w))?.contiguous()?;
        let keep = self.keep.broadcast_as((b, 1, 1, t))?.contiguous()?;
        let logits = self.model.decode_logits(&ids, &memory, &keep, &Ctx::eval())?;
        Ok(logits
            .narrow(1, n - 1, 1)?
            .squeeze(1)?
            .to_dtype(DType::F32)?
            .to_vec2::<f32>()?)
    }
}

/// Fixed sinusoidal position table `[T, W]`.
fn sinusoidal(t: usize, w: usize, dtype: DType) -> Result<Tensor> {
    let mut data = vec![0f32; t * w];
    for pos in 0..t {
        for i in 0..w {
            let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / w as f64);
            let a = pos as f64 * rate;
            data[pos * w + i] = if i % 2 == 0 { a.sin() } else { a.cos() } as f32;
        }
    }
    ops::tensor_from_f32(&data, &[t, w], dtype)
}
