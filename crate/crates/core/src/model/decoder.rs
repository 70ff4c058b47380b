use candle_core::{DType, Device, Tensor};
use serde_json::json;

use super::config::DecoderConfig;
use super::vocab::{BOS, PAD};
use crate::nn::{causal_mask, Ctx, EncoderBlock, Init, LayerNorm, Linear, ParamGroup};
use crate::transport::JsonTransport;
use crate::{Error, Result};

/// What the captioner needs from an autoregressive text decoder.
pub trait DecoderInterface {
    fn vocab_size(&self) -> usize;
    fn d_w(&self) -> usize;
    /// `[B, S]` u32 ids to `[B, S, d_w]` input embeddings.
    fn embed(&self, ids: &Tensor) -> Result<Tensor>;
    /// `[B, P, d_w]` input embeddings to `[B, P, V]` next-token logits,
    /// position `p` attending to positions `<= p`.
    fn forward(&self, inputs: &Tensor) -> Result<Tensor>;
    fn is_frozen(&self) -> bool;
    fn dtype(&self) -> DType;
}

/// Small causal transformer language model.
///
/// Token embeddings carry their own learned positions starting from zero, so
/// a caption occupies the same positions whatever prefix precedes it.
pub struct TinyDecoder {
    cfg: DecoderConfig,
    d_w: usize,
    vocab_size: usize,
    tok_emb: Tensor,
    pos_emb: Tensor,
    blocks: Vec<EncoderBlock>,
    ln_f: LayerNorm,
    head: Linear,
    group: ParamGroup,
}

impl TinyDecoder {
    pub fn new(cfg: &DecoderConfig, vocab_size: usize, d_w: usize, dtype: DType, seed: u64) -> Result<Self> {
        let mut g = ParamGroup::new("decoder", dtype, seed);
        let tok_emb = g.get("tok_emb", &[vocab_size, d_w], Init::Normal(0.02 * (d_w as f64).sqrt()))?;
        let pos_emb = g.get("pos_emb", &[cfg.max_positions, d_w], Init::Normal(0.1))?;
        let blocks = (0..cfg.layers)
            .map(|i| EncoderBlock::new(&mut g, &format!("block{i}"), d_w, cfg.heads, cfg.ff_mult * d_w, 0.0))
            .collect::<Result<Vec<_>>>()?;
        let ln_f = LayerNorm::new(&mut g, "ln_f", d_w)?;
        let head = Linear::new(&mut g, "head", d_w, vocab_size, true)?;
        Ok(Self {
            cfg: cfg.clone(),
            d_w,
            vocab_size,
            tok_emb,
            pos_emb,
            blocks,
            ln_f,
            head,
            group: g,
        })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.cfg
    }

    pub fn group(&self) -> &ParamGroup {
        &self.group
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.cfg.frozen = frozen;
    }

    /// Embedding of the begin-of-sequence token, used as a one-vector
    /// prefix when the decoder is trained as a plain language model.
    pub fn bos_prefix(&self, batch: usize) -> Result<Tensor> {
        let ids = Tensor::from_vec(vec![BOS; batch], (batch, 1), &Device::Cpu)?;
        Ok(self.tok_emb.index_select(&ids.flatten_all()?, 0)?.reshape((batch, 1, self.d_w))?)
    }

    /// `[B, 1 + S, d_w]`: the begin-of-sequence embedding followed by the
    /// position-free embeddings of `ids` (`[B, S]`), padding mapped to
    /// begin-of-sequence. Used to teach the language model to read words
    /// out of its prefix.
    pub fn bag_prefix(&self, ids: &Tensor) -> Result<Tensor> {
        let (b, s) = ids.dims2()?;
        let mut flat = Vec::with_capacity(b * (s + 1));
        for row in ids.to_vec2::<u32>()? {
            flat.push(BOS);
            flat.extend(row.into_iter().map(|t| if t == PAD { BOS } else { t }));
        }
        let ids = Tensor::from_vec(flat, b * (s + 1), &Device::Cpu)?;
        Ok(self.tok_emb.index_select(&ids, 0)?.reshape((b, s + 1, self.d_w))?)
    }
}

impl DecoderInterface for TinyDecoder {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn d_w(&self) -> usize {
        self.d_w
    }

    fn embed(&self, ids: &Tensor) -> Result<Tensor> {
        let (b, s) = ids.dims2()?;
        if s > self.cfg.max_positions {
            return Err(Error::Shape(format!(
                "{s} tokens exceed the decoder's {} positions",
                self.cfg.max_positions
            )));
        }
        let tok = self
            .tok_emb
            .index_select(&ids.flatten_all()?, 0)?
            .reshape((b, s, self.d_w))?;
        Ok(tok.broadcast_add(&self.pos_emb.narrow(0, 0, s)?.unsqueeze(0)?)?)
    }

    fn forward(&self, inputs: &Tensor) -> Result<Tensor> {
        let (_, p, d) = inputs.dims3()?;
        if d != self.d_w {
            return Err(Error::Shape(format!("input width {d}, decoder width {}", self.d_w)));
        }
        let mask = causal_mask(p, inputs.dtype())?;
        let ctx = Ctx::eval();
        let mut x = inputs.clone();
        for block in &self.blocks {
            x = block.forward(&x, Some(&mask), &ctx)?;
        }
        self.head.forward(&self.ln_f.forward(&x)?)
    }

    fn is_frozen(&self) -> bool {
        self.cfg.frozen
    }

    fn dtype(&self) -> DType {
        self.group.dtype()
    }
}

/// Decoder backed by an external language-model service.
///
/// The embedding table is held locally; logits come from the service, which
/// receives `{"inputs_embeds": [B][P][d_w]}` and must reply with
/// `{"logits": [B][P][V]}`. Gradients do not flow through it, so it serves
/// inference only and always reports itself frozen.
pub struct ServiceDecoder {
    embeddings: Tensor,
    positions: Option<Tensor>,
    transport: JsonTransport,
}

impl ServiceDecoder {
    pub fn new(embeddings: Tensor, positions: Option<Tensor>, transport: JsonTransport) -> Result<Self> {
        embeddings.dims2()?;
        Ok(Self {
            embeddings,
            positions,
            transport,
        })
    }
}

impl DecoderInterface for ServiceDecoder {
    fn vocab_size(&self) -> usize {
        self.embeddings.dims()[0]
    }

    fn d_w(&self) -> usize {
        self.embeddings.dims()[1]
    }

    fn embed(&self, ids: &Tensor) -> Result<Tensor> {
        let (b, s) = ids.dims2()?;
        let tok = self
            .embeddings
            .index_select(&ids.flatten_all()?, 0)?
            .reshape((b, s, self.d_w()))?;
        match &self.positions {
            Some(p) => Ok(tok.broadcast_add(&p.narrow(0, 0, s)?.unsqueeze(0)?)?),
            None => Ok(tok),
        }
    }

    fn forward(&self, inputs: &Tensor) -> Result<Tensor> {
        let (b, p, _) = inputs.dims3()?;
        let data = inputs.to_dtype(DType::F32)?.to_vec3::<f32>()?;
        let reply = self.transport.call(&json!({ "inputs_embeds": data }))?;
        let logits: Vec<Vec<Vec<f32>>> = serde_json::from_value(
            reply
                .get("logits")
                .cloned()
                .ok_or_else(|| Error::External("reply lacks `logits`".into()))?,
        )?;
        let v = self.vocab_size();
        if logits.len() != b || logits.iter().any(|r| r.len() != p || r.iter().any(|l| l.len() != v)) {
            return Err(Error::External(format!("expected logits of shape [{b}][{p}][{v}]")));
        }
        let flat: Vec<f32> = logits.into_iter().flatten().flatten().collect();
        Ok(Tensor::from_vec(flat, (b, p, v), &Device::Cpu)?.to_dtype(self.embeddings.dtype())?)
    }

    fn is_frozen(&self) -> bool {
        true
    }

    fn dtype(&self) -> DType {
        self.embeddings.dtype()
    }
}
