use candle_core::{DType, Device, Tensor};

use crate::frontend::SpeechInput;
use crate::nn::ops;
use crate::{Error, Result};

/// One training or evaluation item: speech input plus target token ids
/// (ending with end-of-sequence).
#[derive(Debug, Clone)]
pub struct Example {
    pub id: String,
    pub input: SpeechInput,
    pub tokens: Vec<u32>,
}

pub enum InputBatch {
    /// `feats` is `[B, L, T, D]`, `mask` is `[B, T]`.
    Layered { feats: Tensor, mask: Tensor },
    /// `feats` is `[B, D_x]`.
    Fixed { feats: Tensor },
}

impl InputBatch {
    pub fn batch_size(&self) -> Result<usize> {
        Ok(match self {
            InputBatch::Layered { feats, .. } => feats.dim(0)?,
            InputBatch::Fixed { feats } => feats.dim(0)?,
        })
    }

    pub fn from_inputs(inputs: &[&SpeechInput], dtype: DType) -> Result<Self> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::Precondition("empty batch".into()))?;
        match first {
            SpeechInput::Fixed(v0) => {
                let dim = v0.dim();
                let mut data = Vec::with_capacity(inputs.len() * dim);
                for x in inputs {
                    match x {
                        SpeechInput::Fixed(v) if v.dim() == dim => data.extend_from_slice(v.values()),
                        _ => return Err(Error::Shape("mixed or ragged fixed-vector batch".into())),
                    }
                }
                Ok(InputBatch::Fixed {
                    feats: ops::tensor_from_f32(&data, &[inputs.len(), dim], dtype)?,
                })
            }
            SpeechInput::Layered(x0) => {
                let (layers, dim) = (x0.layers(), x0.dim());
                let mut max_t = 0;
                for x in inputs {
                    match x {
                        SpeechInput::Layered(s) if s.layers() == layers && s.dim() == dim => {
                            max_t = max_t.max(s.frames())
                        }
                        _ => {
                            return Err(Error::Shape(
                                "batch mixes feature kinds, layer counts or dimensions".into(),
                            ))
                        }
                    }
                }
                let b = inputs.len();
                let mut data = vec![0f32; b * layers * max_t * dim];
                let mut mask = vec![0f32; b * max_t];
                for (i, x) in inputs.iter().enumerate() {
                    let SpeechInput::Layered(s) = x else { unreachable!() };
                    let t = s.frames();
                    for l in 0..layers {
                        let src = &s.data()[l * t * dim..(l + 1) * t * dim];
                        let dst = ((i * layers + l) * max_t) * dim;
                        data[dst..dst + t * dim].copy_from_slice(src);
                    }
                    mask[i * max_t..i * max_t + t].iter_mut().for_each(|m| *m = 1.0);
                }
                Ok(InputBatch::Layered {
                    feats: ops::tensor_from_f32(&data, &[b, layers, max_t, dim], dtype)?,
                    mask: ops::tensor_from_f32(&mask, &[b, max_t], dtype)?,
                })
            }
        }
    }
}

/// Right-padded target ids with a validity mask.
pub struct TargetBatch {
    pub ids: Tensor,
    pub mask: Tensor,
    pub lengths: Vec<usize>,
}

impl TargetBatch {
    pub fn new(seqs: &[&[u32]], vocab_size: usize, dtype: DType) -> Result<Self> {
        if seqs.is_empty() {
            return Err(Error::Precondition("empty target batch".into()));
        }
        let max_len = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut ids = vec![0u32; seqs.len() * max_len];
        let mut mask = vec![0f32; seqs.len() * max_len];
        for (i, s) in seqs.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::Precondition("target sequence is empty".into()));
            }
            for (j, &tok) in s.iter().enumerate() {
                if tok as usize >= vocab_size {
                    return Err(Error::OutOfVocab {
                        token: tok,
                        vocab: vocab_size,
                    });
                }
                ids[i * max_len + j] = tok;
                mask[i * max_len + j] = 1.0;
            }
        }
        Ok(Self {
            ids: Tensor::from_vec(ids, (seqs.len(), max_len), &Device::Cpu)?,
            mask: ops::tensor_from_f32(&mask, &[seqs.len(), max_len], dtype)?,
            lengths: seqs.iter().map(|s| s.len()).collect(),
        })
    }

    pub fn max_len(&self) -> usize {
        self.lengths.iter().copied().max().unwrap_or(0)
    }
}

pub struct Batch {
    pub input: InputBatch,
    pub targets: TargetBatch,
}

pub fn collate(examples: &[&Example], vocab_size: usize, dtype: DType) -> Result<Batch> {
    let inputs: Vec<&SpeechInput> = examples.iter().map(|e| &e.input).collect();
    let seqs: Vec<&[u32]> = examples.iter().map(|e| e.tokens.as_slice()).collect();
    Ok(Batch {
        input: InputBatch::from_inputs(&inputs, dtype)?,
        targets: TargetBatch::new(&seqs, vocab_size, dtype)?,
    })
}
