//! Model input features: mel-spectrograms, precomputed per-layer hidden
//! states from a speech feature extractor, and fixed-length speaker vectors.

mod mel;

use std::path::Path;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::dataset::{container, DatasetRecord};
use crate::nn::ops;
use crate::{Error, Result};

pub use mel::{compute_mel, frame_count, read_wav, MelConfig, Waveform};

/// A `T x D` frame sequence, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    frames: usize,
    dim: usize,
    data: Vec<f32>,
    frame_shift_ms: f32,
}

impl FeatureSequence {
    pub fn new(frames: usize, dim: usize, data: Vec<f32>, frame_shift_ms: f32) -> Result<Self> {
        if frames == 0 || dim == 0 {
            return Err(Error::Shape("feature sequence needs T >= 1 and D >= 1".into()));
        }
        if data.len() != frames * dim {
            return Err(Error::Shape(format!(
                "{} values for a {frames} x {dim} sequence",
                data.len()
            )));
        }
        if !(frame_shift_ms > 0.0) {
            return Err(Error::Shape("frame shift must be positive".into()));
        }
        check_finite(&data)?;
        Ok(Self {
            frames,
            dim,
            data,
            frame_shift_ms,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn frame_shift_ms(&self) -> f32 {
        self.frame_shift_ms
    }

    /// Wraps the sequence as a single-layer stack.
    pub fn into_layered(self) -> LayeredFeatureSequence {
        LayeredFeatureSequence {
            layers: 1,
            frames: self.frames,
            dim: self.dim,
            data: self.data,
        }
    }
}

/// Per-layer hidden states, `L x T x D`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredFeatureSequence {
    layers: usize,
    frames: usize,
    dim: usize,
    data: Vec<f32>,
}

impl LayeredFeatureSequence {
    pub fn new(layers: usize, frames: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if layers == 0 || frames == 0 || dim == 0 {
            return Err(Error::Shape(format!(
                "layered features need positive dims, got ({layers}, {frames}, {dim})"
            )));
        }
        if data.len() != layers * frames * dim {
            return Err(Error::Shape(format!(
                "{} values for a {layers} x {frames} x {dim} stack",
                data.len()
            )));
        }
        check_finite(&data)?;
        Ok(Self {
            layers,
            frames,
            dim,
            data,
        })
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn at(&self, layer: usize, t: usize, d: usize) -> f32 {
        self.data[(layer * self.frames + t) * self.dim + d]
    }

    pub fn to_tensor(&self, dtype: DType) -> Result<Tensor> {
        ops::tensor_from_f32(&self.data, &[self.layers, self.frames, self.dim], dtype)
    }

    /// Mean over layers and frames, one value per feature dimension.
    pub fn mean_pooled(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for row in self.data.chunks(self.dim) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += *v as f64;
            }
        }
        let n = (self.layers * self.frames) as f64;
        out.iter_mut().for_each(|v| *v /= n);
        out
    }
}

/// Unconstrained layer logits; the effective weights are their softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub logits: Vec<f32>,
}

impl LayerWeights {
    pub fn uniform(layers: usize) -> Self {
        Self {
            logits: vec![0.0; layers],
        }
    }

    pub fn normalized(&self) -> Vec<f64> {
        let max = self
            .logits
            .iter()
            .fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
        let e: Vec<f64> = self.logits.iter().map(|&v| (v as f64 - max).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }
}

/// A fixed-length utterance vector such as an x-vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedVector {
    values: Vec<f32>,
}

impl FixedVector {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Shape("fixed vector must be non-empty".into()));
        }
        check_finite(&values)?;
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

/// Whatever a record's `speech_ref` resolves to.
#[derive(Debug, Clone, PartialEq)]
pub enum SpeechInput {
    Layered(LayeredFeatureSequence),
    Fixed(FixedVector),
}

impl SpeechInput {
    pub fn feature_dim(&self) -> usize {
        match self {
            SpeechInput::Layered(l) => l.dim(),
            SpeechInput::Fixed(f) => f.dim(),
        }
    }
}

/// `out[t] = sum_l softmax(w)_l * h[l, t]`.
pub fn weighted_layer_sum(h: &LayeredFeatureSequence, w: &LayerWeights) -> Result<FeatureSequence> {
    if w.logits.len() != h.layers() {
        return Err(Error::Shape(format!(
            "{} layer weights for {} layers",
            w.logits.len(),
            h.layers()
        )));
    }
    let t = h.to_tensor(DType::F64)?;
    let logits = ops::tensor_from_f32(&w.logits, &[w.logits.len()], DType::F64)?;
    let out = ops::weighted_layer_sum(&t, &logits)?;
    FeatureSequence::new(h.frames(), h.dim(), ops::to_f32_vec(&out)?, 10.0)
}

/// Resolves a record's `speech_ref` against `base_dir`: a `.wav` file goes
/// through [`compute_mel`] and comes back as a one-layer stack; anything else
/// is read as a binary tensor container.
pub fn load_features(record: &DatasetRecord, base_dir: &Path) -> Result<SpeechInput> {
    let path = base_dir.join(&record.speech_ref);
    let is_wav = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("wav"))
        .unwrap_or(false);
    if is_wav {
        let wav = read_wav(&path)?;
        let mel = compute_mel(&wav, &MelConfig::default())?;
        return Ok(SpeechInput::Layered(mel.into_layered()));
    }
    container::read(&path)
}

fn check_finite(values: &[f32]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::Shape(format!("non-finite value at flat index {i}"))),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn equal_logits_average_layers() {
        let h = LayeredFeatureSequence::new(2, 1, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = weighted_layer_sum(&h, &LayerWeights { logits: vec![0.0, 0.0] }).unwrap();
        assert_eq!(out.frame(0), &[2.0, 3.0]);
    }

    #[test]
    fn saturated_logits_select_first_layer() {
        let h = LayeredFeatureSequence::new(2, 3, 2, (0..12).map(|v| v as f32 * 0.7).collect())
            .unwrap();
        let out = weighted_layer_sum(&h, &LayerWeights { logits: vec![1000.0, -1000.0] }).unwrap();
        for t in 0..3 {
            for d in 0..2 {
                assert!((out.frame(t)[d] - h.at(0, t, d)).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn matches_elementwise_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (l, t, d) = (4, 7, 5);
        let data: Vec<f32> = (0..l * t * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let h = LayeredFeatureSequence::new(l, t, d, data).unwrap();
        let w = LayerWeights {
            logits: (0..l).map(|_| rng.random_range(-1.5..1.5)).collect(),
        };
        let out = weighted_layer_sum(&h, &w).unwrap();

        // Oracle: explicit softmax and triple loop in f64.
        let max = w.logits.iter().cloned().fold(f32::MIN, f32::max) as f64;
        let e: Vec<f64> = w.logits.iter().map(|&v| (v as f64 - max).exp()).collect();
        let z: f64 = e.iter().sum();
        for ti in 0..t {
            for di in 0..d {
                let mut acc = 0.0f64;
                for li in 0..l {
                    acc += e[li] / z * h.at(li, ti, di) as f64;
                }
                assert!((out.frame(ti)[di] as f64 - acc).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn layer_count_mismatch_is_an_error() {
        let h = LayeredFeatureSequence::new(3, 1, 1, vec![1.0; 3]).unwrap();
        assert!(matches!(
            weighted_layer_sum(&h, &LayerWeights::uniform(2)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn normalized_weights_lie_on_simplex() {
        let w = LayerWeights {
            logits: vec![3.0, -1.0, 0.5, 20.0],
        };
        let p = w.normalized();
        assert!(p.iter().all(|v| *v >= 0.0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_non_finite_features() {
        assert!(LayeredFeatureSequence::new(1, 1, 2, vec![1.0, f32::NAN]).is_err());
        assert!(FixedVector::new(vec![f32::INFINITY]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #[test]
            fn weighted_sum_is_linear(alpha in -5.0f32..5.0, seed in 0u64..1000) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let data: Vec<f32> = (0..3 * 4 * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
                let scaled: Vec<f32> = data.iter().map(|v| v * alpha).collect();
                let w = LayerWeights { logits: vec![0.3, -0.2, 1.1] };
                let a = weighted_layer_sum(&LayeredFeatureSequence::new(3, 4, 2, data).unwrap(), &w).unwrap();
                let b = weighted_layer_sum(&LayeredFeatureSequence::new(3, 4, 2, scaled).unwrap(), &w).unwrap();
                for (x, y) in a.data().iter().zip(b.data()) {
                    prop_assert!((x * alpha - y).abs() < 1e-6 * (1.0 + y.abs()));
                }
            }
        }
    }
}
