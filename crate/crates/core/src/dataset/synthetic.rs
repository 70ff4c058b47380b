//! Synthetic speech-style corpus.
//!
//! Each record draws its four style factors uniformly at random and gets a
//! `L x T x D` feature stack built as follows. The first `4 * (D / 4)`
//! dimensions form four equal blocks `[gender | pitch | speed | volume]`;
//! leftover dimensions carry noise only.
//!
//! * gender: the block holds an alternating `+1/-1` pattern, sign-flipped for
//!   female speakers;
//! * pitch: dimension `j` of the block is `1` when `j % 3` equals the level
//!   index (low 0, mid 1, high 2) and `0` otherwise, so every level owns its
//!   own dimensions;
//! * speed: the block is coded the same way, and the frame count is drawn
//!   from the upper, middle or lower third of `frames_range` for low, mid,
//!   high speed;
//! * volume: the block is coded the same way, and the whole frame (signal and
//!   speaker offset) is scaled by `0.5`, `1.0` or `1.5` for low, mid, high.
//!
//! Layer `l` (0-based) carries the signal at strength `(l + 1) / L`, so deeper
//! layers are more informative. Every value gets i.i.d. Gaussian noise.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{container, save_manifest, DatasetRecord, Factor, Gender, Level, Manifest, SplitTag, StyleFactors};
use crate::frontend::LayeredFeatureSequence;
use crate::{Error, Result};

pub const VOLUME_SCALE: [f32; 3] = [0.5, 1.0, 1.5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub frames_range: (usize, usize),
    pub feature_dim: usize,
    pub n_layers: usize,
    #[serde(default = "default_templates")]
    pub caption_templates: Vec<String>,
    pub seed: u64,
    #[serde(default = "default_speakers")]
    pub n_speakers: usize,
    #[serde(default = "default_noise")]
    pub noise_std: f32,
}

fn default_speakers() -> usize {
    20
}

fn default_noise() -> f32 {
    0.5
}

pub fn default_templates() -> Vec<String> {
    [
        "the {gender} speaker has a {pitch} pitch, a {speed} speed and a {volume} volume.",
        "a {gender} voice with {pitch} pitch, speaking at a {speed} pace with {volume} volume.",
        "{pitch} pitch, {speed} speed and {volume} volume from a {gender} speaker.",
        "this {gender} speaker sounds {volume}, with a {pitch} pitch and a {speed} rate of speech.",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_samples: 200,
            frames_range: (12, 36),
            feature_dim: 16,
            n_layers: 3,
            caption_templates: default_templates(),
            seed: 0,
            n_speakers: default_speakers(),
            noise_std: default_noise(),
        }
    }
}

const SLOTS: [&str; 4] = ["{gender}", "{pitch}", "{speed}", "{volume}"];

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let (lo, hi) = self.frames_range;
        if self.n_samples == 0 {
            return bad("n_samples must be positive".into());
        }
        if lo == 0 || lo > hi {
            return bad(format!("frames_range ({lo}, {hi}) needs 1 <= min <= max"));
        }
        if hi - lo + 1 < 3 {
            return bad(format!("frames_range ({lo}, {hi}) must span at least 3 frame counts"));
        }
        if self.feature_dim < 12 {
            return bad("feature_dim must be at least 12 (three dimensions per factor block)".into());
        }
        if self.n_layers == 0 || self.n_speakers == 0 {
            return bad("n_layers and n_speakers must be positive".into());
        }
        if !(self.noise_std >= 0.0) {
            return bad("noise_std must be non-negative".into());
        }
        if self.caption_templates.is_empty() {
            return bad("at least one caption template is required".into());
        }
        for t in &self.caption_templates {
            let stripped = SLOTS.iter().fold(t.clone(), |acc, s| acc.replace(s, ""));
            if stripped.contains('{') || stripped.contains('}') {
                return bad(format!("template `{t}` has an unknown slot"));
            }
            if t.trim().is_empty() {
                return bad("empty caption template".into());
            }
        }
        Ok(())
    }

    /// Frame-count interval assigned to a speed level.
    pub fn speed_frames(&self, speed: Level) -> (usize, usize) {
        let (lo, hi) = self.frames_range;
        let span = hi - lo + 1;
        let b1 = lo + span.div_ceil(3);
        let b2 = lo + (2 * span).div_ceil(3);
        match speed {
            Level::High => (lo, b1 - 1),
            Level::Mid => (b1, b2 - 1),
            Level::Low => (b2, hi),
        }
    }
}

pub fn render_caption(template: &str, f: &StyleFactors) -> String {
    template
        .replace("{gender}", Factor::Gender.word(Factor::Gender.label(f)))
        .replace("{pitch}", Factor::Pitch.word(f.pitch.index()))
        .replace("{speed}", Factor::Speed.word(f.speed.index()))
        .replace("{volume}", Factor::Volume.word(f.volume.index()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub manifest: Manifest,
    /// Features aligned with `manifest.records`.
    pub features: Vec<LayeredFeatureSequence>,
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dim = spec.feature_dim;
    let block = dim / 4;
    let noise = Normal::new(0.0f32, spec.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let offset = Normal::new(0.0f32, 0.1).expect("valid std");

    let speaker_offsets: Vec<Vec<f32>> = (0..spec.n_speakers)
        .map(|_| (0..dim).map(|_| offset.sample(&mut rng)).collect())
        .collect();

    let mut records = Vec::with_capacity(spec.n_samples);
    let mut features = Vec::with_capacity(spec.n_samples);
    for i in 0..spec.n_samples {
        let factors = StyleFactors {
            gender: if rng.random_bool(0.5) { Gender::Male } else { Gender::Female },
            pitch: Level::ALL[rng.random_range(0..3)],
            speed: Level::ALL[rng.random_range(0..3)],
            volume: Level::ALL[rng.random_range(0..3)],
        };
        let speaker = rng.random_range(0..spec.n_speakers);
        let (tlo, thi) = spec.speed_frames(factors.speed);
        let frames = rng.random_range(tlo..=thi);

        let mut signal = vec![0.0f32; dim];
        let sign = if factors.gender == Gender::Male { 1.0 } else { -1.0 };
        let code = |l: Level, j: usize| if j % 3 == l.index() { 1.0 } else { 0.0 };
        for j in 0..block {
            signal[j] = sign * if j % 2 == 0 { 1.0 } else { -1.0 };
            signal[block + j] = code(factors.pitch, j);
            signal[2 * block + j] = code(factors.speed, j);
            signal[3 * block + j] = code(factors.volume, j);
        }
        let scale = VOLUME_SCALE[factors.volume.index()];

        let mut data = Vec::with_capacity(spec.n_layers * frames * dim);
        for l in 0..spec.n_layers {
            let strength = (l + 1) as f32 / spec.n_layers as f32;
            for _ in 0..frames {
                for d in 0..dim {
                    let clean = scale * (strength * signal[d] + speaker_offsets[speaker][d]);
                    data.push(clean + noise.sample(&mut rng));
                }
            }
        }
        let template = &spec.caption_templates[rng.random_range(0..spec.caption_templates.len())];
        let id = format!("syn{i:06}");
        records.push(DatasetRecord {
            speech_ref: format!("features/{id}.bin"),
            id,
            caption: render_caption(template, &factors),
            speaker_id: format!("spk{speaker:03}"),
            factors: Some(factors),
            source_id: None,
        });
        features.push(LayeredFeatureSequence::new(spec.n_layers, frames, dim, data)?);
    }
    Ok(SyntheticCorpus {
        manifest: Manifest::new(records, SplitTag::Unsplit)?,
        features,
    })
}

/// Writes every feature stack to its `speech_ref` under `dir` and the
/// manifest to `dir/<manifest_name>`.
pub fn write_synthetic(corpus: &SyntheticCorpus, dir: &Path, manifest_name: &str) -> Result<()> {
    for (r, x) in corpus.manifest.records.iter().zip(&corpus.features) {
        container::write_layered(&dir.join(&r.speech_ref), x)?;
    }
    save_manifest(&corpus.manifest, &dir.join(manifest_name))
}
