use std::f64::consts::PI;
use std::path::Path;

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use super::FeatureSequence;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MelConfig {
    pub window_ms: f64,
    pub shift_ms: f64,
    pub n_mels: usize,
    pub f_min: f64,
    /// Upper band edge; `None` means Nyquist.
    pub f_max: Option<f64>,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            window_ms: 25.0,
            shift_ms: 10.0,
            n_mels: 80,
            f_min: 0.0,
            f_max: None,
            log_floor: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

/// Reads a 16-bit PCM mono WAV file, scaling samples to [-1, 1).
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1
        || spec.bits_per_sample != 16
        || spec.sample_format != hound::SampleFormat::Int
    {
        return Err(Error::Container {
            path: path.to_path_buf(),
            msg: format!(
                "expected 16-bit PCM mono, got {} channel(s), {} bits",
                spec.channels, spec.bits_per_sample
            ),
        });
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f32 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(Waveform {
        samples,
        sample_rate: spec.sample_rate,
    })
}

fn window_and_hop(sample_rate: u32, cfg: &MelConfig) -> (usize, usize) {
    let sr = sample_rate as f64;
    let win = (sr * cfg.window_ms / 1000.0).round() as usize;
    let hop = (sr * cfg.shift_ms / 1000.0).round() as usize;
    (win.max(1), hop.max(1))
}

/// Number of analysis frames: `floor((N - win) / hop) + 1`, or `None` when
/// the signal is shorter than one window.
pub fn frame_count(n_samples: usize, sample_rate: u32, cfg: &MelConfig) -> Option<usize> {
    let (win, hop) = window_and_hop(sample_rate, cfg);
    (n_samples >= win).then(|| (n_samples - win) / hop + 1)
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular HTK-scale filters, `n_mels x (n_fft / 2 + 1)`.
fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: f64, f_min: f64, f_max: f64) -> Vec<Vec<f64>> {
    let bins = n_fft / 2 + 1;
    let lo = hz_to_mel(f_min);
    let hi = hz_to_mel(f_max);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz: Vec<f64> = (0..bins)
        .map(|k| k as f64 * sample_rate / n_fft as f64)
        .collect();
    (0..n_mels)
        .map(|m| {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            bin_hz
                .iter()
                .map(|&f| {
                    if f <= left || f >= right {
                        0.0
                    } else if f <= center {
                        (f - left) / (center - left)
                    } else {
                        (right - f) / (right - center)
                    }
                })
                .collect()
        })
        .collect()
}

/// Log mel energies with a periodic Hann window and zero-padded FFT.
pub fn compute_mel(wav: &Waveform, cfg: &MelConfig) -> Result<FeatureSequence> {
    if wav.sample_rate == 0 {
        return Err(Error::SampleRate(wav.sample_rate));
    }
    let (win, hop) = window_and_hop(wav.sample_rate, cfg);
    let frames = frame_count(wav.samples.len(), wav.sample_rate, cfg).ok_or(
        Error::SignalTooShort {
            len: wav.samples.len(),
            need: win,
        },
    )?;
    let sr = wav.sample_rate as f64;
    let f_max = cfg.f_max.unwrap_or(sr / 2.0);
    if cfg.n_mels == 0 || !(f_max > cfg.f_min) || f_max > sr / 2.0 {
        return Err(Error::Config(format!(
            "bad mel band: {} bins over {}..{f_max} Hz",
            cfg.n_mels, cfg.f_min
        )));
    }
    let n_fft = win.next_power_of_two();
    let bank = mel_filterbank(cfg.n_mels, n_fft, sr, cfg.f_min, f_max);
    let window: Vec<f64> = (0..win)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / win as f64).cos())
        .collect();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);

    let mut out = Vec::with_capacity(frames * cfg.n_mels);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut power = vec![0.0f64; n_fft / 2 + 1];
    for f in 0..frames {
        let start = f * hop;
        for (i, slot) in buf.iter_mut().enumerate() {
            let v = if i < win {
                wav.samples[start + i] as f64 * window[i]
            } else {
                0.0
            };
            *slot = Complex::new(v, 0.0);
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        for filt in &bank {
            let e: f64 = filt.iter().zip(&power).map(|(w, p)| w * p).sum();
            out.push(e.max(cfg.log_floor).ln() as f32);
        }
    }
    FeatureSequence::new(frames, cfg.n_mels, out, cfg.shift_ms as f32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(seconds: f64, sr: u32) -> Waveform {
        let n = (seconds * sr as f64) as usize;
        Waveform {
            samples: (0..n)
                .map(|i| {
                    let t = i as f64 / sr as f64;
                    (0.3 * (2.0 * PI * 440.0 * t).sin() + 0.1 * (2.0 * PI * 1234.0 * t).sin()) as f32
                })
                .collect(),
            sample_rate: sr,
        }
    }

    #[test]
    fn one_second_at_16k_gives_98_frames() {
        let n = 16_000usize;
        // Independent framing arithmetic: 400-sample window, 160-sample hop.
        let expected = (n - 400) / 160 + 1;
        assert_eq!(expected, 98);
        let mel = compute_mel(&tone(1.0, 16_000), &MelConfig::default()).unwrap();
        assert_eq!(mel.frames(), expected);
        assert_eq!(mel.dim(), 80);
        assert_eq!(mel.frame_shift_ms(), 10.0);
    }

    #[test]
    fn silence_is_flat_and_finite() {
        let wav = Waveform {
            samples: vec![0.0; 8000],
            sample_rate: 16_000,
        };
        let mel = compute_mel(&wav, &MelConfig::default()).unwrap();
        let first = mel.frame(0).to_vec();
        assert!(first.iter().all(|v| v.is_finite()));
        for t in 0..mel.frames() {
            assert_eq!(mel.frame(t), first.as_slice());
        }
        assert!((first[0] as f64 - 1e-10f64.ln()).abs() < 1e-4);
    }

    #[test]
    fn deterministic_and_sign_invariant() {
        let wav = tone(0.5, 16_000);
        let a = compute_mel(&wav, &MelConfig::default()).unwrap();
        let b = compute_mel(&wav, &MelConfig::default()).unwrap();
        assert_eq!(a, b);
        let flipped = Waveform {
            samples: wav.samples.iter().map(|v| -v).collect(),
            sample_rate: wav.sample_rate,
        };
        let c = compute_mel(&flipped, &MelConfig::default()).unwrap();
        for (x, y) in a.data().iter().zip(c.data()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_short_signal_and_bad_rate() {
        let short = Waveform {
            samples: vec![0.0; 399],
            sample_rate: 16_000,
        };
        assert!(matches!(
            compute_mel(&short, &MelConfig::default()),
            Err(Error::SignalTooShort { len: 399, need: 400 })
        ));
        let zero = Waveform {
            samples: vec![0.0; 1000],
            sample_rate: 0,
        };
        assert!(matches!(
            compute_mel(&zero, &MelConfig::default()),
            Err(Error::SampleRate(0))
        ));
    }

    #[test]
    fn wav_roundtrip_through_hound() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16_000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for v in tone(0.1, 16_000).samples {
            w.write_sample((v * 32767.0) as i16).unwrap();
        }
        w.finalize().unwrap();
        let wav = read_wav(&path).unwrap();
        assert_eq!(wav.samples.len(), 1600);
        assert_eq!(wav.sample_rate, 16_000);
    }
}
