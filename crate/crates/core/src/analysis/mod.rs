//! Style-factor probes on learned embeddings and caption quality grouped by
//! probe correctness.

mod bins;
mod logreg;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Factor, Manifest, StyleFactors};
use crate::frontend::load_features;
use crate::model::PrefixCaptioner;
use crate::{Error, Result};

pub use bins::{bin_by_correctness, BinSummary, CorrectnessBins};
use logreg::{FitOptions, LogReg};

/// Fraction of the probe data used for fitting.
pub const PROBE_TRAIN_FRACTION: f64 = 0.8;

/// Embedding rows with their ids and factor labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSet {
    pub ids: Vec<String>,
    pub rows: Vec<Vec<f32>>,
    pub labels: Vec<StyleFactors>,
}

impl EmbeddingSet {
    pub fn new(ids: Vec<String>, rows: Vec<Vec<f32>>, labels: Vec<StyleFactors>) -> Result<Self> {
        if ids.len() != rows.len() || ids.len() != labels.len() {
            return Err(Error::Misaligned(format!(
                "{} ids, {} rows, {} labels",
                ids.len(),
                rows.len(),
                labels.len()
            )));
        }
        if let Some(r) = rows.iter().find(|r| r.len() != rows[0].len()) {
            return Err(Error::Shape(format!("ragged embeddings: {} vs {}", r.len(), rows[0].len())));
        }
        Ok(Self { ids, rows, labels })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn subset(&self, idx: &[usize]) -> Self {
        Self {
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Style embeddings of every record, in manifest order.
pub fn extract_embeddings(model: &PrefixCaptioner, manifest: &Manifest) -> Result<EmbeddingSet> {
    let mut ids = Vec::with_capacity(manifest.len());
    let mut rows = Vec::with_capacity(manifest.len());
    let mut labels = Vec::with_capacity(manifest.len());
    for r in &manifest.records {
        let f = r
            .factors
            .ok_or_else(|| Error::Precondition(format!("record `{}` has no style factors", r.id)))?;
        let z = model.embed_style(&load_features(r, &manifest.base_dir)?)?;
        ids.push(r.id.clone());
        rows.push(z.values().to_vec());
        labels.push(f);
    }
    EmbeddingSet::new(ids, rows, labels)
}

/// Held-out prediction for one sample, factors in [`Factor::ALL`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbePrediction {
    pub sample_id: String,
    pub predicted: [usize; 4],
    pub truth: [usize; 4],
}

impl ProbePrediction {
    pub fn correct(&self) -> usize {
        self.predicted.iter().zip(&self.truth).filter(|(p, t)| p == t).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub per_factor_accuracy: BTreeMap<String, f64>,
    pub average: f64,
    /// `confusion[factor][truth][predicted]` on the held-out rows.
    pub confusion: BTreeMap<String, Vec<Vec<usize>>>,
    pub train_size: usize,
    pub test_size: usize,
    pub predictions: Vec<ProbePrediction>,
}

fn standardizer(rows: &[Vec<f32>]) -> (Vec<f64>, Vec<f64>) {
    let d = rows[0].len();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += *v as f64 / n;
        }
    }
    let mut std = vec![0.0; d];
    for r in rows {
        for ((s, v), m) in std.iter_mut().zip(r).zip(&mean) {
            *s += (*v as f64 - m).powi(2) / n;
        }
    }
    let std = std.into_iter().map(|v| if v > 1e-24 { v.sqrt() } else { 1.0 }).collect();
    (mean, std)
}

/// Fits one classifier per factor on `train` and scores it on `test`.
pub fn train_probe_on(train: &EmbeddingSet, test: &EmbeddingSet) -> Result<ProbeResult> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::Precondition("probe needs training and held-out rows".into()));
    }
    if train.rows[0].len() != test.rows[0].len() {
        return Err(Error::Shape("train and test embeddings differ in width".into()));
    }
    // Standardizing makes predictions independent of a global rescaling.
    let (mean, std) = standardizer(&train.rows);
    let prep = |rows: &[Vec<f32>]| -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| r.iter().zip(&mean).zip(&std).map(|((v, m), s)| (*v as f64 - m) / s).collect())
            .collect()
    };
    let (xtr, xte) = (prep(&train.rows), prep(&test.rows));
    let mut predictions: Vec<ProbePrediction> = test
        .ids
        .iter()
        .zip(&test.labels)
        .map(|(id, l)| ProbePrediction {
            sample_id: id.clone(),
            predicted: [0; 4],
            truth: Factor::ALL.map(|f| f.label(l)),
        })
        .collect();
    let mut per_factor_accuracy = BTreeMap::new();
    let mut confusion = BTreeMap::new();
    for (fi, factor) in Factor::ALL.into_iter().enumerate() {
        let k = factor.num_classes();
        let ytr: Vec<usize> = train.labels.iter().map(|l| factor.label(l)).collect();
        let mut present = vec![false; k];
        ytr.iter().for_each(|&y| present[y] = true);
        if present.iter().filter(|p| **p).count() < 2 {
            return Err(Error::DegenerateFactor(factor.name().to_string()));
        }
        let model = LogReg::fit(&xtr, &ytr, k, &FitOptions::default());
        let mut conf = vec![vec![0usize; k]; k];
        let mut hits = 0;
        for (x, p) in xte.iter().zip(predictions.iter_mut()) {
            let y = model.predict(x);
            p.predicted[fi] = y;
            conf[p.truth[fi]][y] += 1;
            hits += (y == p.truth[fi]) as usize;
        }
        per_factor_accuracy.insert(factor.name().to_string(), hits as f64 / xte.len() as f64);
        confusion.insert(factor.name().to_string(), conf);
    }
    let average = per_factor_accuracy.values().sum::<f64>() / Factor::ALL.len() as f64;
    Ok(ProbeResult {
        per_factor_accuracy,
        average,
        confusion,
        train_size: train.len(),
        test_size: test.len(),
        predictions,
    })
}

/// Seeded 80/20 split, then [`train_probe_on`].
pub fn train_probe(set: &EmbeddingSet, seed: u64) -> Result<ProbeResult> {
    if set.len() < 2 {
        return Err(Error::Precondition("probe needs at least two rows".into()));
    }
    let mut idx: Vec<usize> = (0..set.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((set.len() as f64 * PROBE_TRAIN_FRACTION).round() as usize).clamp(1, set.len() - 1);
    train_probe_on(&set.subset(&idx[..n_train]), &set.subset(&idx[n_train..]))
}

/// Fraction of (caption, factor) pairs where the caption names the correct
/// class word of the factor and no other class word of that factor.
/// Captions are matched to records by id; records without factors are
/// skipped.
pub fn factor_word_accuracy(captions: &[(String, String)], manifest: &Manifest) -> Result<f64> {
    let factors: BTreeMap<&str, StyleFactors> = manifest
        .records
        .iter()
        .filter_map(|r| r.factors.map(|f| (r.id.as_str(), f)))
        .collect();
    let (mut hits, mut total) = (0usize, 0usize);
    for (id, caption) in captions {
        let Some(f) = factors.get(id.as_str()) else {
            continue;
        };
        let tokens: std::collections::HashSet<String> = crate::text::tokenize(caption).into_iter().collect();
        for factor in Factor::ALL {
            let truth = factor.label(f);
            let named: Vec<usize> = (0..factor.num_classes())
                .filter(|&c| tokens.contains(factor.word(c)))
                .collect();
            hits += (named == [truth]) as usize;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::Precondition("no captioned record carries style factors".into()));
    }
    Ok(hits as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Gender, Level};
    use rand::Rng;

    fn random_factors(rng: &mut ChaCha8Rng) -> StyleFactors {
        StyleFactors {
            gender: if rng.random_bool(0.5) { Gender::Male } else { Gender::Female },
            pitch: Level::ALL[rng.random_range(0..3)],
            speed: Level::ALL[rng.random_range(0..3)],
            volume: Level::ALL[rng.random_range(0..3)],
        }
    }

    fn one_hot(f: &StyleFactors) -> Vec<f32> {
        let mut v = Vec::new();
        for factor in Factor::ALL {
            let mut h = vec![0.0; factor.num_classes()];
            h[factor.label(f)] = 1.0;
            v.extend(h);
        }
        v
    }

    fn set(n: usize, seed: u64, row: impl Fn(&StyleFactors, &mut ChaCha8Rng) -> Vec<f32>) -> EmbeddingSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<_> = (0..n).map(|_| random_factors(&mut rng)).collect();
        let rows = labels.iter().map(|l| row(l, &mut rng)).collect();
        EmbeddingSet::new((0..n).map(|i| format!("r{i}")).collect(), rows, labels).unwrap()
    }

    #[test]
    fn one_hot_labels_are_perfectly_probed() {
        let s = set(200, 1, |l, _| one_hot(l));
        let r = train_probe(&s, 0).unwrap();
        for v in r.per_factor_accuracy.values() {
            assert_eq!(*v, 1.0);
        }
        assert_eq!(r.average, 1.0);
        assert_eq!((r.train_size, r.test_size), (160, 40));
    }

    #[test]
    fn random_embeddings_are_at_chance() {
        let s = set(1000, 2, |_, rng| (0..16).map(|_| rng.random_range(-1.0..1.0)).collect());
        let r = train_probe(&s, 3).unwrap();
        for f in ["pitch", "speed", "volume"] {
            let a = r.per_factor_accuracy[f];
            assert!((a - 1.0 / 3.0).abs() <= 0.1, "{f}: {a}");
        }
    }

    #[test]
    fn deterministic_and_scale_invariant() {
        let s = set(300, 4, |l, rng| {
            let mut v = one_hot(l);
            v.iter_mut().for_each(|x| *x = *x * 0.3 + rng.random_range(-1.0..1.0));
            v
        });
        let a = train_probe(&s, 9).unwrap();
        assert_eq!(a, train_probe(&s, 9).unwrap());
        for c in [2.0f32, 3.7] {
            let mut scaled = s.clone();
            scaled.rows.iter_mut().flatten().for_each(|x| *x *= c);
            let b = train_probe(&scaled, 9).unwrap();
            let pa: Vec<_> = a.predictions.iter().map(|p| p.predicted).collect();
            let pb: Vec<_> = b.predictions.iter().map(|p| p.predicted).collect();
            assert_eq!(pa, pb);
        }
        let mean = a.per_factor_accuracy.values().sum::<f64>() / 4.0;
        assert!((a.average - mean).abs() < 1e-9);
    }

    #[test]
    fn single_class_factor_is_rejected() {
        let mut s = set(50, 5, |l, _| one_hot(l));
        s.labels.iter_mut().for_each(|l| l.gender = Gender::Male);
        assert!(matches!(train_probe(&s, 0), Err(Error::DegenerateFactor(f)) if f == "gender"));
    }

    #[test]
    fn factor_words_are_checked_per_factor() {
        use crate::dataset::{DatasetRecord, SplitTag};
        let f = StyleFactors {
            gender: Gender::Female,
            pitch: Level::High,
            speed: Level::Low,
            volume: Level::Mid,
        };
        let rec = DatasetRecord {
            id: "a".into(),
            speech_ref: "a.bin".into(),
            caption: "x".into(),
            speaker_id: "s".into(),
            factors: Some(f),
            source_id: None,
        };
        let m = Manifest::new(vec![rec], SplitTag::Test).unwrap();
        let acc = |c: &str| factor_word_accuracy(&[("a".into(), c.into())], &m).unwrap();
        assert_eq!(acc("a female voice, high pitch, slow and medium."), 1.0);
        // "male" is not matched inside "female"; naming two pitches counts as wrong.
        assert_eq!(acc("a male voice with high and low pitch, slow, medium."), 0.5);
        assert_eq!(acc("nothing relevant"), 0.0);
        assert!(factor_word_accuracy(&[("zz".into(), "x".into())], &m).is_err());
    }
}
