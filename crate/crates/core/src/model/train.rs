use std::collections::BTreeMap;

use candle_core::{DType, Tensor};
use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batch::{collate, Batch, Example};
use super::decoder::TinyDecoder;
use super::loss::compute_loss;
use crate::frontend::{FixedVector, SpeechInput};
use crate::nn::{clip_grad_norm, ops, Adam, AdamConfig, Ctx, ParamGroup};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Defaults to 20, or 10 when the training set is augmented.
    pub epochs: Option<usize>,
    pub augmented: bool,
    pub batch_size: usize,
    pub lr: f64,
    pub clip_norm: f64,
    pub seed: u64,
    /// Stop after this many optimizer steps in total.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: None,
            augmented: false,
            batch_size: 16,
            lr: 1e-4,
            clip_norm: 1.0,
            seed: 0,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn effective_epochs(&self) -> usize {
        self.epochs.unwrap_or(if self.augmented { 10 } else { 20 })
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate {} is not positive", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: usize,
    /// Loss of every step.
    pub step_losses: Vec<f64>,
    /// Mean train loss per epoch.
    pub train_losses: Vec<f64>,
    /// Dev loss per epoch (empty dev set gives no entries).
    pub dev_losses: Vec<f64>,
    pub frozen_digests: BTreeMap<String, String>,
    pub seed: u64,
}

/// A model the generic loop can optimize.
pub trait Trainable {
    fn batch_loss(&self, batch: &Batch, ctx: &Ctx) -> Result<Tensor>;
    fn trainable_groups(&self) -> Vec<&ParamGroup>;
    fn frozen_digests(&self) -> Result<BTreeMap<String, String>>;
    fn dtype(&self) -> DType;
    fn vocab_size(&self) -> usize;
}

/// Mean loss over `examples` in eval mode, weighting batches by size.
pub fn evaluate_loss<M: Trainable + ?Sized>(model: &M, examples: &[Example], batch_size: usize) -> Result<f64> {
    let ctx = Ctx::eval();
    let mut total = 0.0;
    for chunk in examples.chunks(batch_size.max(1)) {
        let refs: Vec<&Example> = chunk.iter().collect();
        let batch = collate(&refs, model.vocab_size(), model.dtype())?;
        total += ops::scalar_to_f64(&model.batch_loss(&batch, &ctx)?)? * chunk.len() as f64;
    }
    Ok(total / examples.len().max(1) as f64)
}

/// Minibatch Adam with gradient-norm clipping over the model's trainable
/// groups. Frozen groups are digest-checked after every epoch.
pub fn train<M: Trainable + ?Sized>(
    model: &M,
    train_set: &[Example],
    dev_set: &[Example],
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&TrainState) -> Result<()>,
) -> Result<TrainState> {
    let state = TrainState {
        frozen_digests: model.frozen_digests()?,
        seed: cfg.seed,
        ..Default::default()
    };
    train_from(model, train_set, dev_set, cfg, state, on_epoch)
}

/// Continues from `state`: epochs before `state.epoch` are skipped and the
/// epoch shuffles match an uninterrupted run. Optimizer moments restart
/// from zero.
pub fn train_from<M: Trainable + ?Sized>(
    model: &M,
    train_set: &[Example],
    dev_set: &[Example],
    cfg: &TrainConfig,
    mut state: TrainState,
    mut on_epoch: impl FnMut(&TrainState) -> Result<()>,
) -> Result<TrainState> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Precondition("empty training set".into()));
    }
    if model.frozen_digests()? != state.frozen_digests {
        return Err(Error::Checkpoint("frozen parameters differ from the training state".into()));
    }
    let vars: Vec<_> = model.trainable_groups().iter().flat_map(|g| g.var_list()).collect();
    let mut adam = Adam::new(
        vars.clone(),
        AdamConfig {
            lr: cfg.lr,
            ..Default::default()
        },
    )?;
    'epochs: for epoch in state.epoch..cfg.effective_epochs() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut seen = 0;
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| state.step >= m) {
                break 'epochs;
            }
            let refs: Vec<&Example> = chunk.iter().map(|&i| &train_set[i]).collect();
            let batch = collate(&refs, model.vocab_size(), model.dtype())?;
            let ctx = Ctx::train(cfg.seed.wrapping_mul(1_000_003).wrapping_add(state.step as u64));
            let loss = model.batch_loss(&batch, &ctx)?;
            let value = ops::scalar_to_f64(&loss)?;
            if !value.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step: state.step,
                    loss: value,
                });
            }
            let mut grads = loss.backward()?;
            let norm = clip_grad_norm(&mut grads, &vars, cfg.clip_norm)?;
            adam.step(&grads)?;
            state.step += 1;
            state.step_losses.push(value);
            sum += value * chunk.len() as f64;
            seen += chunk.len();
            debug!("step {} loss {value:.4} grad-norm {norm:.3}", state.step);
        }
        if seen == 0 {
            break;
        }
        state.epoch = epoch + 1;
        state.train_losses.push(sum / seen as f64);
        if !dev_set.is_empty() {
            state.dev_losses.push(evaluate_loss(model, dev_set, cfg.batch_size)?);
        }
        if model.frozen_digests()? != state.frozen_digests {
            return Err(Error::Precondition("frozen parameters changed during training".into()));
        }
        info!(
            "epoch {} train {:.4} dev {}",
            state.epoch,
            state.train_losses.last().unwrap(),
            state.dev_losses.last().map_or("-".to_string(), |d| format!("{d:.4}"))
        );
        on_epoch(&state)?;
    }
    Ok(state)
}

struct LanguageModel<'a>(&'a TinyDecoder);

impl Trainable for LanguageModel<'_> {
    fn batch_loss(&self, batch: &Batch, _ctx: &Ctx) -> Result<Tensor> {
        compute_loss(&self.0.bag_prefix(&batch.targets.ids)?, &batch.targets, self.0)
    }

    fn trainable_groups(&self) -> Vec<&ParamGroup> {
        vec![self.0.group()]
    }

    fn frozen_digests(&self) -> Result<BTreeMap<String, String>> {
        Ok(BTreeMap::new())
    }

    fn dtype(&self) -> DType {
        self.0.group().dtype()
    }

    fn vocab_size(&self) -> usize {
        use super::decoder::DecoderInterface;
        self.0.vocab_size()
    }
}

/// Trains the decoder as a language model on target sequences whose prefix
/// is the unordered bag of the target's own token embeddings, so the frozen
/// decoder later responds to content placed in its prefix.
pub fn pretrain_decoder(decoder: &TinyDecoder, targets: &[Vec<u32>], cfg: &TrainConfig) -> Result<TrainState> {
    let dummy = SpeechInput::Fixed(FixedVector::new(vec![0.0])?);
    let examples: Vec<Example> = targets
        .iter()
        .enumerate()
        .map(|(i, t)| Example {
            id: i.to_string(),
            input: dummy.clone(),
            tokens: t.clone(),
        })
        .collect();
    train(&LanguageModel(decoder), &examples, &[], cfg, |_| Ok(()))
}
