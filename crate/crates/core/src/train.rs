//! In-memory training and evaluation loops.
//!
//! Every random draw comes from a ChaCha stream derived from the config seed
//! and the (epoch, step, item) position, and gradients are reduced in item
//! order, so a run is bitwise reproducible.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{cosine_lr, sgd_step, Grads, Graph, OptimState, ParamStore};
use crate::config::TrainConfig;
use crate::dsp::{AudioClip, PlaybackInput};
use crate::loss::{total_loss, Target};
use crate::metrics::{compute_metrics, ranked_classes, MetricsReport};
use crate::mixup::{mix_clips, mix_targets, sample_lambda};
use crate::model::{average_probabilities, probabilities, ForwardOptions, ReplayModel};
use crate::synth::SynthExample;
use crate::{math, Error, Result};

const STREAM_SHUFFLE: u64 = 1;
const STREAM_BATCH: u64 = 2;
const STREAM_ITEM: u64 = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub clip: AudioClip,
    pub target: Target,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub n_classes: usize,
}

impl Dataset {
    /// Single-label dataset from `(clip, class)` pairs.
    pub fn single_label(items: Vec<(AudioClip, usize)>, n_classes: usize) -> Result<Self> {
        let examples = items
            .into_iter()
            .map(|(clip, label)| {
                if label >= n_classes {
                    return Err(Error::Config(format!("label {label} outside {n_classes} classes")));
                }
                Ok(Example {
                    clip,
                    target: Target::one_hot(label, n_classes),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { examples, n_classes })
    }

    pub fn from_synth(items: &[SynthExample], n_classes: usize) -> Result<Self> {
        Self::single_label(items.iter().map(|e| (e.clip.clone(), e.label)).collect(), n_classes)
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// The subset at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            examples: indices.iter().map(|&i| self.examples[i].clone()).collect(),
            n_classes: self.n_classes,
        }
    }
}

/// Pass-1 inputs of a dataset's clips; they depend only on the front-end,
/// so they are computed once and reused while the clips are not mixed.
#[derive(Clone, Debug, Default)]
pub struct FirstPassCache {
    entries: Vec<Option<PlaybackInput>>,
}

impl FirstPassCache {
    pub fn new(len: usize) -> Self {
        Self { entries: vec![None; len] }
    }

    fn get(&mut self, model: &ReplayModel, index: usize, clip: &AudioClip) -> Result<&PlaybackInput> {
        if self.entries.len() <= index {
            self.entries.resize(index + 1, None);
        }
        if self.entries[index].is_none() {
            self.entries[index] = Some(model.net().first_pass_input(clip)?);
        }
        Ok(self.entries[index].as_ref().expect("just filled"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Learning rate of the last step of the epoch.
    pub lr: f64,
    pub train_loss: f64,
    pub val: MetricsReport,
}

pub struct TrainOutcome {
    /// Parameters with the best validation top-1 (the last epoch when there
    /// is no validation data).
    pub best: ReplayModel,
    pub best_epoch: usize,
    pub last: ReplayModel,
    pub log: Vec<EpochRecord>,
}

pub struct Trainer {
    cfg: TrainConfig,
    model: ReplayModel,
    optim: OptimState,
    train_cache: FirstPassCache,
}

impl Trainer {
    /// Fresh model initialised from `cfg.seed`.
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = ReplayModel::new(&cfg.model, math::derive_seed(cfg.seed, &[0]))?;
        Ok(Self::with_model(cfg, model))
    }

    pub fn with_model(cfg: &TrainConfig, model: ReplayModel) -> Self {
        Self {
            optim: OptimState::new(model.store(), cfg.sgd),
            cfg: cfg.clone(),
            model,
            train_cache: FirstPassCache::default(),
        }
    }

    pub fn model(&self) -> &ReplayModel {
        &self.model
    }

    pub fn into_model(self) -> ReplayModel {
        self.model
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.cfg.batch_size)
    }

    /// One SGD step on `data[indices]`; returns the mean batch loss.
    pub fn step(&mut self, data: &Dataset, indices: &[usize], epoch: usize, step: usize, lr: f64) -> Result<f64> {
        if indices.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let seed = self.cfg.seed;
        let mut batch_rng = ChaCha8Rng::seed_from_u64(math::derive_seed(seed, &[STREAM_BATCH, epoch as u64, step as u64]));
        let lambda = sample_lambda(self.cfg.mixup_alpha, &mut batch_rng)?;
        let mut partner: Vec<usize> = (0..indices.len()).collect();
        partner.shuffle(&mut batch_rng);

        let mut acc = Grads::zeros_like(self.model.store());
        let mut loss_sum = 0.0;
        for (k, &idx) in indices.iter().enumerate() {
            let ex = &data.examples[idx];
            let (clip, target, cached) = if lambda == 1.0 {
                let cached = self.train_cache.get(&self.model, idx, &ex.clip)?.clone();
                (ex.clip.clone(), ex.target.clone(), Some(cached))
            } else {
                let other = &data.examples[indices[partner[k]]];
                (
                    mix_clips(&ex.clip, &other.clip, lambda)?,
                    mix_targets(&ex.target, &other.target, lambda)?,
                    None,
                )
            };
            let mut item_rng =
                ChaCha8Rng::seed_from_u64(math::derive_seed(seed, &[STREAM_ITEM, epoch as u64, step as u64, k as u64]));
            let mut g = Graph::new(self.model.store());
            let outputs = self.model.net().forward(
                &mut g,
                &clip,
                ForwardOptions {
                    slot_rng: Some(&mut item_rng),
                    first_pass: cached.as_ref(),
                    ..ForwardOptions::default()
                },
            )?;
            let logits: Vec<_> = outputs.iter().map(|o| o.logits).collect();
            let terms = total_loss(&mut g, &logits, &target, &self.cfg.loss)?;
            let loss = g.scalar(terms.total);
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("loss at epoch {epoch}, step {step}, item {k}")));
            }
            loss_sum += loss;
            acc.add_assign(&g.backward(terms.total)?.param_grads(&g));
        }
        acc.scale(1.0 / indices.len() as f64);
        if !acc.is_finite() {
            return Err(Error::NonFinite(format!("gradient at epoch {epoch}, step {step}")));
        }
        if self.cfg.grad_clip > 0.0 {
            let norm = acc.global_norm();
            if norm > self.cfg.grad_clip {
                acc.scale(self.cfg.grad_clip / norm);
            }
        }
        sgd_step(self.model.store_mut(), &acc, &mut self.optim, lr);
        Ok(loss_sum / indices.len() as f64)
    }

    /// Full training run; `on_epoch` sees every epoch record as it is made.
    pub fn fit(
        mut self,
        train: &Dataset,
        val: &Dataset,
        mut on_epoch: impl FnMut(&EpochRecord),
    ) -> Result<TrainOutcome> {
        let n_classes = self.model.config().n_classes;
        for (what, d) in [("training", train), ("validation", val)] {
            if d.n_classes != n_classes {
                return Err(Error::Config(format!(
                    "{what} data has {} classes, the model {n_classes}",
                    d.n_classes
                )));
            }
        }
        if train.is_empty() {
            return Err(Error::Config("no training examples".into()));
        }
        self.train_cache = FirstPassCache::new(train.len());
        let mut val_cache = FirstPassCache::new(val.len());
        let spe = self.steps_per_epoch(train.len());
        let epochs = self.cfg.epochs;
        let mut log = Vec::with_capacity(epochs);
        let mut best: Option<(f64, usize, ParamStore)> = None;
        for epoch in 0..epochs {
            let mut order: Vec<usize> = (0..train.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(math::derive_seed(self.cfg.seed, &[STREAM_SHUFFLE, epoch as u64]));
            order.shuffle(&mut rng);
            let mut loss_sum = 0.0;
            let mut lr = 0.0;
            for (s, chunk) in order.chunks(self.cfg.batch_size).enumerate() {
                let progress = epoch as f64 + s as f64 / spe as f64;
                lr = cosine_lr(progress, self.cfg.base_lr, self.cfg.warmup_epochs, epochs as f64);
                loss_sum += self.step(train, chunk, epoch, s, lr)? * chunk.len() as f64;
            }
            let report = if val.is_empty() {
                MetricsReport::default()
            } else {
                evaluate_with_cache(&self.model, val, &mut val_cache)?
            };
            let record = EpochRecord {
                epoch: epoch + 1,
                lr,
                train_loss: loss_sum / train.len() as f64,
                val: report,
            };
            log::info!(
                "epoch {} loss {:.4} val top1 {:.2}",
                record.epoch,
                record.train_loss,
                record.val.top1
            );
            on_epoch(&record);
            let improved = match &best {
                None => true,
                Some((top1, _, _)) => !val.is_empty() && record.val.top1 > *top1,
            };
            if improved || val.is_empty() {
                best = Some((record.val.top1, epoch + 1, self.model.store().clone()));
            }
            log.push(record);
        }
        let (_, best_epoch, params) = best.expect("at least one epoch");
        let last = self.model;
        let best = ReplayModel::with_params(last.config(), &params)?;
        Ok(TrainOutcome {
            best,
            best_epoch,
            last,
            log,
        })
    }
}

/// Per-clip eval-mode outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub per_pass: Vec<Vec<f64>>,
    pub averaged: Vec<f64>,
}

pub fn predict(model: &ReplayModel, clip: &AudioClip, first_pass: Option<&PlaybackInput>) -> Result<Prediction> {
    let mut g = Graph::new(model.store());
    let outputs = model.net().forward(
        &mut g,
        clip,
        ForwardOptions {
            first_pass,
            ..ForwardOptions::default()
        },
    )?;
    let mode = model.config().label_mode;
    let per_pass: Vec<Vec<f64>> = outputs
        .iter()
        .map(|o| probabilities(g.value(o.logits).as_slice(), mode))
        .collect();
    Ok(Prediction {
        averaged: average_probabilities(&per_pass)?,
        per_pass,
    })
}

/// Metrics of the averaged prediction plus the top-1 of each pass alone.
pub fn evaluate(model: &ReplayModel, data: &Dataset) -> Result<MetricsReport> {
    evaluate_with_cache(model, data, &mut FirstPassCache::new(data.len()))
}

pub fn evaluate_with_cache(model: &ReplayModel, data: &Dataset, cache: &mut FirstPassCache) -> Result<MetricsReport> {
    let n_classes = model.config().n_classes;
    if data.n_classes != n_classes {
        return Err(Error::Config(format!(
            "dataset has {} classes but the model predicts {n_classes}",
            data.n_classes
        )));
    }
    let passes = model.config().passes();
    let mut scores = Vec::with_capacity(data.len());
    let mut positives = Vec::with_capacity(data.len());
    let mut pass_hits = vec![0usize; passes];
    for (i, ex) in data.examples.iter().enumerate() {
        let first = cache.get(model, i, &ex.clip)?.clone();
        let pred = predict(model, &ex.clip, Some(&first))?;
        let pos: Vec<bool> = ex.target.values().iter().map(|&y| y >= 0.5).collect();
        for (p, probs) in pred.per_pass.iter().enumerate() {
            if pos[ranked_classes(probs)[0]] {
                pass_hits[p] += 1;
            }
        }
        scores.push(pred.averaged);
        positives.push(pos);
    }
    let mut report = compute_metrics(&scores, &positives)?;
    report.per_pass_top1 = pass_hits
        .into_iter()
        .map(|h| if data.is_empty() { 0.0 } else { 100.0 * h as f64 / data.len() as f64 })
        .collect();
    Ok(report)
}
