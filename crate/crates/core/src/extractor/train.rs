//! Minibatch Adam training with dev-loss driven learning-rate decay and a
//! relative-improvement stopping rule.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{save_model, ExtractorConfig, ExtractorModel, TrainingExample};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// One training-log row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub lr: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleDecision {
    Continue,
    Stop,
}

/// Learning-rate decay on dev-loss increase, and the stopping rule.
#[derive(Clone, Debug)]
pub struct LrSchedule {
    lr: f64,
    decay: f64,
    min_epochs: usize,
    max_epochs: usize,
    stop_rel_loss: f64,
    prev_dev: Option<f64>,
    epochs_seen: usize,
}

impl LrSchedule {
    pub fn new(cfg: &ExtractorConfig) -> Self {
        Self {
            lr: cfg.lr0,
            decay: cfg.lr_decay,
            min_epochs: cfg.min_epochs,
            max_epochs: cfg.max_epochs,
            stop_rel_loss: cfg.stop_rel_loss,
            prev_dev: None,
            epochs_seen: 0,
        }
    }

    /// Learning rate for the next epoch.
    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Record the dev loss of a finished epoch.
    pub fn observe(&mut self, dev_loss: f64) -> ScheduleDecision {
        self.epochs_seen += 1;
        let rel_reduction = self.prev_dev.map(|prev| {
            if dev_loss > prev {
                self.lr *= self.decay;
            }
            if prev > 0.0 {
                (prev - dev_loss) / prev
            } else {
                0.0
            }
        });
        self.prev_dev = Some(dev_loss);
        let converged = self.epochs_seen >= self.min_epochs
            && rel_reduction.is_some_and(|r| r < self.stop_rel_loss);
        if converged || self.epochs_seen >= self.max_epochs {
            ScheduleDecision::Stop
        } else {
            ScheduleDecision::Continue
        }
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.step);
        let c2 = 1.0 - ADAM_BETA2.powi(self.step);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + ADAM_EPS);
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters at the best dev loss.
    pub model: ExtractorModel,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

pub fn mean_loss(model: &ExtractorModel, set: &[TrainingExample]) -> Result<f64> {
    let mut total = 0.0;
    for ex in set {
        total += model.loss(ex)?;
    }
    Ok(total / set.len().max(1) as f64)
}

/// Train from the config's seed. When `checkpoint` is given the best model so
/// far is written there after every improving epoch, so it survives a
/// divergence error.
pub fn train(
    config: &ExtractorConfig,
    train_set: &[TrainingExample],
    dev_set: &[TrainingExample],
    checkpoint: Option<&Path>,
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if dev_set.is_empty() {
        return Err(Error::Config("dev set is empty".into()));
    }
    let mut model = ExtractorModel::new(config.clone())?;
    let mut adam = Adam::new(model.num_params());
    let mut schedule = LrSchedule::new(config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7472_6169_6e00);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, ExtractorModel)> = None;

    for epoch in 1.. {
        let lr = schedule.lr();
        order.shuffle(&mut rng);
        let mut train_loss = 0.0;
        let mut batch = Vec::with_capacity(config.batch);
        for chunk in order.chunks(config.batch) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| train_set[i].clone()));
            let (loss, grad) = model.backward(&batch).map_err(|e| Error::TrainingFailure {
                epoch,
                msg: e.to_string(),
            })?;
            if !loss.is_finite() {
                return Err(Error::TrainingFailure {
                    epoch,
                    msg: "training loss is not finite".into(),
                });
            }
            train_loss += loss * chunk.len() as f64;
            adam.update(model.params_mut().as_mut_slice(), &grad, lr);
        }
        train_loss /= train_set.len() as f64;
        let dev_loss = mean_loss(&model, dev_set).map_err(|e| Error::TrainingFailure {
            epoch,
            msg: e.to_string(),
        })?;
        if !dev_loss.is_finite() {
            return Err(Error::TrainingFailure {
                epoch,
                msg: "dev loss is not finite".into(),
            });
        }
        log::info!("epoch {epoch}: train {train_loss:.6} dev {dev_loss:.6} lr {lr:.3e}");
        log.push(EpochLog {
            epoch,
            train_loss,
            dev_loss,
            lr,
        });
        if best.as_ref().map_or(true, |(b, _, _)| dev_loss < *b) {
            if let Some(path) = checkpoint {
                save_model(path, &model)?;
            }
            best = Some((dev_loss, epoch, model.clone()));
        }
        if schedule.observe(dev_loss) == ScheduleDecision::Stop {
            break;
        }
    }
    let (_, best_epoch, model) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
    })
}
