use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::mlp::{cross_entropy, MlpModel, ModelSpec};
use super::optim::{Optimizer, OptimizerKind, OptimizerSettings, Schedule};
use crate::error::{Error, Result};
use crate::rng::{RngState, Stream};

// Stream tags shared by every training loop, so that loops with the same
// labeled schedule consume identical randomness.
pub(crate) const INIT: u64 = 1;
pub(crate) const SPLIT: u64 = 2;
pub(crate) const SHUFFLE: u64 = 3;
pub(crate) const DROPOUT: u64 = 4;

/// Labeled points below which no validation split is held out.
pub const MIN_POINTS_FOR_VALIDATION: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub nesterov: bool,
    pub batch_size: usize,
    pub epochs: usize,
    /// Fraction held out for best-epoch selection; `None` keeps the last epoch.
    pub validation_fraction: Option<f64>,
    pub schedule: Schedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Adam,
            learning_rate: 0.01,
            weight_decay: 0.0,
            momentum: 0.0,
            nesterov: false,
            batch_size: 64,
            epochs: 20,
            validation_fraction: Some(0.2),
            schedule: Schedule::Constant,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if let Some(f) = self.validation_fraction {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::invalid("validation_fraction must lie in (0, 1)"));
            }
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        Ok(())
    }

    pub(crate) fn optimizer_settings(&self) -> OptimizerSettings {
        OptimizerSettings {
            kind: self.optimizer,
            weight_decay: self.weight_decay,
            momentum: self.momentum,
            nesterov: self.nesterov,
        }
    }
}

/// Outcome of a supervised fit.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: MlpModel,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// Epoch (0-based) whose weights were kept.
    pub selected_epoch: usize,
}

/// Shuffle `idx` and cut it into consecutive batches of `batch` indices.
pub(crate) fn epoch_batches(idx: &mut [usize], batch: usize, rng: &mut Stream) -> Vec<Vec<usize>> {
    idx.shuffle(rng);
    idx.chunks(batch).map(<[usize]>::to_vec).collect()
}

pub(crate) fn check_labels(x: ArrayView2<'_, f64>, y: &[usize], classes: usize) -> Result<()> {
    if y.is_empty() {
        return Err(Error::invalid("no labeled points to train on"));
    }
    if x.nrows() != y.len() {
        return Err(Error::Shape(format!("{} rows but {} labels", x.nrows(), y.len())));
    }
    if let Some(&bad) = y.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            k_ref: classes,
        });
    }
    Ok(())
}

/// Cross-entropy training from a fresh initialization drawn from `init`.
pub fn train_supervised(
    init: RngState,
    x: ArrayView2<'_, f64>,
    y: &[usize],
    classes: usize,
    spec: &ModelSpec,
    cfg: &TrainConfig,
) -> Result<MlpModel> {
    Ok(fit(init, x, y, classes, spec, cfg)?.model)
}

pub fn fit(
    init: RngState,
    x: ArrayView2<'_, f64>,
    y: &[usize],
    classes: usize,
    spec: &ModelSpec,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    check_labels(x, y, classes)?;
    let mut model = spec.build(x.ncols(), classes, &mut init.fork(INIT).rng())?;

    let n = y.len();
    let mut order: Vec<usize> = (0..n).collect();
    let (mut train_idx, val_idx) = match cfg.validation_fraction {
        Some(f) if n >= MIN_POINTS_FOR_VALIDATION => {
            order.shuffle(&mut init.fork(SPLIT).rng());
            let n_val = ((f * n as f64).round() as usize).clamp(1, n - 1);
            let val = order.split_off(n - n_val);
            (order, val)
        }
        _ => (order, Vec::new()),
    };
    let val_x: Array2<f64> = x.select(Axis(0), &val_idx);
    let val_y: Vec<usize> = val_idx.iter().map(|&i| y[i]).collect();

    let mut opt = Optimizer::new(cfg.optimizer_settings(), &model);
    let mut shuffle = init.fork(SHUFFLE).rng();
    let mut dropout = init.fork(DROPOUT).rng();
    let steps_per_epoch = train_idx.len().div_ceil(cfg.batch_size);
    let total = steps_per_epoch * cfg.epochs;
    let mut step = 0;
    let mut best: Option<(f64, MlpModel, usize)> = None;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut sum = 0.0;
        for batch in epoch_batches(&mut train_idx, cfg.batch_size, &mut shuffle) {
            let xb = x.select(Axis(0), &batch);
            let yb: Vec<usize> = batch.iter().map(|&i| y[i]).collect();
            let trace = model.trace(xb.view(), Some(&mut dropout))?;
            let (loss, dlogits) = cross_entropy(&trace.probs, &yb);
            let grads = model.backward(&trace, dlogits.view());
            opt.step(&mut model, &grads, cfg.schedule.rate(cfg.learning_rate, step, total));
            step += 1;
            sum += loss * batch.len() as f64;
        }
        epoch_losses.push(sum / train_idx.len() as f64);
        if !val_idx.is_empty() {
            let (val_loss, _) = cross_entropy(&model.predict(val_x.view())?, &val_y);
            if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
                best = Some((val_loss, model.clone(), epoch));
            }
        }
    }
    let (model, selected_epoch) = match best {
        Some((_, m, e)) => (m, e),
        None => (model, cfg.epochs.saturating_sub(1)),
    };
    Ok(TrainReport {
        model,
        epoch_losses,
        selected_epoch,
    })
}
