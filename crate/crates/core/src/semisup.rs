//! FixMatch training on embeddings.
//!
//! The weak augmentation is the network's own dropout (a train-mode forward
//! pass on the raw input); the strong augmentation is input mixup with a
//! coefficient folded towards the point that owns the pseudo-label target.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::data::argmax;
use crate::error::{Error, Result};
use crate::rng::{RngState, Stream};
use crate::surrogate::{
    check_labels, cross_entropy, epoch_batches, Gradients, MlpModel, ModelSpec, Optimizer,
    OptimizerKind, Schedule, TrainConfig, DROPOUT, INIT, PROB_FLOOR, SHUFFLE,
};

const UNLABELED: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixMatchConfig {
    /// Labeled batch size `B`.
    pub labeled_batch: usize,
    /// Unlabeled batch is `unlabeled_ratio * B` points.
    pub unlabeled_ratio: usize,
    /// Confidence threshold `tau`.
    pub threshold: f64,
    /// Weight `lambda_u` of the unlabeled term.
    pub unlabeled_weight: f64,
    pub mixup_alpha: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub nesterov: bool,
    pub epochs: usize,
}

impl Default for FixMatchConfig {
    fn default() -> Self {
        Self {
            labeled_batch: 32,
            unlabeled_ratio: 7,
            threshold: 0.95,
            unlabeled_weight: 1.0,
            mixup_alpha: 9.0,
            learning_rate: 0.03,
            weight_decay: 5e-4,
            momentum: 0.9,
            nesterov: true,
            epochs: 64,
        }
    }
}

impl FixMatchConfig {
    /// Full-length schedule used for large-scale runs.
    pub fn full_schedule() -> Self {
        Self {
            epochs: 1024,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::invalid("threshold must lie in (0, 1]"));
        }
        if self.unlabeled_ratio < 1 || self.labeled_batch < 1 {
            return Err(Error::invalid("batch sizes must be >= 1"));
        }
        if !(self.mixup_alpha > 0.0) {
            return Err(Error::invalid("mixup alpha must be positive"));
        }
        if !(self.unlabeled_weight >= 0.0) {
            return Err(Error::invalid("unlabeled weight must be >= 0"));
        }
        Ok(())
    }

    /// The purely supervised schedule this configuration reduces to when the
    /// unlabeled term is disabled.
    pub fn supervised_equivalent(&self) -> TrainConfig {
        TrainConfig {
            optimizer: OptimizerKind::Sgd,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            momentum: self.momentum,
            nesterov: self.nesterov,
            batch_size: self.labeled_batch,
            epochs: self.epochs,
            validation_fraction: None,
            schedule: Schedule::Cosine,
        }
    }

    fn unlabeled_batch(&self) -> usize {
        self.unlabeled_ratio * self.labeled_batch
    }
}

/// Partner rows and mixing coefficients for one mixup application.
#[derive(Debug, Clone, PartialEq)]
pub struct MixPlan {
    pub partner: Vec<usize>,
    pub coef: Vec<f64>,
}

impl MixPlan {
    /// Coefficient `lambda = max(l, 1 - l)` with `l ~ Beta(alpha, alpha)` per
    /// row, partners from a uniform random permutation.
    pub fn sample(m: usize, alpha: f64, rng: &mut Stream) -> Result<Self> {
        if m < 2 {
            return Err(Error::invalid("mixup needs at least two rows"));
        }
        let beta = Beta::new(alpha, alpha).map_err(|e| Error::invalid(e.to_string()))?;
        let mut partner: Vec<usize> = (0..m).collect();
        partner.shuffle(rng);
        let coef = (0..m)
            .map(|_| {
                let l: f64 = beta.sample(rng);
                l.max(1.0 - l)
            })
            .collect();
        Ok(Self { partner, coef })
    }

    /// Every row mixed with `coef` against the given partners.
    pub fn fixed(partner: Vec<usize>, coef: f64) -> Self {
        let coef = vec![coef; partner.len()];
        Self { partner, coef }
    }

    pub fn apply(&self, batch: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if self.partner.len() != batch.nrows() || self.coef.len() != batch.nrows() {
            return Err(Error::Shape("mix plan does not match batch".into()));
        }
        let mut mixed = batch.to_owned();
        for (i, mut row) in mixed.outer_iter_mut().enumerate() {
            let l = self.coef[i];
            row *= l;
            row.scaled_add(1.0 - l, &batch.row(self.partner[i]));
        }
        Ok(mixed)
    }
}

/// Result of [`mixup_batch`].
#[derive(Debug, Clone, PartialEq)]
pub struct Mixup {
    pub mixed: Array2<f64>,
    pub partner: Vec<usize>,
    pub coef: Vec<f64>,
}

pub fn mixup_batch(batch: ArrayView2<'_, f64>, alpha: f64, rng: &mut Stream) -> Result<Mixup> {
    let plan = MixPlan::sample(batch.nrows(), alpha, rng)?;
    let mixed = plan.apply(batch)?;
    Ok(Mixup {
        mixed,
        partner: plan.partner,
        coef: plan.coef,
    })
}

/// Components of the FixMatch objective for one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixMatchLoss {
    pub loss: f64,
    pub supervised: f64,
    pub unsupervised: f64,
    /// Fraction of unlabeled points whose weak-view confidence reached the threshold.
    pub mask_rate: f64,
}

fn supervised_term(
    model: &MlpModel,
    x: ArrayView2<'_, f64>,
    y: &[usize],
    rng: &mut Stream,
) -> Result<(f64, Gradients)> {
    let trace = model.trace(x, Some(rng))?;
    let (loss, dlogits) = cross_entropy(&trace.probs, y);
    Ok((loss, model.backward(&trace, dlogits.view())))
}

struct UnlabeledTerm {
    loss: f64,
    mask_rate: f64,
    grads: Option<Gradients>,
}

fn unlabeled_term(
    model: &MlpModel,
    ux: ArrayView2<'_, f64>,
    cfg: &FixMatchConfig,
    plan: Option<&MixPlan>,
    rng: &mut Stream,
) -> Result<UnlabeledTerm> {
    let m = ux.nrows();
    let weak = model.predict_train(ux, rng)?;
    let mut kept = Vec::new();
    let mut targets = Vec::new();
    for (b, row) in weak.outer_iter().enumerate() {
        let row = row.as_slice().expect("standard layout");
        let t = argmax(row);
        if row[t] >= cfg.threshold {
            kept.push(b);
            targets.push(t);
        }
    }
    let mask_rate = kept.len() as f64 / m as f64;
    if kept.is_empty() {
        return Ok(UnlabeledTerm {
            loss: 0.0,
            mask_rate,
            grads: None,
        });
    }
    let sampled;
    let plan = match plan {
        Some(p) => p,
        None => {
            sampled = MixPlan::sample(m, cfg.mixup_alpha, rng)?;
            &sampled
        }
    };
    // Rows below the threshold contribute nothing, so only kept rows are
    // pushed through the strong branch.
    let strong = plan.apply(ux)?.select(Axis(0), &kept);
    let trace = model.trace(strong.view(), Some(rng))?;
    let mut loss = 0.0;
    let mut dlogits = trace.probs.clone();
    for (r, &t) in targets.iter().enumerate() {
        loss -= trace.probs[[r, t]].max(PROB_FLOOR).ln();
        dlogits[[r, t]] -= 1.0;
    }
    let denom = m as f64;
    dlogits /= denom;
    Ok(UnlabeledTerm {
        loss: loss / denom,
        mask_rate,
        grads: Some(model.backward(&trace, dlogits.view())),
    })
}

/// Evaluate `l_s + lambda_u * l_u` on one labeled and one unlabeled batch.
pub fn fixmatch_loss(
    model: &MlpModel,
    labeled_x: ArrayView2<'_, f64>,
    labeled_y: &[usize],
    unlabeled_x: ArrayView2<'_, f64>,
    cfg: &FixMatchConfig,
    rng: &mut Stream,
) -> Result<FixMatchLoss> {
    fixmatch_loss_with_plan(model, labeled_x, labeled_y, unlabeled_x, cfg, None, rng)
}

/// As [`fixmatch_loss`], with an explicit mixup plan for the strong view.
pub fn fixmatch_loss_with_plan(
    model: &MlpModel,
    labeled_x: ArrayView2<'_, f64>,
    labeled_y: &[usize],
    unlabeled_x: ArrayView2<'_, f64>,
    cfg: &FixMatchConfig,
    plan: Option<&MixPlan>,
    rng: &mut Stream,
) -> Result<FixMatchLoss> {
    cfg.validate()?;
    check_labels(labeled_x, labeled_y, model.classes())?;
    if unlabeled_x.nrows() == 0 {
        return Err(Error::invalid("unlabeled batch is empty"));
    }
    if unlabeled_x.ncols() != model.input_dim() {
        return Err(Error::Shape("unlabeled batch width does not match model".into()));
    }
    let (supervised, _) = supervised_term(model, labeled_x, labeled_y, rng)?;
    let u = unlabeled_term(model, unlabeled_x, cfg, plan, rng)?;
    Ok(FixMatchLoss {
        loss: supervised + cfg.unlabeled_weight * u.loss,
        supervised,
        unsupervised: u.loss,
        mask_rate: u.mask_rate,
    })
}

/// Train a fresh network with FixMatch. With no unlabeled points, or a zero
/// unlabeled weight, this is exactly [`crate::surrogate::train_supervised`]
/// under [`FixMatchConfig::supervised_equivalent`].
pub fn train_fixmatch(
    init: RngState,
    labeled_x: ArrayView2<'_, f64>,
    labeled_y: &[usize],
    unlabeled_x: ArrayView2<'_, f64>,
    classes: usize,
    spec: &ModelSpec,
    cfg: &FixMatchConfig,
) -> Result<MlpModel> {
    cfg.validate()?;
    check_labels(labeled_x, labeled_y, classes)?;
    if unlabeled_x.nrows() > 0 && unlabeled_x.ncols() != labeled_x.ncols() {
        return Err(Error::Shape("labeled and unlabeled widths differ".into()));
    }
    let mut model = spec.build(labeled_x.ncols(), classes, &mut init.fork(INIT).rng())?;
    let train_cfg = cfg.supervised_equivalent();
    let mut opt = Optimizer::new(train_cfg.optimizer_settings(), &model);
    let mut shuffle = init.fork(SHUFFLE).rng();
    let mut dropout = init.fork(DROPOUT).rng();
    let mut unlabeled_rng = init.fork(UNLABELED).rng();
    let use_unlabeled = unlabeled_x.nrows() > 0 && cfg.unlabeled_weight > 0.0;

    let mut idx: Vec<usize> = (0..labeled_y.len()).collect();
    let total = idx.len().div_ceil(cfg.labeled_batch) * cfg.epochs;
    let mut step = 0;
    for _ in 0..cfg.epochs {
        for batch in epoch_batches(&mut idx, cfg.labeled_batch, &mut shuffle) {
            let xb = labeled_x.select(Axis(0), &batch);
            let yb: Vec<usize> = batch.iter().map(|&i| labeled_y[i]).collect();
            let (_, mut grads) = supervised_term(&model, xb.view(), &yb, &mut dropout)?;
            if use_unlabeled {
                let pick: Vec<usize> = (0..cfg.unlabeled_batch())
                    .map(|_| unlabeled_rng.random_range(0..unlabeled_x.nrows()))
                    .collect();
                let ub = unlabeled_x.select(Axis(0), &pick);
                let u = unlabeled_term(&model, ub.view(), cfg, None, &mut unlabeled_rng)?;
                if let Some(g) = u.grads {
                    grads.add_scaled(&g, cfg.unlabeled_weight);
                }
            }
            let lr = train_cfg.schedule.rate(cfg.learning_rate, step, total);
            opt.step(&mut model, &grads, lr);
            step += 1;
        }
    }
    Ok(model)
}
