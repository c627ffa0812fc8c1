//! Metric estimation from same-cluster pair judgments.
//!
//! A classifier is trained so that the inner product of two points' class
//! distributions predicts whether they share a reference cluster. Its argmax
//! then serves as pseudo-labels in an arbitrary but consistent label space,
//! which suffices because every metric here is permutation invariant.

use std::path::Path;

use ndarray::{concatenate, Array2, Axis};
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{argmax, Clustering, EmbeddingDataset};
use crate::error::{Error, Result};
use crate::io::write_jsonl;
use crate::metrics::{exact_metric, ContingencyStats, ErrorCurve, Metric};
use crate::pipeline::PairAnnotator;
use crate::rng::{RngState, Stream};
use crate::surrogate::{
    epoch_batches, MlpModel, ModelSpec, Optimizer, OptimizerKind, Schedule, Surrogate, TrainConfig,
    INIT, SHUFFLE,
};

/// Probabilities are clamped to `[PAIR_EPSILON, 1 - PAIR_EPSILON]` before logs.
pub const PAIR_EPSILON: f64 = 1e-12;

const SAMPLE: u64 = 10;
const BALANCE: u64 = 11;
const ROUND_BASE: u64 = 1 << 20;

/// A judged pair of dataset rows, stored with `i < j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PairAnnotation {
    pub i: usize,
    pub j: usize,
    pub same: bool,
}

impl PairAnnotation {
    pub fn new(a: usize, b: usize, same: bool) -> Result<Self> {
        if a == b {
            return Err(Error::invalid(format!("pair ({a}, {a}) is not a pair")));
        }
        Ok(Self {
            i: a.min(b),
            j: a.max(b),
            same,
        })
    }
}

/// On-disk form of a pair judgment, keyed by point id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    pub i: String,
    pub j: String,
    pub same: bool,
}

pub fn save_pairs(pairs: &[PairAnnotation], dataset: &EmbeddingDataset, path: &Path) -> Result<()> {
    write_jsonl(
        path,
        pairs.iter().map(|p| PairRecord {
            i: dataset.id(p.i).to_owned(),
            j: dataset.id(p.j).to_owned(),
            same: p.same,
        }),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Pseudo-label every point.
    Full,
    /// Pseudo-label only points whose top probability exceeds the value.
    Thresholded(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairwiseConfig {
    pub total_pairs: usize,
    pub pairs_per_round: usize,
    /// Number of reference clusters, when known. Sets the output width.
    pub k_ref: Option<usize>,
    /// Output width used when `k_ref` is unknown.
    pub output_classes: usize,
    pub threshold: ThresholdMode,
    pub metric: Metric,
    pub seed: u64,
    pub train: TrainConfig,
}

impl Default for PairwiseConfig {
    fn default() -> Self {
        Self {
            total_pairs: 10_000,
            pairs_per_round: 1000,
            k_ref: None,
            output_classes: 20,
            threshold: ThresholdMode::Full,
            metric: Metric::Nmi,
            seed: 0,
            train: TrainConfig {
                optimizer: OptimizerKind::Adam,
                learning_rate: 0.01,
                weight_decay: 5e-4,
                batch_size: 32,
                epochs: 50,
                validation_fraction: None,
                schedule: Schedule::Constant,
                ..TrainConfig::default()
            },
        }
    }
}

impl PairwiseConfig {
    pub fn classes(&self) -> usize {
        self.k_ref.unwrap_or(self.output_classes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_pairs == 0 || self.pairs_per_round == 0 {
            return Err(Error::invalid("total_pairs and pairs_per_round must be at least 1"));
        }
        if self.classes() < 2 {
            return Err(Error::invalid("the pairwise classifier needs at least two outputs"));
        }
        if let ThresholdMode::Thresholded(t) = self.threshold {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::invalid("threshold must lie in (0, 1)"));
            }
        }
        self.train.validate()
    }
}

fn pair_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Maps `0..C(n,2)` onto pairs `(i, j)` with `i < j` in row-major order.
fn decode_pair(k: usize, n: usize) -> (usize, usize) {
    let start = |i: usize| i * (2 * n - i - 1) / 2;
    let (mut lo, mut hi) = (0, n - 1);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if start(mid) <= k {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo, lo + 1 + k - start(lo))
}

/// Distinct unordered pairs, uniformly without replacement.
pub fn sample_pairs(n_points: usize, n_pairs: usize, rng: &mut Stream) -> Result<Vec<(usize, usize)>> {
    let total = pair_count(n_points);
    if n_pairs > total {
        return Err(Error::invalid(format!(
            "{n_pairs} pairs requested but only {total} exist"
        )));
    }
    Ok(sample(rng, total, n_pairs).into_iter().map(|k| decode_pair(k, n_points)).collect())
}

/// Downsamples the majority class to the minority count and shuffles.
pub fn balance_pairs(pairs: &[PairAnnotation], rng: &mut Stream) -> Result<Vec<PairAnnotation>> {
    let (pos, neg): (Vec<_>, Vec<_>) = pairs.iter().partition(|p| p.same);
    if pos.is_empty() {
        return Err(Error::Unbalanceable("no same-cluster pairs yet"));
    }
    if neg.is_empty() {
        return Err(Error::Unbalanceable("no different-cluster pairs yet"));
    }
    let (minor, major) = if pos.len() <= neg.len() { (pos, neg) } else { (neg, pos) };
    let mut out = minor;
    out.extend(sample(rng, major.len(), out.len()).into_iter().map(|k| major[k]));
    out.shuffle(rng);
    Ok(out)
}

/// Mean binary cross-entropy of same-cluster probabilities `p = a . b`,
/// with its gradient w.r.t. both probability matrices.
pub fn l2c_loss_from_probs(
    left: &Array2<f64>,
    right: &Array2<f64>,
    same: &[bool],
) -> (f64, Array2<f64>, Array2<f64>) {
    let b = same.len() as f64;
    let mut loss = 0.0;
    let mut d_left = Array2::zeros(left.raw_dim());
    let mut d_right = Array2::zeros(right.raw_dim());
    for (r, &s) in same.iter().enumerate() {
        let raw = left.row(r).dot(&right.row(r));
        let p = raw.clamp(PAIR_EPSILON, 1.0 - PAIR_EPSILON);
        let (term, dp) = if s {
            (-p.ln(), -1.0 / p)
        } else {
            (-(1.0 - p).ln(), 1.0 / (1.0 - p))
        };
        loss += term;
        if raw == p {
            d_left.row_mut(r).assign(&(&right.row(r) * (dp / b)));
            d_right.row_mut(r).assign(&(&left.row(r) * (dp / b)));
        }
    }
    (loss / b, d_left, d_right)
}

/// Chain rule through a row-wise softmax.
fn softmax_backward(probs: &Array2<f64>, dprobs: &Array2<f64>) -> Array2<f64> {
    let inner = (probs * dprobs).sum_axis(Axis(1)).insert_axis(Axis(1));
    probs * &(dprobs - &inner)
}

fn pair_inputs(data: &EmbeddingDataset, pairs: &[PairAnnotation]) -> Array2<f64> {
    let idx: Vec<usize> = pairs.iter().map(|p| p.i).chain(pairs.iter().map(|p| p.j)).collect();
    data.rows(&idx)
}

/// Mean pairwise loss of `model` in eval mode.
pub fn l2c_loss(model: &MlpModel, data: &EmbeddingDataset, pairs: &[PairAnnotation]) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let p = model.predict(pair_inputs(data, pairs).view())?;
    let (left, right) = p.view().split_at(Axis(0), pairs.len());
    let same: Vec<bool> = pairs.iter().map(|p| p.same).collect();
    Ok(l2c_loss_from_probs(&left.to_owned(), &right.to_owned(), &same).0)
}

/// Loss and parameter gradients for one batch of pairs, dropout off.
pub fn l2c_gradients(
    model: &MlpModel,
    data: &EmbeddingDataset,
    pairs: &[PairAnnotation],
) -> Result<(f64, crate::surrogate::Gradients)> {
    let trace = model.trace(pair_inputs(data, pairs).view(), None)?;
    let (left, right) = trace.probs.view().split_at(Axis(0), pairs.len());
    let same: Vec<bool> = pairs.iter().map(|p| p.same).collect();
    let (loss, dl, dr) = l2c_loss_from_probs(&left.to_owned(), &right.to_owned(), &same);
    let dprobs = concatenate(Axis(0), &[dl.view(), dr.view()]).expect("matching widths");
    let dlogits = softmax_backward(&trace.probs, &dprobs);
    Ok((loss, model.backward(&trace, dlogits.view())))
}

/// Linear softmax classifier trained on pair judgments from a fresh init.
pub fn train_l2c(
    init: RngState,
    data: &EmbeddingDataset,
    pairs: &[PairAnnotation],
    classes: usize,
    cfg: &TrainConfig,
) -> Result<MlpModel> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::invalid("cannot train on zero pairs"));
    }
    let mut model = ModelSpec::linear().build(data.dim(), classes, &mut init.fork(INIT).rng())?;
    let mut opt = Optimizer::new(cfg.optimizer_settings(), &model);
    let mut shuffle = init.fork(SHUFFLE).rng();
    let mut idx: Vec<usize> = (0..pairs.len()).collect();
    let total = pairs.len().div_ceil(cfg.batch_size) * cfg.epochs;
    let mut step = 0;
    for _ in 0..cfg.epochs {
        for batch in epoch_batches(&mut idx, cfg.batch_size, &mut shuffle) {
            let chunk: Vec<PairAnnotation> = batch.iter().map(|&k| pairs[k]).collect();
            let (_, grads) = l2c_gradients(&model, data, &chunk)?;
            opt.step(&mut model, &grads, cfg.schedule.rate(cfg.learning_rate, step, total));
            step += 1;
        }
    }
    Ok(model)
}

/// Fraction of pairs whose same-cluster judgment matches the model's argmax labels.
pub fn pair_accuracy(model: &dyn Surrogate, data: &EmbeddingDataset, pairs: &[PairAnnotation]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("no pairs to score"));
    }
    let all: Vec<usize> = (0..data.len()).collect();
    let labels = hard_labels(&model.predict(data, &all)?);
    let hits = pairs.iter().filter(|p| (labels[p.i] == labels[p.j]) == p.same).count();
    Ok(hits as f64 / pairs.len() as f64)
}

fn hard_labels(probs: &Array2<f64>) -> Vec<usize> {
    probs.outer_iter().map(|r| argmax(r.as_slice().expect("standard layout"))).collect()
}

/// Fits a pairwise surrogate to the balanced judgments.
pub trait PairTrainer: Send + Sync {
    fn train(
        &self,
        data: &EmbeddingDataset,
        pairs: &[PairAnnotation],
        cfg: &PairwiseConfig,
        init: RngState,
    ) -> Result<Box<dyn Surrogate>>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LinearPairTrainer;

impl PairTrainer for LinearPairTrainer {
    fn train(
        &self,
        data: &EmbeddingDataset,
        pairs: &[PairAnnotation],
        cfg: &PairwiseConfig,
        init: RngState,
    ) -> Result<Box<dyn Surrogate>> {
        Ok(Box::new(train_l2c(init, data, pairs, cfg.classes(), &cfg.train)?))
    }
}

/// Metric of the test clustering against the model's pseudo-labels, or
/// `None` when fewer than two points pass the threshold.
pub fn pairwise_estimate(
    model: &dyn Surrogate,
    data: &EmbeddingDataset,
    test: &Clustering,
    cfg: &PairwiseConfig,
) -> Result<Option<f64>> {
    let all: Vec<usize> = (0..data.len()).collect();
    let probs = model.predict(data, &all)?;
    let labels: Vec<(usize, usize)> = probs
        .outer_iter()
        .enumerate()
        .filter(|(_, row)| match cfg.threshold {
            ThresholdMode::Full => true,
            ThresholdMode::Thresholded(t) => row.fold(0.0f64, |m, &v| m.max(v)) > t,
        })
        .map(|(i, row)| (i, argmax(row.as_slice().expect("standard layout"))))
        .collect();
    if labels.len() < 2 {
        return Ok(None);
    }
    let stats = ContingencyStats::build(&test.harden(), labels, model.classes())?;
    cfg.metric.evaluate(&stats).map(Some)
}

#[derive(Debug, Clone)]
pub struct PairwiseRound {
    /// Judgments collected so far, before balancing.
    pub annotated: usize,
    pub trained_on: usize,
    /// Accuracy of the round's model on every judgment collected so far.
    pub pair_accuracy: Option<f64>,
    pub estimate: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct PairwiseRun {
    pub curve: ErrorCurve,
    pub rounds: Vec<PairwiseRound>,
    pub annotations: Vec<PairAnnotation>,
}

pub fn run_pairwise_pipeline(
    dataset: &EmbeddingDataset,
    test: &Clustering,
    annotator: &mut dyn PairAnnotator,
    cfg: &PairwiseConfig,
    truth: Option<&[usize]>,
) -> Result<PairwiseRun> {
    run_pairwise_pipeline_with(dataset, test, annotator, cfg, truth, &LinearPairTrainer)
}

pub fn run_pairwise_pipeline_with(
    dataset: &EmbeddingDataset,
    test: &Clustering,
    annotator: &mut dyn PairAnnotator,
    cfg: &PairwiseConfig,
    truth: Option<&[usize]>,
    trainer: &dyn PairTrainer,
) -> Result<PairwiseRun> {
    cfg.validate()?;
    if test.len() != dataset.len() {
        return Err(Error::Shape("clustering and dataset sizes differ".into()));
    }
    let true_value = truth
        .map(|t| {
            let k = cfg.k_ref.unwrap_or_else(|| t.iter().max().map_or(1, |m| m + 1));
            exact_metric(cfg.metric, test, t, k)
        })
        .transpose()?;
    let root = RngState::new(cfg.seed);
    let requests = sample_pairs(dataset.len(), cfg.total_pairs, &mut root.fork(SAMPLE).rng())?;
    let mut annotations = Vec::with_capacity(requests.len());
    let mut curve = ErrorCurve {
        points: Vec::new(),
        true_value,
    };
    let mut rounds = Vec::new();
    let mut model: Option<Box<dyn Surrogate>> = None;
    for (round, chunk) in requests.chunks(cfg.pairs_per_round).enumerate() {
        for &(a, b) in chunk {
            let same = annotator
                .same_cluster(dataset.id(a), dataset.id(b))
                .map_err(|message| Error::Annotator { round, message })?;
            annotations.push(PairAnnotation::new(a, b, same)?);
        }
        let round_rng = root.fork(ROUND_BASE + round as u64);
        let mut trained_on = 0;
        match balance_pairs(&annotations, &mut round_rng.fork(BALANCE).rng()) {
            Ok(balanced) => {
                trained_on = balanced.len();
                model = Some(trainer.train(dataset, &balanced, cfg, round_rng)?);
            }
            Err(Error::Unbalanceable(why)) => {
                tracing::warn!(round, "{why}; keeping the previous model");
            }
            Err(e) => return Err(e),
        }
        let (estimate, accuracy) = match &model {
            Some(m) => (
                pairwise_estimate(m.as_ref(), dataset, test, cfg)?,
                Some(pair_accuracy(m.as_ref(), dataset, &annotations)?),
            ),
            None => (None, None),
        };
        curve.push(annotations.len(), estimate);
        rounds.push(PairwiseRound {
            annotated: annotations.len(),
            trained_on,
            pair_accuracy: accuracy,
            estimate,
        });
    }
    Ok(PairwiseRun {
        curve,
        rounds,
        annotations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use std::collections::HashSet;

    #[test]
    fn decode_covers_every_pair_once() {
        for n in 2..9 {
            let got: Vec<_> = (0..pair_count(n)).map(|k| decode_pair(k, n)).collect();
            let want: Vec<_> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn sampling_cases() {
        let mut rng = RngState::new(0).rng();
        let mut all = sample_pairs(3, 3, &mut rng).unwrap();
        all.sort_unstable();
        assert_eq!(all, vec![(0, 1), (0, 2), (1, 2)]);
        assert!(sample_pairs(3, 4, &mut rng).is_err());
        let many = sample_pairs(200, 5000, &mut rng).unwrap();
        assert_eq!(many.iter().collect::<HashSet<_>>().len(), 5000);
        assert!(many.iter().all(|&(i, j)| i < j && j < 200));
    }

    fn pairs(pos: usize, neg: usize) -> Vec<PairAnnotation> {
        (0..pos + neg).map(|k| PairAnnotation::new(k, k + 100, k < pos).unwrap()).collect()
    }

    #[test]
    fn balancing() {
        let mut rng = RngState::new(1).rng();
        let out = balance_pairs(&pairs(3, 7), &mut rng).unwrap();
        assert_eq!(out.iter().filter(|p| p.same).count(), 3);
        assert_eq!(out.len(), 6);
        let even = pairs(4, 4);
        let mut out = balance_pairs(&even, &mut rng).unwrap();
        out.sort();
        let mut want = even.clone();
        want.sort();
        assert_eq!(out, want);
        assert!(matches!(balance_pairs(&pairs(0, 5), &mut rng), Err(Error::Unbalanceable(_))));
        assert!(PairAnnotation::new(2, 2, true).is_err());
        assert_eq!(PairAnnotation::new(5, 1, false).unwrap().i, 1);
    }

    #[test]
    fn loss_cases() {
        let one_hot = array![[1.0, 0.0]];
        let other = array![[0.0, 1.0]];
        assert!(l2c_loss_from_probs(&one_hot, &one_hot, &[true]).0 < 1e-9);
        assert!(l2c_loss_from_probs(&one_hot, &other, &[false]).0 < 1e-9);
        let uniform = array![[0.5, 0.5]];
        let (loss, _, _) = l2c_loss_from_probs(&uniform, &uniform, &[true]);
        assert!((loss - 2f64.ln()).abs() < 1e-15);
        assert!(l2c_loss_from_probs(&one_hot, &other, &[true]).0 > 20.0);
    }

    #[test]
    fn separable_pairs_are_learned() {
        let x = array![[-2.0, 0.1], [-2.1, -0.2], [-1.9, 0.0], [2.0, 0.0], [2.2, 0.3], [1.8, -0.1]];
        let truth = [0, 0, 0, 1, 1, 1];
        let data = EmbeddingDataset::from_matrix(x).unwrap();
        let all: Vec<PairAnnotation> = (0..6)
            .flat_map(|i| (i + 1..6).map(move |j| (i, j)))
            .map(|(i, j)| PairAnnotation::new(i, j, truth[i] == truth[j]).unwrap())
            .collect();
        let cfg = PairwiseConfig::default();
        let model = train_l2c(RngState::new(2), &data, &all, 2, &cfg.train).unwrap();
        assert_eq!(pair_accuracy(&model, &data, &all).unwrap(), 1.0);
        assert!(l2c_loss(&model, &data, &all).unwrap() < 0.1);
    }

    #[test]
    fn config_validation() {
        assert!(PairwiseConfig::default().validate().is_ok());
        let bad = PairwiseConfig {
            threshold: ThresholdMode::Thresholded(1.0),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let json = r#"{"threshold": {"thresholded": 0.5}, "k_ref": 4}"#;
        let cfg: PairwiseConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.threshold, ThresholdMode::Thresholded(0.5));
        assert_eq!(cfg.classes(), 4);
    }
}
