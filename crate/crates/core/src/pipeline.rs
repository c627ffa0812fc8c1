//! The label-acquisition loop: seed sampling, acquisition rounds, surrogate
//! retraining, pseudo-labeling and metric estimation.
//!
//! [`Experiment`] is a resumable state machine. Callers read the pending
//! batch, submit labels for it (possibly in several parts), and the loop
//! advances once the batch is complete. [`run_experiment`] drives it with an
//! in-process [`Annotator`]; the session service drives it over HTTP.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::{score_candidates, select, AcquisitionContext, AcquisitionKind};
use crate::data::{argmax, Clustering, EmbeddingDataset, LabelStore};
use crate::error::{Error, Result};
use crate::metrics::{aec, estimate_metric, exact_metric, ContingencyStats, ErrorCurve, Metric};
use crate::rng::RngState;
use crate::semisup::{train_fixmatch, FixMatchConfig};
use crate::surrogate::{train_supervised, FeatureScaler, ModelSpec, ScaledModel, Surrogate, TrainConfig};

const SEED_DRAW: u64 = 0;
const ROUND_BASE: u64 = 1 << 20;
const TRAIN: u64 = 1;
const ACQUIRE: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorMode {
    /// Metric over human labels only.
    LabeledOnly,
    /// Metric over human labels plus surrogate pseudo-labels.
    Combined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateMode {
    Supervised,
    Fixmatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed_size: usize,
    pub batch_n: usize,
    pub budget: usize,
    pub acquisition: AcquisitionKind,
    pub estimator: EstimatorMode,
    pub surrogate: SurrogateMode,
    pub pseudo_label: bool,
    pub metric: Metric,
    /// Number of reference clusters. Required.
    pub k_ref: usize,
    pub seed: u64,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub fixmatch: FixMatchConfig,
    pub bald_passes: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed_size: 50,
            batch_n: 50,
            budget: 1000,
            acquisition: AcquisitionKind::Random,
            estimator: EstimatorMode::Combined,
            surrogate: SurrogateMode::Fixmatch,
            pseudo_label: true,
            metric: Metric::Nmi,
            k_ref: 0,
            seed: 0,
            model: ModelSpec::default(),
            train: TrainConfig::default(),
            fixmatch: FixMatchConfig::default(),
            bald_passes: 10,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self, n_points: usize) -> Result<()> {
        if self.k_ref == 0 {
            return Err(Error::invalid("k_ref must be at least 1"));
        }
        if self.seed_size == 0 || self.batch_n == 0 {
            return Err(Error::invalid("seed_size and batch_n must be at least 1"));
        }
        if self.budget < self.seed_size {
            return Err(Error::invalid(format!(
                "budget {} is below the seed size {}",
                self.budget, self.seed_size
            )));
        }
        if self.budget > n_points {
            return Err(Error::invalid(format!(
                "budget {} exceeds the {n_points} available points",
                self.budget
            )));
        }
        if self.acquisition == AcquisitionKind::Bald && self.bald_passes == 0 {
            return Err(Error::invalid("bald_passes must be at least 1"));
        }
        self.train.validate()?;
        self.fixmatch.validate()
    }

    fn uses_pseudo_labels(&self) -> bool {
        self.pseudo_label && self.estimator == EstimatorMode::Combined
    }

    /// Number of curve points a full run records.
    pub fn rounds(&self) -> usize {
        1 + (self.budget - self.seed_size).div_ceil(self.batch_n)
    }
}

/// Source of reference labels, one point at a time.
pub trait Annotator {
    fn label(&mut self, id: &str) -> std::result::Result<usize, String>;
}

/// Source of same-cluster judgments for point pairs.
pub trait PairAnnotator {
    fn same_cluster(&mut self, a: &str, b: &str) -> std::result::Result<bool, String>;
}

/// Answers from a full reference labeling.
#[derive(Debug, Clone)]
pub struct TruthAnnotator {
    labels: HashMap<String, usize>,
    queries: usize,
}

impl TruthAnnotator {
    pub fn new(dataset: &EmbeddingDataset, truth: &[usize]) -> Result<Self> {
        if truth.len() != dataset.len() {
            return Err(Error::Shape(format!(
                "{} labels for {} points",
                truth.len(),
                dataset.len()
            )));
        }
        Ok(Self {
            labels: dataset.ids().iter().cloned().zip(truth.iter().copied()).collect(),
            queries: 0,
        })
    }

    pub fn queries(&self) -> usize {
        self.queries
    }

    fn lookup(&self, id: &str) -> std::result::Result<usize, String> {
        self.labels.get(id).copied().ok_or_else(|| format!("no reference label for {id:?}"))
    }
}

impl Annotator for TruthAnnotator {
    fn label(&mut self, id: &str) -> std::result::Result<usize, String> {
        self.queries += 1;
        self.lookup(id)
    }
}

impl PairAnnotator for TruthAnnotator {
    fn same_cluster(&mut self, a: &str, b: &str) -> std::result::Result<bool, String> {
        self.queries += 1;
        Ok(self.lookup(a)? == self.lookup(b)?)
    }
}

/// Fits a fresh surrogate to the current labels.
pub trait SurrogateTrainer: Send + Sync {
    fn train(
        &self,
        data: &EmbeddingDataset,
        store: &LabelStore,
        cfg: &ExperimentConfig,
        init: RngState,
    ) -> Result<Box<dyn Surrogate>>;
}

/// The network surrogate on standardized features, trained supervised or
/// with FixMatch per config.
#[derive(Debug, Clone, Copy, Default)]
pub struct MlpTrainer;

impl SurrogateTrainer for MlpTrainer {
    fn train(
        &self,
        data: &EmbeddingDataset,
        store: &LabelStore,
        cfg: &ExperimentConfig,
        init: RngState,
    ) -> Result<Box<dyn Surrogate>> {
        let scaler = FeatureScaler::fit(data.vectors().view());
        let idx: Vec<usize> = store.human().keys().copied().collect();
        let y: Vec<usize> = store.human().values().copied().collect();
        let x = scaler.transform(data.rows(&idx).view());
        let model = match cfg.surrogate {
            SurrogateMode::Supervised => {
                train_supervised(init, x.view(), &y, cfg.k_ref, &cfg.model, &cfg.train)?
            }
            SurrogateMode::Fixmatch => {
                let ux = scaler.transform(data.rows(&store.unlabeled(data.len())).view());
                train_fixmatch(init, x.view(), &y, ux.view(), cfg.k_ref, &cfg.model, &cfg.fixmatch)?
            }
        };
        Ok(Box::new(ScaledModel { scaler, model }))
    }
}

/// Hard surrogate labels for the given rows: eval-mode argmax, lowest class
/// on ties.
pub fn pseudo_label(
    model: &dyn Surrogate,
    unlabeled: &[usize],
    dataset: &EmbeddingDataset,
) -> Result<BTreeMap<usize, usize>> {
    if unlabeled.is_empty() {
        return Ok(BTreeMap::new());
    }
    let p = model.predict(dataset, unlabeled)?;
    Ok(unlabeled
        .iter()
        .zip(p.outer_iter())
        .map(|(&i, row)| (i, argmax(row.as_slice().expect("standard layout"))))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    AwaitingLabels,
    Training,
    Done,
}

/// One completed round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub round: usize,
    pub queried: Vec<String>,
    /// Acquisition score of each queried point when it was selected.
    pub scores: Vec<f64>,
    pub labels_used: usize,
    pub pseudo_labels: usize,
    pub estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    config: ExperimentConfig,
    rng: RngState,
    store: LabelStore,
    round: usize,
    pending: Vec<usize>,
    pending_scores: Vec<f64>,
    received: BTreeMap<usize, usize>,
    status: Status,
    curve: ErrorCurve,
    audit: Vec<AuditEntry>,
}

impl Experiment {
    /// Validates the config and draws the uniform seed batch.
    pub fn start(
        config: ExperimentConfig,
        dataset: &EmbeddingDataset,
        test: &Clustering,
        true_value: Option<f64>,
    ) -> Result<Self> {
        config.validate(dataset.len())?;
        if test.len() != dataset.len() {
            return Err(Error::Shape(format!(
                "clustering covers {} points, dataset has {}",
                test.len(),
                dataset.len()
            )));
        }
        let rng = RngState::new(config.seed);
        let mut draw = rng.fork(SEED_DRAW).rng();
        let mut pending = sample(&mut draw, dataset.len(), config.seed_size).into_vec();
        pending.sort_unstable();
        Ok(Self {
            store: LabelStore::new(config.k_ref),
            pending_scores: vec![0.0; pending.len()],
            pending,
            config,
            rng,
            round: 0,
            received: BTreeMap::new(),
            status: Status::AwaitingLabels,
            curve: ErrorCurve {
                points: Vec::new(),
                true_value,
            },
            audit: Vec::new(),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn status(&self) -> Status {
        self.status
    }

    /// Index of the round whose labels are being collected.
    pub fn round(&self) -> usize {
        self.round
    }

    pub fn pending(&self) -> &[usize] {
        &self.pending
    }

    /// Pending points that still need a label.
    pub fn outstanding(&self) -> Vec<usize> {
        self.pending.iter().copied().filter(|i| !self.received.contains_key(i)).collect()
    }

    pub fn received(&self) -> &BTreeMap<usize, usize> {
        &self.received
    }

    pub fn store(&self) -> &LabelStore {
        &self.store
    }

    pub fn curve(&self) -> &ErrorCurve {
        &self.curve
    }

    pub fn audit(&self) -> &[AuditEntry] {
        &self.audit
    }

    pub fn estimate(&self) -> Option<f64> {
        self.curve.last_estimate()
    }

    /// Checks a label batch against the pending set without applying it.
    pub fn check(&self, labels: &[(usize, usize)]) -> Result<()> {
        if self.status != Status::AwaitingLabels {
            return Err(Error::invalid("experiment is not awaiting labels"));
        }
        let mut seen = BTreeMap::new();
        for &(idx, label) in labels {
            if label >= self.config.k_ref {
                return Err(Error::LabelOutOfRange {
                    label,
                    k_ref: self.config.k_ref,
                });
            }
            if !self.pending.contains(&idx) {
                return Err(Error::NotPending(format!("point {idx}")));
            }
            let earlier = self.received.get(&idx).or_else(|| seen.get(&idx));
            if earlier.is_some_and(|&l| l != label) {
                return Err(Error::NotPending(format!("point {idx} already has a different label")));
            }
            seen.insert(idx, label);
        }
        Ok(())
    }

    /// Records labels for pending points. Re-sending an identical label is a
    /// no-op. Returns true once the batch is complete and the experiment is
    /// ready to [`advance`](Self::advance).
    pub fn record(&mut self, labels: &[(usize, usize)]) -> Result<bool> {
        self.check(labels)?;
        self.received.extend(labels.iter().copied());
        let complete = self.received.len() == self.pending.len();
        if complete {
            self.status = Status::Training;
        }
        Ok(complete)
    }

    /// Applies the completed batch: retrains, pseudo-labels, estimates and,
    /// unless the budget is spent, selects the next batch.
    pub fn advance(
        &mut self,
        dataset: &EmbeddingDataset,
        test: &Clustering,
        trainer: &dyn SurrogateTrainer,
    ) -> Result<()> {
        if self.status != Status::Training {
            return Err(Error::invalid("the pending batch is not complete"));
        }
        let cfg = &self.config;
        let mut store = self.store.clone();
        for (&idx, &label) in &self.received {
            store.add_human(idx, label)?;
        }
        let spent = store.human_count() >= cfg.budget;
        let unlabeled = store.unlabeled(dataset.len());
        let pseudo = cfg.uses_pseudo_labels() && !unlabeled.is_empty();
        let acquire_with_model = !spent && cfg.acquisition.needs_surrogate();
        let round_rng = self.rng.fork(ROUND_BASE + self.round as u64);

        let model = if pseudo || acquire_with_model {
            Some(trainer.train(dataset, &store, cfg, round_rng.fork(TRAIN))?)
        } else {
            None
        };
        store.clear_pseudo();
        if pseudo {
            let model = model.as_deref().expect("trained above");
            store.set_pseudo(pseudo_label(model, &unlabeled, dataset)?)?;
        }
        let estimate = estimate_metric(cfg.metric, test, &store)?;

        let (next, next_scores) = if spent {
            (Vec::new(), Vec::new())
        } else {
            let n = cfg.batch_n.min(cfg.budget - store.human_count());
            let ctx = AcquisitionContext {
                surrogate: model.as_deref(),
                test,
                labeled_stats: Some(ContingencyStats::build(
                    &test.harden(),
                    store.human().iter().map(|(&i, &l)| (i, l)),
                    cfg.k_ref,
                )?),
                bald_passes: cfg.bald_passes,
            };
            let mut rng = round_rng.fork(ACQUIRE).rng();
            let scores = score_candidates(cfg.acquisition, &ctx, dataset, &unlabeled, &mut rng)?;
            let picked = select(&unlabeled, &scores, n, &mut rng)?;
            let by_idx: HashMap<usize, f64> = unlabeled.iter().copied().zip(scores).collect();
            let picked_scores = picked.iter().map(|i| by_idx[i]).collect();
            (picked, picked_scores)
        };

        self.audit.push(AuditEntry {
            round: self.round,
            queried: self.pending.iter().map(|&i| dataset.id(i).to_owned()).collect(),
            scores: std::mem::take(&mut self.pending_scores),
            labels_used: store.human_count(),
            pseudo_labels: store.pseudo().len(),
            estimate,
        });
        self.curve.push(store.human_count(), Some(estimate));
        tracing::debug!(round = self.round, labels = store.human_count(), estimate, "round complete");
        self.store = store;
        self.received.clear();
        self.pending = next;
        self.pending_scores = next_scores;
        self.round += 1;
        self.status = if spent { Status::Done } else { Status::AwaitingLabels };
        Ok(())
    }

    /// [`record`](Self::record) followed by [`advance`](Self::advance) when
    /// the batch completes. Nothing changes if training fails.
    pub fn submit(
        &mut self,
        labels: &[(usize, usize)],
        dataset: &EmbeddingDataset,
        test: &Clustering,
        trainer: &dyn SurrogateTrainer,
    ) -> Result<bool> {
        let before = self.clone();
        match self.record(labels) {
            Ok(false) => Ok(false),
            Ok(true) => match self.advance(dataset, test, trainer) {
                Ok(()) => Ok(true),
                Err(e) => {
                    *self = before;
                    Err(e)
                }
            },
            Err(e) => Err(e),
        }
    }

    pub fn write_audit<W: Write>(&self, mut w: W) -> Result<()> {
        for entry in &self.audit {
            serde_json::to_writer(&mut w, entry)?;
            writeln!(w).map_err(|e| Error::io("<audit>", e))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub curve: ErrorCurve,
    pub final_estimate: f64,
    pub audit: Vec<AuditEntry>,
    /// Labels held at the end of the run.
    pub store: LabelStore,
}

pub fn run_experiment(
    dataset: &EmbeddingDataset,
    test: &Clustering,
    annotator: &mut dyn Annotator,
    cfg: &ExperimentConfig,
    truth: Option<&[usize]>,
) -> Result<RunResult> {
    run_experiment_with(dataset, test, annotator, cfg, truth, &MlpTrainer)
}

pub fn run_experiment_with(
    dataset: &EmbeddingDataset,
    test: &Clustering,
    annotator: &mut dyn Annotator,
    cfg: &ExperimentConfig,
    truth: Option<&[usize]>,
    trainer: &dyn SurrogateTrainer,
) -> Result<RunResult> {
    let true_value = truth
        .map(|t| exact_metric(cfg.metric, test, t, cfg.k_ref))
        .transpose()?;
    let mut exp = Experiment::start(cfg.clone(), dataset, test, true_value)?;
    while exp.status() != Status::Done {
        let round = exp.round();
        let labels = exp
            .pending()
            .iter()
            .map(|&i| {
                annotator
                    .label(dataset.id(i))
                    .map(|l| (i, l))
                    .map_err(|message| Error::Annotator { round, message })
            })
            .collect::<Result<Vec<_>>>()?;
        exp.submit(&labels, dataset, test, trainer)?;
    }
    Ok(RunResult {
        final_estimate: exp.estimate().expect("a finished run has at least one point"),
        curve: exp.curve,
        audit: exp.audit,
        store: exp.store,
    })
}

/// One method in a benchmark grid: overrides applied to the base config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub name: String,
    pub acquisition: AcquisitionKind,
    pub surrogate: SurrogateMode,
    pub pseudo_label: bool,
    pub estimator: EstimatorMode,
}

impl MethodSpec {
    /// Uniform sampling, metric over human labels only.
    pub fn random_baseline() -> Self {
        Self {
            name: "random".into(),
            acquisition: AcquisitionKind::Random,
            surrogate: SurrogateMode::Supervised,
            pseudo_label: false,
            estimator: EstimatorMode::LabeledOnly,
        }
    }

    /// Uniform sampling with a FixMatch surrogate and pseudo-labeling.
    pub fn random_fixmatch_pseudo() -> Self {
        Self {
            name: "random_fixmatch_pl".into(),
            acquisition: AcquisitionKind::Random,
            surrogate: SurrogateMode::Fixmatch,
            pseudo_label: true,
            estimator: EstimatorMode::Combined,
        }
    }

    pub fn apply(&self, base: &ExperimentConfig) -> ExperimentConfig {
        ExperimentConfig {
            acquisition: self.acquisition,
            surrogate: self.surrogate,
            pseudo_label: self.pseudo_label,
            estimator: self.estimator,
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: String,
    pub clustering: usize,
    pub seed: u64,
    pub aec: f64,
    pub final_estimate: f64,
    pub true_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteRow {
    pub method: String,
    pub mean_aec: f64,
    pub std_err: f64,
    pub runs: usize,
}

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub rows: Vec<SuiteRow>,
    pub runs: Vec<RunRecord>,
}

impl SuiteResult {
    pub fn row(&self, method: &str) -> Option<&SuiteRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// Columns: method, mean_aec, std_err, runs.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for row in &self.rows {
            out.serialize(row)?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// One line per run. Columns: method, clustering, seed, aec,
    /// final_estimate, true_value.
    pub fn write_runs_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for run in &self.runs {
            out.serialize(run)?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Mean and standard error of the mean (zero for a single value).
pub fn mean_std_err(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Runs every method on every clustering and seed in parallel. The seed
/// replaces `base.seed`, so methods sharing a seed see the same seed batch.
pub fn run_suite(
    dataset: &EmbeddingDataset,
    tests: &[Clustering],
    truth: &[usize],
    base: &ExperimentConfig,
    methods: &[MethodSpec],
    seeds: &[u64],
) -> Result<SuiteResult> {
    run_suite_with(dataset, tests, truth, base, methods, seeds, &MlpTrainer)
}

pub fn run_suite_with(
    dataset: &EmbeddingDataset,
    tests: &[Clustering],
    truth: &[usize],
    base: &ExperimentConfig,
    methods: &[MethodSpec],
    seeds: &[u64],
    trainer: &dyn SurrogateTrainer,
) -> Result<SuiteResult> {
    if truth.len() != dataset.len() {
        return Err(Error::invalid("the suite needs a reference label for every point"));
    }
    if tests.is_empty() || methods.is_empty() || seeds.is_empty() {
        return Err(Error::invalid("the suite needs clusterings, methods and seeds"));
    }
    let jobs: Vec<(usize, usize, u64)> = (0..methods.len())
        .flat_map(|m| (0..tests.len()).flat_map(move |c| seeds.iter().map(move |&s| (m, c, s))))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(m, c, seed)| {
            let cfg = ExperimentConfig {
                seed,
                ..methods[m].apply(base)
            };
            let mut annotator = TruthAnnotator::new(dataset, truth)?;
            let result =
                run_experiment_with(dataset, &tests[c], &mut annotator, &cfg, Some(truth), trainer)?;
            tracing::info!(method = %methods[m].name, clustering = c, seed, "run finished");
            Ok(RunRecord {
                method: methods[m].name.clone(),
                clustering: c,
                seed,
                aec: aec(&result.curve)?,
                final_estimate: result.final_estimate,
                true_value: result.curve.true_value.expect("truth supplied"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = methods
        .iter()
        .map(|m| {
            let values: Vec<f64> = runs.iter().filter(|r| r.method == m.name).map(|r| r.aec).collect();
            let (mean_aec, std_err) = mean_std_err(&values);
            SuiteRow {
                method: m.name.clone(),
                mean_aec,
                std_err,
                runs: values.len(),
            }
        })
        .collect();
    Ok(SuiteResult { rows, runs })
}
