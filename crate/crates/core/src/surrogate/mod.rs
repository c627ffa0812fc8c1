//! The surrogate classifier: a small dense network trained by explicit
//! backpropagation, plus the [`Surrogate`] abstraction the pipeline uses so
//! that other predictors can be substituted.

mod mlp;
mod optim;
mod train;

pub use mlp::{
    cross_entropy, softmax_in_place, Checkpoint, Dense, Gradients, LayerCheckpoint, MlpModel,
    ModelSpec, Trace, PROB_FLOOR,
};
pub use optim::{Optimizer, OptimizerKind, OptimizerSettings, Schedule};
pub use train::{fit, train_supervised, TrainConfig, TrainReport, MIN_POINTS_FOR_VALIDATION};
pub(crate) use train::{check_labels, epoch_batches, DROPOUT, INIT, SHUFFLE};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::EmbeddingDataset;
use crate::error::{Error, Result};
use crate::rng::Stream;

/// `passes` train-mode forward passes with fresh dropout masks each time.
pub fn mc_dropout_predict(
    model: &MlpModel,
    x: ArrayView2<'_, f64>,
    passes: usize,
    rng: &mut Stream,
) -> Result<Vec<Array2<f64>>> {
    if passes == 0 {
        return Err(Error::invalid("MC dropout needs at least one pass"));
    }
    (0..passes).map(|_| model.predict_train(x, rng)).collect()
}

/// A classifier over reference labels, queried by dataset row.
pub trait Surrogate: Send + Sync {
    fn classes(&self) -> usize;

    /// Deterministic class probabilities for the given rows.
    fn predict(&self, data: &EmbeddingDataset, idx: &[usize]) -> Result<Array2<f64>>;

    /// Stochastic predictions used by BALD; the default repeats `predict`.
    fn predict_mc(
        &self,
        data: &EmbeddingDataset,
        idx: &[usize],
        passes: usize,
        _rng: &mut Stream,
    ) -> Result<Vec<Array2<f64>>> {
        if passes == 0 {
            return Err(Error::invalid("MC dropout needs at least one pass"));
        }
        let p = self.predict(data, idx)?;
        Ok(vec![p; passes])
    }

    /// The underlying network, when there is one to checkpoint.
    fn network(&self) -> Option<&MlpModel> {
        None
    }
}

impl Surrogate for MlpModel {
    fn classes(&self) -> usize {
        MlpModel::classes(self)
    }

    fn predict(&self, data: &EmbeddingDataset, idx: &[usize]) -> Result<Array2<f64>> {
        MlpModel::predict(self, data.rows(idx).view())
    }

    fn predict_mc(
        &self,
        data: &EmbeddingDataset,
        idx: &[usize],
        passes: usize,
        rng: &mut Stream,
    ) -> Result<Vec<Array2<f64>>> {
        mc_dropout_predict(self, data.rows(idx).view(), passes, rng)
    }

    fn network(&self) -> Option<&MlpModel> {
        Some(self)
    }
}

/// Per-feature standardization, fitted without labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    mean: Array1<f64>,
    scale: Array1<f64>,
}

impl FeatureScaler {
    /// Zero mean and unit variance per column; constant columns are only centered.
    pub fn fit(x: ArrayView2<'_, f64>) -> Self {
        let mean = x.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(x.ncols()));
        let scale = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 0.0 { s } else { 1.0 });
        Self { mean, scale }
    }

    pub fn transform(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        (&x - &self.mean) / &self.scale
    }
}

/// A network applied to standardized inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledModel {
    pub scaler: FeatureScaler,
    pub model: MlpModel,
}

impl Surrogate for ScaledModel {
    fn classes(&self) -> usize {
        self.model.classes()
    }

    fn predict(&self, data: &EmbeddingDataset, idx: &[usize]) -> Result<Array2<f64>> {
        self.model.predict(self.scaler.transform(data.rows(idx).view()).view())
    }

    fn predict_mc(
        &self,
        data: &EmbeddingDataset,
        idx: &[usize],
        passes: usize,
        rng: &mut Stream,
    ) -> Result<Vec<Array2<f64>>> {
        mc_dropout_predict(&self.model, self.scaler.transform(data.rows(idx).view()).view(), passes, rng)
    }

    fn network(&self) -> Option<&MlpModel> {
        Some(&self.model)
    }
}
