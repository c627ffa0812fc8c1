//! Label-efficient estimation of clustering evaluation metrics.

pub mod acquisition;
pub mod data;
pub mod datagen;
pub mod error;
pub mod io;
pub mod metrics;
pub mod pairwise;
pub mod pipeline;
pub mod rng;
pub mod semisup;
pub mod surrogate;

pub use data::{Clustering, EmbeddingDataset, HardClustering, LabelSource, LabelStore, Point, SoftClustering};
pub use error::{Error, Result};
pub use metrics::{aec, ContingencyStats, CurvePoint, ErrorCurve, Metric};
pub use rng::RngState;
pub use pipeline::{
    run_experiment, run_suite, Annotator, EstimatorMode, Experiment, ExperimentConfig, PairAnnotator,
    SurrogateMode, TruthAnnotator,
};
