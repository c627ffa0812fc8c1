//! Command line front end and annotation session service for `fewlabel`.

pub mod commands;
pub mod config;
pub mod service;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use fewlabel::acquisition::AcquisitionKind;
use fewlabel::{EstimatorMode, Metric, SurrogateMode};

#[derive(Debug, Parser)]
#[command(name = "fewlabel", version, about = "Estimate clustering metrics from a few reference labels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a Gaussian blob dataset, its labels and K-Means clusterings.
    Gen(GenArgs),
    /// Cluster an embedding file with K-Means.
    Cluster(ClusterArgs),
    /// Exact metric between a clustering and a full labeling.
    Evaluate(EvaluateArgs),
    /// Run the estimation loop against ground-truth labels.
    Simulate(SimulateArgs),
    /// Run a benchmark grid and report mean AEC per method.
    Suite(SuiteArgs),
    /// Run the pairwise estimation loop against ground-truth labels.
    Pairwise(PairwiseArgs),
    /// Serve annotation sessions over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 2000)]
    pub n_points: usize,
    #[arg(long, default_value_t = 8)]
    pub clusters: usize,
    #[arg(long, default_value_t = 64)]
    pub dimension: usize,
    #[arg(long, default_value_t = 4.0)]
    pub cluster_std: f64,
    #[arg(long, default_value_t = 10.0)]
    pub center_spread: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Cluster counts to run K-Means with, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "8")]
    pub kmeans: Vec<usize>,
    /// First K-Means seed.
    #[arg(long, default_value_t = 0)]
    pub kmeans_seed: u64,
    /// Keep the first K-Means seed whose NMI against the labels lies in
    /// `LO,HI`, trying up to `--max-tries` seeds.
    #[arg(long, value_delimiter = ',')]
    pub nmi_window: Option<Vec<f64>>,
    #[arg(long, default_value_t = 12)]
    pub max_tries: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 300)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Output clustering file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, default_value = "nmi")]
    pub metric: Metric,
    #[arg(long)]
    pub clustering: PathBuf,
    /// Reference labels for every clustered id.
    #[arg(long)]
    pub labels: PathBuf,
    /// Number of reference clusters. Defaults to the largest label plus one.
    #[arg(long)]
    pub k_ref: Option<usize>,
}

/// Input files, overriding paths named in the config file.
#[derive(Debug, Args)]
pub struct InputArgs {
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub clustering: Option<PathBuf>,
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON file with experiment settings and optional input paths.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub inputs: InputArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub seed_size: Option<usize>,
    #[arg(long)]
    pub batch_n: Option<usize>,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub k_ref: Option<usize>,
    #[arg(long)]
    pub metric: Option<Metric>,
    #[arg(long)]
    pub acquisition: Option<AcquisitionKind>,
    #[arg(long, value_parser = parse_snake::<EstimatorMode>)]
    pub estimator: Option<EstimatorMode>,
    #[arg(long, value_parser = parse_snake::<SurrogateMode>)]
    pub surrogate: Option<SurrogateMode>,
    #[arg(long)]
    pub pseudo_label: Option<bool>,
}

#[derive(Debug, Args)]
pub struct SuiteArgs {
    /// Grid file naming the inputs, methods and seeds.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Replaces the seed list from the grid file.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
}

#[derive(Debug, Args)]
pub struct PairwiseArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub inputs: InputArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub total_pairs: Option<usize>,
    #[arg(long)]
    pub pairs_per_round: Option<usize>,
    #[arg(long)]
    pub k_ref: Option<usize>,
    #[arg(long)]
    pub metric: Option<Metric>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Port to listen on; 0 picks a free one.
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Directory holding one JSON file per session.
    #[arg(long, env = "FEWLABEL_STATE_DIR", default_value = "fewlabel-state")]
    pub state_dir: PathBuf,
}

fn parse_snake<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_owned())).map_err(|e| e.to_string())
}

/// Marks a failure as a bug or environment fault rather than bad input.
#[derive(Debug)]
pub struct Internal(pub String);

impl fmt::Display for Internal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "internal error: {}", self.0)
    }
}

impl std::error::Error for Internal {}

pub const EXIT_OK: u8 = 0;
pub const EXIT_USER: u8 = 1;
pub const EXIT_INTERNAL: u8 = 2;

/// Exit status for a failed command.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Internal>() {
            return EXIT_INTERNAL;
        }
        if let Some(e) = cause.downcast_ref::<fewlabel::Error>() {
            return if e.is_user_error() { EXIT_USER } else { EXIT_INTERNAL };
        }
    }
    EXIT_USER
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Gen(a) => commands::gen(&a),
        Command::Cluster(a) => commands::cluster(&a),
        Command::Evaluate(a) => commands::evaluate(&a).map(|v| println!("{v:?}")),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Suite(a) => commands::suite(&a),
        Command::Pairwise(a) => commands::pairwise(&a),
        Command::Serve(a) => service::serve(&a),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_enums_and_lists() {
        let cli = Cli::try_parse_from([
            "fewlabel", "simulate", "--out", "o", "--estimator", "labeled_only", "--acquisition", "soft_nmi",
            "--metric", "ari",
        ])
        .unwrap();
        let Command::Simulate(a) = cli.command else { panic!() };
        assert_eq!(a.estimator, Some(EstimatorMode::LabeledOnly));
        assert_eq!(a.acquisition, Some(AcquisitionKind::SoftNmi));
        assert_eq!(a.metric, Some(Metric::Ari));

        let cli = Cli::try_parse_from(["fewlabel", "gen", "--out", "o", "--kmeans", "6,8,10"]).unwrap();
        let Command::Gen(a) = cli.command else { panic!() };
        assert_eq!(a.kmeans, vec![6, 8, 10]);
        assert!(Cli::try_parse_from(["fewlabel", "simulate", "--out", "o", "--estimator", "nope"]).is_err());
    }

    #[test]
    fn exit_codes() {
        let user = anyhow::Error::new(fewlabel::Error::UnknownId("x".into())).context("loading");
        assert_eq!(exit_code(&user), EXIT_USER);
        let shape = anyhow::Error::new(fewlabel::Error::Shape("bad".into()));
        assert_eq!(exit_code(&shape), EXIT_INTERNAL);
        assert_eq!(exit_code(&anyhow::Error::new(Internal("x".into()))), EXIT_INTERNAL);
        assert_eq!(exit_code(&anyhow::anyhow!("no such file")), EXIT_USER);
    }
}
