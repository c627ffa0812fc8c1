use std::collections::HashMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use fewlabel::datagen::{kmeans, kmeans_in_nmi_window, make_blobs, BlobSpec, KMeansConfig};
use fewlabel::io::{
    load_clustering, load_embeddings, load_truth, read_clustering_records, read_label_records, save_clustering,
    save_embeddings, save_labels, save_truth, ClusterRecords,
};
use fewlabel::metrics::exact_metric;
use fewlabel::pairwise::{run_pairwise_pipeline, save_pairs};
use fewlabel::pipeline::run_suite;
use fewlabel::{
    aec, run_experiment, Clustering, ContingencyStats, EmbeddingDataset, ErrorCurve, ExperimentConfig, HardClustering,
    RngState, TruthAnnotator,
};
use serde::Serialize;
use serde_json::json;

use crate::config::{load_experiment, load_pairwise, InputPaths, SuiteConfig};
use crate::{ClusterArgs, EvaluateArgs, GenArgs, InputArgs, PairwiseArgs, SimulateArgs, SuiteArgs};

fn create_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    Ok(())
}

fn write_curve(curve: &ErrorCurve, path: &Path) -> Result<()> {
    curve.write_csv(create(path)?)?;
    Ok(())
}

/// Number of reference clusters implied by a full labeling.
pub fn infer_k_ref(truth: &[usize]) -> usize {
    truth.iter().max().map_or(0, |m| m + 1)
}

fn merge_inputs(from_file: InputPaths, flags: &InputArgs) -> InputPaths {
    InputPaths {
        embeddings: flags.embeddings.clone().or(from_file.embeddings),
        clustering: flags.clustering.clone().or(from_file.clustering),
        truth: flags.truth.clone().or(from_file.truth),
    }
}

fn required(path: Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    path.ok_or_else(|| anyhow!("missing --{flag} (or `{flag}` in the config file)"))
}

struct Inputs {
    dataset: EmbeddingDataset,
    test: Clustering,
    truth: Vec<usize>,
}

fn load_inputs(paths: InputPaths) -> Result<Inputs> {
    let embeddings = required(paths.embeddings, "embeddings")?;
    let clustering = required(paths.clustering, "clustering")?;
    let truth = required(paths.truth, "truth")?;
    let dataset = load_embeddings(&embeddings).with_context(|| format!("loading {}", embeddings.display()))?;
    let test = load_clustering(&clustering, &dataset).with_context(|| format!("loading {}", clustering.display()))?;
    let truth = load_truth(&truth, &dataset).with_context(|| format!("loading {}", truth.display()))?;
    Ok(Inputs { dataset, test, truth })
}

pub fn gen(a: &GenArgs) -> Result<()> {
    let spec = BlobSpec {
        n_points: a.n_points,
        n_clusters: a.clusters,
        dimension: a.dimension,
        cluster_std: a.cluster_std,
        center_spread: a.center_spread,
        seed: a.seed,
    };
    let (dataset, truth) = make_blobs(&spec)?;
    create_out_dir(&a.out)?;
    save_embeddings(&dataset, &a.out.join("embeddings.jsonl"))?;
    save_truth(&truth, &dataset, &a.out.join("truth.jsonl"))?;
    let cfg = KMeansConfig::default();
    for &k in &a.kmeans {
        let (seed, result) = match &a.nmi_window {
            Some(w) => {
                if w.len() != 2 || w[0] > w[1] {
                    bail!("--nmi-window takes LO,HI with LO <= HI");
                }
                let seeds = a.kmeans_seed..a.kmeans_seed + a.max_tries;
                let hit = kmeans_in_nmi_window(&dataset, &truth, k, (w[0], w[1]), seeds, &cfg)?
                    .ok_or_else(|| anyhow!("no K-Means seed gives NMI in [{}, {}] for k={k}", w[0], w[1]))?;
                (hit.seed, hit.result)
            }
            None => (a.kmeans_seed, kmeans(&dataset, k, &cfg, RngState::new(a.kmeans_seed))?),
        };
        let clustering = Clustering::Hard(result.clustering);
        let value = exact_metric(fewlabel::Metric::Nmi, &clustering, &truth, a.clusters)?;
        let path = a.out.join(format!("clustering_k{k}.jsonl"));
        save_clustering(&clustering, &dataset, &path)?;
        println!("k={k} seed={seed} nmi={value:.4} {}", path.display());
    }
    Ok(())
}

pub fn cluster(a: &ClusterArgs) -> Result<()> {
    let dataset = load_embeddings(&a.embeddings).with_context(|| format!("loading {}", a.embeddings.display()))?;
    let cfg = KMeansConfig {
        max_iter: a.max_iter,
        tol: a.tol,
    };
    let result = kmeans(&dataset, a.k, &cfg, RngState::new(a.seed))?;
    save_clustering(&Clustering::Hard(result.clustering), &dataset, &a.out)?;
    println!("inertia={} iterations={}", result.inertia, result.iterations);
    Ok(())
}

/// Exact metric between a clustering file and a label file, matched by id.
pub fn evaluate(a: &EvaluateArgs) -> Result<f64> {
    let records = read_clustering_records(&a.clustering)
        .with_context(|| format!("loading {}", a.clustering.display()))?;
    let labels: HashMap<String, usize> = read_label_records(&a.labels)
        .with_context(|| format!("loading {}", a.labels.display()))?
        .into_iter()
        .map(|r| (r.id, r.label))
        .collect();
    let ids = records.ids();
    let assignment: Vec<usize> = match &records {
        ClusterRecords::Hard(rows) => rows.iter().map(|(_, c)| *c).collect(),
        ClusterRecords::Soft(rows) => rows.iter().map(|(_, p)| fewlabel::data::argmax(p)).collect(),
    };
    let truth = ids
        .iter()
        .map(|id| labels.get(*id).copied().ok_or_else(|| fewlabel::Error::MissingId(id.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    if labels.len() != ids.len() {
        let extra = labels.keys().find(|id| !ids.contains(&id.as_str())).expect("more labels than ids");
        return Err(fewlabel::Error::UnknownId(extra.clone()).into());
    }
    let k_ref = a.k_ref.unwrap_or_else(|| infer_k_ref(&truth));
    let test = HardClustering::new(assignment)?;
    let stats = ContingencyStats::build(&test, truth.into_iter().enumerate(), k_ref)?;
    Ok(a.metric.evaluate(&stats)?)
}

#[derive(Debug, Serialize)]
struct SimulationSummary<'a> {
    config: &'a ExperimentConfig,
    true_value: Option<f64>,
    final_estimate: f64,
    aec: f64,
    labels_used: usize,
    rounds: usize,
    curve: &'a ErrorCurve,
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let (paths, mut cfg) = load_experiment(a.config.as_deref())?;
    macro_rules! set {
        ($($field:ident),*) => { $(if let Some(v) = a.$field.clone() { cfg.$field = v; })* };
    }
    set!(seed, seed_size, batch_n, budget, k_ref, metric, acquisition, estimator, surrogate, pseudo_label);
    let Inputs { dataset, test, truth } = load_inputs(merge_inputs(paths, &a.inputs))?;
    if cfg.k_ref == 0 {
        cfg.k_ref = infer_k_ref(&truth);
    }
    let mut annotator = TruthAnnotator::new(&dataset, &truth)?;
    let result = run_experiment(&dataset, &test, &mut annotator, &cfg, Some(&truth))?;

    create_out_dir(&a.out)?;
    write_curve(&result.curve, &a.out.join("curve.csv"))?;
    let mut audit = create(&a.out.join("audit.jsonl"))?;
    for entry in &result.audit {
        serde_json::to_writer(&mut audit, entry)?;
        std::io::Write::write_all(&mut audit, b"\n")?;
    }
    save_labels(&result.store, &dataset, &a.out.join("labels.jsonl"))?;
    let summary = SimulationSummary {
        config: &cfg,
        true_value: result.curve.true_value,
        final_estimate: result.final_estimate,
        aec: aec(&result.curve)?,
        labels_used: result.store.human_count(),
        rounds: result.audit.len(),
        curve: &result.curve,
    };
    write_json(&a.out.join("summary.json"), &summary)?;
    println!(
        "final_estimate={} true_value={} aec={}",
        summary.final_estimate,
        summary.true_value.unwrap_or(f64::NAN),
        summary.aec
    );
    Ok(())
}

pub fn suite(a: &SuiteArgs) -> Result<()> {
    let mut grid = SuiteConfig::load(&a.config)?;
    if let Some(seeds) = &a.seeds {
        grid.seeds = seeds.clone();
    }
    let dataset = load_embeddings(&grid.embeddings)
        .with_context(|| format!("loading {}", grid.embeddings.display()))?;
    let truth = load_truth(&grid.truth, &dataset).with_context(|| format!("loading {}", grid.truth.display()))?;
    let tests = grid
        .clusterings
        .iter()
        .map(|p| load_clustering(p, &dataset).with_context(|| format!("loading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    if grid.experiment.k_ref == 0 {
        grid.experiment.k_ref = infer_k_ref(&truth);
    }
    let result = run_suite(&dataset, &tests, &truth, &grid.experiment, &grid.methods, &grid.seeds)?;
    create_out_dir(&a.out)?;
    result.write_csv(create(&a.out.join("aec.csv"))?)?;
    result.write_runs_csv(create(&a.out.join("runs.csv"))?)?;
    for row in &result.rows {
        println!("{:<24} mean_aec={:.4} std_err={:.4} runs={}", row.method, row.mean_aec, row.std_err, row.runs);
    }
    Ok(())
}

pub fn pairwise(a: &PairwiseArgs) -> Result<()> {
    let (paths, mut cfg) = load_pairwise(a.config.as_deref())?;
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.total_pairs {
        cfg.total_pairs = v;
    }
    if let Some(v) = a.pairs_per_round {
        cfg.pairs_per_round = v;
    }
    if let Some(v) = a.metric {
        cfg.metric = v;
    }
    if a.k_ref.is_some() {
        cfg.k_ref = a.k_ref;
    }
    let Inputs { dataset, test, truth } = load_inputs(merge_inputs(paths, &a.inputs))?;
    if cfg.k_ref.is_some_and(|k| k < infer_k_ref(&truth)) {
        bail!("k_ref is smaller than the number of reference clusters in the truth file");
    }
    let mut annotator = TruthAnnotator::new(&dataset, &truth)?;
    let run = run_pairwise_pipeline(&dataset, &test, &mut annotator, &cfg, Some(&truth))?;

    create_out_dir(&a.out)?;
    write_curve(&run.curve, &a.out.join("curve.csv"))?;
    save_pairs(&run.annotations, &dataset, &a.out.join("pairs.jsonl"))?;
    let rounds: Vec<_> = run
        .rounds
        .iter()
        .map(|r| {
            json!({
                "annotated": r.annotated,
                "trained_on": r.trained_on,
                "pair_accuracy": r.pair_accuracy,
                "estimate": r.estimate,
            })
        })
        .collect();
    let final_estimate = run.curve.last_estimate();
    write_json(
        &a.out.join("summary.json"),
        &json!({
            "config": cfg,
            "true_value": run.curve.true_value,
            "final_estimate": final_estimate,
            "rounds": rounds,
        }),
    )?;
    match final_estimate {
        Some(v) => println!("final_estimate={v} true_value={}", run.curve.true_value.unwrap_or(f64::NAN)),
        None => println!("no estimate: every round lacked both pair classes"),
    }
    Ok(())
}
