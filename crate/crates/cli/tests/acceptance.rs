//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

#[path = "../../core/tests/common/oracle.rs"]
mod oracle;

use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use fewlabel::acquisition::{hard_nmi_score, select, soft_nmi_score, AcquisitionKind, NmiField};
use fewlabel::datagen::{kmeans, make_blobs, BlobSpec, KMeansConfig};
use fewlabel::metrics::{ami, ari, exact_metric, nmi};
use fewlabel::pairwise::{run_pairwise_pipeline, sample_pairs, PairwiseConfig};
use fewlabel::pipeline::{MlpTrainer, SurrogateTrainer};
use fewlabel::semisup::{fixmatch_loss, train_fixmatch, FixMatchConfig};
use fewlabel::surrogate::{cross_entropy, train_supervised, FeatureScaler, Gradients, MlpModel, ModelSpec, TrainConfig};
use fewlabel::*;
use ndarray::Array2;
use rand::seq::index::sample;
use rand::Rng;
use serde_json::{json, Value};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn metric_oracles() -> Outcome {
    let mut rng = RngState::new(1).rng();
    let cases = 2000;
    let mut worst = 0.0f64;
    for case in 0..cases {
        let n = rng.random_range(2..=8);
        let (ka, kb) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let a: Vec<usize> = (0..n).map(|_| rng.random_range(0..ka)).collect();
        let b: Vec<usize> = (0..n).map(|_| rng.random_range(0..kb)).collect();
        let test = HardClustering::with_k(a.clone(), ka).map_err(|e| e.to_string())?;
        let stats = ContingencyStats::build(&test, b.iter().copied().enumerate(), kb).map_err(|e| e.to_string())?;
        let pairs = [
            ("nmi", nmi(&stats), oracle::nmi(&a, &b)),
            ("ami", ami(&stats), oracle::ami(&a, &b)),
            ("ari", ari(&stats).map_err(|e| e.to_string())?, oracle::ari(&a, &b)),
        ];
        for (name, got, want) in pairs {
            let diff = (got - want).abs();
            worst = worst.max(diff);
            if diff.is_nan() || diff > 1e-10 {
                return Err(format!("case {case} {name}: {got} vs oracle {want} on {a:?} / {b:?}"));
            }
        }
    }
    Ok(format!("{cases} tables, max deviation {worst:.1e}"))
}

fn flatten(g: &Gradients) -> Vec<f64> {
    g.layers.iter().flat_map(|(w, b)| w.iter().chain(b.iter()).copied().collect::<Vec<_>>()).collect()
}

fn finite_differences(model: &MlpModel, loss: impl Fn(&MlpModel) -> f64, step: f64) -> Vec<f64> {
    let mut probe = model.clone();
    let mut out = Vec::new();
    for l in 0..model.layers().len() {
        let nw = model.layers()[l].weights.len();
        let cols = model.layers()[l].weights.ncols();
        for k in 0..nw + model.layers()[l].bias.len() {
            let nudge = |m: &mut MlpModel, delta: f64| {
                let layer = &mut m.layers_mut()[l];
                if k < nw {
                    layer.weights[[k / cols, k % cols]] += delta;
                } else {
                    layer.bias[k - nw] += delta;
                }
            };
            nudge(&mut probe, step);
            let up = loss(&probe);
            nudge(&mut probe, -2.0 * step);
            let down = loss(&probe);
            nudge(&mut probe, step);
            out.push((up - down) / (2.0 * step));
        }
    }
    out
}

fn gradient_check() -> Outcome {
    let mut worst = 0.0f64;
    for instance in 0..20u64 {
        let mut rng = RngState::new(500 + instance).rng();
        let input = rng.random_range(1..6);
        let classes = rng.random_range(2..5);
        let spec = ModelSpec {
            hidden_width: rng.random_range(3..10),
            layers: rng.random_range(1..5),
            dropout_rate: 0.0,
        };
        let mut model = spec.build(input, classes, &mut rng).map_err(|e| e.to_string())?;
        for layer in model.layers_mut() {
            layer.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        let batch = rng.random_range(1..8);
        let x = Array2::from_shape_simple_fn((batch, input), || rng.random_range(-2.0..2.0));
        let y: Vec<usize> = (0..batch).map(|_| rng.random_range(0..classes)).collect();
        let trace = model.trace(x.view(), None).map_err(|e| e.to_string())?;
        let (_, dlogits) = cross_entropy(&trace.probs, &y);
        let analytic = flatten(&model.backward(&trace, dlogits.view()));
        let numeric = finite_differences(&model, |m| cross_entropy(&m.predict(x.view()).unwrap(), &y).0, 1e-5);
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
        let scale = norm(&analytic).max(norm(&numeric));
        let err = if scale == 0.0 { norm(&diff) } else { norm(&diff) / scale };
        worst = worst.max(err);
        if !(err < 1e-4) {
            return Err(format!("instance {instance}: relative error {err:.2e}"));
        }
    }
    Ok(format!("20 instances, max relative error {worst:.2e}"))
}

fn full_budget_exactness() -> Outcome {
    let (data, truth) = make_blobs(&BlobSpec {
        n_points: 500,
        n_clusters: 4,
        dimension: 8,
        cluster_std: 3.0,
        center_spread: 10.0,
        seed: 11,
    })
    .map_err(|e| e.to_string())?;
    let test = Clustering::Hard(kmeans(&data, 5, &KMeansConfig::default(), RngState::new(0)).unwrap().clustering);
    let mut runs = 0;
    for acquisition in AcquisitionKind::ALL {
        for estimator in [EstimatorMode::LabeledOnly, EstimatorMode::Combined] {
            for metric in [Metric::Nmi, Metric::Ami, Metric::Ari] {
                let cfg = ExperimentConfig {
                    seed_size: 100,
                    batch_n: 200,
                    budget: 500,
                    k_ref: 4,
                    acquisition,
                    estimator,
                    metric,
                    surrogate: SurrogateMode::Supervised,
                    model: ModelSpec {
                        hidden_width: 16,
                        layers: 2,
                        dropout_rate: 0.2,
                    },
                    train: TrainConfig {
                        epochs: 3,
                        ..TrainConfig::default()
                    },
                    bald_passes: 3,
                    seed: runs,
                    ..ExperimentConfig::default()
                };
                let mut annotator = TruthAnnotator::new(&data, &truth).unwrap();
                let run = run_experiment(&data, &test, &mut annotator, &cfg, Some(&truth)).map_err(|e| e.to_string())?;
                let exact = exact_metric(metric, &test, &truth, 4).unwrap();
                if run.final_estimate != exact {
                    return Err(format!(
                        "{acquisition}/{estimator:?}/{metric}: {} != {exact}",
                        run.final_estimate
                    ));
                }
                runs += 1;
            }
        }
    }
    Ok(format!("{runs} runs on 500 points end at the exact value"))
}

fn acquisition_identities() -> Outcome {
    let mut rng = RngState::new(3).rng();
    for case in 0..1000 {
        let (kt, kr) = (rng.random_range(1..5), rng.random_range(1..5));
        let table = Array2::from_shape_simple_fn((kt, kr), || rng.random_range(0..6usize));
        if table.sum() == 0 {
            continue;
        }
        let field = NmiField::from_stats(&ContingencyStats::from_counts(table));
        let raw: Vec<f64> = (0..kr).map(|_| rng.random_range(0.01..1.0)).collect();
        let pi: Vec<f64> = raw.iter().map(|v| v / raw.iter().sum::<f64>()).collect();
        let c = rng.random_range(0..kt);
        let mut one_hot = vec![0.0; kt];
        one_hot[c] = 1.0;
        let (h, s) = (hard_nmi_score(&field, c, &pi), soft_nmi_score(&field, &one_hot, &pi));
        if h != s {
            return Err(format!("case {case}: hard {h} != soft {s}"));
        }
    }
    let independent = NmiField::from_stats(&ContingencyStats::from_counts(ndarray::array![[2, 2], [3, 3]]));
    for pi in [[0.5, 0.5], [0.9, 0.1], [0.0, 1.0]] {
        let (h, s) = (hard_nmi_score(&independent, 1, &pi), soft_nmi_score(&independent, &[0.3, 0.7], &pi));
        if h != 1.0 || s != 1.0 {
            return Err(format!("zero-information field scored hard {h}, soft {s}"));
        }
    }
    let draws = 10_000u64;
    let mut counts = [0usize; 4];
    let mut heavy = 0usize;
    for s in 0..draws {
        for id in select(&[0, 1, 2, 3], &[0.0; 4], 2, &mut RngState::new(s).rng()).unwrap() {
            counts[id] += 1;
        }
        if select(&[7, 8], &[3.0, 1.0], 1, &mut RngState::new(s).rng()).unwrap() == [7] {
            heavy += 1;
        }
    }
    let uniform: Vec<f64> = counts.iter().map(|&c| c as f64 / draws as f64).collect();
    let weighted = heavy as f64 / draws as f64;
    let ok = uniform.iter().all(|f| (f - 0.5).abs() <= 0.02) && (weighted - 0.75).abs() <= 0.02;
    check(ok, format!("hard == soft on 1000 one-hot cases; inclusion {uniform:.3?} (0.5), weighted {weighted:.3} (0.75)"))
}

fn fixmatch_reductions() -> Outcome {
    let (data, truth) = make_blobs(&BlobSpec {
        n_points: 240,
        n_clusters: 3,
        dimension: 5,
        cluster_std: 2.0,
        center_spread: 10.0,
        seed: 2,
    })
    .map_err(|e| e.to_string())?;
    let labeled: Vec<usize> = (0..40).collect();
    let unlabeled: Vec<usize> = (40..240).collect();
    let scaler = FeatureScaler::fit(data.vectors().view());
    let (lx, ux) = (scaler.transform(data.rows(&labeled).view()), scaler.transform(data.rows(&unlabeled).view()));
    let ly = &truth[..40];
    let spec = ModelSpec {
        hidden_width: 16,
        ..ModelSpec::default()
    };
    let cfg = FixMatchConfig {
        epochs: 4,
        threshold: 0.6,
        ..FixMatchConfig::default()
    };
    let init = RngState::new(8);
    let sup = train_supervised(init, lx.view(), ly, 3, &spec, &cfg.supervised_equivalent()).unwrap();
    let empty = Array2::<f64>::zeros((0, 5));
    let no_unlabeled = train_fixmatch(init, lx.view(), ly, empty.view(), 3, &spec, &cfg).unwrap();
    let zero = FixMatchConfig {
        unlabeled_weight: 0.0,
        ..cfg
    };
    let no_weight = train_fixmatch(init, lx.view(), ly, ux.view(), 3, &spec, &zero).unwrap();
    if no_unlabeled != sup || no_weight != sup {
        return Err("reduced FixMatch differs from supervised training".into());
    }

    let model = spec.build(5, 3, &mut RngState::new(4).rng()).unwrap();
    for (i, weight) in [0.0, 0.3, 1.0, 2.5].into_iter().enumerate() {
        let c = FixMatchConfig {
            unlabeled_weight: weight,
            threshold: 0.4,
            ..cfg
        };
        let r = fixmatch_loss(&model, lx.view(), ly, ux.view(), &c, &mut RngState::new(i as u64).rng()).unwrap();
        if r.loss != r.supervised + weight * r.unsupervised {
            return Err(format!("loss {} != {} + {weight} * {}", r.loss, r.supervised, r.unsupervised));
        }
    }
    let strict = FixMatchConfig {
        threshold: 1.0,
        ..cfg
    };
    let probs = model.predict(ux.view()).unwrap();
    if probs.iter().any(|&p| p >= 1.0) {
        return Err("fixture has a confidence of exactly 1".into());
    }
    let r = fixmatch_loss(&model, lx.view(), ly, ux.view(), &strict, &mut RngState::new(9).rng()).unwrap();
    check(
        r.mask_rate == 0.0,
        format!("bit-identical reductions, exact decomposition, mask rate {} at threshold 1", r.mask_rate),
    )
}

/// Blob data and K-Means clusterings used for the ordering criteria.
struct Desk {
    dir: tempfile::TempDir,
}

impl Desk {
    fn generate() -> Result<Self, String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let out = run_cli(&[
            "gen", "--n-points", "2000", "--clusters", "8", "--dimension", "64", "--cluster-std", "4", "--center-spread",
            "10", "--seed", "7", "--kmeans", "6,8,10", "--nmi-window", "0.4,0.9", "--max-tries", "12", "--out",
        ], Some(dir.path()))?;
        print!("{out}");
        Ok(Self { dir })
    }

    fn path(&self, name: &str) -> std::path::PathBuf {
        self.dir.path().join(name)
    }
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_fewlabel")
}

fn run_cli(args: &[&str], trailing: Option<&Path>) -> Result<String, String> {
    let mut cmd = Command::new(bin());
    cmd.args(args);
    if let Some(p) = trailing {
        cmd.arg(p);
    }
    let out = cmd.env("RUST_LOG", "warn").output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn desk_ordering(desk: &Desk) -> Outcome {
    let start = Instant::now();
    let grid = json!({
        "embeddings": "embeddings.jsonl",
        "truth": "truth.jsonl",
        "clusterings": ["clustering_k6.jsonl", "clustering_k8.jsonl", "clustering_k10.jsonl"],
        "experiment": { "seed_size": 50, "batch_n": 50, "budget": 500, "k_ref": 8 },
        "seeds": [0, 1, 2, 3, 4],
    });
    std::fs::write(desk.path("grid.json"), grid.to_string()).map_err(|e| e.to_string())?;
    let out = desk.path("suite");
    run_cli(&["suite", "--config", desk.path("grid.json").to_str().unwrap(), "--out"], Some(&out))?;
    let mut reader = csv::Reader::from_path(out.join("aec.csv")).map_err(|e| e.to_string())?;
    let mut rows = std::collections::HashMap::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        let parse = |i: usize| rec[i].parse::<f64>().unwrap();
        rows.insert(rec[0].to_string(), (parse(1), parse(2), parse(3)));
    }
    let (base, base_se, base_runs) = rows["random"];
    let (ours, ours_se, ours_runs) = rows["random_fixmatch_pl"];
    let pooled = (base_se.powi(2) + ours_se.powi(2)).sqrt();
    let elapsed = start.elapsed();
    check(
        ours < base && base - ours > pooled && base_runs == 15.0 && ours_runs == 15.0 && elapsed < Duration::from_secs(1200),
        format!(
            "AEC random {base:.3} ± {base_se:.3}, fixmatch+pseudo-labels {ours:.3} ± {ours_se:.3}; \
             reduction {:.3} vs pooled SE {pooled:.3}; {:.0}s",
            base - ours,
            elapsed.as_secs_f64()
        ),
    )
}

fn surrogate_accuracy(desk: &Desk) -> Outcome {
    let start = Instant::now();
    let data = io::load_embeddings(&desk.path("embeddings.jsonl")).map_err(|e| e.to_string())?;
    let truth = io::load_truth(&desk.path("truth.jsonl"), &data).map_err(|e| e.to_string())?;
    let mut acc = [0.0f64; 2];
    for seed in 0..5u64 {
        let mut store = LabelStore::new(8);
        for i in sample(&mut RngState::new(seed).rng(), data.len(), 200) {
            store.add_human(i, truth[i]).unwrap();
        }
        let unlabeled = store.unlabeled(data.len());
        for (slot, mode) in [SurrogateMode::Supervised, SurrogateMode::Fixmatch].into_iter().enumerate() {
            let cfg = ExperimentConfig {
                k_ref: 8,
                surrogate: mode,
                ..ExperimentConfig::default()
            };
            let model = MlpTrainer.train(&data, &store, &cfg, RngState::new(seed)).map_err(|e| e.to_string())?;
            let probs = model.predict(&data, &unlabeled).unwrap();
            let hits = unlabeled
                .iter()
                .enumerate()
                .filter(|&(r, &i)| data::argmax(probs.row(r).as_slice().unwrap()) == truth[i])
                .count();
            acc[slot] += hits as f64 / unlabeled.len() as f64 / 5.0;
        }
    }
    check(
        acc[1] >= acc[0] && start.elapsed() < Duration::from_secs(600),
        format!(
            "mean unlabeled accuracy at 200 labels: supervised {:.4}, fixmatch {:.4}; {:.0}s",
            acc[0],
            acc[1],
            start.elapsed().as_secs_f64()
        ),
    )
}

fn pairwise_convergence() -> Outcome {
    let blobs = |n, k, std, seed| {
        make_blobs(&BlobSpec {
            n_points: n,
            n_clusters: k,
            dimension: 2,
            cluster_std: std,
            center_spread: 10.0,
            seed,
        })
        .unwrap()
    };
    let (data, truth) = blobs(20, 2, 0.5, 4);
    let test = Clustering::Hard(
        HardClustering::with_k((0..20).map(|i| (truth[i] + (i % 5 == 0) as usize) % 2).collect(), 2).unwrap(),
    );
    let cfg = PairwiseConfig {
        total_pairs: 190,
        pairs_per_round: 95,
        k_ref: Some(2),
        ..PairwiseConfig::default()
    };
    let mut annotator = TruthAnnotator::new(&data, &truth).unwrap();
    let run = run_pairwise_pipeline(&data, &test, &mut annotator, &cfg, Some(&truth)).map_err(|e| e.to_string())?;
    let last = run.rounds.last().unwrap();
    let accuracy = last.pair_accuracy.unwrap_or(0.0);
    let gap = (last.estimate.unwrap_or(f64::NAN) - run.curve.true_value.unwrap()).abs();

    let (big, big_truth) = blobs(400, 4, 1.0, 0);
    let pairs = sample_pairs(big.len(), 10_000, &mut RngState::new(9).rng()).unwrap();
    let freq = pairs.iter().filter(|&&(i, j)| big_truth[i] == big_truth[j]).count() as f64 / pairs.len() as f64;
    check(
        last.annotated == 190 && accuracy >= 0.95 && gap <= 0.05 && (freq - 0.25).abs() <= 0.02,
        format!("pair accuracy {accuracy:.3}, estimate error {gap:.4}, positive frequency {freq:.4}"),
    )
}

fn aec_arithmetic() -> Outcome {
    let curve = |pts: &[(usize, f64)]| {
        let mut c = ErrorCurve {
            points: Vec::new(),
            true_value: Some(0.0),
        };
        for &(x, e) in pts {
            c.push(x, Some(e));
        }
        c
    };
    let a = aec(&curve(&[(50, 0.2), (100, 0.1), (150, 0.0)])).map_err(|e| e.to_string())?;
    let b = aec(&curve(&[(50, 0.3), (100, 0.1)])).map_err(|e| e.to_string())?;
    check(a == 10.0 && b == 10.0, format!("three-point {a}, two-point {b}"))
}

struct Server {
    child: Child,
    base: String,
}

impl Server {
    fn start(state_dir: &Path) -> Result<Self, String> {
        let mut child = Command::new(bin())
            .args(["serve", "--port", "0", "--state-dir"])
            .arg(state_dir)
            .env("RUST_LOG", "warn")
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| e.to_string())?;
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).map_err(|e| e.to_string())?;
        let base = line
            .trim()
            .strip_prefix("listening on ")
            .ok_or_else(|| format!("unexpected banner {line:?}"))?
            .to_string();
        Ok(Self { child, base })
    }

    fn kill(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
    }
}

async fn call(req: reqwest::RequestBuilder) -> Result<(u16, Value), String> {
    let resp = req.send().await.map_err(|e| e.to_string())?;
    let status = resp.status().as_u16();
    Ok((status, resp.json().await.map_err(|e| e.to_string())?))
}

async fn label_round(
    client: &reqwest::Client,
    base: &str,
    id: &str,
    truth: &std::collections::HashMap<String, usize>,
    part: Option<usize>,
) -> Result<Value, String> {
    let (_, q) = call(client.get(format!("{base}/sessions/{id}/queries"))).await?;
    let items: Vec<&str> = q["items"].as_array().unwrap().iter().map(|i| i["id"].as_str().unwrap()).collect();
    let take = part.unwrap_or(items.len());
    let labels: Vec<Value> = items[..take].iter().map(|i| json!({"id": i, "label": truth[*i]})).collect();
    let (status, body) =
        call(client.post(format!("{base}/sessions/{id}/labels")).json(&json!({ "labels": labels }))).await?;
    if status != 200 {
        return Err(format!("label submission returned {status}: {body}"));
    }
    Ok(body)
}

async fn service_equivalence_async() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    run_cli(
        &["gen", "--n-points", "300", "--clusters", "4", "--dimension", "8", "--cluster-std", "2.5", "--kmeans", "5", "--out"],
        Some(dir.path()),
    )?;
    let config = json!({
        "seed_size": 20, "batch_n": 40, "budget": 140, "k_ref": 4, "seed": 3,
        "acquisition": "soft_nmi", "surrogate": "supervised",
        "model": { "hidden_width": 16, "layers": 2 },
        "train": { "epochs": 5 },
    });
    let (emb, clu, tru) = (dir.path().join("embeddings.jsonl"), dir.path().join("clustering_k5.jsonl"), dir.path().join("truth.jsonl"));
    let mut file_cfg = config.clone();
    file_cfg["embeddings"] = json!(emb);
    file_cfg["clustering"] = json!(clu);
    file_cfg["truth"] = json!(tru);
    std::fs::write(dir.path().join("cfg.json"), file_cfg.to_string()).map_err(|e| e.to_string())?;
    let sim = dir.path().join("sim");
    run_cli(&["simulate", "--config", dir.path().join("cfg.json").to_str().unwrap(), "--out"], Some(&sim))?;
    let summary: Value = serde_json::from_slice(&std::fs::read(sim.join("summary.json")).unwrap()).unwrap();

    let truth: std::collections::HashMap<String, usize> = io::read_label_records(&tru)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|r| (r.id, r.label))
        .collect();
    let state = dir.path().join("state");
    let client = reqwest::Client::new();
    let server = Server::start(&state)?;
    let (status, created) = call(
        client
            .post(format!("{}/sessions", server.base))
            .json(&json!({ "config": config, "dataset": emb, "clustering": clu, "truth": tru })),
    )
    .await?;
    if status != 201 {
        return Err(format!("session creation returned {status}: {created}"));
    }
    let id = created["session_id"].as_str().unwrap().to_string();
    label_round(&client, &server.base, &id, &truth, None).await?;
    label_round(&client, &server.base, &id, &truth, None).await?;
    label_round(&client, &server.base, &id, &truth, Some(15)).await?;
    let summary_url = |base: &str| format!("{base}/sessions/{id}");
    let (_, before) = call(client.get(summary_url(&server.base))).await?;
    server.kill();

    let server = Server::start(&state)?;
    let (status, after) = call(client.get(summary_url(&server.base))).await?;
    if status != 200 || before != after {
        return Err(format!("state changed across restart:\n{before}\n{after}"));
    }
    let mut last = label_round(&client, &server.base, &id, &truth, None).await?;
    while last["status"] != "done" {
        last = label_round(&client, &server.base, &id, &truth, None).await?;
    }
    let (_, curve) = call(client.get(format!("{}/sessions/{id}/curve", server.base))).await?;
    server.kill();
    let same = curve == summary["curve"];
    check(
        same,
        format!(
            "{} curve points identical between service and CLI, final estimate {}; {} received labels survive restart",
            curve["points"].as_array().map_or(0, |p| p.len()),
            last["estimate"],
            before["received"]
        ),
    )
    .map_err(|d| format!("{d}\nservice {curve}\ncli {}", summary["curve"]))
}

fn service_equivalence() -> Outcome {
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    rt.block_on(service_equivalence_async())
}

fn main() {
    let mut failures = 0;
    let mut report = |name: &str, start: Instant, outcome: Outcome| {
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS {name} ({secs:.1}s): {d}"),
            Err(d) => {
                failures += 1;
                println!("FAIL {name} ({secs:.1}s): {d}");
            }
        }
    };
    let t = Instant::now();
    report("metric oracle equivalence", t, metric_oracles());
    let t = Instant::now();
    report("gradient check", t, gradient_check());
    let t = Instant::now();
    report("full-budget exactness", t, full_budget_exactness());
    let t = Instant::now();
    report("acquisition identities", t, acquisition_identities());
    let t = Instant::now();
    report("fixmatch reductions", t, fixmatch_reductions());
    let t = Instant::now();
    match Desk::generate() {
        Ok(desk) => {
            let t = Instant::now();
            report("desk-scale AEC ordering", t, desk_ordering(&desk));
            let t = Instant::now();
            report("surrogate accuracy ordering", t, surrogate_accuracy(&desk));
        }
        Err(e) => {
            report("desk-scale AEC ordering", t, Err(e.clone()));
            report("surrogate accuracy ordering", t, Err(e));
        }
    }
    let t = Instant::now();
    report("pairwise convergence", t, pairwise_convergence());
    let t = Instant::now();
    report("AEC arithmetic", t, aec_arithmetic());
    let t = Instant::now();
    report("service/CLI equivalence", t, service_equivalence());
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
