//! Synthetic Gaussian blobs and a Lloyd's K-Means with k-means++ seeding.

use ndarray::{Array2, ArrayView1, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{EmbeddingDataset, HardClustering, Point};
use crate::error::{Error, Result};
use crate::metrics::{nmi, ContingencyStats};
use crate::rng::{RngState, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub n_points: usize,
    pub n_clusters: usize,
    pub dimension: usize,
    pub cluster_std: f64,
    /// Side of the hypercube the centers are drawn from.
    pub center_spread: f64,
    pub seed: u64,
}

impl BlobSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_clusters == 0 || self.n_clusters > self.n_points {
            return Err(Error::invalid("need 1 <= n_clusters <= n_points"));
        }
        if self.dimension == 0 || self.n_points < 2 {
            return Err(Error::invalid("need dimension >= 1 and n_points >= 2"));
        }
        if !(self.cluster_std > 0.0 && self.center_spread > 0.0) {
            return Err(Error::invalid("cluster_std and center_spread must be positive"));
        }
        Ok(())
    }
}

/// Balanced blobs: point `i` belongs to cluster `i mod K`.
pub fn make_blobs(spec: &BlobSpec) -> Result<(EmbeddingDataset, Vec<usize>)> {
    spec.validate()?;
    let mut rng = RngState::new(spec.seed).rng();
    let centers = Array2::from_shape_simple_fn((spec.n_clusters, spec.dimension), || {
        rng.random::<f64>() * spec.center_spread
    });
    let noise = Normal::new(0.0, spec.cluster_std).map_err(|e| Error::invalid(e.to_string()))?;
    let width = spec.n_points.to_string().len();
    let mut truth = Vec::with_capacity(spec.n_points);
    let points = (0..spec.n_points)
        .map(|i| {
            let c = i % spec.n_clusters;
            truth.push(c);
            Point {
                id: format!("p{i:0width$}"),
                vector: centers.row(c).iter().map(|&m| m + noise.sample(&mut rng)).collect(),
                payload: Some(format!("blob point {i}")),
            }
        })
        .collect();
    Ok((EmbeddingDataset::new(points)?, truth))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            max_iter: 300,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub clustering: HardClustering,
    pub centers: Array2<f64>,
    pub inertia: f64,
    /// Within-cluster sum of squares after each assignment step.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest center per point (lowest index on ties) and its squared distance.
pub fn assign(data: &Array2<f64>, centers: &Array2<f64>) -> Vec<(usize, f64)> {
    (0..data.nrows())
        .into_par_iter()
        .map(|i| {
            let x = data.row(i);
            let mut best = (0, f64::INFINITY);
            for (c, center) in centers.outer_iter().enumerate() {
                let d = sq_dist(x, center);
                if d < best.1 {
                    best = (c, d);
                }
            }
            best
        })
        .collect()
}

fn kmeans_pp(data: &Array2<f64>, k: usize, rng: &mut Stream) -> Array2<f64> {
    let n = data.nrows();
    let mut centers = Array2::zeros((k, data.ncols()));
    centers.row_mut(0).assign(&data.row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(data.row(i), centers.row(0))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            d2.iter()
                .position(|&d| {
                    acc += d;
                    target < acc
                })
                .unwrap_or(n - 1)
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).assign(&data.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(data.row(i), centers.row(c)));
        }
    }
    centers
}

/// One Lloyd update from the given assignment. Empty clusters are moved to
/// the point farthest from its current center.
pub fn update_centers(
    data: &Array2<f64>,
    assignment: &[(usize, f64)],
    k: usize,
) -> Array2<f64> {
    let mut sums = Array2::zeros((k, data.ncols()));
    let mut counts = vec![0usize; k];
    for (i, &(c, _)) in assignment.iter().enumerate() {
        let mut row = sums.row_mut(c);
        row += &data.row(i);
        counts[c] += 1;
    }
    let mut taken = vec![false; data.nrows()];
    for c in 0..k {
        if counts[c] > 0 {
            let mut row = sums.row_mut(c);
            row /= counts[c] as f64;
        } else {
            let far = (0..data.nrows())
                .filter(|&i| !taken[i])
                .max_by(|&a, &b| assignment[a].1.total_cmp(&assignment[b].1).then(b.cmp(&a)))
                .expect("k <= n leaves a point to reseed with");
            taken[far] = true;
            sums.row_mut(c).assign(&data.row(far));
        }
    }
    sums
}

pub fn kmeans(
    data: &EmbeddingDataset,
    k: usize,
    cfg: &KMeansConfig,
    rng: RngState,
) -> Result<KMeansResult> {
    if k == 0 || k > data.len() {
        return Err(Error::invalid(format!("k={k} must lie in 1..={}", data.len())));
    }
    let x = data.vectors();
    let mut centers = kmeans_pp(x, k, &mut rng.rng());
    let mut assignment = assign(x, &centers);
    let mut history = vec![assignment.iter().map(|a| a.1).sum()];
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        let next = update_centers(x, &assignment, k);
        let shift = next
            .axis_iter(Axis(0))
            .zip(centers.axis_iter(Axis(0)))
            .map(|(a, b)| sq_dist(a, b))
            .sum::<f64>()
            .sqrt();
        centers = next;
        assignment = assign(x, &centers);
        history.push(assignment.iter().map(|a| a.1).sum());
        if shift < cfg.tol {
            break;
        }
    }
    let clustering = HardClustering::with_k(assignment.iter().map(|a| a.0).collect(), k)?;
    Ok(KMeansResult {
        clustering,
        centers,
        inertia: *history.last().unwrap(),
        inertia_history: history,
        iterations,
    })
}

/// A K-Means run whose NMI against the reference labels falls in a window.
#[derive(Debug, Clone)]
pub struct TargetedClustering {
    pub seed: u64,
    pub nmi: f64,
    pub result: KMeansResult,
}

/// Tries K-Means seeds in order and keeps the first whose NMI against
/// `truth` lies in `[lo, hi]`. Returns `None` if no seed qualifies.
pub fn kmeans_in_nmi_window(
    data: &EmbeddingDataset,
    truth: &[usize],
    k: usize,
    (lo, hi): (f64, f64),
    seeds: std::ops::Range<u64>,
    cfg: &KMeansConfig,
) -> Result<Option<TargetedClustering>> {
    if truth.len() != data.len() {
        return Err(Error::Shape(format!("{} labels for {} points", truth.len(), data.len())));
    }
    let k_ref = truth.iter().max().map_or(1, |m| m + 1);
    for seed in seeds {
        let result = kmeans(data, k, cfg, RngState::new(seed))?;
        let stats = ContingencyStats::build(&result.clustering, truth.iter().copied().enumerate(), k_ref)?;
        let value = nmi(&stats);
        if (lo..=hi).contains(&value) {
            return Ok(Some(TargetedClustering {
                seed,
                nmi: value,
                result,
            }));
        }
    }
    Ok(None)
}
