//! Acquisition scores and stochastic batch selection.
//!
//! Scores are computed from probability vectors so each function can be
//! checked in isolation; [`score_candidates`] wires them to a surrogate and a
//! test clustering. NMI-based scores read `I_CY`, `H_C` and `H_Y` from the
//! contingency of the test clustering against the human labels gathered so
//! far.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Clustering, EmbeddingDataset};
use crate::error::{Error, Result};
use crate::metrics::{entropy_unchecked, ContingencyStats};
use crate::rng::Stream;
use crate::surrogate::{Surrogate, PROB_FLOOR};

/// Mass added to every shifted score before normalizing.
pub const SELECTION_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcquisitionKind {
    #[default]
    Random,
    MaxEntropy,
    Bald,
    CrossEntropy,
    SoftNmi,
    HardNmi,
}

impl AcquisitionKind {
    pub const ALL: [AcquisitionKind; 6] = [
        AcquisitionKind::Random,
        AcquisitionKind::MaxEntropy,
        AcquisitionKind::Bald,
        AcquisitionKind::CrossEntropy,
        AcquisitionKind::SoftNmi,
        AcquisitionKind::HardNmi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AcquisitionKind::Random => "random",
            AcquisitionKind::MaxEntropy => "max_entropy",
            AcquisitionKind::Bald => "bald",
            AcquisitionKind::CrossEntropy => "cross_entropy",
            AcquisitionKind::SoftNmi => "soft_nmi",
            AcquisitionKind::HardNmi => "hard_nmi",
        }
    }

    pub fn needs_surrogate(self) -> bool {
        self != AcquisitionKind::Random
    }
}

impl FromStr for AcquisitionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown acquisition function {s:?}")))
    }
}

impl fmt::Display for AcquisitionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Entropy of the surrogate's predictive distribution.
pub fn max_entropy_score(pi: &[f64]) -> f64 {
    entropy_unchecked(pi)
}

/// Entropy of the mean prediction minus the mean per-pass entropy, clamped at 0.
pub fn bald_score(passes: &[Vec<f64>]) -> Result<f64> {
    let Some(first) = passes.first() else {
        return Err(Error::invalid("BALD needs at least one pass"));
    };
    let t = passes.len() as f64;
    let mut mean = vec![0.0; first.len()];
    let mut mean_entropy = 0.0;
    for p in passes {
        for (m, &v) in mean.iter_mut().zip(p) {
            *m += v / t;
        }
        mean_entropy += entropy_unchecked(p) / t;
    }
    Ok((entropy_unchecked(&mean) - mean_entropy).max(0.0))
}

/// `-sum_k f_c(k|x) log pi(k|x)` over index-aligned labels; the shorter
/// vector is treated as zero-padded.
pub fn cross_entropy_score(test: &[f64], pi: &[f64]) -> f64 {
    let k = test.len().max(pi.len());
    -(0..k)
        .map(|i| {
            let f = test.get(i).copied().unwrap_or(0.0);
            if f == 0.0 {
                return 0.0;
            }
            let p = pi.get(i).copied().unwrap_or(0.0);
            f * p.max(PROB_FLOOR).ln()
        })
        .sum::<f64>()
}

/// Mutual-information field of the labeled contingency used by the NMI scores.
#[derive(Debug, Clone, PartialEq)]
pub struct NmiField {
    /// `I_CY[c; y]`, test clusters by reference labels.
    pub terms: Array2<f64>,
    /// `(H_C + H_Y) / 2`.
    pub mean_entropy: f64,
}

impl NmiField {
    pub fn from_stats(stats: &ContingencyStats) -> Self {
        Self {
            terms: stats.mi_terms(),
            mean_entropy: (stats.entropy_test() + stats.entropy_ref()) / 2.0,
        }
    }

    /// An all-zero field, as when nothing has been labeled.
    pub fn empty(test_k: usize, ref_k: usize) -> Self {
        Self {
            terms: Array2::zeros((test_k, ref_k)),
            mean_entropy: 0.0,
        }
    }

    fn term(&self, c: usize, y: usize) -> f64 {
        self.terms.get((c, y)).copied().unwrap_or(0.0)
    }
}

/// `1 - sum_y sum_c f_c(c|x) pi(y|x) I[c;y] / ((H_C + H_Y)/2)`.
pub fn soft_nmi_score(field: &NmiField, test: &[f64], pi: &[f64]) -> f64 {
    if field.mean_entropy == 0.0 {
        return 1.0;
    }
    let mut acc = 0.0;
    for (c, &f) in test.iter().enumerate() {
        if f == 0.0 {
            continue;
        }
        for (y, &p) in pi.iter().enumerate() {
            acc += f * p * field.term(c, y);
        }
    }
    1.0 - acc / field.mean_entropy
}

/// Soft NMI with the test distribution collapsed onto cluster `c`.
pub fn hard_nmi_score(field: &NmiField, c: usize, pi: &[f64]) -> f64 {
    if field.mean_entropy == 0.0 {
        return 1.0;
    }
    let acc: f64 = pi.iter().enumerate().map(|(y, &p)| p * field.term(c, y)).sum();
    1.0 - acc / field.mean_entropy
}

/// Everything a scoring pass reads.
pub struct AcquisitionContext<'a> {
    pub surrogate: Option<&'a dyn Surrogate>,
    pub test: &'a Clustering,
    /// Contingency of the test clustering against current human labels.
    pub labeled_stats: Option<ContingencyStats>,
    pub bald_passes: usize,
}

impl AcquisitionContext<'_> {
    fn field(&self, ref_k: usize) -> NmiField {
        match &self.labeled_stats {
            Some(s) => NmiField::from_stats(s),
            None => NmiField::empty(self.test.k(), ref_k),
        }
    }

    fn surrogate(&self, kind: AcquisitionKind) -> Result<&dyn Surrogate> {
        self.surrogate
            .ok_or_else(|| Error::invalid(format!("{kind} acquisition needs a trained surrogate")))
    }
}

/// Score every candidate row. Random scoring returns zeros.
pub fn score_candidates(
    kind: AcquisitionKind,
    ctx: &AcquisitionContext<'_>,
    data: &EmbeddingDataset,
    candidates: &[usize],
    rng: &mut Stream,
) -> Result<Vec<f64>> {
    if kind == AcquisitionKind::Random || candidates.is_empty() {
        return Ok(vec![0.0; candidates.len()]);
    }
    let model = ctx.surrogate(kind)?;
    let row = |m: &Array2<f64>, i: usize| m.row(i).to_vec();
    Ok(match kind {
        AcquisitionKind::Random => unreachable!(),
        AcquisitionKind::MaxEntropy => {
            let p = model.predict(data, candidates)?;
            (0..candidates.len()).map(|i| max_entropy_score(&row(&p, i))).collect()
        }
        AcquisitionKind::Bald => {
            let passes = model.predict_mc(data, candidates, ctx.bald_passes, rng)?;
            (0..candidates.len())
                .map(|i| bald_score(&passes.iter().map(|p| row(p, i)).collect::<Vec<_>>()))
                .collect::<Result<_>>()?
        }
        AcquisitionKind::CrossEntropy => {
            let p = model.predict(data, candidates)?;
            candidates
                .iter()
                .enumerate()
                .map(|(i, &c)| cross_entropy_score(&ctx.test.distribution(c), &row(&p, i)))
                .collect()
        }
        AcquisitionKind::SoftNmi => {
            let p = model.predict(data, candidates)?;
            let field = ctx.field(model.classes());
            candidates
                .iter()
                .enumerate()
                .map(|(i, &c)| soft_nmi_score(&field, &ctx.test.distribution(c), &row(&p, i)))
                .collect()
        }
        AcquisitionKind::HardNmi => {
            let p = model.predict(data, candidates)?;
            let field = ctx.field(model.classes());
            let hard = ctx.test.harden();
            candidates
                .iter()
                .enumerate()
                .map(|(i, &c)| hard_nmi_score(&field, hard.cluster(c), &row(&p, i)))
                .collect()
        }
    })
}

/// Draw `n` distinct candidates without replacement, each draw proportional
/// to the remaining mass of `score - min(0, min score) + epsilon`.
pub fn select(candidates: &[usize], scores: &[f64], n: usize, rng: &mut Stream) -> Result<Vec<usize>> {
    if candidates.len() != scores.len() {
        return Err(Error::Shape("one score per candidate required".into()));
    }
    if n > candidates.len() {
        return Err(Error::invalid(format!(
            "cannot select {n} of {} candidates",
            candidates.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("acquisition scores must be finite"));
    }
    let shift = scores.iter().copied().fold(0.0f64, f64::min);
    let mut weights: Vec<f64> = scores.iter().map(|s| s - shift + SELECTION_EPSILON).collect();
    let mut remaining: f64 = weights.iter().sum();
    let mut picked = Vec::with_capacity(n);
    for _ in 0..n {
        let target = rng.random::<f64>() * remaining;
        let mut acc = 0.0;
        let mut choice = None;
        for (i, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            acc += w;
            choice = Some(i);
            if target < acc {
                break;
            }
        }
        let i = choice.expect("at least one candidate remains");
        picked.push(candidates[i]);
        remaining -= weights[i];
        weights[i] = 0.0;
        // Guard against drift in the running total.
        if remaining <= 0.0 {
            remaining = weights.iter().sum();
        }
    }
    Ok(picked)
}
