//! External clustering metrics computed from a contingency table.
//!
//! All logarithms are natural. NMI normalizes mutual information by the
//! arithmetic mean of the two entropies; AMI subtracts the exact expected
//! mutual information under the hypergeometric null; ARI is the
//! Hubert-Arabie pair-counting index.
//!
//! Degenerate tables follow one convention across the crate: two clusterings
//! that are identical up to relabeling score exactly 1 on every metric; NMI
//! is 0 when exactly one side has zero entropy; AMI is 0 whenever its
//! denominator vanishes for non-identical clusterings.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::data::{Clustering, HardClustering, LabelStore};
use crate::error::{Error, Result};

/// Joint counts of (test cluster, reference label).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyStats {
    counts: Array2<usize>,
    rows: Vec<usize>,
    cols: Vec<usize>,
    total: usize,
}

impl ContingencyStats {
    pub fn from_counts(counts: Array2<usize>) -> Self {
        let rows = counts.rows().into_iter().map(|r| r.sum()).collect();
        let cols = counts.columns().into_iter().map(|c| c.sum()).collect();
        let total = counts.sum();
        Self {
            counts,
            rows,
            cols,
            total,
        }
    }

    /// Count pairs of (cluster, label) over the labeled points.
    pub fn build<I>(test: &HardClustering, labels: I, k_ref: usize) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut counts = Array2::zeros((test.k(), k_ref.max(1)));
        let mut any = false;
        for (idx, label) in labels {
            if idx >= test.len() {
                return Err(Error::invalid(format!("point {idx} is not in the clustering")));
            }
            if label >= k_ref {
                return Err(Error::LabelOutOfRange { label, k_ref });
            }
            counts[[test.cluster(idx), label]] += 1;
            any = true;
        }
        if !any {
            return Err(Error::invalid("no labels to build a contingency table from"));
        }
        Ok(Self::from_counts(counts))
    }

    pub fn counts(&self) -> &Array2<usize> {
        &self.counts
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// Test-cluster marginals `a_c`.
    pub fn row_sums(&self) -> &[usize] {
        &self.rows
    }

    /// Reference-label marginals `b_y`.
    pub fn col_sums(&self) -> &[usize] {
        &self.cols
    }

    pub fn transpose(&self) -> Self {
        Self::from_counts(self.counts.t().to_owned())
    }

    fn marginal(counts: &[usize], total: usize) -> Vec<f64> {
        counts.iter().map(|&c| c as f64 / total as f64).collect()
    }

    /// Entropy of the test clustering, `H_C`.
    pub fn entropy_test(&self) -> f64 {
        entropy_unchecked(&Self::marginal(&self.rows, self.total))
    }

    /// Entropy of the reference labeling, `H_Y`.
    pub fn entropy_ref(&self) -> f64 {
        entropy_unchecked(&Self::marginal(&self.cols, self.total))
    }

    /// Pointwise term `I_CY[c; y] = p(c,y) log(p(c,y) / (p(c) p(y)))`; zero for empty cells.
    pub fn mi_term(&self, c: usize, y: usize) -> f64 {
        let n = self.counts[[c, y]];
        if n == 0 {
            return 0.0;
        }
        let n = n as f64;
        let total = self.total as f64;
        let a = self.rows[c] as f64;
        let b = self.cols[y] as f64;
        (n / total) * ((n * total) / (a * b)).ln()
    }

    /// The full `K_C x K_Y` table of pointwise terms.
    pub fn mi_terms(&self) -> Array2<f64> {
        Array2::from_shape_fn(self.counts.dim(), |(c, y)| self.mi_term(c, y))
    }

    pub fn mutual_information(&self) -> f64 {
        self.mi_terms().sum()
    }

    /// Every nonempty row and column holds exactly one nonzero cell, so the
    /// two labelings are the same partition.
    pub fn is_perfect_match(&self) -> bool {
        let rows_ok = self
            .counts
            .rows()
            .into_iter()
            .all(|r| r.iter().filter(|&&n| n > 0).count() <= 1);
        let cols_ok = self
            .counts
            .columns()
            .into_iter()
            .all(|c| c.iter().filter(|&&n| n > 0).count() <= 1);
        self.total > 0 && rows_ok && cols_ok
    }
}

/// Shannon entropy in nats of a probability vector. `0 log 0 = 0`.
pub fn entropy(marginal: &[f64]) -> Result<f64> {
    if marginal.iter().any(|&p| p < 0.0 || !p.is_finite()) {
        return Err(Error::invalid("entropy of a vector with a negative entry"));
    }
    let sum: f64 = marginal.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("distribution sums to {sum}")));
    }
    Ok(entropy_unchecked(marginal))
}

pub(crate) fn entropy_unchecked(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

pub fn nmi(stats: &ContingencyStats) -> f64 {
    if stats.is_perfect_match() {
        return 1.0;
    }
    let hc = stats.entropy_test();
    let hy = stats.entropy_ref();
    if hc == 0.0 || hy == 0.0 {
        // Perfect matches (including both-single-cluster) returned above.
        return 0.0;
    }
    let mi = stats.mutual_information();
    (mi / ((hc + hy) / 2.0)).clamp(0.0, 1.0)
}

fn ln_factorial(n: usize) -> f64 {
    ln_gamma(n as f64 + 1.0)
}

/// Expected mutual information between two random labelings with the given
/// marginals, under the hypergeometric (permutation) model.
pub fn expected_mutual_information(rows: &[usize], cols: &[usize], total: usize) -> f64 {
    let n = total as f64;
    let lf_n = ln_factorial(total);
    let mut emi = 0.0;
    for &a in rows.iter().filter(|&&a| a > 0) {
        for &b in cols.iter().filter(|&&b| b > 0) {
            let lo = (a + b).saturating_sub(total).max(1);
            let hi = a.min(b);
            let fixed = ln_factorial(a) + ln_factorial(b) + ln_factorial(total - a)
                + ln_factorial(total - b)
                - lf_n;
            for nij in lo..=hi {
                let x = nij as f64;
                let ln_p = fixed
                    - ln_factorial(nij)
                    - ln_factorial(a - nij)
                    - ln_factorial(b - nij)
                    - ln_factorial(total + nij - a - b);
                emi += (x / n) * ((n * x) / (a as f64 * b as f64)).ln() * ln_p.exp();
            }
        }
    }
    emi
}

pub fn ami(stats: &ContingencyStats) -> f64 {
    if stats.is_perfect_match() {
        return 1.0;
    }
    let mi = stats.mutual_information();
    let emi = expected_mutual_information(&stats.rows, &stats.cols, stats.total);
    let mean_h = (stats.entropy_test() + stats.entropy_ref()) / 2.0;
    let denom = mean_h - emi;
    if denom.abs() < 1e-15 {
        return 0.0;
    }
    ((mi - emi) / denom).min(1.0)
}

fn comb2(n: usize) -> f64 {
    let n = n as f64;
    n * (n - 1.0) / 2.0
}

pub fn ari(stats: &ContingencyStats) -> Result<f64> {
    if stats.total < 2 {
        return Err(Error::invalid("ARI needs at least two labeled points"));
    }
    if stats.is_perfect_match() {
        return Ok(1.0);
    }
    let index: f64 = stats.counts.iter().map(|&n| comb2(n)).sum();
    let sum_a: f64 = stats.rows.iter().map(|&n| comb2(n)).sum();
    let sum_b: f64 = stats.cols.iter().map(|&n| comb2(n)).sum();
    let expected = sum_a * sum_b / comb2(stats.total);
    let max = (sum_a + sum_b) / 2.0;
    // max == expected only for identical trivial partitions, handled above.
    Ok(((index - expected) / (max - expected)).min(1.0))
}

/// Which external metric to estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Nmi,
    Ami,
    Ari,
}

impl Metric {
    pub fn evaluate(self, stats: &ContingencyStats) -> Result<f64> {
        match self {
            Metric::Nmi => Ok(nmi(stats)),
            Metric::Ami => Ok(ami(stats)),
            Metric::Ari => ari(stats),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nmi" => Ok(Metric::Nmi),
            "ami" => Ok(Metric::Ami),
            "ari" => Ok(Metric::Ari),
            other => Err(Error::invalid(format!("unknown metric {other:?}"))),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Nmi => "nmi",
            Metric::Ami => "ami",
            Metric::Ari => "ari",
        })
    }
}

/// Evaluate `metric` between the test clustering and every label in the
/// store, human and pseudo alike. Soft clusterings are hardened by argmax.
pub fn estimate_metric(metric: Metric, test: &Clustering, store: &LabelStore) -> Result<f64> {
    let labels = store.combined();
    if labels.is_empty() {
        return Err(Error::invalid("no labels available for estimation"));
    }
    let stats = ContingencyStats::build(&test.harden(), labels, store.k_ref())?;
    metric.evaluate(&stats)
}

/// Exact metric value given a full reference labeling.
pub fn exact_metric(metric: Metric, test: &Clustering, truth: &[usize], k_ref: usize) -> Result<f64> {
    if truth.len() != test.len() {
        return Err(Error::Shape(format!(
            "{} labels for {} points",
            truth.len(),
            test.len()
        )));
    }
    let stats = ContingencyStats::build(&test.harden(), truth.iter().copied().enumerate(), k_ref)?;
    metric.evaluate(&stats)
}

/// One point on an estimation curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub labels_used: usize,
    /// `None` records a round where no estimate could be formed.
    pub estimate: Option<f64>,
}

/// Estimates as a function of annotation count, with the target value if known.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorCurve {
    pub points: Vec<CurvePoint>,
    pub true_value: Option<f64>,
}

impl ErrorCurve {
    pub fn push(&mut self, labels_used: usize, estimate: Option<f64>) {
        self.points.push(CurvePoint {
            labels_used,
            estimate,
        });
    }

    pub fn last_estimate(&self) -> Option<f64> {
        self.points.iter().rev().find_map(|p| p.estimate)
    }

    /// CSV with columns `labels_used, estimate, true_value, abs_error`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["labels_used", "estimate", "true_value", "abs_error"])?;
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for p in &self.points {
            let err = match (p.estimate, self.true_value) {
                (Some(e), Some(t)) => Some((e - t).abs()),
                _ => None,
            };
            out.write_record([
                p.labels_used.to_string(),
                fmt(p.estimate),
                fmt(self.true_value),
                fmt(err),
            ])?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))
    }
}

/// Trapezoidal area under `|estimate - true_value|` over the label count.
///
/// Points without an estimate are skipped.
pub fn aec(curve: &ErrorCurve) -> Result<f64> {
    let truth = curve
        .true_value
        .ok_or_else(|| Error::invalid("error curve has no true value"))?;
    let pts: Vec<(f64, f64)> = curve
        .points
        .iter()
        .filter_map(|p| p.estimate.map(|e| (p.labels_used as f64, (e - truth).abs())))
        .collect();
    if pts.len() < 2 {
        return Err(Error::invalid("AEC needs at least two curve points"));
    }
    if pts.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::invalid("curve label counts must be strictly increasing"));
    }
    Ok(pts
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn hard(a: &[usize]) -> HardClustering {
        HardClustering::new(a.to_vec()).unwrap()
    }

    #[test]
    fn contingency_examples() {
        let s = ContingencyStats::build(&hard(&[0, 0, 1, 1]), [0, 0, 1, 1].into_iter().enumerate(), 2)
            .unwrap();
        assert_eq!(s.counts(), &array![[2, 0], [0, 2]]);
        let s = ContingencyStats::build(&hard(&[0, 0, 1, 1]), [0, 1, 0, 1].into_iter().enumerate(), 2)
            .unwrap();
        assert_eq!(s.counts(), &array![[1, 1], [1, 1]]);
        let s = ContingencyStats::build(
            &hard(&[0, 0, 1, 1, 1]),
            [0, 0, 0, 1, 1].into_iter().enumerate(),
            2,
        )
        .unwrap();
        assert_eq!(s.counts(), &array![[2, 0], [1, 2]]);
        assert_eq!(s.total(), 5);
        assert_eq!(s.row_sums(), &[2, 3]);
        assert_eq!(s.col_sums(), &[3, 2]);
    }

    #[test]
    fn contingency_errors() {
        assert!(ContingencyStats::build(&hard(&[0, 1]), std::iter::empty(), 2).is_err());
        assert!(ContingencyStats::build(&hard(&[0, 1]), [(5, 0)], 2).is_err());
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&[1.0]).unwrap(), 0.0);
        assert!((entropy(&[0.5, 0.5]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        // -(2 * 0.4 ln 0.4 + 0.2 ln 0.2), summed by hand.
        assert!((entropy(&[0.4, 0.4, 0.2]).unwrap() - 1.054_920_167_986_144).abs() < 1e-12);
        assert!(entropy(&[-0.1, 1.1]).is_err());
    }

    #[test]
    fn nmi_examples() {
        assert_eq!(nmi(&ContingencyStats::from_counts(array![[2, 0], [0, 2]])), 1.0);
        assert_eq!(nmi(&ContingencyStats::from_counts(array![[1, 1], [1, 1]])), 0.0);
        assert_eq!(nmi(&ContingencyStats::from_counts(array![[4]])), 1.0);
        assert_eq!(nmi(&ContingencyStats::from_counts(array![[2], [2]])), 0.0);
    }

    #[test]
    fn ami_degenerate() {
        assert_eq!(ami(&ContingencyStats::from_counts(array![[3, 0], [0, 3]])), 1.0);
        assert_eq!(ami(&ContingencyStats::from_counts(array![[2], [2]])), 0.0);
    }

    #[test]
    fn ari_examples() {
        assert_eq!(ari(&ContingencyStats::from_counts(array![[2, 0], [0, 2]])).unwrap(), 1.0);
        assert!(ari(&ContingencyStats::from_counts(array![[1]])).is_err());
    }

    #[test]
    fn aec_examples() {
        let mk = |pts: &[(usize, f64)]| ErrorCurve {
            points: pts
                .iter()
                .map(|&(l, e)| CurvePoint {
                    labels_used: l,
                    estimate: Some(e),
                })
                .collect(),
            true_value: Some(0.0),
        };
        assert_eq!(aec(&mk(&[(50, 0.0), (100, 0.0)])).unwrap(), 0.0);
        assert!((aec(&mk(&[(50, 0.2), (100, 0.1), (150, 0.0)])).unwrap() - 10.0).abs() < 1e-12);
        assert!((aec(&mk(&[(50, 0.3), (100, 0.1)])).unwrap() - 10.0).abs() < 1e-12);
        assert!(aec(&mk(&[(50, 0.3)])).is_err());
        assert!(aec(&mk(&[(50, 0.3), (50, 0.1)])).is_err());
    }

    #[test]
    fn estimate_uses_human_and_pseudo() {
        let test: Clustering = hard(&[0, 0, 1, 1, 1]).into();
        let mut store = LabelStore::new(2);
        for (i, l) in [(0, 0), (2, 0), (4, 1)] {
            store.add_human(i, l).unwrap();
        }
        store.set_pseudo([(1, 0), (3, 1)].into_iter().collect()).unwrap();
        let merged = ContingencyStats::from_counts(array![[2, 0], [1, 2]]);
        assert_eq!(estimate_metric(Metric::Nmi, &test, &store).unwrap(), nmi(&merged));
        assert!(estimate_metric(Metric::Nmi, &test, &LabelStore::new(2)).is_err());
    }
}
