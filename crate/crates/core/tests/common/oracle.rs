//! Brute-force reference implementations, written from the textbook
//! definitions without sharing code with the library.

#![allow(dead_code)]

use std::collections::BTreeMap;

fn frequencies(labels: &[usize]) -> BTreeMap<usize, f64> {
    let mut out = BTreeMap::new();
    for &l in labels {
        *out.entry(l).or_insert(0.0) += 1.0;
    }
    out
}

fn entropy(labels: &[usize]) -> f64 {
    let n = labels.len() as f64;
    frequencies(labels).values().map(|&c| -(c / n) * (c / n).ln()).sum()
}

/// Mutual information by direct summation over observed label pairs.
pub fn mutual_information(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let fa = frequencies(a);
    let fb = frequencies(b);
    let mut joint = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_insert(0.0) += 1.0;
    }
    joint
        .iter()
        .map(|(&(x, y), &c)| (c / n) * ((c * n) / (fa[&x] * fb[&y])).ln())
        .sum()
}

/// True when both labelings induce the same partition of the points.
pub fn same_partition(a: &[usize], b: &[usize]) -> bool {
    (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
}

pub fn nmi(a: &[usize], b: &[usize]) -> f64 {
    if same_partition(a, b) {
        return 1.0;
    }
    let (ha, hb) = (entropy(a), entropy(b));
    if ha == 0.0 || hb == 0.0 {
        return 0.0;
    }
    mutual_information(a, b) / ((ha + hb) / 2.0)
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Expected mutual information as an explicit sum over every admissible
/// cell count, each weighted by its hypergeometric probability.
pub fn expected_mutual_information(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let nf = n as f64;
    let mut emi = 0.0;
    for &ai in frequencies(a).values() {
        for &bj in frequencies(b).values() {
            let (ai, bj) = (ai as usize, bj as usize);
            for nij in 1..=ai.min(bj) {
                let p = binomial(ai, nij) * binomial(n - ai, bj - nij) / binomial(n, bj);
                if p == 0.0 {
                    continue;
                }
                let x = nij as f64;
                emi += p * (x / nf) * ((nf * x) / (ai as f64 * bj as f64)).ln();
            }
        }
    }
    emi
}

pub fn ami(a: &[usize], b: &[usize]) -> f64 {
    if same_partition(a, b) {
        return 1.0;
    }
    let emi = expected_mutual_information(a, b);
    let denom = (entropy(a) + entropy(b)) / 2.0 - emi;
    if denom.abs() < 1e-15 {
        return 0.0;
    }
    (mutual_information(a, b) - emi) / denom
}

/// Adjusted Rand index from an enumeration of every unordered point pair.
pub fn ari(a: &[usize], b: &[usize]) -> f64 {
    if same_partition(a, b) {
        return 1.0;
    }
    let (mut both, mut only_a, mut only_b, mut neither) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            match (a[i] == a[j], b[i] == b[j]) {
                (true, true) => both += 1.0,
                (true, false) => only_a += 1.0,
                (false, true) => only_b += 1.0,
                (false, false) => neither += 1.0,
            }
        }
    }
    2.0 * (both * neither - only_a * only_b)
        / ((both + only_a) * (only_a + neither) + (both + only_b) * (only_b + neither))
}
