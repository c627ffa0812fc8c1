//! Point sets, clusterings and the partial reference labeling.

use std::collections::{BTreeMap, HashMap};

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One input record: an id, its embedding and an optional text shown to annotators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub id: String,
    pub vector: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<String>,
}

/// The point set being clustered, stored as an `n x d` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDataset {
    ids: Vec<String>,
    vectors: Array2<f64>,
    payloads: Vec<Option<String>>,
    index: HashMap<String, usize>,
}

impl EmbeddingDataset {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid("a dataset needs at least 2 points"));
        }
        let d = points[0].vector.len();
        if d == 0 {
            return Err(Error::invalid("vectors must have dimension >= 1"));
        }
        let mut vectors = Array2::zeros((points.len(), d));
        let mut ids = Vec::with_capacity(points.len());
        let mut payloads = Vec::with_capacity(points.len());
        let mut index = HashMap::with_capacity(points.len());
        for (i, p) in points.into_iter().enumerate() {
            if p.vector.len() != d {
                return Err(Error::DimensionMismatch {
                    line: i + 1,
                    expected: d,
                    found: p.vector.len(),
                });
            }
            if p.id.is_empty() {
                return Err(Error::Malformed {
                    line: i + 1,
                    message: "empty id".into(),
                });
            }
            if index.insert(p.id.clone(), i).is_some() {
                return Err(Error::DuplicateId { line: i + 1, id: p.id });
            }
            vectors
                .row_mut(i)
                .assign(&ArrayView1::from(p.vector.as_slice()));
            ids.push(p.id);
            payloads.push(p.payload);
        }
        Ok(Self {
            ids,
            vectors,
            payloads,
            index,
        })
    }

    /// Build a dataset with generated ids `p0`, `p1`, ...
    pub fn from_matrix(vectors: Array2<f64>) -> Result<Self> {
        let points = vectors
            .outer_iter()
            .enumerate()
            .map(|(i, row)| Point {
                id: format!("p{i}"),
                vector: row.to_vec(),
                payload: None,
            })
            .collect();
        Self::new(points)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    pub fn vector(&self, i: usize) -> ArrayView1<'_, f64> {
        self.vectors.row(i)
    }

    pub fn payload(&self, i: usize) -> Option<&str> {
        self.payloads[i].as_deref()
    }

    /// True when every point carries a payload a human can look at.
    pub fn fully_annotatable(&self) -> bool {
        self.payloads.iter().all(Option::is_some)
    }

    /// Gather the given rows into a new matrix.
    pub fn rows(&self, idx: &[usize]) -> Array2<f64> {
        self.vectors.select(Axis(0), idx)
    }

    pub fn points(&self) -> impl Iterator<Item = Point> + '_ {
        (0..self.len()).map(|i| Point {
            id: self.ids[i].clone(),
            vector: self.vectors.row(i).to_vec(),
            payload: self.payloads[i].clone(),
        })
    }
}

/// Per-point cluster assignment, aligned with dataset order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardClustering {
    assignment: Vec<usize>,
    k: usize,
}

impl HardClustering {
    /// `k` defaults to one past the largest index.
    pub fn new(assignment: Vec<usize>) -> Result<Self> {
        let k = assignment.iter().max().map_or(0, |m| m + 1);
        Self::with_k(assignment, k)
    }

    pub fn with_k(assignment: Vec<usize>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("a clustering needs at least one cluster"));
        }
        if let Some(&bad) = assignment.iter().find(|&&c| c >= k) {
            return Err(Error::invalid(format!("cluster index {bad} >= k={k}")));
        }
        Ok(Self { assignment, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn cluster(&self, i: usize) -> usize {
        self.assignment[i]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }
}

/// Per-point distribution over clusters; rows sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftClustering {
    distribution: Array2<f64>,
}

impl SoftClustering {
    pub fn new(distribution: Array2<f64>) -> Result<Self> {
        if distribution.ncols() == 0 {
            return Err(Error::invalid("a clustering needs at least one cluster"));
        }
        for (i, row) in distribution.outer_iter().enumerate() {
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(Error::invalid(format!("row {i} has a negative or non-finite entry")));
            }
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::BadDistribution { line: i + 1, sum });
            }
        }
        Ok(Self { distribution })
    }

    pub fn k(&self) -> usize {
        self.distribution.ncols()
    }

    pub fn len(&self) -> usize {
        self.distribution.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.distribution.nrows() == 0
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.distribution.row(i)
    }

    pub fn distribution(&self) -> &Array2<f64> {
        &self.distribution
    }

    /// Argmax per row; ties go to the lowest index.
    pub fn harden(&self) -> HardClustering {
        let assignment = self
            .distribution
            .outer_iter()
            .map(|row| argmax(row.as_slice().expect("standard layout")))
            .collect();
        HardClustering {
            assignment,
            k: self.k(),
        }
    }
}

/// A test clustering under evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Clustering {
    Hard(HardClustering),
    Soft(SoftClustering),
}

impl Clustering {
    pub fn k(&self) -> usize {
        match self {
            Clustering::Hard(h) => h.k(),
            Clustering::Soft(s) => s.k(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Clustering::Hard(h) => h.len(),
            Clustering::Soft(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn harden(&self) -> HardClustering {
        match self {
            Clustering::Hard(h) => h.clone(),
            Clustering::Soft(s) => s.harden(),
        }
    }

    /// `f_c(. | x_i)`: the cluster distribution of point `i`, one-hot for hard clusterings.
    pub fn distribution(&self, i: usize) -> Vec<f64> {
        match self {
            Clustering::Hard(h) => {
                let mut row = vec![0.0; h.k()];
                row[h.cluster(i)] = 1.0;
                row
            }
            Clustering::Soft(s) => s.row(i).to_vec(),
        }
    }
}

impl From<HardClustering> for Clustering {
    fn from(h: HardClustering) -> Self {
        Clustering::Hard(h)
    }
}

impl From<SoftClustering> for Clustering {
    fn from(s: SoftClustering) -> Self {
        Clustering::Soft(s)
    }
}

/// Where a reference label came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Human,
    Pseudo,
}

/// Partial reference labeling: annotator labels plus surrogate pseudo-labels.
///
/// Keys are dataset row indices. The two maps never share a key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelStore {
    human: BTreeMap<usize, usize>,
    pseudo: BTreeMap<usize, usize>,
    k_ref: usize,
}

impl LabelStore {
    pub fn new(k_ref: usize) -> Self {
        Self {
            human: BTreeMap::new(),
            pseudo: BTreeMap::new(),
            k_ref,
        }
    }

    pub fn k_ref(&self) -> usize {
        self.k_ref
    }

    fn check(&self, label: usize) -> Result<()> {
        if label >= self.k_ref {
            return Err(Error::LabelOutOfRange {
                label,
                k_ref: self.k_ref,
            });
        }
        Ok(())
    }

    /// Record an annotator label; drops any pseudo-label for the same point.
    pub fn add_human(&mut self, idx: usize, label: usize) -> Result<()> {
        self.check(label)?;
        self.pseudo.remove(&idx);
        self.human.insert(idx, label);
        Ok(())
    }

    /// Replace all pseudo-labels.
    pub fn set_pseudo(&mut self, labels: BTreeMap<usize, usize>) -> Result<()> {
        for (idx, &label) in &labels {
            self.check(label)?;
            if self.human.contains_key(idx) {
                return Err(Error::invalid(format!(
                    "point {idx} already has a human label"
                )));
            }
        }
        self.pseudo = labels;
        Ok(())
    }

    pub fn clear_pseudo(&mut self) {
        self.pseudo.clear();
    }

    pub fn human(&self) -> &BTreeMap<usize, usize> {
        &self.human
    }

    pub fn pseudo(&self) -> &BTreeMap<usize, usize> {
        &self.pseudo
    }

    pub fn is_labeled(&self, idx: usize) -> bool {
        self.human.contains_key(&idx)
    }

    pub fn human_count(&self) -> usize {
        self.human.len()
    }

    /// Human and pseudo-labels together, ordered by index.
    pub fn combined(&self) -> BTreeMap<usize, usize> {
        let mut all = self.pseudo.clone();
        all.extend(self.human.iter().map(|(&k, &v)| (k, v)));
        all
    }

    /// Indices in `0..n` without a human label.
    pub fn unlabeled(&self, n: usize) -> Vec<usize> {
        (0..n).filter(|i| !self.human.contains_key(i)).collect()
    }
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}
