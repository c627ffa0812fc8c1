//! JSON-lines readers and writers for datasets, clusterings and labels.
//!
//! Every file holds one JSON object per line. Blank lines are ignored; line
//! numbers in errors are 1-based physical line numbers.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data::{
    Clustering, EmbeddingDataset, HardClustering, LabelSource, LabelStore, Point, SoftClustering,
};
use crate::error::{Error, Result};

/// Tolerance within which a soft row is silently renormalized.
pub const SOFT_SUM_TOLERANCE: f64 = 1e-6;

fn read_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, rec));
    }
    Ok(out)
}

/// Write each item as one JSON line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingDataset> {
    let records: Vec<(usize, Point)> = read_records(path)?;
    let Some((_, first)) = records.first() else {
        return Err(Error::EmptyFile);
    };
    let d = first.vector.len();
    let mut seen = HashSet::new();
    for (line, p) in &records {
        if p.vector.len() != d {
            return Err(Error::DimensionMismatch {
                line: *line,
                expected: d,
                found: p.vector.len(),
            });
        }
        if !seen.insert(p.id.as_str()) {
            return Err(Error::DuplicateId {
                line: *line,
                id: p.id.clone(),
            });
        }
        if p.vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Malformed {
                line: *line,
                message: "non-finite vector entry".into(),
            });
        }
    }
    EmbeddingDataset::new(records.into_iter().map(|(_, p)| p).collect())
}

pub fn save_embeddings(dataset: &EmbeddingDataset, path: &Path) -> Result<()> {
    write_jsonl(path, dataset.points())
}

#[derive(Debug, Serialize, Deserialize)]
struct ClusterRecord {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cluster: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    distribution: Option<Vec<f64>>,
}

/// Cluster assignments read from a file, keyed by id in file order.
#[derive(Debug, Clone, PartialEq)]
pub enum ClusterRecords {
    Hard(Vec<(String, usize)>),
    Soft(Vec<(String, Vec<f64>)>),
}

impl ClusterRecords {
    pub fn ids(&self) -> Vec<&str> {
        match self {
            ClusterRecords::Hard(v) => v.iter().map(|(id, _)| id.as_str()).collect(),
            ClusterRecords::Soft(v) => v.iter().map(|(id, _)| id.as_str()).collect(),
        }
    }
}

/// Parse a clustering file without a dataset to check ids against.
pub fn read_clustering_records(path: &Path) -> Result<ClusterRecords> {
    let records: Vec<(usize, ClusterRecord)> = read_records(path)?;
    if records.is_empty() {
        return Err(Error::EmptyFile);
    }
    let soft = records[0].1.distribution.is_some();
    let mut seen = HashSet::new();
    let mut hard_rows = Vec::new();
    let mut soft_rows = Vec::new();
    let mut width = None;
    for (line, rec) in records {
        if !seen.insert(rec.id.clone()) {
            return Err(Error::DuplicateId { line, id: rec.id });
        }
        match (rec.cluster, rec.distribution, soft) {
            (Some(c), None, false) => hard_rows.push((rec.id, c)),
            (None, Some(mut row), true) => {
                if *width.get_or_insert(row.len()) != row.len() || row.is_empty() {
                    return Err(Error::Malformed {
                        line,
                        message: "distribution rows must share one nonzero length".into(),
                    });
                }
                if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                    return Err(Error::Malformed {
                        line,
                        message: "distribution entries must be finite and nonnegative".into(),
                    });
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > SOFT_SUM_TOLERANCE {
                    return Err(Error::BadDistribution { line, sum });
                }
                row.iter_mut().for_each(|p| *p /= sum);
                soft_rows.push((rec.id, row));
            }
            (Some(_), Some(_), _) | (None, None, _) => {
                return Err(Error::Malformed {
                    line,
                    message: "record needs exactly one of `cluster` or `distribution`".into(),
                })
            }
            _ => return Err(Error::MixedFormat { line }),
        }
    }
    Ok(if soft {
        ClusterRecords::Soft(soft_rows)
    } else {
        ClusterRecords::Hard(hard_rows)
    })
}

/// Load a clustering and align it with dataset order.
pub fn load_clustering(path: &Path, dataset: &EmbeddingDataset) -> Result<Clustering> {
    let records = read_clustering_records(path)?;
    let mut slots: Vec<Option<usize>> = vec![None; dataset.len()];
    for (pos, id) in records.ids().into_iter().enumerate() {
        let idx = dataset
            .index_of(id)
            .ok_or_else(|| Error::UnknownId(id.to_string()))?;
        slots[idx] = Some(pos);
    }
    if let Some(missing) = slots.iter().position(Option::is_none) {
        return Err(Error::MissingId(dataset.id(missing).to_string()));
    }
    let order: Vec<usize> = slots.into_iter().map(|s| s.unwrap()).collect();
    Ok(match records {
        ClusterRecords::Hard(rows) => {
            Clustering::Hard(HardClustering::new(order.iter().map(|&p| rows[p].1).collect())?)
        }
        ClusterRecords::Soft(rows) => {
            let k = rows[0].1.len();
            let mut m = Array2::zeros((order.len(), k));
            for (i, &p) in order.iter().enumerate() {
                for (j, &v) in rows[p].1.iter().enumerate() {
                    m[[i, j]] = v;
                }
            }
            Clustering::Soft(SoftClustering::new(m)?)
        }
    })
}

pub fn save_clustering(clustering: &Clustering, dataset: &EmbeddingDataset, path: &Path) -> Result<()> {
    let records = (0..dataset.len()).map(|i| match clustering {
        Clustering::Hard(h) => ClusterRecord {
            id: dataset.id(i).to_string(),
            cluster: Some(h.cluster(i)),
            distribution: None,
        },
        Clustering::Soft(s) => ClusterRecord {
            id: dataset.id(i).to_string(),
            cluster: None,
            distribution: Some(s.row(i).to_vec()),
        },
    });
    write_jsonl(path, records)
}

/// One line of a label file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub id: String,
    pub label: usize,
    #[serde(default = "human")]
    pub source: LabelSource,
}

fn human() -> LabelSource {
    LabelSource::Human
}

pub fn read_label_records(path: &Path) -> Result<Vec<LabelRecord>> {
    let records: Vec<(usize, LabelRecord)> = read_records(path)?;
    let mut seen = HashSet::new();
    for (line, r) in &records {
        if !seen.insert(r.id.as_str()) {
            return Err(Error::DuplicateId {
                line: *line,
                id: r.id.clone(),
            });
        }
    }
    Ok(records.into_iter().map(|(_, r)| r).collect())
}

/// Human labels first, then pseudo-labels, each in dataset order.
pub fn save_labels(store: &LabelStore, dataset: &EmbeddingDataset, path: &Path) -> Result<()> {
    let human = store.human().iter().map(|(&i, &l)| LabelRecord {
        id: dataset.id(i).to_string(),
        label: l,
        source: LabelSource::Human,
    });
    let pseudo = store.pseudo().iter().map(|(&i, &l)| LabelRecord {
        id: dataset.id(i).to_string(),
        label: l,
        source: LabelSource::Pseudo,
    });
    write_jsonl(path, human.chain(pseudo))
}

pub fn load_labels(path: &Path, dataset: &EmbeddingDataset, k_ref: usize) -> Result<LabelStore> {
    let mut store = LabelStore::new(k_ref);
    let mut pseudo = BTreeMap::new();
    for r in read_label_records(path)? {
        let idx = dataset
            .index_of(&r.id)
            .ok_or_else(|| Error::UnknownId(r.id.clone()))?;
        if r.label >= k_ref {
            return Err(Error::LabelOutOfRange {
                label: r.label,
                k_ref,
            });
        }
        match r.source {
            LabelSource::Human => store.add_human(idx, r.label)?,
            LabelSource::Pseudo => {
                pseudo.insert(idx, r.label);
            }
        }
    }
    store.set_pseudo(pseudo)?;
    Ok(store)
}

/// Ground-truth labels for every point, in dataset order.
pub fn load_truth(path: &Path, dataset: &EmbeddingDataset) -> Result<Vec<usize>> {
    let mut truth = vec![None; dataset.len()];
    for r in read_label_records(path)? {
        let idx = dataset
            .index_of(&r.id)
            .ok_or_else(|| Error::UnknownId(r.id.clone()))?;
        truth[idx] = Some(r.label);
    }
    truth
        .into_iter()
        .enumerate()
        .map(|(i, t)| t.ok_or_else(|| Error::MissingId(dataset.id(i).to_string())))
        .collect()
}

pub fn save_truth(truth: &[usize], dataset: &EmbeddingDataset, path: &Path) -> Result<()> {
    write_jsonl(
        path,
        truth.iter().enumerate().map(|(i, &label)| LabelRecord {
            id: dataset.id(i).to_string(),
            label,
            source: LabelSource::Human,
        }),
    )
}
