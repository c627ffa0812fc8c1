//! Shared fixtures for the benchmarks.

use fewlabel::datagen::{kmeans, make_blobs, BlobSpec, KMeansConfig};
use fewlabel::{Clustering, EmbeddingDataset, RngState};

pub struct Fixture {
    pub dataset: EmbeddingDataset,
    pub truth: Vec<usize>,
    pub test: Clustering,
}

/// Blobs with a K-Means clustering of them.
pub fn fixture(n_points: usize, dimension: usize, k: usize) -> Fixture {
    let (dataset, truth) = make_blobs(&BlobSpec {
        n_points,
        n_clusters: 8,
        dimension,
        cluster_std: 4.0,
        center_spread: 10.0,
        seed: 7,
    })
    .expect("valid blob spec");
    let test = kmeans(&dataset, k, &KMeansConfig::default(), RngState::new(0))
        .expect("k <= n")
        .clustering;
    Fixture {
        dataset,
        truth,
        test: Clustering::Hard(test),
    }
}

#[cfg(test)]
mod tests {
    #[test]
    fn fixture_shapes() {
        let f = super::fixture(100, 4, 5);
        assert_eq!(f.dataset.len(), 100);
        assert_eq!(f.truth.len(), 100);
        assert_eq!(f.test.k(), 5);
    }
}
