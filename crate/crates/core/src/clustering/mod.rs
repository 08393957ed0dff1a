//! Grouping instruments by the KS distance between their in-spread
//! relative-price distributions.
//!
//! [`distance_matrix`] builds the pairwise KS matrix, [`relational_kmeans`]
//! partitions it without coordinates, and [`select_k`] picks the cluster
//! count with the highest mean silhouette.

mod ecdf;
mod kmeans;

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

pub use ecdf::{ks_distance, Ecdf};
pub use kmeans::{
    mean_silhouette, relational_kmeans, select_k, silhouettes, ClusterAssignment, KMeansParams, KScore,
    Selection,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClusterError {
    #[error("empty distribution")]
    EmptyDistribution,
    #[error("non-finite sample {0}")]
    NonFinite(f64),
    #[error("weights must be finite and positive, got {0}")]
    BadWeight(f64),
    #[error("need at least 2 objects, got {0}")]
    TooFewObjects(usize),
    #[error("{labels} labels for {objects} objects")]
    LabelCount { labels: usize, objects: usize },
    #[error("distribution for {0:?} is empty")]
    EmptyFor(String),
    #[error("k = {k} outside [{min}, {max}]")]
    KOutOfRange { k: usize, min: usize, max: usize },
    #[error("invalid assignment: {0}")]
    InvalidAssignment(&'static str),
    #[error("matrix must be square, symmetric, zero on the diagonal and finite")]
    InvalidMatrix,
}

/// Symmetric matrix of pairwise distances with row labels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceMatrix {
    labels: Vec<String>,
    data: Vec<f64>,
}

impl DistanceMatrix {
    /// Wraps a row-major `n x n` matrix after checking its shape and symmetry.
    pub fn new(labels: Vec<String>, data: Vec<f64>) -> Result<Self, ClusterError> {
        let n = labels.len();
        if n < 1 || data.len() != n * n {
            return Err(ClusterError::InvalidMatrix);
        }
        for i in 0..n {
            if data[i * n + i] != 0.0 {
                return Err(ClusterError::InvalidMatrix);
            }
            for j in 0..n {
                let v = data[i * n + j];
                if !v.is_finite() || v < 0.0 || v != data[j * n + i] {
                    return Err(ClusterError::InvalidMatrix);
                }
            }
        }
        Ok(DistanceMatrix { labels, data })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.labels.len() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.len();
        &self.data[i * n..(i + 1) * n]
    }

    /// Rows and columns permuted so that entry `(a, b)` is `(order[a], order[b])`.
    pub fn permuted(&self, order: &[usize]) -> DistanceMatrix {
        let n = self.len();
        assert_eq!(order.len(), n);
        let mut data = Vec::with_capacity(n * n);
        for &i in order {
            for &j in order {
                data.push(self.get(i, j));
            }
        }
        DistanceMatrix {
            labels: order.iter().map(|&i| self.labels[i].clone()).collect(),
            data,
        }
    }

    /// CSV with a header row of labels and the label as first column.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("label");
        for l in &self.labels {
            s.push(',');
            s.push_str(l);
        }
        s.push('\n');
        for (i, l) in self.labels.iter().enumerate() {
            s.push_str(l);
            for v in self.row(i) {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

/// Pairwise KS distances. Each entry is computed independently, so the
/// parallel and serial paths produce identical matrices.
pub fn distance_matrix(labels: &[String], ecdfs: &[Ecdf], parallel: bool) -> Result<DistanceMatrix, ClusterError> {
    let n = ecdfs.len();
    if labels.len() != n {
        return Err(ClusterError::LabelCount {
            labels: labels.len(),
            objects: n,
        });
    }
    if n < 2 {
        return Err(ClusterError::TooFewObjects(n));
    }
    let row = |i: usize| -> Vec<f64> {
        (0..n)
            .map(|j| match i.cmp(&j) {
                std::cmp::Ordering::Equal => 0.0,
                std::cmp::Ordering::Less => ks_distance(&ecdfs[i], &ecdfs[j]),
                std::cmp::Ordering::Greater => ks_distance(&ecdfs[j], &ecdfs[i]),
            })
            .collect()
    };
    let rows: Vec<Vec<f64>> = if parallel {
        (0..n).into_par_iter().map(row).collect()
    } else {
        (0..n).map(row).collect()
    };
    Ok(DistanceMatrix {
        labels: labels.to_vec(),
        data: rows.concat(),
    })
}

/// Adjusted Rand index between two labelings of the same objects.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must cover the same objects");
    let n = a.len();
    if n < 2 {
        return 1.0;
    }
    let index = |labels: &[usize]| {
        let mut uniq: Vec<usize> = labels.to_vec();
        uniq.sort_unstable();
        uniq.dedup();
        labels
            .iter()
            .map(|l| uniq.binary_search(l).expect("present"))
            .collect::<Vec<_>>()
    };
    let (ia, ib) = (index(a), index(b));
    let ka = ia.iter().max().map_or(0, |m| m + 1);
    let kb = ib.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![0u64; ka * kb];
    for (x, y) in ia.iter().zip(&ib) {
        table[x * kb + y] += 1;
    }
    let choose2 = |m: u64| (m * m.saturating_sub(1)) as f64 / 2.0;
    let sum_cells: f64 = table.iter().map(|&c| choose2(c)).sum();
    let sum_rows: f64 = (0..ka).map(|r| choose2(table[r * kb..(r + 1) * kb].iter().sum())).sum();
    let sum_cols: f64 = (0..kb).map(|c| choose2((0..ka).map(|r| table[r * kb + c]).sum())).sum();
    let total = choose2(n as u64);
    let expected = sum_rows * sum_cols / total;
    let max = 0.5 * (sum_rows + sum_cols);
    if max == expected {
        return 1.0;
    }
    (sum_cells - expected) / (max - expected)
}
