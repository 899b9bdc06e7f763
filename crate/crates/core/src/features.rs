//! Log-domain covariance features and log-Euclidean dissimilarities.
//!
//! The matrix log of a Hermitian PSD covariance is taken through its
//! eigendecomposition with a relative eigenvalue floor, which keeps the
//! near-singular covariances of blocked points finite and guarantees a
//! Hermitian output.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::channel::ChannelMatrix;
use crate::{par_map, Error, Result};

/// Relative eigenvalue floor applied before the log.
pub const DEFAULT_EIGENVALUE_FLOOR: f64 = 1e-9;

/// Hermitian matrix log: eigendecompose, clamp eigenvalues at
/// `floor * lambda_max`, and rebuild with logged eigenvalues.
///
/// Errors when the matrix has no positive eigenvalue (all-zero input).
pub fn hermitian_log(r: &ChannelMatrix, floor: f64) -> Result<ChannelMatrix> {
    let eig = r.clone().symmetric_eigen();
    let lambda_max = eig.eigenvalues.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if !(lambda_max > 0.0) {
        return Err(Error::invalid(
            "matrix log needs a covariance with at least one positive eigenvalue",
        ));
    }
    let cut = floor * lambda_max;
    let logged: Vec<Complex64> = eig
        .eigenvalues
        .iter()
        .map(|&l| Complex64::new(l.max(cut).ln(), 0.0))
        .collect();
    let u = eig.eigenvectors;
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(logged));
    let m = &u * d * u.adjoint();
    // Exact Hermitian symmetrization; fp drift in U D U^H is one-sided.
    Ok((&m + m.adjoint()) * Complex64::new(0.5, 0.0))
}

/// Covariance fingerprint of one test point: the raw estimate and its log.
#[derive(Clone, Debug)]
pub struct CovarianceFeature {
    pub point_id: usize,
    pub r: ChannelMatrix,
    pub log_r: ChannelMatrix,
}

impl CovarianceFeature {
    pub fn from_covariance(point_id: usize, r: ChannelMatrix, floor: f64) -> Result<Self> {
        let log_r = hermitian_log(&r, floor).map_err(|_| Error::DegenerateFeature {
            point_id,
            reason: "all-zero covariance".into(),
        })?;
        Ok(CovarianceFeature { point_id, r, log_r })
    }

    pub fn dim(&self) -> usize {
        self.r.nrows()
    }
}

/// Log-Euclidean distance `|| log R_a - log R_b ||_F`.
pub fn le_distance(a: &CovarianceFeature, b: &CovarianceFeature) -> f64 {
    log_distance(&a.log_r, &b.log_r)
}

/// Frobenius norm of the difference of two (already logged) matrices.
pub fn log_distance(log_a: &ChannelMatrix, log_b: &ChannelMatrix) -> f64 {
    let mut acc = 0.0;
    for (x, y) in log_a.iter().zip(log_b.iter()) {
        acc += (x - y).norm_sqr();
    }
    acc.sqrt()
}

/// Dense symmetric matrix of pairwise log-Euclidean dissimilarities with a
/// zero diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct DissimilarityMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DissimilarityMatrix {
    pub fn from_rows(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::invalid("dissimilarity data length must be n*n"));
        }
        Ok(DissimilarityMatrix { n, data })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.data[u * self.n + v]
    }

    pub fn row(&self, u: usize) -> &[f64] {
        &self.data[u * self.n..(u + 1) * self.n]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Submatrix over the given point indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> DissimilarityMatrix {
        let m = indices.len();
        let mut data = vec![0.0; m * m];
        for (i, &u) in indices.iter().enumerate() {
            for (j, &v) in indices.iter().enumerate() {
                data[i * m + j] = self.get(u, v);
            }
        }
        DissimilarityMatrix { n: m, data }
    }
}

/// Pairwise log-Euclidean dissimilarities; each unordered pair is computed
/// once and mirrored.
pub fn dissimilarity_matrix(features: &[CovarianceFeature]) -> Result<DissimilarityMatrix> {
    let n = features.len();
    if n < 2 {
        return Err(Error::invalid("need at least two features"));
    }
    for f in features {
        if f.log_r.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::DegenerateFeature {
                point_id: f.point_id,
                reason: "non-finite log covariance".into(),
            });
        }
    }
    // Upper-triangle rows in parallel, then mirror.
    let rows = par_map(n, |u| {
        let mut row = vec![0.0; n];
        for v in (u + 1)..n {
            row[v] = le_distance(&features[u], &features[v]);
        }
        row
    });
    let mut data = vec![0.0; n * n];
    for (u, row) in rows.iter().enumerate() {
        for v in (u + 1)..n {
            data[u * n + v] = row[v];
            data[v * n + u] = row[v];
        }
    }
    Ok(DissimilarityMatrix { n, data })
}
