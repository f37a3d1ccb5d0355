//! Random-walk Laplacian and its eigenvector embedding.

use super::GroupingError;
use nalgebra::{DMatrix, SymmetricEigen};

pub const EIGEN_TOLERANCE: f64 = 1e-10;
pub const EIGEN_MAX_ITERATIONS: usize = 10_000;

/// `L_rw = I - D^-1 M`, kept together with the similarity matrix and its
/// degrees so the embedding can use the symmetric form.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomWalkLaplacian {
    pub similarity: DMatrix<f64>,
    pub degrees: Vec<f64>,
    pub l_rw: DMatrix<f64>,
}

pub fn random_walk_laplacian(m: &DMatrix<f64>) -> Result<RandomWalkLaplacian, GroupingError> {
    let n = m.nrows();
    let degrees: Vec<f64> = (0..n).map(|r| m.row(r).sum()).collect();
    if let Some(node) = degrees.iter().position(|d| *d <= 0.0) {
        return Err(GroupingError::IsolatedNode(node));
    }
    let mut l_rw: DMatrix<f64> = DMatrix::identity(n, n);
    for r in 0..n {
        for c in 0..n {
            l_rw[(r, c)] -= m[(r, c)] / degrees[r];
        }
    }
    Ok(RandomWalkLaplacian {
        similarity: m.clone(),
        degrees,
        l_rw,
    })
}

/// Eigenvectors of `L_rw` for its `k` smallest eigenvalues, one per column.
///
/// Solved on `L_sym = I - D^-1/2 M D^-1/2` and mapped back with `D^-1/2`.
/// Columns have unit norm and a positive first nonzero component. With
/// `row_normalize` each embedded point is scaled to unit length.
pub fn spectral_embedding(
    laplacian: &RandomWalkLaplacian,
    k: usize,
    row_normalize: bool,
) -> Result<DMatrix<f64>, GroupingError> {
    let n = laplacian.degrees.len();
    if k == 0 || k > n {
        return Err(GroupingError::InvalidClusterCount { k, n });
    }
    let inv_sqrt: Vec<f64> = laplacian.degrees.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut l_sym: DMatrix<f64> = DMatrix::identity(n, n);
    for r in 0..n {
        for c in 0..n {
            l_sym[(r, c)] -= inv_sqrt[r] * laplacian.similarity[(r, c)] * inv_sqrt[c];
        }
    }
    let eig = SymmetricEigen::try_new(l_sym, EIGEN_TOLERANCE, EIGEN_MAX_ITERATIONS).ok_or(GroupingError::EigenFailure)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let mut out = DMatrix::zeros(n, k);
    for (col, &idx) in order.iter().take(k).enumerate() {
        let mut v: Vec<f64> = (0..n).map(|r| eig.eigenvectors[(r, idx)] * inv_sqrt[r]).collect();
        let norm = v.iter().map(|x: &f64| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
        }
        for (r, x) in v.into_iter().enumerate() {
            out[(r, col)] = x;
        }
    }
    if row_normalize {
        for r in 0..n {
            let norm = out.row(r).norm();
            if norm > 0.0 {
                let scaled = out.row(r) / norm;
                out.set_row(r, &scaled);
            }
        }
    }
    Ok(out)
}
