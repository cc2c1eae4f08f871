//! Thin bridge from `ndarray` to `nalgebra` for the few dense factorizations
//! the analyses need.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2};

pub fn to_nalgebra(a: ArrayView2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub fn from_nalgebra(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Eigendecomposition of a symmetric matrix: `a = v * diag(w) * v^T`.
pub fn symmetric_eigen(a: ArrayView2<f64>) -> (Array1<f64>, Array2<f64>) {
    let eig = nalgebra::SymmetricEigen::new(to_nalgebra(a));
    let w = Array1::from_iter(eig.eigenvalues.iter().copied());
    (w, from_nalgebra(&eig.eigenvectors))
}
