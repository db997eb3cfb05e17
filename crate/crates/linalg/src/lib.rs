//! Linear algebra kernels: compressed sparse row storage, a sparse LDLᵀ
//! factorization behind a nested-dissection ordering, a dense symmetric
//! eigensolver (Householder tridiagonalization + implicit QL), and a few
//! small direct/iterative solvers.

pub mod cg;
pub mod csr;
pub mod dense;
pub mod ldl;
pub mod ordering;
pub mod tridiag;

pub use csr::CsrMatrix;
pub use dense::{symmetric_eigen, symmetric_eigenvalues, DenseMatrix, SymmetricEigen};
pub use ldl::{Inertia, LdlFactor};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("zero pivot at elimination step {step} (|d| = {pivot:e})")]
    ZeroPivot { step: usize, pivot: f64 },
    #[error("factor would hold {nnz} nonzeros, above the cap of {cap}")]
    FillCapExceeded { nnz: usize, cap: usize },
    #[error("QL iteration did not converge for eigenvalue {index}")]
    NoConvergence { index: usize },
    #[error("iterative solve stalled at relative residual {residual:e} after {iterations} iterations")]
    IterativeStall { residual: f64, iterations: usize },
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("singular tridiagonal system at row {row}")]
    SingularTridiagonal { row: usize },
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// Euclidean dot product.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // four accumulators; the summation order is fixed so results are reproducible
    let mut s = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        s[0] += a[i] * b[i];
        s[1] += a[i + 1] * b[i + 1];
        s[2] += a[i + 2] * b[i + 2];
        s[3] += a[i + 3] * b[i + 3];
    }
    for i in 4 * chunks..a.len() {
        s[0] += a[i] * b[i];
    }
    (s[0] + s[1]) + (s[2] + s[3])
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn scale(alpha: f64, x: &mut [f64]) {
    for xi in x.iter_mut() {
        *xi *= alpha;
    }
}
