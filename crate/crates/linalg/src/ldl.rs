//! Sparse LDLᵀ factorization without pivoting.
//!
//! Symmetric permutation from [`crate::ordering::nested_dissection`], then an
//! up-looking elimination: row `k` of `L` is the solution of a sparse
//! triangular system whose pattern is the reach of row `k` of `A` in the
//! elimination tree. The diagonal `D` may carry either sign, so shifted
//! (indefinite) operators factor as long as no pivot vanishes; the signs of
//! `D` give the inertia by Sylvester's law.

use crate::ordering::{invert, nested_dissection, Graph};
use crate::{CsrMatrix, LinalgError, Result};

/// Counts of negative, zero and positive eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Inertia {
    pub negative: usize,
    pub zero: usize,
    pub positive: usize,
}

/// Ordering and elimination tree, reusable across matrices that share a
/// sparsity pattern (for example the same operator at different shifts).
#[derive(Debug, Clone)]
pub struct Symbolic {
    n: usize,
    perm: Vec<usize>,
    inv_perm: Vec<usize>,
    parent: Vec<usize>,
    col_ptr: Vec<usize>,
}

const NONE: usize = usize::MAX;

impl Symbolic {
    pub fn analyze(a: &CsrMatrix) -> Self {
        let perm = nested_dissection(&Graph::from_csr(a));
        Self::with_permutation(a, perm)
    }

    pub fn with_permutation(a: &CsrMatrix, perm: Vec<usize>) -> Self {
        let n = a.dim();
        let inv_perm = invert(&perm);
        let mut parent = vec![NONE; n];
        let mut flag = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        for k in 0..n {
            flag[k] = k;
            let (cols, _) = a.row(perm[k]);
            for &c in cols {
                let mut i = inv_perm[c];
                if i < k {
                    while flag[i] != k {
                        if parent[i] == NONE {
                            parent[i] = k;
                        }
                        lnz[i] += 1;
                        flag[i] = k;
                        i = parent[i];
                    }
                }
            }
        }
        let mut col_ptr = Vec::with_capacity(n + 1);
        col_ptr.push(0);
        for k in 0..n {
            col_ptr.push(col_ptr[k] + lnz[k]);
        }
        Self {
            n,
            perm,
            inv_perm,
            parent,
            col_ptr,
        }
    }

    /// Strictly-lower nonzeros the factor will hold.
    pub fn factor_nnz(&self) -> usize {
        self.col_ptr[self.n]
    }

    pub fn dim(&self) -> usize {
        self.n
    }
}

/// `P A Pᵀ = L D Lᵀ` with unit lower-triangular `L` stored by columns.
#[derive(Debug, Clone)]
pub struct LdlFactor {
    symbolic: Symbolic,
    row_idx: Vec<usize>,
    values: Vec<f64>,
    diag: Vec<f64>,
}

impl LdlFactor {
    /// Analyze and factor in one step.
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        Self::factor(Symbolic::analyze(a), a)
    }

    /// Numeric factorization. A pivot with `|d| <= 64 ε max|a_ii|` counts as
    /// a breakdown.
    pub fn factor(symbolic: Symbolic, a: &CsrMatrix) -> Result<Self> {
        let n = symbolic.n;
        if a.dim() != n {
            return Err(LinalgError::DimensionMismatch {
                expected: n,
                got: a.dim(),
            });
        }
        let scale = a
            .diagonal()
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        let pivot_tol = 64.0 * f64::EPSILON * scale;

        let nnz = symbolic.factor_nnz();
        let mut row_idx = vec![0usize; nnz];
        let mut values = vec![0.0; nnz];
        let mut diag = vec![0.0; n];
        let mut y = vec![0.0; n];
        let mut flag = vec![NONE; n];
        let mut pattern = vec![0usize; n];
        let mut fill = vec![0usize; n];
        let Symbolic {
            perm,
            inv_perm,
            parent,
            col_ptr,
            ..
        } = &symbolic;

        for k in 0..n {
            y[k] = 0.0;
            let mut top = n;
            flag[k] = k;
            let (cols, vals) = a.row(perm[k]);
            for (&c, &v) in cols.iter().zip(vals) {
                let mut i = inv_perm[c];
                if i <= k {
                    y[i] += v;
                    let mut len = 0;
                    while flag[i] != k {
                        pattern[len] = i;
                        len += 1;
                        flag[i] = k;
                        i = parent[i];
                    }
                    while len > 0 {
                        top -= 1;
                        len -= 1;
                        pattern[top] = pattern[len];
                    }
                }
            }
            let mut dk = y[k];
            y[k] = 0.0;
            for &i in &pattern[top..n] {
                let yi = y[i];
                y[i] = 0.0;
                let start = col_ptr[i];
                let end = start + fill[i];
                for p in start..end {
                    y[row_idx[p]] -= values[p] * yi;
                }
                let l_ki = yi / diag[i];
                dk -= l_ki * yi;
                row_idx[end] = k;
                values[end] = l_ki;
                fill[i] += 1;
            }
            if !(dk.abs() > pivot_tol) {
                return Err(LinalgError::ZeroPivot { step: k, pivot: dk });
            }
            diag[k] = dk;
        }
        Ok(Self {
            symbolic,
            row_idx,
            values,
            diag,
        })
    }

    pub fn dim(&self) -> usize {
        self.symbolic.n
    }

    pub fn symbolic(&self) -> &Symbolic {
        &self.symbolic
    }

    pub fn inertia(&self) -> Inertia {
        let mut out = Inertia {
            negative: 0,
            zero: 0,
            positive: 0,
        };
        for &d in &self.diag {
            if d < 0.0 {
                out.negative += 1;
            } else if d > 0.0 {
                out.positive += 1;
            } else {
                out.zero += 1;
            }
        }
        out
    }

    /// Smallest pivot magnitude relative to the largest.
    pub fn pivot_ratio(&self) -> f64 {
        let (lo, hi) = self
            .diag
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(d.abs()), hi.max(d.abs())));
        lo / hi
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) -> Result<()> {
        let n = self.symbolic.n;
        if b.len() != n {
            return Err(LinalgError::DimensionMismatch {
                expected: n,
                got: b.len(),
            });
        }
        let perm = &self.symbolic.perm;
        let col_ptr = &self.symbolic.col_ptr;
        let mut x: Vec<f64> = perm.iter().map(|&p| b[p]).collect();
        for j in 0..n {
            let xj = x[j];
            if xj != 0.0 {
                for p in col_ptr[j]..col_ptr[j + 1] {
                    x[self.row_idx[p]] -= self.values[p] * xj;
                }
            }
        }
        for (xj, dj) in x.iter_mut().zip(&self.diag) {
            *xj /= dj;
        }
        for j in (0..n).rev() {
            let mut acc = x[j];
            for p in col_ptr[j]..col_ptr[j + 1] {
                acc -= self.values[p] * x[self.row_idx[p]];
            }
            x[j] = acc;
        }
        for (k, &p) in perm.iter().enumerate() {
            b[p] = x[k];
        }
        Ok(())
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x)?;
        Ok(x)
    }
}
