//! Eigenpairs of the discrete Laplacian near a target value.
//!
//! The workhorse is thick-restart Lanczos on `(A - σ)⁻¹` with full
//! reorthogonalization. Inner solves use a sparse LDLᵀ factorization whose
//! inertia also certifies that no eigenvalue inside the returned window was
//! skipped; missing ones are recovered by a deflated rerun. A final
//! Rayleigh–Ritz pass with `A` itself polishes the pairs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use bsl_linalg::cg::conjugate_gradient;
use bsl_linalg::ldl::Symbolic;
use bsl_linalg::{axpy, dot, norm2, symmetric_eigen, CsrMatrix, DenseMatrix, LdlFactor, LinalgError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::discretize::SparseOperator;
use crate::error::{Error, Result};
use crate::io::atomic_write;

/// Largest operator handed to the dense eigensolver.
pub const DENSE_LIMIT: usize = 3000;

/// An eigenvalue with its eigenvector, normalized in the grid-weighted norm
/// `cell_area · Σ uᵢ² = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub lambda: f64,
    pub u: Vec<f64>,
    /// `‖Au − λu‖ / ‖u‖`.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_restarts: usize,
    /// Seed of the start vectors.
    pub seed: u64,
    /// Factor nonzeros above which inner solves switch to conjugate gradients.
    pub fill_cap: usize,
}

impl SolverOptions {
    pub fn new(tol: f64) -> Self {
        Self {
            tol,
            max_restarts: 400,
            seed: 0x5eed_b111,
            fill_cap: 120_000_000,
        }
    }
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self::new(1e-8)
    }
}

/// Solves with `A - σ I`.
enum Inner {
    Direct(LdlFactor),
    Iterative,
}

struct ShiftInvert<'a> {
    a: &'a CsrMatrix,
    sigma: f64,
    inner: Inner,
}

impl ShiftInvert<'_> {
    fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        Ok(match &self.inner {
            Inner::Direct(f) => {
                // one step of iterative refinement; the factorization is
                // unpivoted and may lose digits on indefinite shifts
                let mut x = f.solve(b)?;
                let mut r = self.a.mul_vec(&x)?;
                axpy(-self.sigma, &x, &mut r);
                for (ri, bi) in r.iter_mut().zip(b) {
                    *ri = bi - *ri;
                }
                f.solve_in_place(&mut r)?;
                axpy(1.0, &r, &mut x);
                x
            }
            Inner::Iterative => conjugate_gradient(self.a, -self.sigma, b, 1e-14, 20 * self.a.dim())?,
        })
    }

    /// `‖(A − σ) v‖`.
    fn shifted_norm(&self, v: &[f64]) -> Result<f64> {
        let mut av = self.a.mul_vec(v)?;
        axpy(-self.sigma, v, &mut av);
        Ok(norm2(&av))
    }
}

/// Pairs in Euclidean normalization while the solver works.
type RawPairs = Vec<(f64, Vec<f64>)>;

struct Spectrum<'a> {
    a: &'a CsrMatrix,
    symbolic: Option<Symbolic>,
    /// Gershgorin bound on `‖A‖`.
    scale: f64,
    /// Gershgorin lower bound on the spectrum.
    lower: f64,
    opts: &'a SolverOptions,
}

const MAX_SHIFT_RETRIES: usize = 3;
const PIVOT_RATIO_MIN: f64 = 1e-12;

impl<'a> Spectrum<'a> {
    fn new(a: &'a CsrMatrix, opts: &'a SolverOptions) -> Self {
        let symbolic = Symbolic::analyze(a);
        let symbolic = (symbolic.factor_nnz() <= opts.fill_cap).then_some(symbolic);
        let lower = (0..a.dim())
            .map(|r| {
                let (cols, vals) = a.row(r);
                cols.iter()
                    .zip(vals)
                    .map(|(&c, &v)| if c == r { v } else { -v.abs() })
                    .sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min);
        Self {
            a,
            symbolic,
            scale: a.gershgorin_bound().max(f64::MIN_POSITIVE),
            lower,
            opts,
        }
    }

    fn dim(&self) -> usize {
        self.a.dim()
    }

    fn delta(&self) -> f64 {
        1e-7 * self.scale
    }

    fn factor(&self, x: f64) -> std::result::Result<LdlFactor, LinalgError> {
        let sym = self.symbolic.clone().expect("factor without symbolic analysis");
        LdlFactor::factor(sym, &self.a.shifted(-x))
    }

    /// A factorized shift near `target`, moved to at least `1e-6 ‖A‖` from
    /// the nearest eigenvalue; closer shifts swamp the other Ritz pairs in
    /// round-off.
    fn shift_near(&self, target: f64) -> Result<ShiftInvert<'a>> {
        let mut op = self.factor_near(target)?;
        if matches!(op.inner, Inner::Iterative) {
            return Ok(op);
        }
        let safe = 1e-6 * self.scale;
        let mut rng = ChaCha8Rng::seed_from_u64(self.opts.seed ^ 0x9e37_79b9);
        for _ in 0..3 {
            let rho = self.nearest_probe(&op, &mut rng)?;
            let gap = rho - op.sigma;
            if gap.abs() >= safe {
                break;
            }
            let away = if gap > 0.0 { -1.0 } else { 1.0 };
            op = self.factor_near(rho + away * 2.0 * safe)?;
        }
        Ok(op)
    }

    /// Rayleigh quotient after three inverse-iteration steps.
    fn nearest_probe(&self, op: &ShiftInvert, rng: &mut ChaCha8Rng) -> Result<f64> {
        let mut v = self.start_vector(rng, &[])?;
        for _ in 0..3 {
            v = op.solve(&v)?;
            let nv = norm2(&v);
            if nv == 0.0 || !nv.is_finite() {
                return Err(Error::ZeroVector);
            }
            v.iter_mut().for_each(|x| *x /= nv);
        }
        Ok(dot(&v, &self.a.mul_vec(&v)?))
    }

    /// A factorized shift near `target`, perturbed when the factorization
    /// breaks down or is nearly singular.
    fn factor_near(&self, target: f64) -> Result<ShiftInvert<'a>> {
        if self.symbolic.is_none() {
            if target < self.lower {
                return Ok(ShiftInvert {
                    a: self.a,
                    sigma: target,
                    inner: Inner::Iterative,
                });
            }
            return Err(LinalgError::FillCapExceeded {
                nnz: Symbolic::analyze(self.a).factor_nnz(),
                cap: self.opts.fill_cap,
            }
            .into());
        }
        let offsets = [0.0, -1.0, 2.0, -3.0];
        for (attempt, off) in offsets.iter().enumerate() {
            let sigma = target + off * self.delta();
            match self.factor(sigma) {
                Ok(f) if f.pivot_ratio() >= PIVOT_RATIO_MIN => {
                    return Ok(ShiftInvert {
                        a: self.a,
                        sigma,
                        inner: Inner::Direct(f),
                    })
                }
                _ if attempt < MAX_SHIFT_RETRIES => continue,
                _ => break,
            }
        }
        Err(Error::Factorization {
            shift: target,
            attempts: MAX_SHIFT_RETRIES + 1,
        })
    }

    /// Number of eigenvalues below `x`, nudging `x` in direction `dir` if the
    /// factorization breaks down. Returns the count and the abscissa used.
    fn count_below(&self, x: f64, dir: f64) -> Result<(usize, f64)> {
        for attempt in 0..=MAX_SHIFT_RETRIES {
            let xs = x + dir * attempt as f64 * self.delta();
            if let Ok(f) = self.factor(xs) {
                return Ok((f.inertia().negative, xs));
            }
        }
        Err(Error::Factorization {
            shift: x,
            attempts: MAX_SHIFT_RETRIES + 1,
        })
    }

    fn start_vector(&self, rng: &mut ChaCha8Rng, against: &[&[Vec<f64>]]) -> Result<Vec<f64>> {
        for _ in 0..8 {
            let mut v: Vec<f64> = (0..self.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for set in against {
                orthogonalize(&mut v, set);
            }
            let nv = norm2(&v);
            if nv > 1e-8 {
                v.iter_mut().for_each(|x| *x /= nv);
                return Ok(v);
            }
        }
        Err(Error::ZeroVector)
    }

    /// Thick-restart Lanczos on the shift-invert operator. Returns `want`
    /// Ritz pairs nearest the shift; the first `need` meet the residual
    /// estimate.
    fn lanczos(
        &self,
        op: &ShiftInvert,
        want: usize,
        need: usize,
        m: usize,
        locked: &[Vec<f64>],
        rng: &mut ChaCha8Rng,
    ) -> Result<RawPairs> {
        let tol = 0.5 * self.opts.tol;
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        basis.push(self.start_vector(rng, &[locked])?);
        let mut t = vec![0.0; m * m];
        let mut k = 0;
        let mut best = f64::INFINITY;
        for restart in 0..=self.opts.max_restarts {
            let mut beta_last = 0.0;
            for j in k..m {
                let mut w = op.solve(&basis[j])?;
                let w0 = norm2(&w);
                orthogonalize(&mut w, locked);
                let h = orthogonalize(&mut w, &basis[..=j]);
                for (i, hi) in h.iter().enumerate() {
                    t[i * m + j] = *hi;
                }
                let beta = norm2(&w);
                if beta <= 1e-12 * w0 {
                    // invariant subspace: continue with a fresh direction
                    basis.push(self.start_vector(rng, &[locked, &basis])?);
                    beta_last = 0.0;
                } else {
                    w.iter_mut().for_each(|x| *x /= beta);
                    basis.push(w);
                    beta_last = beta;
                }
            }
            let mut full = vec![0.0; m * m];
            for j in 0..m {
                for i in 0..=j {
                    let v = if j < k {
                        if i == j {
                            t[i * m + i]
                        } else {
                            0.0
                        }
                    } else {
                        t[i * m + j]
                    };
                    full[i * m + j] = v;
                    full[j * m + i] = v;
                }
            }
            let eig = symmetric_eigen(&DenseMatrix::from_row_major(m, full)?)?;
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&p, &q| eig.values[q].abs().total_cmp(&eig.values[p].abs()).then(p.cmp(&q)));
            let next_norm = op.shifted_norm(&basis[m])?;
            let est = |i: usize| (beta_last * eig.vector(i)[m - 1]).abs() * next_norm / eig.values[i].abs();
            let worst = order[..need].iter().map(|&i| est(i)).fold(0.0, f64::max);
            best = best.min(worst);
            if worst <= tol || restart == self.opts.max_restarts {
                if worst > tol && worst > self.opts.tol {
                    return Err(Error::NoConvergence {
                        residual: best,
                        tol: self.opts.tol,
                    });
                }
                let sel = &order[..want];
                let coeffs: Vec<&[f64]> = sel.iter().map(|&i| eig.vector(i)).collect();
                let vecs = combine(&basis[..m], &coeffs);
                return Ok(sel
                    .iter()
                    .zip(vecs)
                    .map(|(&i, v)| (op.sigma + 1.0 / eig.values[i], v))
                    .collect());
            }
            let keep = (want + (m - want) / 2).min(m - 1);
            let sel = &order[..keep];
            let coeffs: Vec<&[f64]> = sel.iter().map(|&i| eig.vector(i)).collect();
            let mut kept = combine(&basis[..m], &coeffs);
            kept.push(basis.pop().expect("residual vector"));
            basis = kept;
            basis.reserve(m + 1 - basis.len());
            t.iter_mut().for_each(|x| *x = 0.0);
            for (r, &i) in sel.iter().enumerate() {
                t[r * m + r] = eig.values[i];
            }
            k = keep;
        }
        unreachable!("restart loop returns on its last iteration")
    }

    /// Orthonormalizes the vectors and rotates them to Ritz vectors of `A`.
    fn rayleigh_ritz(&self, vecs: &mut Vec<Vec<f64>>) -> Result<Vec<f64>> {
        orthonormalize(vecs)?;
        let p = vecs.len();
        let av: Vec<Vec<f64>> = vecs.iter().map(|v| self.a.mul_vec(v)).collect::<std::result::Result<_, _>>()?;
        let mut b = vec![0.0; p * p];
        for i in 0..p {
            for j in 0..=i {
                let x = 0.5 * (dot(&vecs[i], &av[j]) + dot(&av[i], &vecs[j]));
                b[i * p + j] = x;
                b[j * p + i] = x;
            }
        }
        let eig = symmetric_eigen(&DenseMatrix::from_row_major(p, b)?)?;
        let coeffs: Vec<&[f64]> = (0..p).map(|i| eig.vector(i)).collect();
        *vecs = combine(vecs, &coeffs);
        Ok(eig.values)
    }

    /// Rayleigh–Ritz, then inverse-iteration sweeps until every residual is
    /// below tolerance.
    fn polish(&self, op: &ShiftInvert, vecs: Vec<Vec<f64>>) -> Result<RawPairs> {
        const ROUNDS: usize = 4;
        let mut vecs = vecs;
        for round in 0..=ROUNDS {
            let values = self.rayleigh_ritz(&mut vecs)?;
            let worst = values
                .iter()
                .zip(&vecs)
                .map(|(&l, v)| raw_residual(self.a, l, v))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .fold(0.0, f64::max);
            if worst <= self.opts.tol {
                return Ok(values.into_iter().zip(vecs).collect());
            }
            if round == ROUNDS {
                return Err(Error::NoConvergence {
                    residual: worst,
                    tol: self.opts.tol,
                });
            }
            for v in vecs.iter_mut() {
                *v = op.solve(v)?;
            }
        }
        unreachable!()
    }

    fn dense_window(&self, target: f64, count: usize) -> Result<RawPairs> {
        let n = self.dim();
        let eig = symmetric_eigen(&DenseMatrix::from_row_major(n, self.a.to_dense())?)?;
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&p, &q| {
            (eig.values[p] - target)
                .abs()
                .total_cmp(&(eig.values[q] - target).abs())
                .then(p.cmp(&q))
        });
        Ok(idx[..count]
            .iter()
            .map(|&i| (eig.values[i], eig.vector(i).to_vec()))
            .collect())
    }

    /// The `count` eigenpairs nearest `target`. With `known = (r, c)` the
    /// caller certifies that exactly `c = count` eigenvalues lie within `r`.
    fn window(&self, target: f64, count: usize, known: Option<f64>) -> Result<RawPairs> {
        let n = self.dim();
        let basis_size = |want: usize| (2 * want + 20).max(want + 30);
        let want = (count + 3).min(n);
        if basis_size(want) >= n {
            if n <= DENSE_LIMIT {
                return self.dense_window(target, count);
            }
            return Err(Error::TooLarge(n));
        }
        let op = self.shift_near(target)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.opts.seed);
        let mut found = self.lanczos(&op, want, count, basis_size(want), &[], &mut rng)?;
        let nearest = |pairs: &mut RawPairs| {
            pairs.sort_by(|p, q| (p.0 - target).abs().total_cmp(&(q.0 - target).abs()).then(p.0.total_cmp(&q.0)));
            pairs.truncate(count);
        };
        nearest(&mut found);
        if self.symbolic.is_some() {
            for _ in 0..4 {
                let (radius, inside) = match known {
                    Some(r) => (r, count),
                    None => {
                        let rho = found.iter().map(|p| (p.0 - target).abs()).fold(0.0, f64::max);
                        let r = rho * (1.0 + 1e-8) + 1e-10 * self.scale;
                        let (hi, _) = self.count_below(target + r, 1.0)?;
                        let (lo, _) = self.count_below(target - r, -1.0)?;
                        (r, hi - lo)
                    }
                };
                let within = found.iter().filter(|p| (p.0 - target).abs() <= radius).count();
                if inside <= within {
                    break;
                }
                let missing = inside - within;
                let locked: Vec<Vec<f64>> = found.iter().map(|p| p.1.clone()).collect();
                let want = (missing + 2).min(n - locked.len());
                let m = basis_size(want).min(n - locked.len() - 1);
                if want >= m {
                    break;
                }
                let extra = self.lanczos(&op, want, missing.min(want), m, &locked, &mut rng)?;
                found.extend(extra);
                nearest(&mut found);
            }
        }
        let vecs = found.into_iter().map(|p| p.1).collect();
        let mut pairs = self.polish(&op, vecs)?;
        nearest(&mut pairs);
        Ok(pairs)
    }

    /// The `count` smallest eigenpairs, by slicing the spectrum into
    /// intervals of bounded population and solving each one as a window.
    fn lowest(&self, count: usize, cell_area: f64) -> Result<RawPairs> {
        const PER_SLICE: usize = 40;
        let n = self.dim();
        if n <= DENSE_LIMIT.min(4 * PER_SLICE + 40) || self.symbolic.is_none() {
            if self.symbolic.is_none() && n > DENSE_LIMIT {
                return self.window(self.lower - self.delta(), count, None);
            }
            let mut all = self.dense_window(self.lower - 1.0, n)?;
            all.sort_by(|p, q| p.0.total_cmp(&q.0));
            all.truncate(count);
            return Ok(all);
        }
        let lo = self.lower - self.delta();
        // Weyl's law for the first guess of the upper end
        let area = n as f64 * cell_area;
        let mut hi = lo.max(0.0) + 1.2 * 4.0 * std::f64::consts::PI * (count + 1) as f64 / area;
        let (mut c_hi, mut x_hi) = self.count_below(hi, 1.0)?;
        let mut grow = 0;
        while c_hi < count {
            hi = lo + 1.3 * (hi - lo);
            (c_hi, x_hi) = self.count_below(hi, 1.0)?;
            grow += 1;
            if grow > 200 {
                return Err(Error::InvalidArgument("could not bracket the requested eigenvalues".into()));
            }
        }
        let pieces = c_hi.div_ceil(PER_SLICE).max(1);
        let mut cuts = vec![(0usize, lo)];
        for i in 1..pieces {
            let x = lo + (x_hi - lo) * i as f64 / pieces as f64;
            cuts.push(self.count_below(x, 1.0)?);
        }
        cuts.push((c_hi, x_hi));
        // refine overpopulated slices
        let mut i = 0;
        while i + 1 < cuts.len() {
            let (c0, x0) = cuts[i];
            let (c1, x1) = cuts[i + 1];
            if c1 - c0 > 2 * PER_SLICE && x1 - x0 > 4.0 * self.delta() {
                let mid = self.count_below(0.5 * (x0 + x1), 1.0)?;
                cuts.insert(i + 1, mid);
            } else {
                i += 1;
            }
        }
        let mut all = Vec::with_capacity(c_hi);
        for w in cuts.windows(2) {
            let ((c0, x0), (c1, x1)) = (w[0], w[1]);
            if c1 > c0 {
                let mid = 0.5 * (x0 + x1);
                all.extend(self.window(mid, c1 - c0, Some(0.5 * (x1 - x0)))?);
            }
        }
        all.sort_by(|p, q| p.0.total_cmp(&q.0));
        all.truncate(count);
        Ok(all)
    }
}

/// Two passes of classical Gram–Schmidt; returns the accumulated
/// projection coefficients.
fn orthogonalize(w: &mut [f64], basis: &[Vec<f64>]) -> Vec<f64> {
    let mut h = vec![0.0; basis.len()];
    for _ in 0..2 {
        let c: Vec<f64> = basis.iter().map(|v| dot(v, w)).collect();
        for (v, ci) in basis.iter().zip(&c) {
            axpy(-ci, v, w);
        }
        for (hi, ci) in h.iter_mut().zip(&c) {
            *hi += ci;
        }
    }
    h
}

fn orthonormalize(vecs: &mut [Vec<f64>]) -> Result<()> {
    for j in 0..vecs.len() {
        let (done, rest) = vecs.split_at_mut(j);
        let v = &mut rest[0];
        let before = norm2(v);
        orthogonalize(v, done);
        let nv = norm2(v);
        if !(nv > 1e-10 * before) {
            return Err(Error::ZeroVector);
        }
        v.iter_mut().for_each(|x| *x /= nv);
    }
    Ok(())
}

/// `out[c] = Σ_i coeffs[c][i] basis[i]`, blocked over rows.
fn combine(basis: &[Vec<f64>], coeffs: &[&[f64]]) -> Vec<Vec<f64>> {
    const BLOCK: usize = 1024;
    let n = basis.first().map_or(0, Vec::len);
    let mut out = vec![vec![0.0; n]; coeffs.len()];
    for start in (0..n).step_by(BLOCK) {
        let end = (start + BLOCK).min(n);
        for (o, c) in out.iter_mut().zip(coeffs) {
            let dst = &mut o[start..end];
            for (v, &ci) in basis.iter().zip(c.iter()) {
                if ci != 0.0 {
                    axpy(ci, &v[start..end], dst);
                }
            }
        }
    }
    out
}

fn raw_residual(a: &CsrMatrix, lambda: f64, u: &[f64]) -> Result<f64> {
    let nu = norm2(u);
    if nu == 0.0 {
        return Err(Error::ZeroVector);
    }
    let mut r = a.mul_vec(u)?;
    axpy(-lambda, u, &mut r);
    Ok(norm2(&r) / nu)
}

fn finalize(op: &SparseOperator, raw: RawPairs) -> Result<Vec<EigenPair>> {
    let w = op.cell_area.sqrt();
    let mut pairs = raw
        .into_iter()
        .map(|(lambda, v)| {
            let nv = norm2(&v);
            let u: Vec<f64> = v.iter().map(|x| x / (nv * w)).collect();
            let residual = raw_residual(&op.matrix, lambda, &u)?;
            Ok(EigenPair { lambda, u, residual })
        })
        .collect::<Result<Vec<_>>>()?;
    pairs.sort_by(|p, q| p.lambda.total_cmp(&q.lambda));
    Ok(pairs)
}

fn check_request(op: &SparseOperator, count: usize, tol: f64) -> Result<()> {
    if count == 0 || count > op.dim() {
        return Err(Error::InvalidArgument(format!(
            "count must be in 1..={}, got {count}",
            op.dim()
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    Ok(())
}

/// The `count` eigenpairs nearest `target`, sorted ascending.
pub fn solve_window(op: &SparseOperator, target: f64, count: usize, tol: f64) -> Result<Vec<EigenPair>> {
    solve_window_with(op, target, count, &SolverOptions::new(tol))
}

pub fn solve_window_with(
    op: &SparseOperator,
    target: f64,
    count: usize,
    opts: &SolverOptions,
) -> Result<Vec<EigenPair>> {
    check_request(op, count, opts.tol)?;
    let spec = Spectrum::new(&op.matrix, opts);
    finalize(op, spec.window(target, count, None)?)
}

/// The `count` smallest eigenpairs, sorted ascending.
pub fn solve_lowest(op: &SparseOperator, count: usize, opts: &SolverOptions) -> Result<Vec<EigenPair>> {
    check_request(op, count, opts.tol)?;
    let spec = Spectrum::new(&op.matrix, opts);
    finalize(op, spec.lowest(count, op.cell_area)?)
}

/// Full spectrum by dense symmetric eigendecomposition.
pub fn dense_oracle(op: &SparseOperator) -> Result<Vec<EigenPair>> {
    let n = op.dim();
    if n > DENSE_LIMIT {
        return Err(Error::TooLarge(n));
    }
    let eig = symmetric_eigen(&DenseMatrix::from_row_major(n, op.matrix.to_dense())?)?;
    finalize(
        op,
        (0..n).map(|i| (eig.values[i], eig.vector(i).to_vec())).collect(),
    )
}

/// `‖Au − λu‖₂ / ‖u‖₂`.
pub fn residual(op: &SparseOperator, pair: &EigenPair) -> Result<f64> {
    if pair.u.len() != op.dim() {
        return Err(Error::Dimension {
            expected: op.dim(),
            got: pair.u.len(),
        });
    }
    raw_residual(&op.matrix, pair.lambda, &pair.u)
}

/// Largest entry of `G − I` for the grid-weighted Gram matrix `G`.
pub fn gram_deviation(pairs: &[EigenPair], cell_area: f64) -> f64 {
    let mut worst = 0.0f64;
    for (i, p) in pairs.iter().enumerate() {
        for (j, q) in pairs.iter().enumerate().take(i + 1) {
            let g = cell_area * dot(&p.u, &q.u);
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g - target).abs());
        }
    }
    worst
}

/// Sine of the largest principal angle between `span(b)` and `span(a)`:
/// `‖(I − P_a) Q_b‖₂` with `Q_b` an orthonormal basis of `span(b)`.
/// Zero when `span(b) ⊆ span(a)`.
pub fn subspace_sine(a: &[&[f64]], b: &[&[f64]]) -> Result<f64> {
    let mut qa: Vec<Vec<f64>> = a.iter().map(|v| v.to_vec()).collect();
    let mut qb: Vec<Vec<f64>> = b.iter().map(|v| v.to_vec()).collect();
    orthonormalize(&mut qa)?;
    orthonormalize(&mut qb)?;
    for v in qb.iter_mut() {
        orthogonalize(v, &qa);
    }
    let p = qb.len();
    let mut g = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..=i {
            let x = dot(&qb[i], &qb[j]);
            g[i * p + j] = x;
            g[j * p + i] = x;
        }
    }
    let eig = symmetric_eigen(&DenseMatrix::from_row_major(p, g)?)?;
    Ok(eig.values.last().copied().unwrap_or(0.0).max(0.0).sqrt())
}

const CACHE_MAGIC: &[u8; 8] = b"BSLEIG01";

/// Sidecar describing how a cache was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheManifest {
    pub config_hash: String,
    pub domain: String,
    pub resolution: usize,
    pub bc: String,
    pub tol: f64,
    pub dim: usize,
    pub count: usize,
}

pub fn manifest_path(cache: &Path) -> PathBuf {
    let mut name = cache.as_os_str().to_owned();
    name.push(".manifest");
    PathBuf::from(name)
}

pub fn encode_cache(pairs: &[EigenPair]) -> Result<Vec<u8>> {
    let n = pairs.first().map_or(0, |p| p.u.len());
    if let Some(bad) = pairs.iter().find(|p| p.u.len() != n) {
        return Err(Error::Dimension {
            expected: n,
            got: bad.u.len(),
        });
    }
    let mut out = Vec::with_capacity(24 + pairs.len() * (16 + 8 * n));
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(pairs.len() as u64).to_le_bytes());
    for p in pairs {
        out.extend_from_slice(&p.lambda.to_le_bytes());
        out.extend_from_slice(&p.residual.to_le_bytes());
        for x in &p.u {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_cache(bytes: &[u8]) -> Result<Vec<EigenPair>> {
    let bad = |what: &str| Error::Cache(what.to_string());
    if bytes.len() < 24 || &bytes[..8] != CACHE_MAGIC {
        return Err(bad("missing BSLEIG01 header"));
    }
    let word = |at: usize| -> [u8; 8] { bytes[at..at + 8].try_into().expect("8 bytes") };
    let n = u64::from_le_bytes(word(8)) as usize;
    let count = u64::from_le_bytes(word(16)) as usize;
    let expected = n
        .checked_add(2)
        .and_then(|r| r.checked_mul(8))
        .and_then(|r| r.checked_mul(count))
        .and_then(|r| r.checked_add(24));
    if expected != Some(bytes.len()) {
        return Err(bad("length does not match header"));
    }
    let mut at = 24;
    let mut next = || {
        let x = f64::from_le_bytes(word(at));
        at += 8;
        x
    };
    Ok((0..count)
        .map(|_| {
            let lambda = next();
            let residual = next();
            let u = (0..n).map(|_| next()).collect();
            EigenPair { lambda, u, residual }
        })
        .collect())
}

/// Writes the cache and its manifest sidecar.
pub fn write_cache(path: &Path, pairs: &[EigenPair], manifest: &CacheManifest) -> Result<()> {
    atomic_write(path, &encode_cache(pairs)?)?;
    let text = toml::to_string(manifest).map_err(|e| Error::Cache(e.to_string()))?;
    atomic_write(&manifest_path(path), text.as_bytes())
}

pub fn read_cache(path: &Path) -> Result<(Vec<EigenPair>, CacheManifest)> {
    let pairs = decode_cache(&std::fs::read(path)?)?;
    let text = std::fs::read_to_string(manifest_path(path))?;
    let manifest: CacheManifest = toml::from_str(&text).map_err(|e| Error::Cache(e.to_string()))?;
    if manifest.count != pairs.len() || pairs.first().is_some_and(|p| p.u.len() != manifest.dim) {
        return Err(Error::Cache("manifest does not describe the cache contents".into()));
    }
    Ok((pairs, manifest))
}

/// One line per pair: index, eigenvalue, residual.
pub fn eigenvalue_listing(pairs: &[EigenPair]) -> String {
    let mut s = String::new();
    for (i, p) in pairs.iter().enumerate() {
        let _ = writeln!(s, "{i} {:.16e} {:.3e}", p.lambda, p.residual);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::{assemble_laplacian, build_grid};
    use crate::geometry::{Bc, DomainSpec};
    use std::f64::consts::PI;

    fn square(res: usize) -> (SparseOperator, f64) {
        let d = DomainSpec::unit_square(Bc::Dirichlet);
        let g = build_grid(&d, res).unwrap();
        (assemble_laplacian(&d, &g).unwrap(), g.hx)
    }

    fn closed_form(n: usize, h: f64) -> Vec<f64> {
        let s = |m: usize| (m as f64 * PI * h / 2.0).sin().powi(2);
        let mut v: Vec<f64> = (1..=n)
            .flat_map(|m| (1..=n).map(move |k| (m, k)))
            .map(|(m, k)| 4.0 / (h * h) * (s(m) + s(k)))
            .collect();
        v.sort_by(f64::total_cmp);
        v
    }

    #[test]
    fn two_by_two_oracle() {
        let a = CsrMatrix::from_triplets(2, &[(0, 0, 2.0), (0, 1, -1.0), (1, 0, -1.0), (1, 1, 2.0)]).unwrap();
        let op = SparseOperator::new(a, 1.0);
        let pairs = dense_oracle(&op).unwrap();
        assert!((pairs[0].lambda - 1.0).abs() < 1e-14);
        assert!((pairs[1].lambda - 3.0).abs() < 1e-14);
    }

    #[test]
    fn oracle_matches_sine_closed_form() {
        let (op, h) = square(10);
        let got = dense_oracle(&op).unwrap();
        let want = closed_form(10, h);
        for (p, w) in got.iter().zip(&want) {
            assert!((p.lambda - w).abs() <= 1e-10 * w, "{} vs {w}", p.lambda);
        }
        assert!(gram_deviation(&got, op.cell_area) < 1e-10);
    }

    #[test]
    fn oracle_shifts_with_identity() {
        let (op, _) = square(8);
        let base = dense_oracle(&op).unwrap();
        let shifted = dense_oracle(&op.shifted(3.5)).unwrap();
        for (p, q) in base.iter().zip(&shifted) {
            assert!((q.lambda - p.lambda - 3.5).abs() < 1e-10);
        }
        let big = SparseOperator::new(CsrMatrix::identity(DENSE_LIMIT + 1), 1.0);
        assert!(matches!(dense_oracle(&big), Err(Error::TooLarge(_))));
    }

    #[test]
    fn window_finds_ground_state() {
        let (op, h) = square(31);
        let pairs = solve_window(&op, 2.0 * PI * PI, 1, 1e-10).unwrap();
        let exact = 4.0 / (h * h) * 2.0 * (PI * h / 2.0).sin().powi(2);
        assert!((pairs[0].lambda - exact).abs() <= 1e-10 * exact);
        assert!(pairs[0].residual <= 1e-10);
    }

    #[test]
    fn window_at_exact_eigenvalue_reshifts() {
        let (op, h) = square(31);
        let exact = closed_form(31, h);
        let target = exact[4];
        let pairs = solve_window(&op, target, 3, 1e-8).unwrap();
        assert!(pairs.iter().any(|p| (p.lambda - target).abs() < 1e-9 * target));
    }

    #[test]
    fn window_matches_oracle_and_recovers_degenerate_subspaces() {
        let (op, _) = square(24);
        let oracle = dense_oracle(&op).unwrap();
        let target = 1500.0;
        let mut near = oracle.clone();
        near.sort_by(|p, q| (p.lambda - target).abs().total_cmp(&(q.lambda - target).abs()));
        // widen the window until it ends between levels
        let dist = |p: &EigenPair| (p.lambda - target).abs();
        let mut count = 12;
        while dist(&near[count]) - dist(&near[count - 1]) < 1e-6 {
            count += 1;
        }
        let got = solve_window(&op, target, count, 1e-9).unwrap();
        let mut near: Vec<_> = near.into_iter().take(count).collect();
        near.sort_by(|p, q| p.lambda.total_cmp(&q.lambda));
        let scale = oracle.last().unwrap().lambda;
        for (p, q) in got.iter().zip(&near) {
            assert!((p.lambda - q.lambda).abs() <= 1e-9 * scale);
        }
        assert!(gram_deviation(&got, op.cell_area) < 1e-8);
        // the square has doubly degenerate levels; compare spans of whole clusters
        let inner: Vec<&[f64]> = near.iter().map(|p| p.u.as_slice()).collect();
        let outer: Vec<&[f64]> = got.iter().map(|p| p.u.as_slice()).collect();
        assert!(subspace_sine(&outer, &inner).unwrap() < 1e-6);
    }

    #[test]
    fn torus_kernel_is_constant() {
        let d = DomainSpec::TorusMinusObstacle {
            obstacle: crate::geometry::ObstacleSpec::none(),
            obstacle_bc: Bc::Dirichlet,
        };
        let g = build_grid(&d, 20).unwrap();
        let op = assemble_laplacian(&d, &g).unwrap();
        let pairs = solve_window(&op, 0.0, 1, 1e-9).unwrap();
        assert!(pairs[0].lambda.abs() < 1e-9);
        let u0 = pairs[0].u[0];
        assert!((u0.abs() - 1.0).abs() < 1e-9);
        assert!(pairs[0].u.iter().all(|x| (x - u0).abs() < 1e-9));
    }

    #[test]
    fn residual_examples() {
        let (op, h) = square(15);
        let d = DomainSpec::unit_square(Bc::Dirichlet);
        let g = build_grid(&d, 15).unwrap();
        let u = g.sample(|p| (PI * p.x).sin() * (2.0 * PI * p.y).sin());
        let s = |m: f64| (m * PI * h / 2.0).sin().powi(2);
        let lambda = 4.0 / (h * h) * (s(1.0) + s(2.0));
        let pair = EigenPair { lambda, u: u.clone(), residual: 0.0 };
        assert!(residual(&op, &pair).unwrap() <= 1e-12 * lambda);
        let eps = 1e-3;
        let off = EigenPair { lambda: lambda + eps, u: u.clone(), residual: 0.0 };
        assert!((residual(&op, &off).unwrap() - eps).abs() < 1e-9);
        let zero = EigenPair { lambda, u: vec![0.0; u.len()], residual: 0.0 };
        assert!(matches!(residual(&op, &zero), Err(Error::ZeroVector)));
        let short = EigenPair { lambda, u: vec![1.0], residual: 0.0 };
        assert!(matches!(residual(&op, &short), Err(Error::Dimension { .. })));
    }

    #[test]
    fn iterative_inner_solves_below_the_spectrum() {
        let (op, h) = square(20);
        let opts = SolverOptions {
            fill_cap: 0,
            ..SolverOptions::new(1e-8)
        };
        let pairs = solve_window_with(&op, -1.0, 3, &opts).unwrap();
        let exact = closed_form(20, h);
        assert!((pairs[0].lambda - exact[0]).abs() < 1e-8 * exact[0]);
        assert!(matches!(
            solve_window_with(&op, 500.0, 3, &opts),
            Err(Error::Linalg(LinalgError::FillCapExceeded { .. }))
        ));
    }

    #[test]
    fn lowest_slices_agree_with_oracle() {
        let d = DomainSpec::stadium(1.0, Bc::Dirichlet);
        let g = build_grid(&d, 22).unwrap();
        let op = assemble_laplacian(&d, &g).unwrap();
        assert!(op.dim() > 300);
        let oracle = dense_oracle(&op).unwrap();
        let got = solve_lowest(&op, 90, &SolverOptions::new(1e-9)).unwrap();
        assert_eq!(got.len(), 90);
        for (p, q) in got.iter().zip(&oracle) {
            assert!((p.lambda - q.lambda).abs() < 1e-9 * oracle.last().unwrap().lambda);
        }
        assert!(gram_deviation(&got, op.cell_area) < 1e-8);
    }

    #[test]
    fn cache_round_trip_and_corruption() {
        let (op, _) = square(6);
        let pairs = dense_oracle(&op).unwrap();
        let bytes = encode_cache(&pairs[..5]).unwrap();
        assert_eq!(&bytes[..8], b"BSLEIG01");
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 36);
        assert_eq!(decode_cache(&bytes).unwrap(), pairs[..5].to_vec());
        assert!(decode_cache(&bytes[..bytes.len() - 1]).is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.bin");
        let manifest = CacheManifest {
            config_hash: "abc".into(),
            domain: "rectangle".into(),
            resolution: 6,
            bc: "dirichlet".into(),
            tol: 1e-8,
            dim: 36,
            count: 5,
        };
        write_cache(&path, &pairs[..5], &manifest).unwrap();
        let (back, m) = read_cache(&path).unwrap();
        assert_eq!(back.len(), 5);
        assert_eq!(m, manifest);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(6))]
            #[test]
            fn shift_invariance(c in -50.0f64..50.0, t in 100.0f64..900.0) {
                let d = DomainSpec::Rectangle { height: 0.71, bc_x: Bc::Dirichlet, bc_y: Bc::Dirichlet };
                let op = assemble_laplacian(&d, &build_grid(&d, 16).unwrap()).unwrap();
                let base = solve_window(&op, t, 4, 1e-9).unwrap();
                let moved = solve_window(&op.shifted(c), t + c, 4, 1e-9).unwrap();
                for (p, q) in base.iter().zip(&moved) {
                    prop_assert!((q.lambda - p.lambda - c).abs() < 1e-9 * (1.0 + p.lambda.abs()));
                }
                let a: Vec<&[f64]> = base.iter().map(|p| p.u.as_slice()).collect();
                let b: Vec<&[f64]> = moved.iter().map(|p| p.u.as_slice()).collect();
                prop_assert!(subspace_sine(&a, &b).unwrap() < 1e-8);
            }
        }
    }
}
