//! Fourier reduction on the rectangle `[0,1] x [0,a]`.
//!
//! Expanding in the Dirichlet basis `e_k(y) = √(2/a) sin(kπy/a)` turns
//! `(Δ − z) u = f` into one ODE per mode, `u_k'' − s u_k = f_k` with
//! `s = z + (kπ/a)²`. This module decomposes grid fields into modes, solves
//! the mode ODE, evaluates the spectral `H⁻¹` norm and measures empirical
//! control constants mode by mode.

use std::f64::consts::PI;

use bsl_linalg::tridiag::solve_tridiagonal;
use bsl_linalg::{symmetric_eigen, DenseMatrix, LinalgError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::discretize::Grid;
use crate::error::{Error, Result};
use crate::io::{fmt_f64, CsvTable};

/// `√(2/a) sin(kπy/a)`, orthonormal in `L²([0,a])`.
pub fn dirichlet_basis(k: i64, a: f64, y: f64) -> Result<f64> {
    if k <= 0 {
        return Err(Error::InvalidArgument(format!("mode index must be positive, got {k}")));
    }
    if !(a > 0.0) {
        return Err(Error::InvalidArgument(format!("height must be positive, got {a}")));
    }
    Ok((2.0 / a).sqrt() * (k as f64 * PI * y / a).sin())
}

/// Orthonormal discrete sine basis on the `n` interior nodes `x_i = i h`,
/// `h = L/(n+1)`: `φ_m(x_i) = √(2/L) sin(mπ x_i / L)`, `h Σ φ_m φ_l = δ_ml`.
#[derive(Debug, Clone)]
pub struct SineBasis {
    pub n: usize,
    pub h: f64,
    pub length: f64,
    /// `table[(m-1) * n + (i-1)] = φ_m(x_i)`.
    table: Vec<f64>,
}

impl SineBasis {
    pub fn new(n: usize, length: f64) -> Self {
        let h = length / (n + 1) as f64;
        let c = (2.0 / length).sqrt();
        let mut table = Vec::with_capacity(n * n);
        for m in 1..=n {
            for i in 1..=n {
                // reduce the argument exactly before taking the sine
                let r = (m * i) % (2 * (n + 1));
                table.push(c * (PI * r as f64 / (n + 1) as f64).sin());
            }
        }
        Self { n, h, length, table }
    }

    pub fn unit(n: usize) -> Self {
        Self::new(n, 1.0)
    }

    pub fn phi(&self, m: usize) -> &[f64] {
        &self.table[(m - 1) * self.n..m * self.n]
    }

    /// Node coordinate `x_i` for `i` in `0..n` (zero-based).
    pub fn x(&self, i: usize) -> f64 {
        (i + 1) as f64 * self.h
    }

    /// `c_m = h Σ f_i φ_m(x_i)` for `m = 1..=n`.
    pub fn coefficients(&self, f: &[f64]) -> Vec<f64> {
        assert_eq!(f.len(), self.n);
        (1..=self.n)
            .map(|m| self.h * bsl_linalg::dot(self.phi(m), f))
            .collect()
    }

    /// `Σ_m c_m φ_m`.
    pub fn synthesize(&self, c: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (m, &cm) in c.iter().enumerate() {
            if cm != 0.0 {
                bsl_linalg::axpy(cm, self.phi(m + 1), &mut out);
            }
        }
        out
    }

    /// Eigenvalues `μ_m = (4/h²) sin²(mπh/2L)` of the discrete `−d²/dx²`.
    pub fn eigenvalue(&self, m: usize) -> f64 {
        let s = (m as f64 * PI * self.h / (2.0 * self.length)).sin();
        4.0 / (self.h * self.h) * s * s
    }

    /// `h Σ f²`.
    pub fn norm_sq(&self, f: &[f64]) -> f64 {
        self.h * bsl_linalg::dot(f, f)
    }
}

/// Mode coefficients `u_k(x)` of a field on the tensor grid of the
/// rectangle.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeDecomposition {
    pub a: f64,
    pub nx: usize,
    pub ny: usize,
    pub hx: f64,
    pub hy: f64,
    /// `modes[k-1][i] = u_k(x_i)`.
    pub modes: Vec<Vec<f64>>,
}

impl ModeDecomposition {
    /// `Σ_k e_k(y_j) u_k(x_i)` on the tensor grid, row-major in `j`.
    pub fn reconstruct(&self) -> Vec<f64> {
        let basis = SineBasis::new(self.ny, self.a);
        let mut out = vec![0.0; self.nx * self.ny];
        for (k, uk) in self.modes.iter().enumerate() {
            let e = basis.phi(k + 1);
            for (j, &ej) in e.iter().enumerate() {
                bsl_linalg::axpy(ej, uk, &mut out[j * self.nx..(j + 1) * self.nx]);
            }
        }
        out
    }

    /// `‖u_k‖² = hx Σ_i u_k(x_i)²`.
    pub fn mode_norm_sq(&self, k: usize) -> f64 {
        self.hx * bsl_linalg::dot(&self.modes[k - 1], &self.modes[k - 1])
    }
}

/// Projects `u` (given on the unknowns of `grid`) onto `e_1 .. e_K`.
///
/// The grid must be the full tensor grid of a rectangle of height `a` with
/// Dirichlet nodes in `y`.
pub fn decompose(u: &[f64], grid: &Grid, a: f64, kmax: usize) -> Result<ModeDecomposition> {
    if !grid.is_full() || grid.periodic_y || grid.y_offset != 1.0 {
        return Err(Error::InvalidArgument("decompose needs a full tensor grid with Dirichlet y nodes".into()));
    }
    if ((grid.ny + 1) as f64 * grid.hy - a).abs() > 1e-12 * a {
        return Err(Error::InvalidArgument(format!("grid height does not match a = {a}")));
    }
    if u.len() != grid.len() {
        return Err(Error::Dimension {
            expected: grid.len(),
            got: u.len(),
        });
    }
    if kmax == 0 || kmax > grid.ny {
        return Err(Error::InvalidArgument(format!(
            "mode count must be in 1..={}, got {kmax}",
            grid.ny
        )));
    }
    let full = grid.to_full(u);
    let basis = SineBasis::new(grid.ny, a);
    let nx = grid.nx;
    let modes = (1..=kmax)
        .map(|k| {
            let e = basis.phi(k);
            let mut uk = vec![0.0; nx];
            for (j, &ej) in e.iter().enumerate() {
                bsl_linalg::axpy(grid.hy * ej, &full[j * nx..(j + 1) * nx], &mut uk);
            }
            uk
        })
        .collect();
    Ok(ModeDecomposition {
        a,
        nx,
        ny: grid.ny,
        hx: grid.hx,
        hy: grid.hy,
        modes,
    })
}

/// `u'' − s u = f` on `[0,1]` with `u(0) = u(1) = 0`, where
/// `s = z + (kπ/a)²`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeOdeProblem {
    pub k: usize,
    pub a: f64,
    pub z: f64,
    /// Data on the interior nodes `x_i = i/(n+1)`.
    pub f: Vec<f64>,
}

impl ModeOdeProblem {
    pub fn shift(&self) -> f64 {
        self.z + (self.k as f64 * PI / self.a).powi(2)
    }
}

/// Relative distance below which `−s` counts as a discrete Dirichlet
/// eigenvalue.
pub const RESONANCE_TOL: f64 = 1e-6;

/// Nearest discrete eigenvalue `μ_m` to `−s` and the gap to it.
fn nearest_resonance(basis: &SineBasis, s: f64) -> (f64, f64) {
    (1..=basis.n)
        .map(|m| {
            let mu = basis.eigenvalue(m);
            (mu, (-s - mu).abs())
        })
        .min_by(|p, q| p.1.total_cmp(&q.1))
        .expect("nonempty basis")
}

/// Solves the mode equation by a tridiagonal factorization, falling back
/// to the sine-spectral solve if elimination breaks down.
pub fn solve_mode_ode(prob: &ModeOdeProblem) -> Result<Vec<f64>> {
    solve_shifted(&prob.f, prob.shift())
}

/// `u'' − s u = f` with homogeneous Dirichlet data.
pub fn solve_shifted(f: &[f64], s: f64) -> Result<Vec<f64>> {
    let n = f.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty data".into()));
    }
    let basis = SineBasis::unit(n);
    let (mu, gap) = nearest_resonance(&basis, s);
    if gap < RESONANCE_TOL * mu.max(1.0) {
        return Err(Error::ResonantShift {
            shift: -s,
            eigenvalue: mu,
            gap,
        });
    }
    let w = 1.0 / (basis.h * basis.h);
    let off = vec![w; n - 1];
    let diag = vec![-2.0 * w - s; n];
    match solve_tridiagonal(&off, &diag, &off, f) {
        Ok(u) if ode_residual(&u, f, s, w) <= 1e-10 => Ok(u),
        Ok(_) | Err(LinalgError::SingularTridiagonal { .. }) => Ok(spectral_solve(&basis, f, s, false)),
        Err(e) => Err(e.into()),
    }
}

/// `‖u'' − s u − f‖ / max(‖f‖, tiny)` with the three-point second difference.
fn ode_residual(u: &[f64], f: &[f64], s: f64, w: f64) -> f64 {
    let n = u.len();
    let mut r2 = 0.0;
    for i in 0..n {
        let left = if i > 0 { u[i - 1] } else { 0.0 };
        let right = if i + 1 < n { u[i + 1] } else { 0.0 };
        let r = w * (left - 2.0 * u[i] + right) - s * u[i] - f[i];
        r2 += r * r;
    }
    r2.sqrt() / bsl_linalg::norm2(f).max(f64::MIN_POSITIVE)
}

/// Minimum-norm least-squares solution: components on (near-)resonant
/// sine modes are set to zero.
pub fn solve_mode_ode_lsq(prob: &ModeOdeProblem) -> Vec<f64> {
    let basis = SineBasis::unit(prob.f.len());
    spectral_solve(&basis, &prob.f, prob.shift(), true)
}

fn spectral_solve(basis: &SineBasis, f: &[f64], s: f64, drop_resonant: bool) -> Vec<f64> {
    let c = basis.coefficients(f);
    let u: Vec<f64> = c
        .iter()
        .enumerate()
        .map(|(i, &cm)| {
            let mu = basis.eigenvalue(i + 1);
            let d = -mu - s;
            if drop_resonant && d.abs() < RESONANCE_TOL * mu.max(1.0) {
                0.0
            } else {
                cm / d
            }
        })
        .collect();
    basis.synthesize(&u)
}

/// Squared spectral `H⁻¹` norm `Σ_m c_m² / (mπ)²` on `[0,1]`.
pub fn h_minus1_norm_sq(f: &[f64]) -> f64 {
    let basis = SineBasis::unit(f.len());
    basis
        .coefficients(f)
        .iter()
        .enumerate()
        .map(|(i, c)| c * c / ((i + 1) as f64 * PI).powi(2))
        .sum()
}

pub fn h_minus1_norm(f: &[f64]) -> f64 {
    h_minus1_norm_sq(f).sqrt()
}

/// Interval `ω_x` of the control estimate and its node mask.
fn omega_mask(basis: &SineBasis, omega: (f64, f64)) -> Result<Vec<bool>> {
    let (lo, hi) = omega;
    if !(lo >= 0.0 && hi <= 1.0 && hi > lo) {
        return Err(Error::InvalidArgument(format!("ω_x must be a subinterval of [0,1], got ({lo}, {hi})")));
    }
    let mask: Vec<bool> = (0..basis.n).map(|i| basis.x(i) > lo && basis.x(i) < hi).collect();
    if !mask.contains(&true) {
        return Err(Error::NoGridSupport);
    }
    Ok(mask)
}

/// `‖u‖² / (‖f‖²_{H⁻¹} + ‖u‖²_ω)`, or `None` when both `u` and `f` vanish.
pub fn control_ratio(u: &[f64], f: &[f64], omega: (f64, f64)) -> Result<Option<f64>> {
    let basis = SineBasis::unit(u.len());
    let mask = omega_mask(&basis, omega)?;
    Ok(ratio_with(&basis, &mask, u, f))
}

fn ratio_with(basis: &SineBasis, mask: &[bool], u: &[f64], f: &[f64]) -> Option<f64> {
    let num = basis.norm_sq(u);
    let on: f64 = u.iter().zip(mask).filter(|(_, &m)| m).map(|(x, _)| x * x).sum::<f64>() * basis.h;
    let den = h_minus1_norm_sq(f) + on;
    (num > 0.0 && den > 0.0).then(|| num / den)
}

/// Settings of the per-mode control search.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSearch {
    pub a: f64,
    pub z_range: (f64, f64),
    pub omega: (f64, f64),
    /// Number of `z` values, each paired with one random `f`.
    pub samples: usize,
    /// Interior nodes of the `x` grid.
    pub n: usize,
    /// Dimension of the sine subspace of the worst-case search.
    pub basis_dim: usize,
    pub seed: u64,
}

impl ControlSearch {
    pub fn new(a: f64, z_range: (f64, f64), omega: (f64, f64), samples: usize) -> Self {
        Self {
            a,
            z_range,
            omega,
            samples,
            n: 255,
            basis_dim: 64,
            seed: 7,
        }
    }

    /// The `z` values scanned: an even grid over the range plus every point
    /// of the range within the resonance tolerance band of some `μ_m`.
    pub fn z_values(&self, k: usize) -> Vec<f64> {
        let (z0, z1) = self.z_range;
        let mut zs: Vec<f64> = if self.samples == 1 {
            vec![z0]
        } else {
            (0..self.samples)
                .map(|i| z0 + (z1 - z0) * i as f64 / (self.samples - 1) as f64)
                .collect()
        };
        let basis = SineBasis::unit(self.n);
        let kk = (k as f64 * PI / self.a).powi(2);
        for m in 1..=self.n {
            // resonance when z = −μ_m − (kπ/a)²
            let zr = -basis.eigenvalue(m) - kk;
            let nudge = 2.0 * RESONANCE_TOL * basis.eigenvalue(m).max(1.0);
            if zr + nudge >= z0 && zr + nudge <= z1 {
                zs.push(zr + nudge);
            }
        }
        zs
    }
}

/// One `(z, ratio)` observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlSample {
    pub z: f64,
    pub ratio: f64,
    /// True for the worst case over the sine subspace, false for a random `f`.
    pub worst_case: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeControl {
    pub k: usize,
    pub samples: Vec<ControlSample>,
    /// Maximum observed ratio.
    pub constant: f64,
}

/// Largest `‖u‖² / (‖f‖²_{H⁻¹} + ‖u‖²_ω)` over `u` in the span of the first
/// `d` sine modes with `f = u'' − s u`.
///
/// With `u = Σ g_m φ_m` the quotient is `|g|² / gᵀBg`, where
/// `B = diag((μ_m + s)²/(mπ)²) + W` and `W_ml = h Σ_{x∈ω} φ_m φ_l`; the
/// supremum is `1/λ_min(B)`. Returns it with the maximizing `u`.
pub fn worst_case_ratio(basis: &SineBasis, mask: &[bool], s: f64, d: usize) -> Result<(f64, Vec<f64>)> {
    let d = d.min(basis.n);
    let mut b = vec![0.0; d * d];
    for m in 1..=d {
        for l in 1..=m {
            let w: f64 = basis
                .phi(m)
                .iter()
                .zip(basis.phi(l))
                .zip(mask)
                .filter(|(_, &on)| on)
                .map(|((p, q), _)| p * q)
                .sum::<f64>()
                * basis.h;
            b[(m - 1) * d + (l - 1)] = w;
            b[(l - 1) * d + (m - 1)] = w;
        }
        let r = (basis.eigenvalue(m) + s) / (m as f64 * PI);
        b[(m - 1) * d + (m - 1)] += r * r;
    }
    let eig = symmetric_eigen(&DenseMatrix::from_row_major(d, b)?)?;
    let mut g = eig.vector(0).to_vec();
    g.resize(basis.n, 0.0);
    Ok((1.0 / eig.values[0], basis.synthesize(&g)))
}

/// Empirical control constant `C(k)` of the mode equation over the `z`
/// values of `search`.
pub fn mode_control_constant(k: usize, search: &ControlSearch) -> Result<ModeControl> {
    if k == 0 {
        return Err(Error::InvalidArgument("mode index must be positive".into()));
    }
    if search.samples == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let basis = SineBasis::unit(search.n);
    let mask = omega_mask(&basis, search.omega)?;
    let mut rng = ChaCha8Rng::seed_from_u64(search.seed ^ (k as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut samples = Vec::new();
    for z in search.z_values(k) {
        let prob = ModeOdeProblem {
            k,
            a: search.a,
            z,
            f: (0..search.n).map(|_| StandardNormal.sample(&mut rng)).collect(),
        };
        let u = match solve_mode_ode(&prob) {
            Ok(u) => u,
            Err(Error::ResonantShift { .. }) => solve_mode_ode_lsq(&prob),
            Err(e) => return Err(e),
        };
        if let Some(ratio) = ratio_with(&basis, &mask, &u, &prob.f) {
            samples.push(ControlSample {
                z,
                ratio,
                worst_case: false,
            });
        }
        let (ratio, _) = worst_case_ratio(&basis, &mask, prob.shift(), search.basis_dim)?;
        samples.push(ControlSample {
            z,
            ratio,
            worst_case: true,
        });
    }
    let constant = samples.iter().map(|s| s.ratio).fold(0.0, f64::max);
    Ok(ModeControl { k, samples, constant })
}

/// `C(k)` for every `k` in `ks`, computed in parallel, in the order given.
pub fn control_table(ks: &[usize], search: &ControlSearch) -> Result<Vec<ModeControl>> {
    ks.par_iter().map(|&k| mode_control_constant(k, search)).collect()
}

/// CSV with columns `k, z, ratio, C_running_max`.
pub fn control_csv(table: &[ModeControl]) -> CsvTable {
    let mut csv = CsvTable::new(&["k", "z", "ratio", "C_running_max"]);
    let mut running = 0.0f64;
    for mc in table {
        for s in &mc.samples {
            running = running.max(s.ratio);
            csv.push(vec![
                mc.k.to_string(),
                fmt_f64(s.z),
                fmt_f64(s.ratio),
                fmt_f64(running),
            ]);
        }
    }
    csv
}
