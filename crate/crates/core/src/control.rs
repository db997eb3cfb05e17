//! Mass-ratio functionals and the scans built on them.
//!
//! Every ratio is a grid quadrature of `|u|²`; the weight `cell_area`
//! cancels, so ratios are plain sums over node sets.

use bsl_linalg::{axpy, dot, CsrMatrix, LdlFactor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::discretize::{assemble_laplacian, build_grid, Grid, SparseOperator};
use crate::eigensolve::{dense_oracle, solve_lowest, solve_window, EigenPair, SolverOptions};
use crate::error::{Error, Result};
use crate::geometry::{region_mask, segment_distance, BoundaryPiece, Bc, DomainSpec, ObstacleSpec, Point, Region};
use crate::io::{fmt_f64, heatmap_pixels, image_rows, CsvTable};

fn sum_sq(u: &[f64], mask: Option<&[bool]>) -> f64 {
    match mask {
        None => dot(u, u),
        Some(m) => u.iter().zip(m).filter(|(_, &on)| on).map(|(x, _)| x * x).sum(),
    }
}

/// Fraction of the grid mass of `u` inside `region`.
pub fn mass_ratio(u: &[f64], region: &Region, domain: &DomainSpec, grid: &Grid) -> Result<f64> {
    if u.len() != grid.len() {
        return Err(Error::Dimension {
            expected: grid.len(),
            got: u.len(),
        });
    }
    let mask = region_mask(domain, region, grid)?;
    let total = sum_sq(u, None);
    if total == 0.0 {
        return Err(Error::ZeroMass);
    }
    Ok(sum_sq(u, Some(&mask)) / total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScanRow {
    pub index: usize,
    pub lambda: f64,
    pub ratio: f64,
    /// `max_V |u|² / max |u|²`.
    pub peak_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WindowMin {
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub min_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MassScanReport {
    pub rows: Vec<ScanRow>,
    pub min_ratio: f64,
    pub window_minima: Vec<WindowMin>,
    /// Least-squares slope of `ln r` against `ln λ`.
    pub slope: f64,
    /// `1 / min_ratio`.
    pub implied_constant: f64,
}

impl MassScanReport {
    fn from_rows(mut rows: Vec<ScanRow>, window: usize) -> Self {
        rows.sort_by(|p, q| p.lambda.total_cmp(&q.lambda).then(p.index.cmp(&q.index)));
        let min_ratio = rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
        let window_minima = rows
            .chunks(window.max(1))
            .map(|c| WindowMin {
                lambda_lo: c[0].lambda,
                lambda_hi: c[c.len() - 1].lambda,
                min_ratio: c.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min),
            })
            .collect();
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.lambda > 0.0 && r.ratio > 0.0)
            .map(|r| (r.lambda.ln(), r.ratio.ln()))
            .collect();
        Self {
            rows,
            min_ratio,
            window_minima,
            slope: ls_slope(&pts),
            implied_constant: 1.0 / min_ratio,
        }
    }

    /// Columns `index, lambda, ratio, peak_fraction, window_min, slope`.
    pub fn to_csv(&self) -> CsvTable {
        let mut csv = CsvTable::new(&["index", "lambda", "ratio", "peak_fraction", "window_min", "slope"]);
        for r in &self.rows {
            let w = self
                .window_minima
                .iter()
                .find(|w| r.lambda >= w.lambda_lo && r.lambda <= w.lambda_hi)
                .map_or(f64::NAN, |w| w.min_ratio);
            csv.push(vec![
                r.index.to_string(),
                fmt_f64(r.lambda),
                fmt_f64(r.ratio),
                fmt_f64(r.peak_fraction),
                fmt_f64(w),
                fmt_f64(self.slope),
            ]);
        }
        csv
    }
}

/// Least-squares slope through `(x, y)` points; NaN with fewer than two
/// distinct abscissae.
pub fn ls_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        f64::NAN
    } else {
        sxy / sxx
    }
}

/// Nodes of the closed rectangle `[0,1] x [0,a]`.
pub fn rectangle_mask(domain: &DomainSpec, grid: &Grid) -> Result<Vec<bool>> {
    let a = domain
        .rectangle_part()
        .ok_or_else(|| Error::InvalidDomain("domain has no rectangular part".into()))?;
    let eps = 1e-12;
    Ok((0..grid.len())
        .map(|k| {
            let p = grid.node_position(k);
            p.x >= -eps && p.x <= 1.0 + eps && p.y >= -eps && p.y <= a + eps
        })
        .collect())
}

fn check_touches(domain: &DomainSpec, grid: &Grid, mask: &[bool], piece: BoundaryPiece) -> Result<()> {
    let reach = 1.5 * grid.hx.max(grid.hy);
    let touches = (0..grid.len())
        .filter(|&k| mask[k])
        .any(|k| domain.piece_distance(piece, grid.node_position(k)).is_some_and(|d| d <= reach));
    if touches {
        Ok(())
    } else {
        Err(Error::RegionMissesBoundary(format!(
            "control region has no node within {reach:.3e} of {piece:?}"
        )))
    }
}

fn check_pairs(grid: &Grid, pairs: &[EigenPair]) -> Result<()> {
    match pairs.iter().find(|p| p.u.len() != grid.len()) {
        Some(p) => Err(Error::Dimension {
            expected: grid.len(),
            got: p.u.len(),
        }),
        None => Ok(()),
    }
}

fn scan(
    pairs: &[EigenPair],
    num_mask: &[bool],
    den_mask: Option<&[bool]>,
    window: usize,
) -> Result<MassScanReport> {
    let rows = pairs
        .par_iter()
        .enumerate()
        .map(|(index, p)| {
            let den = sum_sq(&p.u, den_mask);
            if den == 0.0 {
                return Err(Error::ZeroMass);
            }
            let peak = p.u.iter().map(|x| x * x).fold(0.0, f64::max);
            let peak_v = p
                .u
                .iter()
                .zip(num_mask)
                .filter(|(_, &on)| on)
                .map(|(x, _)| x * x)
                .fold(0.0, f64::max);
            Ok(ScanRow {
                index,
                lambda: p.lambda,
                ratio: sum_sq(&p.u, Some(num_mask)) / den,
                peak_fraction: if peak > 0.0 { peak_v / peak } else { 0.0 },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MassScanReport::from_rows(rows, window))
}

/// Mass in `V` relative to mass in the rectangle `R`, for each pair.
pub fn theorem1_scan(
    domain: &DomainSpec,
    v: &Region,
    grid: &Grid,
    pairs: &[EigenPair],
    window: usize,
) -> Result<MassScanReport> {
    check_pairs(grid, pairs)?;
    let r_mask = rectangle_mask(domain, grid)?;
    let v_mask = region_mask(domain, v, grid)?;
    check_touches(domain, grid, &v_mask, BoundaryPiece::Gamma1)?;
    scan(pairs, &v_mask, Some(&r_mask), window)
}

/// Mass in `V` relative to total mass, for each pair.
pub fn theorem2_scan(
    domain: &DomainSpec,
    v: &Region,
    grid: &Grid,
    pairs: &[EigenPair],
    window: usize,
) -> Result<MassScanReport> {
    if !matches!(
        domain,
        DomainSpec::TorusMinusObstacle { .. } | DomainSpec::SquareMinusObstacle { .. }
    ) {
        return Err(Error::InvalidDomain("obstacle scans need a torus or square with an obstacle".into()));
    }
    check_pairs(grid, pairs)?;
    let v_mask = region_mask(domain, v, grid)?;
    if domain.obstacle().is_some_and(|o| !o.is_empty()) {
        check_touches(domain, grid, &v_mask, BoundaryPiece::Obstacle)?;
    }
    scan(pairs, &v_mask, None, window)
}

/// Grayscale `|u|²` image over the tensor grid plus the region overlay,
/// both in image row order.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
    pub overlay: Vec<bool>,
}

pub fn heatmap(grid: &Grid, u: &[f64], region_nodes: &[bool]) -> Heatmap {
    let sq: Vec<f64> = u.iter().map(|x| x * x).collect();
    let full = grid.to_full(&sq);
    let over: Vec<f64> = region_nodes.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let over_full: Vec<bool> = grid.to_full(&over).into_iter().map(|x| x > 0.0).collect();
    Heatmap {
        width: grid.nx,
        height: grid.ny,
        pixels: heatmap_pixels(&full, grid.nx, grid.ny),
        overlay: image_rows(&over_full, grid.nx, grid.ny),
    }
}

/// Result of the resolvent estimate at one `λ`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolventCheck {
    pub lambda: f64,
    /// `‖u‖ / (‖f‖ + ‖u 1_V‖)` per trial.
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
    /// True when a least-squares path was taken.
    pub least_squares: bool,
}

/// Largest dimension solved through a dense pseudo-inverse.
pub const DENSE_RESOLVENT_LIMIT: usize = 1600;

/// Solver for `(A − λ) u = f`, least squares on the near-kernel.
pub struct Resolvent {
    a: CsrMatrix,
    lambda: f64,
    kind: ResolventKind,
}

enum ResolventKind {
    Dense { values: Vec<f64>, vectors: Vec<Vec<f64>> },
    Sparse { factor: LdlFactor, sigma: f64, kernel: Vec<Vec<f64>> },
}

impl Resolvent {
    pub fn new(op: &SparseOperator, lambda: f64) -> Result<Self> {
        let scale = op.matrix.gershgorin_bound();
        let singular_tol = 1e-10 * scale.max(1.0);
        let n = op.dim();
        let kind = if n <= DENSE_RESOLVENT_LIMIT {
            let pairs = dense_oracle(op)?;
            let w = op.cell_area.sqrt();
            ResolventKind::Dense {
                values: pairs.iter().map(|p| p.lambda).collect(),
                vectors: pairs.iter().map(|p| p.u.iter().map(|x| x * w).collect()).collect(),
            }
        } else {
            let near = solve_window(op, lambda, 4.min(n), 1e-9)?;
            let w = op.cell_area.sqrt();
            let kernel: Vec<Vec<f64>> = near
                .iter()
                .filter(|p| (p.lambda - lambda).abs() < singular_tol)
                .map(|p| p.u.iter().map(|x| x * w).collect())
                .collect();
            let gap = near
                .iter()
                .map(|p| (p.lambda - lambda).abs())
                .filter(|&d| d >= singular_tol)
                .fold(f64::INFINITY, f64::min);
            // factor slightly off λ when the shift is (nearly) singular
            let step = 1e-3 * gap.min(1.0);
            let shifts: Vec<f64> = if kernel.is_empty() {
                vec![lambda, lambda + step, lambda - 2.0 * step]
            } else {
                vec![lambda + step, lambda - 2.0 * step, lambda + 3.0 * step]
            };
            let (factor, sigma) = shifts
                .iter()
                .find_map(|&s| {
                    LdlFactor::new(&op.matrix.shifted(-s))
                        .ok()
                        .filter(|f| f.pivot_ratio() > 1e-12)
                        .map(|f| (f, s))
                })
                .ok_or(Error::Factorization {
                    shift: lambda,
                    attempts: shifts.len(),
                })?;
            ResolventKind::Sparse { factor, sigma, kernel }
        };
        Ok(Self {
            a: op.matrix.clone(),
            lambda,
            kind,
        })
    }

    /// True when some eigenvalue sits within the singular tolerance of `λ`.
    pub fn is_least_squares(&self) -> bool {
        match &self.kind {
            ResolventKind::Dense { values, .. } => {
                let tol = 1e-10 * self.a.gershgorin_bound().max(1.0);
                values.iter().any(|&v| (v - self.lambda).abs() < tol)
            }
            ResolventKind::Sparse { kernel, .. } => !kernel.is_empty(),
        }
    }

    pub fn solve(&self, f: &[f64]) -> Result<Vec<f64>> {
        let tol = 1e-10 * self.a.gershgorin_bound().max(1.0);
        match &self.kind {
            ResolventKind::Dense { values, vectors } => {
                let mut u = vec![0.0; f.len()];
                for (&mu, v) in values.iter().zip(vectors) {
                    let d = mu - self.lambda;
                    if d.abs() >= tol {
                        axpy(dot(v, f) / d, v, &mut u);
                    }
                }
                Ok(u)
            }
            ResolventKind::Sparse { factor, sigma, kernel } => {
                let project = |x: &mut Vec<f64>| {
                    for v in kernel {
                        let c = dot(v, x);
                        axpy(-c, v, x);
                    }
                };
                let mut rhs = f.to_vec();
                project(&mut rhs);
                let mut u = factor.solve(&rhs)?;
                project(&mut u);
                let rhs_norm = bsl_linalg::norm2(&rhs).max(f64::MIN_POSITIVE);
                // refine toward (A − λ)u = Pf on the complement of the kernel
                let shifted = *sigma != self.lambda;
                for _ in 0..50 {
                    let mut r = self.a.mul_vec(&u)?;
                    axpy(-self.lambda, &u, &mut r);
                    for (ri, bi) in r.iter_mut().zip(&rhs) {
                        *ri = bi - *ri;
                    }
                    project(&mut r);
                    if bsl_linalg::norm2(&r) <= 1e-13 * rhs_norm {
                        break;
                    }
                    let mut du = factor.solve(&r)?;
                    project(&mut du);
                    axpy(1.0, &du, &mut u);
                    if !shifted && bsl_linalg::norm2(&du) <= 1e-15 * bsl_linalg::norm2(&u) {
                        break;
                    }
                }
                Ok(u)
            }
        }
    }
}

/// Empirical resolvent control constant at `λ` over `trials` random unit
/// right-hand sides.
pub fn resolvent_control_check(
    domain: &DomainSpec,
    grid: &Grid,
    op: &SparseOperator,
    lambda: f64,
    v: &Region,
    trials: usize,
    seed: u64,
) -> Result<ResolventCheck> {
    if trials == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    let mask = region_mask(domain, v, grid)?;
    let solver = Resolvent::new(op, lambda)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ratios = Vec::with_capacity(trials);
    for _ in 0..trials {
        let mut f: Vec<f64> = (0..grid.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let nf = grid.norm(&f);
        f.iter_mut().for_each(|x| *x /= nf);
        ratios.push(resolvent_ratio(&solver, grid, &mask, &f)?);
    }
    Ok(ResolventCheck {
        lambda,
        max_ratio: ratios.iter().copied().fold(0.0, f64::max),
        ratios,
        least_squares: solver.is_least_squares(),
    })
}

/// `‖u‖ / (‖f‖ + ‖u 1_V‖)` for the (least-squares) solution of `(A − λ)u = f`.
pub fn resolvent_ratio(solver: &Resolvent, grid: &Grid, mask: &[bool], f: &[f64]) -> Result<f64> {
    let u = solver.solve(f)?;
    let w = grid.cell_area();
    let nu = (w * sum_sq(&u, None)).sqrt();
    let nv = (w * sum_sq(&u, Some(mask))).sqrt();
    let nf = grid.norm(f);
    Ok(nu / (nf + nv))
}

/// The `λ` grid of a resolvent scan: `points` values evenly spread over
/// `[lo, hi]` plus each eigenvalue in range, hit exactly and approached
/// within `1e-6` relative.
pub fn resolvent_lambdas(lo: f64, hi: f64, points: usize, eigenvalues: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points.max(2) - 1) as f64)
        .collect();
    for &e in eigenvalues.iter().filter(|&&e| e >= lo && e <= hi) {
        out.push(e);
        out.push(e * (1.0 + 1e-6));
    }
    out.sort_by(f64::total_cmp);
    out
}

/// Smooth tube cutoff: 1 within `width/2` of the orbit, 0 beyond `width`.
pub fn tube_cutoff(distance: f64, width: f64) -> f64 {
    let t = ((distance - width / 2.0) / (width / 2.0)).clamp(0.0, 1.0);
    1.0 - t * t * (3.0 - 2.0 * t)
}

/// Distance from `p` to a polyline, minimum image on periodic axes.
pub fn polyline_distance(domain: &DomainSpec, orbit: &[Point], p: Point) -> f64 {
    let (px, py) = domain.periods();
    let shifts = |lo: f64, hi: f64, c: f64, per: Option<f64>| -> Vec<f64> {
        match per {
            None => vec![0.0],
            Some(l) => {
                let a = ((lo - c) / l).floor() as i64 - 1;
                let b = ((hi - c) / l).ceil() as i64 + 1;
                (a..=b).map(|k| k as f64 * l).collect()
            }
        }
    };
    let mut best = f64::INFINITY;
    for seg in orbit.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        for sx in shifts(a.x.min(b.x), a.x.max(b.x), p.x, px) {
            for sy in shifts(a.y.min(b.y), a.y.max(b.y), p.y, py) {
                best = best.min(segment_distance(Point::new(p.x + sx, p.y + sy), a, b));
            }
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OrbitRow {
    pub lambda: f64,
    /// `∫ (1 − χ) |u|²` for normalized `u`.
    pub off_tube_mass: f64,
    /// `1 / ln λ`, NaN for `λ <= e`.
    pub inv_log_lambda: f64,
}

/// Off-tube mass of each eigenfunction around a closed orbit.
pub fn orbit_weakness_measure(
    domain: &DomainSpec,
    grid: &Grid,
    orbit: &[Point],
    width: f64,
    pairs: &[EigenPair],
) -> Result<Vec<OrbitRow>> {
    if orbit.len() < 2 || !(width > 0.0) {
        return Err(Error::InvalidArgument("orbit needs two points and a positive tube width".into()));
    }
    check_pairs(grid, pairs)?;
    let off: Vec<f64> = (0..grid.len())
        .map(|k| 1.0 - tube_cutoff(polyline_distance(domain, orbit, grid.node_position(k)), width))
        .collect();
    if off.iter().all(|&x| x == 0.0) {
        return Err(Error::TubeCoversDomain);
    }
    Ok(pairs
        .par_iter()
        .map(|p| {
            let total = dot(&p.u, &p.u);
            let outside: f64 = p.u.iter().zip(&off).map(|(x, o)| o * x * x).sum();
            OrbitRow {
                lambda: p.lambda,
                off_tube_mass: outside / total,
                inv_log_lambda: if p.lambda > std::f64::consts::E {
                    1.0 / p.lambda.ln()
                } else {
                    f64::NAN
                },
            }
        })
        .collect())
}

/// Square with a disc obstacle and Neumann sides against its periodic
/// unfolding: the torus of twice the size carrying four mirrored discs,
/// rescaled to the unit torus (eigenvalues scale by 4).
pub fn reflected_torus(square: &DomainSpec) -> Result<DomainSpec> {
    let DomainSpec::SquareMinusObstacle {
        obstacle,
        outer_bc: Bc::Neumann,
        obstacle_bc,
    } = square
    else {
        return Err(Error::InvalidDomain("reflection needs a square with Neumann sides".into()));
    };
    let leaves = obstacle.leaves();
    let mut parts = Vec::new();
    for leaf in leaves {
        let ObstacleSpec::Disc { center, radius } = leaf else {
            return Err(Error::InvalidDomain("reflection check supports disc obstacles".into()));
        };
        for (mx, my) in [(false, false), (true, false), (false, true), (true, true)] {
            let x = if mx { 2.0 - center.x } else { center.x };
            let y = if my { 2.0 - center.y } else { center.y };
            parts.push(ObstacleSpec::disc(Point::new(x / 2.0, y / 2.0), radius / 2.0));
        }
    }
    Ok(DomainSpec::TorusMinusObstacle {
        obstacle: ObstacleSpec::Union { parts },
        obstacle_bc: *obstacle_bc,
    })
}

/// Pairs `(λ_square, matched torus eigenvalue / 4)` for the lowest `count`
/// square eigenvalues.
pub fn reflection_principle_check(square: &DomainSpec, resolution: usize, count: usize) -> Result<Vec<(f64, f64)>> {
    let torus = reflected_torus(square)?;
    let gs = build_grid(square, resolution)?;
    let gt = build_grid(&torus, 2 * resolution)?;
    let ops = assemble_laplacian(square, &gs)?;
    let opt = assemble_laplacian(&torus, &gt)?;
    let opts = SolverOptions::new(1e-9);
    let sq = solve_lowest(&ops, count, &opts)?;
    sq.iter()
        .map(|p| {
            let t = solve_window(&opt, 4.0 * p.lambda, 1, 1e-9)?;
            Ok((p.lambda, t[0].lambda / 4.0))
        })
        .collect()
}
