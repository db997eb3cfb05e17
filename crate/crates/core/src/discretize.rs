//! Masked uniform grids and the five-point discrete Laplacian.
//!
//! Dirichlet axes use vertex-centred nodes `x_i = i h`, `h = L/(n+1)`;
//! Neumann and periodic axes use cell-centred nodes `x_i = (i + 1/2) h`,
//! `h = L/n`, so a reflecting wall sits halfway between a node and its
//! ghost. Curved boundaries are rendered by staircase exclusion.

use std::io::Write;

use bsl_linalg::CsrMatrix;

use crate::error::{Error, Result};
use crate::geometry::{Bc, DomainSpec, Point};

const OUTSIDE: usize = usize::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub hx: f64,
    pub hy: f64,
    /// Node `i` sits at `x = (i + x_offset) hx`.
    pub x_offset: f64,
    pub y_offset: f64,
    pub periodic_x: bool,
    pub periodic_y: bool,
    mask: Vec<bool>,
    index: Vec<usize>,
    nodes: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
struct Axis {
    n: usize,
    h: f64,
    offset: f64,
    periodic: bool,
}

impl Axis {
    fn new(bc: Bc, length: f64, resolution: usize) -> Self {
        match bc {
            Bc::Dirichlet => {
                let n = ((length * (resolution + 1) as f64).round() as usize).saturating_sub(1);
                Self {
                    n,
                    h: length / (n + 1) as f64,
                    offset: 1.0,
                    periodic: false,
                }
            }
            Bc::Neumann | Bc::Periodic => {
                let n = ((length * resolution as f64).round() as usize).max(1);
                Self {
                    n,
                    h: length / n as f64,
                    offset: 0.5,
                    periodic: bc == Bc::Periodic,
                }
            }
        }
    }
}

impl Grid {
    fn from_axes(x: Axis, y: Axis, inside: impl Fn(Point) -> bool) -> Result<Self> {
        let mut g = Grid {
            nx: x.n,
            ny: y.n,
            hx: x.h,
            hy: y.h,
            x_offset: x.offset,
            y_offset: y.offset,
            periodic_x: x.periodic,
            periodic_y: y.periodic,
            mask: Vec::with_capacity(x.n * y.n),
            index: vec![OUTSIDE; x.n * y.n],
            nodes: Vec::new(),
        };
        for j in 0..y.n {
            for i in 0..x.n {
                g.mask.push(inside(g.position(i, j)));
            }
        }
        for (flat, &m) in g.mask.iter().enumerate() {
            if m {
                g.index[flat] = g.nodes.len();
                g.nodes.push(flat);
            }
        }
        if g.nodes.len() < 4 {
            return Err(Error::TooFewNodes(g.nodes.len()));
        }
        Ok(g)
    }

    /// Number of interior nodes (unknowns).
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Spacing along x.
    pub fn h(&self) -> f64 {
        self.hx
    }

    /// Quadrature weight of one node.
    pub fn cell_area(&self) -> f64 {
        self.hx * self.hy
    }

    pub fn x_coord(&self, i: usize) -> f64 {
        (i as f64 + self.x_offset) * self.hx
    }

    pub fn y_coord(&self, j: usize) -> f64 {
        (j as f64 + self.y_offset) * self.hy
    }

    pub fn position(&self, i: usize, j: usize) -> Point {
        Point::new(self.x_coord(i), self.y_coord(j))
    }

    /// Grid coordinates of unknown `k`.
    pub fn node(&self, k: usize) -> (usize, usize) {
        let flat = self.nodes[k];
        (flat % self.nx, flat / self.nx)
    }

    pub fn node_position(&self, k: usize) -> Point {
        let (i, j) = self.node(k);
        self.position(i, j)
    }

    pub fn linear_index(&self, i: usize, j: usize) -> Option<usize> {
        if i >= self.nx || j >= self.ny {
            return None;
        }
        let k = self.index[j * self.nx + i];
        (k != OUTSIDE).then_some(k)
    }

    /// Interior mask over all `nx * ny` nodes, row-major in `j`.
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// True when every node of the tensor grid is interior.
    pub fn is_full(&self) -> bool {
        self.nodes.len() == self.nx * self.ny
    }

    /// Scatters unknowns onto the full tensor grid, zero outside.
    pub fn to_full(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.nx * self.ny];
        for (k, &flat) in self.nodes.iter().enumerate() {
            out[flat] = u[k];
        }
        out
    }

    /// Samples `f` at the interior nodes.
    pub fn sample(&self, f: impl Fn(Point) -> f64) -> Vec<f64> {
        (0..self.len()).map(|k| f(self.node_position(k))).collect()
    }

    /// Grid-weighted inner product `hx hy Σ uᵢ vᵢ`.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.cell_area() * bsl_linalg::dot(u, v)
    }

    pub fn norm(&self, u: &[f64]) -> f64 {
        self.inner(u, u).sqrt()
    }
}

/// Uniform grid over the fundamental domain with the domain mask applied.
pub fn build_grid(domain: &DomainSpec, resolution: usize) -> Result<Grid> {
    domain.validate()?;
    if resolution == 0 {
        return Err(Error::InvalidArgument("resolution must be positive".into()));
    }
    let inside = |p: Point| domain.contains(p);
    match domain {
        DomainSpec::Rectangle { height, bc_x, bc_y } => Grid::from_axes(
            Axis::new(*bc_x, 1.0, resolution),
            Axis::new(*bc_y, *height, resolution),
            inside,
        ),
        DomainSpec::Stadium { height, .. } => {
            let h = 1.0 / (resolution + 1) as f64;
            let kmin = (-height / 2.0 / h).floor() as i64 + 1;
            let kmax = ((1.0 + height / 2.0) / h).ceil() as i64 - 1;
            let x = Axis {
                n: (kmax - kmin + 1) as usize,
                h,
                offset: kmin as f64,
                periodic: false,
            };
            Grid::from_axes(x, Axis::new(Bc::Dirichlet, *height, resolution), inside)
        }
        DomainSpec::TorusMinusObstacle { .. } => {
            let ax = Axis::new(Bc::Periodic, 1.0, resolution);
            Grid::from_axes(ax, ax, inside)
        }
        DomainSpec::SquareMinusObstacle { outer_bc, .. } => {
            let ax = Axis::new(*outer_bc, 1.0, resolution);
            Grid::from_axes(ax, ax, inside)
        }
        DomainSpec::Barrier {
            height,
            slit,
            outer_bc,
            ..
        } => {
            let x = Axis::new(*outer_bc, 1.0, resolution);
            let y = Axis::new(*outer_bc, *height, resolution);
            let [a, b] = *slit;
            // the slit occupies the nearest grid line
            let on_slit = |p: Point| {
                if a.x == b.x {
                    (p.x - a.x).abs() <= x.h / 2.0 && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
                } else {
                    (p.y - a.y).abs() <= y.h / 2.0 && p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x)
                }
            };
            Grid::from_axes(x, y, |p| inside(p) && !on_slit(p))
        }
    }
}

/// Symmetric sparse operator on the interior nodes of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    pub matrix: CsrMatrix,
    pub symmetric: bool,
    /// Quadrature weight of the grid-weighted inner product.
    pub cell_area: f64,
}

impl SparseOperator {
    pub fn new(matrix: CsrMatrix, cell_area: f64) -> Self {
        let symmetric = matrix.is_symmetric();
        Self {
            matrix,
            symmetric,
            cell_area,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: v.len(),
            });
        }
        Ok(self.matrix.mul_vec(v)?)
    }

    /// `A + c I`.
    pub fn shifted(&self, c: f64) -> Self {
        Self::new(self.matrix.shifted(c), self.cell_area)
    }

    /// Writes `row col value` triplets with 17 significant digits.
    pub fn write_triplets<W: Write>(&self, w: W) -> std::io::Result<()> {
        self.matrix.write_triplets(w)
    }
}

/// Matrix-vector product.
pub fn apply(op: &SparseOperator, v: &[f64]) -> Result<Vec<f64>> {
    op.apply(v)
}

/// Boundary condition on the link from an interior node to an excluded
/// neighbour at `p`; `off_box` marks neighbours beyond the tensor grid.
fn dropped_link_bc(domain: &DomainSpec, p: Point, off_box: bool) -> Bc {
    match domain {
        DomainSpec::Rectangle { bc_x, bc_y, height } => {
            let eps = 1e-9;
            if p.x <= eps || p.x >= 1.0 - eps {
                *bc_x
            } else {
                debug_assert!(p.y <= eps || p.y >= *height - eps);
                *bc_y
            }
        }
        DomainSpec::Stadium { bc, .. } => *bc,
        DomainSpec::TorusMinusObstacle { obstacle_bc, .. } => *obstacle_bc,
        DomainSpec::SquareMinusObstacle {
            obstacle,
            outer_bc,
            obstacle_bc,
        } => {
            if !off_box && obstacle.contains_closed(p) {
                *obstacle_bc
            } else {
                *outer_bc
            }
        }
        DomainSpec::Barrier {
            outer_bc, slit_bc, ..
        } => {
            // every excluded node inside the box belongs to the slit
            if off_box {
                *outer_bc
            } else {
                *slit_bc
            }
        }
    }
}

/// Five-point discrete Laplacian `A ≈ -Δ` on the interior nodes.
///
/// Dirichlet links to excluded neighbours are dropped (zero exterior
/// value), Neumann links use a ghost equal to the node value, periodic
/// axes wrap.
pub fn assemble_laplacian(domain: &DomainSpec, grid: &Grid) -> Result<SparseOperator> {
    let n = grid.len();
    let mut triplets = Vec::with_capacity(5 * n);
    let wx = 1.0 / (grid.hx * grid.hx);
    let wy = 1.0 / (grid.hy * grid.hy);
    for k in 0..n {
        let (i, j) = grid.node(k);
        let mut diag = 0.0;
        let steps: [(i64, i64, f64); 4] = [(-1, 0, wx), (1, 0, wx), (0, -1, wy), (0, 1, wy)];
        for (di, dj, w) in steps {
            let (ii, jj) = (i as i64 + di, j as i64 + dj);
            let wrap = |v: i64, len: usize, periodic: bool| -> Option<usize> {
                if (0..len as i64).contains(&v) {
                    Some(v as usize)
                } else if periodic {
                    Some(v.rem_euclid(len as i64) as usize)
                } else {
                    None
                }
            };
            let nb = wrap(ii, grid.nx, grid.periodic_x)
                .zip(wrap(jj, grid.ny, grid.periodic_y));
            let neighbour = nb.and_then(|(a, b)| grid.linear_index(a, b));
            match neighbour {
                Some(m) => {
                    diag += w;
                    triplets.push((k, m, -w));
                }
                None => {
                    let p = Point::new(
                        (ii as f64 + grid.x_offset) * grid.hx,
                        (jj as f64 + grid.y_offset) * grid.hy,
                    );
                    match dropped_link_bc(domain, p, nb.is_none()) {
                        Bc::Dirichlet => diag += w,
                        Bc::Neumann => {}
                        Bc::Periodic => {
                            return Err(Error::MixedBoundary {
                                i,
                                j,
                                reason: "periodic condition on a boundary link".into(),
                            })
                        }
                    }
                }
            }
        }
        triplets.push((k, k, diag));
    }
    let matrix = CsrMatrix::from_triplets(n, &triplets)?;
    Ok(SparseOperator::new(matrix, grid.cell_area()))
}
