//! Billiard domains, boundary pieces, control regions and rational corridors.
//!
//! Coordinates are dimensionless. Rectangle-type domains contain
//! `R = [0,1] x [0,a]`; the vertical sides of `R` are `Γ₁` and the
//! horizontal sides are `Γ₂`. Torus coordinates are taken modulo 1.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::discretize::Grid;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Point) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Point) -> f64 {
        (self - o).norm()
    }

    pub fn normalized(self) -> Point {
        self * (1.0 / self.norm())
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Point {
    fn from(v: [f64; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }
}

impl Neg for Point {
    type Output = Point;
    fn neg(self) -> Point {
        Point::new(-self.x, -self.y)
    }
}

/// Distance from `p` to the closed segment `[a, b]`.
pub fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    p.dist(a + ab * t)
}

fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let o = |p: Point, q: Point, r: Point| (q - p).cross(r - p);
    let on = |p: Point, q: Point, r: Point| {
        r.x >= p.x.min(q.x) && r.x <= p.x.max(q.x) && r.y >= p.y.min(q.y) && r.y <= p.y.max(q.y)
    };
    let (d1, d2, d3, d4) = (o(c, d, a), o(c, d, b), o(a, b, c), o(a, b, d));
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on(c, d, a))
        || (d2 == 0.0 && on(c, d, b))
        || (d3 == 0.0 && on(a, b, c))
        || (d4 == 0.0 && on(a, b, d))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bc {
    Dirichlet,
    Neumann,
    Periodic,
}

/// An obstacle removed from a torus or square. Unions need not be
/// connected; an empty union is the obstacle-free case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObstacleSpec {
    Disc { center: Point, radius: f64 },
    Polygon { vertices: Vec<Point> },
    Union { parts: Vec<ObstacleSpec> },
}

impl Default for ObstacleSpec {
    fn default() -> Self {
        Self::disc(Point::new(0.5, 0.5), 0.25)
    }
}

impl ObstacleSpec {
    pub fn disc(center: Point, radius: f64) -> Self {
        Self::Disc { center, radius }
    }

    pub fn none() -> Self {
        Self::Union { parts: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            Self::Union { parts } => parts.iter().all(|p| p.is_empty()),
            _ => false,
        }
    }

    /// Discs and polygons making up the obstacle.
    pub fn leaves(&self) -> Vec<&ObstacleSpec> {
        match self {
            Self::Union { parts } => parts.iter().flat_map(|p| p.leaves()).collect(),
            leaf => vec![leaf],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Disc { center, radius } => {
                if !center.is_finite() || !(radius.is_finite() && *radius > 0.0) {
                    return Err(Error::InvalidDomain(format!(
                        "disc radius must be positive, got {radius}"
                    )));
                }
            }
            Self::Polygon { vertices } => {
                let n = vertices.len();
                if n < 3 || vertices.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidDomain(
                        "polygon needs at least three finite vertices".into(),
                    ));
                }
                if polygon_area(vertices).abs() < 1e-14 {
                    return Err(Error::InvalidDomain("polygon has zero area".into()));
                }
                for i in 0..n {
                    for j in i + 1..n {
                        let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                        if adjacent {
                            continue;
                        }
                        let (a, b) = (vertices[i], vertices[(i + 1) % n]);
                        let (c, d) = (vertices[j], vertices[(j + 1) % n]);
                        if segments_intersect(a, b, c, d) {
                            return Err(Error::InvalidDomain(format!(
                                "polygon edges {i} and {j} intersect"
                            )));
                        }
                    }
                }
            }
            Self::Union { parts } => {
                for p in parts {
                    p.validate()?;
                }
            }
        }
        Ok(())
    }

    /// Membership in the closed obstacle.
    pub fn contains_closed(&self, p: Point) -> bool {
        match self {
            Self::Disc { center, radius } => p.dist(*center) <= *radius,
            Self::Polygon { vertices } => point_in_polygon_closed(vertices, p),
            Self::Union { parts } => parts.iter().any(|o| o.contains_closed(p)),
        }
    }

    /// Distance from `p` to the obstacle boundary; infinite when empty.
    pub fn boundary_distance(&self, p: Point) -> f64 {
        match self {
            Self::Disc { center, radius } => (p.dist(*center) - radius).abs(),
            Self::Polygon { vertices } => (0..vertices.len())
                .map(|i| segment_distance(p, vertices[i], vertices[(i + 1) % vertices.len()]))
                .fold(f64::INFINITY, f64::min),
            Self::Union { parts } => parts
                .iter()
                .map(|o| o.boundary_distance(p))
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// Axis-aligned bounding box, `None` when empty.
    pub fn bounding_box(&self) -> Option<(Point, Point)> {
        match self {
            Self::Disc { center, radius } => Some((
                Point::new(center.x - radius, center.y - radius),
                Point::new(center.x + radius, center.y + radius),
            )),
            Self::Polygon { vertices } => {
                let mut lo = Point::new(f64::INFINITY, f64::INFINITY);
                let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
                for v in vertices {
                    lo = Point::new(lo.x.min(v.x), lo.y.min(v.y));
                    hi = Point::new(hi.x.max(v.x), hi.y.max(v.y));
                }
                Some((lo, hi))
            }
            Self::Union { parts } => parts.iter().filter_map(|o| o.bounding_box()).reduce(
                |(l1, h1), (l2, h2)| {
                    (
                        Point::new(l1.x.min(l2.x), l1.y.min(l2.y)),
                        Point::new(h1.x.max(h2.x), h1.y.max(h2.y)),
                    )
                },
            ),
        }
    }

    /// Projection of each leaf onto the line through `origin` with unit
    /// normal `normal`, as closed intervals of signed offsets.
    fn shadows(&self, origin: Point, normal: Point) -> Vec<(f64, f64)> {
        self.leaves()
            .into_iter()
            .map(|leaf| match leaf {
                Self::Disc { center, radius } => {
                    let o = (*center - origin).dot(normal);
                    (o - radius, o + radius)
                }
                Self::Polygon { vertices } => vertices.iter().fold(
                    (f64::INFINITY, f64::NEG_INFINITY),
                    |(lo, hi), v| {
                        let o = (*v - origin).dot(normal);
                        (lo.min(o), hi.max(o))
                    },
                ),
                Self::Union { .. } => unreachable!("leaves are discs or polygons"),
            })
            .collect()
    }
}

fn polygon_area(v: &[Point]) -> f64 {
    let n = v.len();
    0.5 * (0..n).map(|i| v[i].cross(v[(i + 1) % n])).sum::<f64>()
}

fn point_in_polygon_closed(v: &[Point], p: Point) -> bool {
    let n = v.len();
    let mut inside = false;
    for i in 0..n {
        let (a, b) = (v[i], v[(i + 1) % n]);
        if segment_distance(p, a, b) <= 1e-12 {
            return true;
        }
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                inside = !inside;
            }
        }
    }
    inside
}

fn default_height() -> f64 {
    1.0
}

/// A billiard table with a boundary condition on each boundary piece.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainSpec {
    /// `[0,1] x [0,a]`; `bc_x` applies on `x = 0, 1`, `bc_y` on `y = 0, a`.
    Rectangle {
        #[serde(default = "default_height")]
        height: f64,
        bc_x: Bc,
        bc_y: Bc,
    },
    /// `[0,1] x [0,a]` capped by half-discs of radius `a/2` on both sides.
    Stadium {
        #[serde(default = "default_height")]
        height: f64,
        bc: Bc,
    },
    /// Unit torus with the obstacle removed.
    TorusMinusObstacle {
        #[serde(default)]
        obstacle: ObstacleSpec,
        obstacle_bc: Bc,
    },
    /// Unit square with the obstacle removed.
    SquareMinusObstacle {
        #[serde(default)]
        obstacle: ObstacleSpec,
        outer_bc: Bc,
        obstacle_bc: Bc,
    },
    /// `[0,1] x [0,a]` with an axis-aligned slit segment.
    Barrier {
        #[serde(default = "default_height")]
        height: f64,
        slit: [Point; 2],
        outer_bc: Bc,
        slit_bc: Bc,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryPiece {
    /// Vertical sides `x = 0, 1` of the rectangular part.
    Gamma1,
    /// Horizontal sides `y = 0, a` of the rectangular part.
    Gamma2,
    Obstacle,
    Slit,
    /// Remaining outer boundary (stadium arcs, square sides).
    Outer,
}

impl BoundaryPiece {
    /// Tie-break order for points near several pieces.
    pub const PRIORITY: [BoundaryPiece; 5] = [
        BoundaryPiece::Obstacle,
        BoundaryPiece::Slit,
        BoundaryPiece::Gamma1,
        BoundaryPiece::Gamma2,
        BoundaryPiece::Outer,
    ];
}

const IMAGE_SHIFTS: [(f64, f64); 9] = [
    (0.0, 0.0),
    (-1.0, -1.0),
    (-1.0, 0.0),
    (-1.0, 1.0),
    (0.0, -1.0),
    (0.0, 1.0),
    (1.0, -1.0),
    (1.0, 0.0),
    (1.0, 1.0),
];

impl DomainSpec {
    pub fn stadium(height: f64, bc: Bc) -> Self {
        Self::Stadium { height, bc }
    }

    /// Unit torus minus the default disc (center `(0.5, 0.5)`, radius 0.25).
    pub fn sinai(bc: Bc) -> Self {
        Self::TorusMinusObstacle {
            obstacle: ObstacleSpec::default(),
            obstacle_bc: bc,
        }
    }

    pub fn unit_square(bc: Bc) -> Self {
        Self::Rectangle {
            height: 1.0,
            bc_x: bc,
            bc_y: bc,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check_height = |a: f64| {
            if a.is_finite() && a > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidDomain(format!("height must be positive, got {a}")))
            }
        };
        let no_periodic = |bc: Bc, what: &str| {
            if bc == Bc::Periodic {
                Err(Error::InvalidDomain(format!("{what} cannot be periodic")))
            } else {
                Ok(())
            }
        };
        match self {
            Self::Rectangle { height, .. } => check_height(*height),
            Self::Stadium { height, bc } => {
                check_height(*height)?;
                no_periodic(*bc, "stadium boundary")
            }
            Self::TorusMinusObstacle {
                obstacle,
                obstacle_bc,
            } => {
                no_periodic(*obstacle_bc, "obstacle boundary")?;
                check_obstacle_inside(obstacle)
            }
            Self::SquareMinusObstacle {
                obstacle,
                outer_bc,
                obstacle_bc,
            } => {
                no_periodic(*obstacle_bc, "obstacle boundary")?;
                if *outer_bc == Bc::Periodic {
                    return Err(Error::InvalidDomain(
                        "a periodic square is the torus variant".into(),
                    ));
                }
                check_obstacle_inside(obstacle)
            }
            Self::Barrier {
                height,
                slit,
                outer_bc,
                slit_bc,
            } => {
                check_height(*height)?;
                no_periodic(*slit_bc, "slit")?;
                no_periodic(*outer_bc, "barrier outer boundary")?;
                let [a, b] = *slit;
                let vertical = a.x == b.x && a.y != b.y;
                let horizontal = a.y == b.y && a.x != b.x;
                if !(vertical || horizontal) {
                    return Err(Error::InvalidDomain(
                        "slit must be a non-degenerate axis-aligned segment".into(),
                    ));
                }
                let inside = |p: Point| {
                    (0.0..=1.0).contains(&p.x) && (0.0..=*height).contains(&p.y)
                };
                if !inside(a) || !inside(b) {
                    return Err(Error::InvalidDomain("slit leaves the rectangle".into()));
                }
                let on_side = (vertical && (a.x == 0.0 || a.x == 1.0))
                    || (horizontal && (a.y == 0.0 || a.y == *height));
                if on_side {
                    return Err(Error::InvalidDomain("slit lies on the outer boundary".into()));
                }
                Ok(())
            }
        }
    }

    /// Height `a` of the rectangular part (1 for torus and square).
    pub fn height(&self) -> f64 {
        match self {
            Self::Rectangle { height, .. }
            | Self::Stadium { height, .. }
            | Self::Barrier { height, .. } => *height,
            _ => 1.0,
        }
    }

    /// Height of `R = [0,1] x [0,a]` for partially rectangular variants.
    pub fn rectangle_part(&self) -> Option<f64> {
        match self {
            Self::Rectangle { height, .. }
            | Self::Stadium { height, .. }
            | Self::Barrier { height, .. } => Some(*height),
            _ => None,
        }
    }

    pub fn obstacle(&self) -> Option<&ObstacleSpec> {
        match self {
            Self::TorusMinusObstacle { obstacle, .. } | Self::SquareMinusObstacle { obstacle, .. } => {
                Some(obstacle)
            }
            _ => None,
        }
    }

    /// Bounding box of the fundamental domain.
    pub fn bounding_box(&self) -> (Point, Point) {
        match self {
            Self::Stadium { height, .. } => (
                Point::new(-height / 2.0, 0.0),
                Point::new(1.0 + height / 2.0, *height),
            ),
            _ => (Point::new(0.0, 0.0), Point::new(1.0, self.height())),
        }
    }

    /// Period along each axis, if that axis is identified.
    pub fn periods(&self) -> (Option<f64>, Option<f64>) {
        match self {
            Self::TorusMinusObstacle { .. } => (Some(1.0), Some(1.0)),
            Self::Rectangle { height, bc_x, bc_y } => (
                (*bc_x == Bc::Periodic).then_some(1.0),
                (*bc_y == Bc::Periodic).then_some(*height),
            ),
            _ => (None, None),
        }
    }

    /// Maps `p` into the fundamental domain along periodic axes.
    pub fn reduce(&self, p: Point) -> Point {
        let (px, py) = self.periods();
        Point::new(
            px.map_or(p.x, |l| p.x.rem_euclid(l)),
            py.map_or(p.y, |l| p.y.rem_euclid(l)),
        )
    }

    /// Membership in the open billiard domain.
    pub fn contains(&self, p: Point) -> bool {
        let p = self.reduce(p);
        let open = |v: f64, hi: f64| v > 0.0 && v < hi;
        match self {
            Self::Rectangle { height, bc_x, bc_y } => {
                (*bc_x == Bc::Periodic || open(p.x, 1.0))
                    && (*bc_y == Bc::Periodic || open(p.y, *height))
            }
            Self::Stadium { height, .. } => {
                let r = height / 2.0;
                let in_rect = open(p.x, 1.0) && open(p.y, *height);
                in_rect
                    || p.dist(Point::new(0.0, r)) < r
                    || p.dist(Point::new(1.0, r)) < r
            }
            // the obstacle sits strictly inside the unit cell, so the
            // central image decides for reduced points
            Self::TorusMinusObstacle { obstacle, .. } => !obstacle.contains_closed(p),
            Self::SquareMinusObstacle { obstacle, .. } => {
                open(p.x, 1.0) && open(p.y, 1.0) && !obstacle.contains_closed(p)
            }
            Self::Barrier { height, slit, .. } => {
                open(p.x, 1.0) && open(p.y, *height) && segment_distance(p, slit[0], slit[1]) > 0.0
            }
        }
    }

    /// Boundary pieces present in this domain.
    pub fn pieces(&self) -> Vec<BoundaryPiece> {
        use BoundaryPiece::*;
        match self {
            Self::Rectangle { bc_x, bc_y, .. } => {
                let mut v = Vec::new();
                if *bc_x != Bc::Periodic {
                    v.push(Gamma1);
                }
                if *bc_y != Bc::Periodic {
                    v.push(Gamma2);
                }
                v
            }
            Self::Stadium { .. } => vec![Gamma1, Gamma2, Outer],
            Self::TorusMinusObstacle { obstacle, .. } => {
                if obstacle.is_empty() {
                    vec![]
                } else {
                    vec![Obstacle]
                }
            }
            Self::SquareMinusObstacle { obstacle, .. } => {
                if obstacle.is_empty() {
                    vec![Outer]
                } else {
                    vec![Obstacle, Outer]
                }
            }
            Self::Barrier { .. } => vec![Gamma1, Gamma2, Slit],
        }
    }

    /// Boundary condition imposed on a piece.
    pub fn bc_of(&self, piece: BoundaryPiece) -> Option<Bc> {
        use BoundaryPiece::*;
        if !self.pieces().contains(&piece) {
            return None;
        }
        Some(match (self, piece) {
            (Self::Rectangle { bc_x, .. }, Gamma1) => *bc_x,
            (Self::Rectangle { bc_y, .. }, _) => *bc_y,
            (Self::Stadium { bc, .. }, _) => *bc,
            (Self::TorusMinusObstacle { obstacle_bc, .. }, _) => *obstacle_bc,
            (Self::SquareMinusObstacle { obstacle_bc, .. }, Obstacle) => *obstacle_bc,
            (Self::SquareMinusObstacle { outer_bc, .. }, _) => *outer_bc,
            (Self::Barrier { slit_bc, .. }, Slit) => *slit_bc,
            (Self::Barrier { outer_bc, .. }, _) => *outer_bc,
        })
    }

    /// Distance from `p` to a boundary piece (minimum image on the torus).
    pub fn piece_distance(&self, piece: BoundaryPiece, p: Point) -> Option<f64> {
        use BoundaryPiece::*;
        if !self.pieces().contains(&piece) {
            return None;
        }
        let a = self.height();
        let seg = segment_distance;
        let o = Point::new(0.0, 0.0);
        let d = match (self, piece) {
            (_, Gamma1) => seg(p, o, Point::new(0.0, a)).min(seg(p, Point::new(1.0, 0.0), Point::new(1.0, a))),
            (_, Gamma2) => seg(p, o, Point::new(1.0, 0.0)).min(seg(p, Point::new(0.0, a), Point::new(1.0, a))),
            (Self::Stadium { .. }, Outer) => {
                let r = a / 2.0;
                let arc = |c: Point, left: bool| {
                    let on_side = if left { p.x <= c.x } else { p.x >= c.x };
                    if on_side {
                        (p.dist(c) - r).abs()
                    } else {
                        p.dist(Point::new(c.x, 0.0)).min(p.dist(Point::new(c.x, a)))
                    }
                };
                arc(Point::new(0.0, r), true).min(arc(Point::new(1.0, r), false))
            }
            (Self::SquareMinusObstacle { .. }, Outer) => {
                let c = [o, Point::new(1.0, 0.0), Point::new(1.0, 1.0), Point::new(0.0, 1.0)];
                (0..4).map(|i| seg(p, c[i], c[(i + 1) % 4])).fold(f64::INFINITY, f64::min)
            }
            (Self::TorusMinusObstacle { obstacle, .. }, Obstacle) => {
                let q = self.reduce(p);
                IMAGE_SHIFTS
                    .iter()
                    .map(|&(sx, sy)| obstacle.boundary_distance(Point::new(q.x - sx, q.y - sy)))
                    .fold(f64::INFINITY, f64::min)
            }
            (Self::SquareMinusObstacle { obstacle, .. }, Obstacle) => obstacle.boundary_distance(p),
            (Self::Barrier { slit, .. }, Slit) => seg(p, slit[0], slit[1]),
            _ => return None,
        };
        Some(d)
    }

    /// Distance between two points under the domain's periodic
    /// identifications.
    pub fn periodic_distance(&self, p: Point, q: Point) -> f64 {
        let (px, py) = self.periods();
        let wrap = |d: f64, l: Option<f64>| match l {
            Some(l) => {
                let r = d.rem_euclid(l);
                r.min(l - r)
            }
            None => d.abs(),
        };
        wrap(p.x - q.x, px).hypot(wrap(p.y - q.y, py))
    }
}

fn check_obstacle_inside(obstacle: &ObstacleSpec) -> Result<()> {
    obstacle.validate()?;
    if let Some((lo, hi)) = obstacle.bounding_box() {
        if !(lo.x > 0.0 && lo.y > 0.0 && hi.x < 1.0 && hi.y < 1.0) {
            return Err(Error::InvalidDomain(
                "obstacle closure must lie strictly inside the unit cell".into(),
            ));
        }
    }
    Ok(())
}

/// Membership in the open billiard domain.
pub fn contains(domain: &DomainSpec, p: Point) -> bool {
    domain.contains(p)
}

/// Boundary piece within `tol` of `p`; ties go to the first piece in
/// [`BoundaryPiece::PRIORITY`].
pub fn classify_boundary(domain: &DomainSpec, p: Point, tol: f64) -> Result<Option<BoundaryPiece>> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    Ok(BoundaryPiece::PRIORITY
        .into_iter()
        .find(|&piece| domain.piece_distance(piece, p).is_some_and(|d| d <= tol)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegionPrimitive {
    /// Open axis-aligned rectangle.
    Rect { x0: f64, x1: f64, y0: f64, y1: f64 },
    /// `r_inner < dist(x, center) < r_outer`, minimum image on periodic axes.
    Annulus {
        center: Point,
        r_inner: f64,
        r_outer: f64,
    },
    /// Points closer than `delta` to a boundary piece.
    Neighborhood { piece: BoundaryPiece, delta: f64 },
    Whole,
}

/// A union of primitives, intersected with the domain when sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub parts: Vec<RegionPrimitive>,
}

impl Region {
    pub fn whole() -> Self {
        Self {
            parts: vec![RegionPrimitive::Whole],
        }
    }

    pub fn neighborhood(piece: BoundaryPiece, delta: f64) -> Self {
        Self {
            parts: vec![RegionPrimitive::Neighborhood { piece, delta }],
        }
    }

    pub fn rect(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Self {
            parts: vec![RegionPrimitive::Rect { x0, x1, y0, y1 }],
        }
    }

    pub fn annulus(center: Point, r_inner: f64, r_outer: f64) -> Self {
        Self {
            parts: vec![RegionPrimitive::Annulus {
                center,
                r_inner,
                r_outer,
            }],
        }
    }

    /// Annulus reaching `width` into the domain around a disc obstacle.
    pub fn obstacle_annulus(domain: &DomainSpec, width: f64) -> Result<Self> {
        match domain.obstacle().map(|o| o.leaves()) {
            Some(leaves) if leaves.len() == 1 => match leaves[0] {
                ObstacleSpec::Disc { center, radius } => Ok(Self::annulus(
                    *center,
                    (radius - width).max(0.0),
                    radius + width,
                )),
                _ => Err(Error::InvalidRegion("obstacle annulus needs a disc obstacle".into())),
            },
            _ => Err(Error::InvalidRegion("obstacle annulus needs a single disc obstacle".into())),
        }
    }

    pub fn union(mut self, other: Region) -> Self {
        self.parts.extend(other.parts);
        self
    }

    pub fn validate(&self, domain: &DomainSpec) -> Result<()> {
        if self.parts.is_empty() {
            return Err(Error::InvalidRegion("region has no parts".into()));
        }
        for part in &self.parts {
            match *part {
                RegionPrimitive::Rect { x0, x1, y0, y1 } => {
                    if !(x1 > x0 && y1 > y0) {
                        return Err(Error::InvalidRegion(format!(
                            "empty rectangle [{x0}, {x1}] x [{y0}, {y1}]"
                        )));
                    }
                }
                RegionPrimitive::Annulus {
                    r_inner, r_outer, ..
                } => {
                    if !(r_inner >= 0.0 && r_outer > r_inner) {
                        return Err(Error::InvalidRegion(format!(
                            "annulus radii must satisfy 0 <= r1 < r2, got {r_inner}, {r_outer}"
                        )));
                    }
                }
                RegionPrimitive::Neighborhood { piece, delta } => {
                    if !(delta > 0.0) {
                        return Err(Error::InvalidRegion(format!(
                            "neighbourhood width must be positive, got {delta}"
                        )));
                    }
                    if !domain.pieces().contains(&piece) {
                        return Err(Error::InvalidRegion(format!(
                            "domain has no boundary piece {piece:?}"
                        )));
                    }
                }
                RegionPrimitive::Whole => {}
            }
        }
        Ok(())
    }

    /// Membership of `p` in the union of primitives. Domain membership is
    /// not checked.
    pub fn contains_point(&self, domain: &DomainSpec, p: Point) -> bool {
        self.parts.iter().any(|part| match *part {
            RegionPrimitive::Rect { x0, x1, y0, y1 } => {
                let (px, py) = domain.periods();
                let q = domain.reduce(p);
                let shifts = |l: Option<f64>| match l {
                    Some(l) => [-l, 0.0, l],
                    None => [0.0, 0.0, 0.0],
                };
                shifts(px).iter().any(|sx| {
                    shifts(py).iter().any(|sy| {
                        let (x, y) = (q.x + sx, q.y + sy);
                        x > x0 && x < x1 && y > y0 && y < y1
                    })
                })
            }
            RegionPrimitive::Annulus {
                center,
                r_inner,
                r_outer,
            } => {
                let d = domain.periodic_distance(p, center);
                d > r_inner && d < r_outer
            }
            RegionPrimitive::Neighborhood { piece, delta } => {
                domain.piece_distance(piece, p).is_some_and(|d| d < delta)
            }
            RegionPrimitive::Whole => true,
        })
    }
}

/// Interior grid nodes lying in `region`, indexed like the unknowns.
pub fn region_mask(domain: &DomainSpec, region: &Region, grid: &Grid) -> Result<Vec<bool>> {
    region.validate(domain)?;
    let mask: Vec<bool> = (0..grid.len())
        .map(|k| region.contains_point(domain, grid.node_position(k)))
        .collect();
    if !mask.iter().any(|&m| m) {
        return Err(Error::NoGridSupport);
    }
    Ok(mask)
}

/// Flat strip around a closed geodesic of rational direction that avoids
/// the obstacle. Local coordinates: `s` along the geodesic (period
/// `period`), `t` across it (`|t| < half_width`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Corridor {
    pub direction: (i64, i64),
    pub seed: Point,
    pub tangent: Point,
    pub normal: Point,
    pub half_width: f64,
    pub period: f64,
    /// Transverse spacing between neighbouring lifts of the geodesic.
    pub spacing: f64,
}

impl Corridor {
    /// Signed transverse offset of `p` from the nearest lift, in
    /// `[-spacing/2, spacing/2)`.
    pub fn transverse_offset(&self, p: Point) -> f64 {
        let t = (p - self.seed).dot(self.normal);
        let r = t.rem_euclid(self.spacing);
        if r >= self.spacing / 2.0 {
            r - self.spacing
        } else {
            r
        }
    }

    /// Open strip membership on the torus.
    pub fn contains(&self, p: Point) -> bool {
        self.transverse_offset(p).abs() < self.half_width
    }

    /// `(s, t)` with `s` in `[0, period)`.
    pub fn local_coords(&self, p: Point) -> (f64, f64) {
        let t = self.transverse_offset(p);
        let foot = p - self.normal * t;
        let s = (foot - self.seed).dot(self.tangent).rem_euclid(self.period);
        (s, t)
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// Maximal obstacle-free strip around the closed geodesic through `seed` in
/// direction `(p, q)` on the unit torus.
pub fn maximal_rectangle(domain: &DomainSpec, direction: (i64, i64), seed: Point) -> Result<Corridor> {
    let DomainSpec::TorusMinusObstacle { obstacle, .. } = domain else {
        return Err(Error::InvalidArgument("maximal rectangles live on the torus".into()));
    };
    let (p, q) = direction;
    if (p, q) == (0, 0) || gcd(p, q) != 1 {
        return Err(Error::InvalidArgument(format!(
            "direction ({p}, {q}) must be a coprime integer pair"
        )));
    }
    let len = (p as f64).hypot(q as f64);
    let tangent = Point::new(p as f64 / len, q as f64 / len);
    let normal = Point::new(-tangent.y, tangent.x);
    let spacing = 1.0 / len;
    let mut half_width = spacing / 2.0;
    for (lo, hi) in obstacle.shadows(seed, normal) {
        if hi - lo >= spacing {
            return Err(Error::NoCorridor);
        }
        let lo_r = lo.rem_euclid(spacing);
        let hi_r = lo_r + (hi - lo);
        if lo_r == 0.0 || hi_r >= spacing {
            return Err(Error::NoCorridor);
        }
        half_width = half_width.min(lo_r).min(spacing - hi_r);
    }
    if !(half_width > 0.0) {
        return Err(Error::NoCorridor);
    }
    Ok(Corridor {
        direction,
        seed,
        tangent,
        normal,
        half_width,
        period: len,
        spacing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sinai() -> DomainSpec {
        DomainSpec::sinai(Bc::Dirichlet)
    }

    #[test]
    fn contains_examples() {
        let d = sinai();
        assert!(!d.contains(Point::new(0.5, 0.5)));
        assert!(d.contains(Point::new(0.0, 0.0)));
        let s = DomainSpec::stadium(1.0, Bc::Dirichlet);
        assert!(s.contains(Point::new(-0.4, 0.5)));
        assert!(s.contains(Point::new(0.0, 0.5)));
        assert!(!s.contains(Point::new(-0.4, 0.05)));
        assert!(!s.contains(Point::new(0.5, 0.0)));
    }

    #[test]
    fn classify_examples() {
        let s = DomainSpec::stadium(1.0, Bc::Dirichlet);
        let c = |d: &DomainSpec, x, y| classify_boundary(d, Point::new(x, y), 1e-9).unwrap();
        assert_eq!(c(&s, 0.0, 0.5), Some(BoundaryPiece::Gamma1));
        assert_eq!(c(&s, 0.5, 0.0), Some(BoundaryPiece::Gamma2));
        assert_eq!(c(&s, -0.5, 0.5), Some(BoundaryPiece::Outer));
        assert_eq!(c(&s, 0.0, 0.0), Some(BoundaryPiece::Gamma1));
        assert_eq!(c(&s, 0.5, 0.5), None);
        assert_eq!(c(&sinai(), 0.75, 0.5), Some(BoundaryPiece::Obstacle));
        assert!(classify_boundary(&s, Point::new(0.0, 0.0), 0.0).is_err());
    }

    #[test]
    fn validation() {
        assert!(sinai().validate().is_ok());
        let bad = DomainSpec::TorusMinusObstacle {
            obstacle: ObstacleSpec::disc(Point::new(0.5, 0.5), 0.5),
            obstacle_bc: Bc::Dirichlet,
        };
        assert!(bad.validate().is_err());
        let bowtie = ObstacleSpec::Polygon {
            vertices: vec![
                Point::new(0.2, 0.2),
                Point::new(0.8, 0.8),
                Point::new(0.8, 0.2),
                Point::new(0.2, 0.8),
            ],
        };
        assert!(bowtie.validate().is_err());
        assert!(DomainSpec::stadium(0.0, Bc::Dirichlet).validate().is_err());
        assert!(DomainSpec::stadium(1.0, Bc::Periodic).validate().is_err());
    }

    #[test]
    fn nonconvex_polygon_membership() {
        let l_shape = ObstacleSpec::Polygon {
            vertices: vec![
                Point::new(0.2, 0.2),
                Point::new(0.8, 0.2),
                Point::new(0.8, 0.4),
                Point::new(0.4, 0.4),
                Point::new(0.4, 0.8),
                Point::new(0.2, 0.8),
            ],
        };
        l_shape.validate().unwrap();
        assert!(l_shape.contains_closed(Point::new(0.3, 0.7)));
        assert!(!l_shape.contains_closed(Point::new(0.6, 0.6)));
        assert!(l_shape.contains_closed(Point::new(0.8, 0.3)));
        assert!((l_shape.boundary_distance(Point::new(0.6, 0.6)) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn corridor_examples() {
        let c = maximal_rectangle(&sinai_r(0.2), (1, 0), Point::new(0.0, 0.0)).unwrap();
        assert!((c.half_width - 0.3).abs() < 1e-12);
        assert!((c.period - 1.0).abs() < 1e-12);
        let c = maximal_rectangle(&sinai_r(0.45), (1, 0), Point::new(0.0, 0.0)).unwrap();
        assert!((c.half_width - 0.05).abs() < 1e-12);
        assert!(matches!(
            maximal_rectangle(&sinai_r(0.2), (1, 0), Point::new(0.0, 0.5)),
            Err(Error::NoCorridor)
        ));
        assert!(maximal_rectangle(&sinai_r(0.2), (2, 2), Point::new(0.0, 0.0)).is_err());
    }

    fn sinai_r(r: f64) -> DomainSpec {
        DomainSpec::TorusMinusObstacle {
            obstacle: ObstacleSpec::disc(Point::new(0.5, 0.5), r),
            obstacle_bc: Bc::Dirichlet,
        }
    }

    /// Inflates the strip in steps of 1e-4 until a sample on one period of
    /// the strip edge lands in the obstacle.
    fn inflation_oracle(d: &DomainSpec, dir: (i64, i64), seed: Point) -> f64 {
        let len = (dir.0 as f64).hypot(dir.1 as f64);
        let t = Point::new(dir.0 as f64 / len, dir.1 as f64 / len);
        let n = Point::new(-t.y, t.x);
        let mut w = 0.0;
        loop {
            let next = w + 1e-4;
            let hit = (0..20000).any(|i| {
                let s = len * i as f64 / 20000.0;
                [next, -next]
                    .iter()
                    .any(|&off| !d.contains(seed + t * s + n * off))
            });
            if hit {
                return w;
            }
            w = next;
        }
    }

    #[test]
    fn corridor_matches_inflation_oracle() {
        let d = sinai_r(0.2);
        let seed = Point::new(0.0, 0.5);
        let c = maximal_rectangle(&d, (1, 1), seed).unwrap();
        let oracle = inflation_oracle(&d, (1, 1), seed);
        assert!((c.half_width - oracle).abs() <= 2e-4, "{} vs {}", c.half_width, oracle);
        assert!((c.period - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn corridor_interior_is_free_and_maximal() {
        let d = sinai();
        let c = maximal_rectangle(&d, (1, 1), Point::new(0.0, 0.5)).unwrap();
        for i in 0..100 {
            for j in 0..100 {
                let s = c.period * i as f64 / 100.0;
                let t = c.half_width * (2.0 * (j as f64 + 0.5) / 100.0 - 1.0);
                assert!(d.contains(c.seed + c.tangent * s + c.normal * t));
            }
        }
        let eps = 1e-6;
        let touches = (0..200000).any(|i| {
            let s = c.period * i as f64 / 200000.0;
            [1.0, -1.0].iter().any(|&sgn| {
                let p = c.seed + c.tangent * s + c.normal * (sgn * (c.half_width + eps));
                !d.contains(p)
            })
        });
        assert!(touches);
    }

    #[test]
    fn region_validation() {
        let d = sinai();
        assert!(Region::annulus(Point::new(0.5, 0.5), 0.3, 0.3).validate(&d).is_err());
        assert!(Region::neighborhood(BoundaryPiece::Gamma1, 0.1).validate(&d).is_err());
        assert!(Region::neighborhood(BoundaryPiece::Obstacle, 0.0).validate(&d).is_err());
        let r = Region::obstacle_annulus(&d, 0.1).unwrap();
        assert!(r.contains_point(&d, Point::new(0.8, 0.5)));
        assert!(!r.contains_point(&d, Point::new(0.9, 0.5)));
    }

    #[test]
    fn periodic_rect_region_wraps() {
        let d = sinai();
        let r = Region::rect(0.9, 1.1, 0.0, 1.0);
        assert!(r.contains_point(&d, Point::new(0.05, 0.5)));
        assert!(r.contains_point(&d, Point::new(0.95, 0.5)));
        assert!(!r.contains_point(&d, Point::new(0.5, 0.5)));
    }

    proptest! {
        #[test]
        fn torus_membership_is_periodic(x in 0.0f64..1.0, y in 0.0f64..1.0, kx in -3i32..3, ky in -3i32..3) {
            let d = sinai();
            let p = Point::new(x, y);
            let shifted = Point::new(x + kx as f64, y + ky as f64);
            prop_assert_eq!(d.contains(p), d.contains(shifted));
            prop_assert_eq!(d.contains(p), d.contains(p + Point::new(1.0, 0.0)));
            prop_assert_eq!(d.contains(p), d.contains(p + Point::new(0.0, 1.0)));
        }

        #[test]
        fn corridor_seeds_avoid_obstacle(p in -3i64..4, q in -3i64..4, sx in 0.0f64..1.0, sy in 0.0f64..1.0) {
            prop_assume!((p, q) != (0, 0) && gcd(p, q) == 1);
            let d = sinai_r(0.1);
            let seed = Point::new(sx, sy);
            if let Ok(c) = maximal_rectangle(&d, (p, q), seed) {
                for i in 0..200 {
                    let s = c.period * i as f64 / 200.0;
                    for f in [-0.999, 0.0, 0.999] {
                        prop_assert!(d.contains(seed + c.tangent * s + c.normal * (f * c.half_width)));
                    }
                }
            }
        }
    }
}
