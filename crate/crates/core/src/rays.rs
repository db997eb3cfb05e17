//! Billiard flow with specular reflection, computed event by event with
//! closed-form intersections.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DomainSpec, ObstacleSpec, Point, Region, RegionPrimitive};
use crate::io::{fmt_f64, CsvTable};

/// Incidence below this `|⟨d, n⟩|` passes through the boundary.
pub const GRAZING_TOL: f64 = 1e-12;

/// Hits closer than this to the previous reflection on the same wall are
/// the reflection itself.
const SELF_HIT: f64 = 1e-9;
const AHEAD: f64 = -1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
enum ArcSide {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq)]
enum Wall {
    /// `normal` points into the domain unless the wall is two-sided.
    Segment {
        a: Point,
        b: Point,
        normal: Point,
        two_sided: bool,
    },
    /// Circle of which the domain lies inside (`inside`) or outside; an
    /// optional side restricts the arc to `x <= c.x` or `x >= c.x`.
    Circle {
        center: Point,
        radius: f64,
        inside: bool,
        side: Option<ArcSide>,
    },
}

struct Hit {
    t: f64,
    wall: usize,
    normal: Point,
    grazing: bool,
}

impl Wall {
    fn segment(a: Point, b: Point, inward: Point) -> Self {
        Wall::Segment {
            a,
            b,
            normal: inward.normalized(),
            two_sided: false,
        }
    }

    /// First forward intersection of `p + t d`; `min_t` excludes the
    /// reflection just performed.
    fn intersect(&self, p: Point, d: Point, min_t: f64) -> Option<(f64, Point, bool)> {
        match *self {
            Wall::Segment {
                a,
                b,
                normal,
                two_sided,
            } => {
                let mut n = normal;
                let mut dn = d.dot(n);
                if two_sided && dn > 0.0 {
                    n = Point::new(-n.x, -n.y);
                    dn = -dn;
                }
                if dn >= 0.0 || dn.abs() < GRAZING_TOL {
                    return None;
                }
                let t = (a - p).dot(n) / dn;
                if t < min_t {
                    return None;
                }
                let q = p + d * t;
                let e = b - a;
                let s = (q - a).dot(e) / e.dot(e);
                (-1e-12..=1.0 + 1e-12).contains(&s).then_some((t.max(0.0), n, false))
            }
            Wall::Circle {
                center,
                radius,
                inside,
                side,
            } => {
                let w = p - center;
                let b = d.dot(w);
                let c = w.dot(w) - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let t = if inside {
                    // larger root
                    if b <= 0.0 {
                        -b + sq
                    } else {
                        -c / (b + sq)
                    }
                } else {
                    // smaller root, approaching only
                    if b >= 0.0 {
                        return None;
                    }
                    c / (-b + sq)
                };
                if t < min_t {
                    return None;
                }
                let q = p + d * t;
                if let Some(s) = side {
                    let ok = match s {
                        ArcSide::Left => q.x <= center.x,
                        ArcSide::Right => q.x >= center.x,
                    };
                    if !ok {
                        return None;
                    }
                }
                let out = (q - center) * (1.0 / radius);
                let n = if inside { out * -1.0 } else { out };
                let grazing = sq / radius < GRAZING_TOL;
                Some((t.max(0.0), n, grazing))
            }
        }
    }
}

fn obstacle_walls(obstacle: &ObstacleSpec, walls: &mut Vec<Wall>) {
    for leaf in obstacle.leaves() {
        match leaf {
            ObstacleSpec::Disc { center, radius } => walls.push(Wall::Circle {
                center: *center,
                radius: *radius,
                inside: false,
                side: None,
            }),
            ObstacleSpec::Polygon { vertices } => {
                let n = vertices.len();
                let area: f64 = (0..n).map(|i| vertices[i].cross(vertices[(i + 1) % n])).sum();
                for i in 0..n {
                    let (a, b) = (vertices[i], vertices[(i + 1) % n]);
                    let e = b - a;
                    // outward normal of a counter-clockwise polygon
                    let out = Point::new(e.y, -e.x);
                    let out = if area > 0.0 { out } else { out * -1.0 };
                    walls.push(Wall::segment(a, b, out));
                }
            }
            ObstacleSpec::Union { .. } => unreachable!("leaves are never unions"),
        }
    }
}

fn box_walls(width: f64, height: f64, x_walls: bool, y_walls: bool, walls: &mut Vec<Wall>) {
    let (o, bx, by, c) = (
        Point::new(0.0, 0.0),
        Point::new(width, 0.0),
        Point::new(0.0, height),
        Point::new(width, height),
    );
    if x_walls {
        walls.push(Wall::segment(o, by, Point::new(1.0, 0.0)));
        walls.push(Wall::segment(bx, c, Point::new(-1.0, 0.0)));
    }
    if y_walls {
        walls.push(Wall::segment(o, bx, Point::new(0.0, 1.0)));
        walls.push(Wall::segment(by, c, Point::new(0.0, -1.0)));
    }
}

/// Reflecting walls and periodic identifications of a billiard table.
#[derive(Debug, Clone, PartialEq)]
pub struct Billiard {
    domain: DomainSpec,
    walls: Vec<Wall>,
    periods: (Option<f64>, Option<f64>),
}

impl Billiard {
    pub fn new(domain: &DomainSpec) -> Result<Self> {
        domain.validate()?;
        let mut walls = Vec::new();
        match domain {
            DomainSpec::Rectangle { height, .. } => {
                let (px, py) = domain.periods();
                box_walls(1.0, *height, px.is_none(), py.is_none(), &mut walls);
            }
            DomainSpec::Stadium { height, .. } => {
                let r = height / 2.0;
                box_walls(1.0, *height, false, true, &mut walls);
                for (cx, side) in [(0.0, ArcSide::Left), (1.0, ArcSide::Right)] {
                    walls.push(Wall::Circle {
                        center: Point::new(cx, r),
                        radius: r,
                        inside: true,
                        side: Some(side),
                    });
                }
            }
            DomainSpec::TorusMinusObstacle { obstacle, .. } => obstacle_walls(obstacle, &mut walls),
            DomainSpec::SquareMinusObstacle { obstacle, .. } => {
                box_walls(1.0, 1.0, true, true, &mut walls);
                obstacle_walls(obstacle, &mut walls);
            }
            DomainSpec::Barrier { height, slit, .. } => {
                box_walls(1.0, *height, true, true, &mut walls);
                let e = slit[1] - slit[0];
                walls.push(Wall::Segment {
                    a: slit[0],
                    b: slit[1],
                    normal: Point::new(-e.y, e.x).normalized(),
                    two_sided: true,
                });
            }
        }
        Ok(Self {
            domain: domain.clone(),
            walls,
            periods: domain.periods(),
        })
    }

    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    fn next_hit(&self, p: Point, d: Point, last: Option<usize>) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (i, w) in self.walls.iter().enumerate() {
            let min_t = if Some(i) == last { SELF_HIT } else { AHEAD };
            if let Some((t, normal, grazing)) = w.intersect(p, d, min_t) {
                if best.as_ref().is_none_or(|b| t < b.t) {
                    best = Some(Hit {
                        t,
                        wall: i,
                        normal,
                        grazing,
                    });
                }
            }
        }
        best
    }

    /// Time to leave the periodic cell and which axes wrap.
    fn cell_exit(&self, p: Point, d: Point) -> (f64, bool, bool) {
        let axis = |x: f64, v: f64, l: Option<f64>| match l {
            Some(l) if v > 0.0 => ((l - x) / v).max(0.0),
            Some(_) if v < 0.0 => (-x / v).max(0.0),
            _ => f64::INFINITY,
        };
        let tx = axis(p.x, d.x, self.periods.0);
        let ty = axis(p.y, d.y, self.periods.1);
        let t = tx.min(ty);
        let near = |a: f64| a.is_finite() && (a - t).abs() <= 1e-15 * (1.0 + t);
        (t, near(tx), near(ty))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Reflection,
    /// Tangential contact, passed through.
    Grazing,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Event {
    pub t: f64,
    pub point: Point,
    pub incoming: Point,
    pub outgoing: Point,
    pub kind: EventKind,
}

/// A straight piece of the flow inside one periodic cell.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Leg {
    t0: f64,
    start: Point,
    dir: Point,
}

enum StepEnd {
    Wall(Hit),
    Wrap(bool, bool),
    Horizon,
}

struct Step {
    start: Point,
    dir: Point,
    len: f64,
    end: StepEnd,
}

/// Flow state advanced one leg at a time.
struct Walker<'a> {
    table: &'a Billiard,
    p: Point,
    d: Point,
    t: f64,
    last: Option<usize>,
}

impl<'a> Walker<'a> {
    fn new(table: &'a Billiard, start: Point, dir: Point) -> Self {
        Self {
            table,
            p: table.domain.reduce(start),
            d: dir,
            t: 0.0,
            last: None,
        }
    }

    /// Advances to the next wall, cell exit, or `t_end`, whichever comes
    /// first.
    fn step(&mut self, t_end: f64) -> Step {
        let (start, dir) = (self.p, self.d);
        let hit = self.table.next_hit(start, dir, self.last);
        let (t_exit, wx, wy) = self.table.cell_exit(start, dir);
        let t_hit = hit.as_ref().map_or(f64::INFINITY, |h| h.t);
        let remaining = t_end - self.t;
        let (len, end) = if remaining <= t_hit.min(t_exit) {
            (remaining.max(0.0), StepEnd::Horizon)
        } else if t_hit <= t_exit {
            (t_hit, StepEnd::Wall(hit.expect("finite hit time")))
        } else {
            (t_exit, StepEnd::Wrap(wx, wy))
        };
        let mut q = start + dir * len;
        match &end {
            StepEnd::Wall(h) => {
                if !h.grazing {
                    let r = dir - h.normal * (2.0 * dir.dot(h.normal));
                    self.d = r.normalized();
                }
                self.last = Some(h.wall);
            }
            StepEnd::Wrap(x, y) => {
                let (px, py) = self.table.periods;
                if *x {
                    let l = px.expect("periodic x");
                    q.x = if dir.x > 0.0 { 0.0 } else { l };
                }
                if *y {
                    let l = py.expect("periodic y");
                    q.y = if dir.y > 0.0 { 0.0 } else { l };
                }
                // a wall hit just past the seam belongs to the next cell
                self.last = None;
            }
            StepEnd::Horizon => {}
        }
        // wrapped coordinates stay on the seam they entered through
        self.p = q;
        self.t += len;
        Step { start, dir, len, end }
    }
}

/// A unit-speed billiard trajectory over `[0, total_time]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub start: Point,
    pub direction: Point,
    pub events: Vec<Event>,
    pub total_time: f64,
    pub end_point: Point,
    pub end_direction: Point,
    pub warnings: Vec<String>,
    domain: DomainSpec,
    legs: Vec<Leg>,
}

impl Trajectory {
    /// Position at time `t`, reduced to the fundamental cell.
    pub fn position(&self, t: f64) -> Point {
        let leg = self.leg_at(t);
        self.domain.reduce(leg.start + leg.dir * (t - leg.t0))
    }

    /// Velocity at time `t`; right-continuous at reflections.
    pub fn direction_at(&self, t: f64) -> Point {
        self.leg_at(t).dir
    }

    fn leg_at(&self, t: f64) -> &Leg {
        let t = t.clamp(0.0, self.total_time);
        let i = self.legs.partition_point(|l| l.t0 <= t);
        &self.legs[i.saturating_sub(1)]
    }

    pub fn obstacle_events(&self) -> usize {
        self.events.iter().filter(|e| e.kind == EventKind::Reflection).count()
    }

    /// Columns `t, x, y, dx, dy`: the start, every event with its outgoing
    /// direction, and the end point.
    pub fn to_csv(&self) -> CsvTable {
        let mut csv = CsvTable::new(&["t", "x", "y", "dx", "dy"]);
        csv.push_numbers(&[0.0, self.start.x, self.start.y, self.direction.x, self.direction.y]);
        for e in &self.events {
            csv.push_numbers(&[e.t, e.point.x, e.point.y, e.outgoing.x, e.outgoing.y]);
        }
        csv.push_numbers(&[
            self.total_time,
            self.end_point.x,
            self.end_point.y,
            self.end_direction.x,
            self.end_direction.y,
        ]);
        csv
    }
}

fn check_start(domain: &DomainSpec, start: Point, direction: Point) -> Result<Point> {
    let n = direction.norm();
    if !(n > 0.0 && n.is_finite()) || !start.is_finite() {
        return Err(Error::InvalidArgument("direction must be a finite nonzero vector".into()));
    }
    if !domain.contains(start) {
        return Err(Error::InvalidArgument(format!(
            "start ({}, {}) is not in the open domain",
            start.x, start.y
        )));
    }
    Ok(direction * (1.0 / n))
}

/// Flows from `start` along `direction` (normalized) for time `t`.
pub fn evolve(domain: &DomainSpec, start: Point, direction: Point, t: f64) -> Result<Trajectory> {
    let table = Billiard::new(domain)?;
    evolve_on(&table, start, direction, t)
}

pub fn evolve_on(table: &Billiard, start: Point, direction: Point, t: f64) -> Result<Trajectory> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidArgument(format!("flow time must be positive, got {t}")));
    }
    let dir = check_start(&table.domain, start, direction)?;
    let mut walker = Walker::new(table, start, dir);
    let mut events = Vec::new();
    let mut warnings = Vec::new();
    let mut legs = Vec::new();
    let mut stalls = 0;
    while walker.t < t {
        let t0 = walker.t;
        let step = walker.step(t);
        legs.push(Leg {
            t0,
            start: step.start,
            dir: step.dir,
        });
        stalls = if step.len == 0.0 { stalls + 1 } else { 0 };
        if stalls > 16 {
            warnings.push(format!("flow stalled at t = {t0}"));
            break;
        }
        match step.end {
            StepEnd::Wall(h) => {
                let point = step.start + step.dir * step.len;
                let kind = if h.grazing {
                    warnings.push(format!(
                        "grazing contact at t = {} near ({}, {}), passed through",
                        walker.t, point.x, point.y
                    ));
                    EventKind::Grazing
                } else {
                    EventKind::Reflection
                };
                events.push(Event {
                    t: walker.t,
                    point,
                    incoming: step.dir,
                    outgoing: walker.d,
                    kind,
                });
            }
            StepEnd::Horizon => break,
            StepEnd::Wrap(..) => {}
        }
    }
    Ok(Trajectory {
        start: table.domain.reduce(start),
        direction: dir,
        events,
        total_time: t,
        end_point: walker.p,
        end_direction: walker.d,
        warnings,
        domain: table.domain.clone(),
        legs,
    })
}

/// Entry time of the open segment `p + s d`, `0 <= s <= len`, into a
/// primitive with an exact formula; `None` when it stays outside.
fn exact_entry(domain: &DomainSpec, part: &RegionPrimitive, p: Point, d: Point, len: f64) -> Option<Option<f64>> {
    let (px, py) = domain.periods();
    let shifts = |l: Option<f64>| match l {
        Some(l) => vec![-l, 0.0, l],
        None => vec![0.0],
    };
    let mut best: Option<f64> = None;
    let mut keep = |t: f64| best = Some(best.map_or(t, |b: f64| b.min(t)));
    match *part {
        RegionPrimitive::Whole => return Some(Some(0.0)),
        RegionPrimitive::Rect { x0, x1, y0, y1 } => {
            for sx in shifts(px) {
                for sy in shifts(py) {
                    let slab = |o: f64, v: f64, lo: f64, hi: f64| -> (f64, f64) {
                        if v == 0.0 {
                            if o > lo && o < hi {
                                (f64::NEG_INFINITY, f64::INFINITY)
                            } else {
                                (f64::INFINITY, f64::NEG_INFINITY)
                            }
                        } else {
                            let (a, b) = ((lo - o) / v, (hi - o) / v);
                            (a.min(b), a.max(b))
                        }
                    };
                    let (ax, bx) = slab(p.x + sx, d.x, x0, x1);
                    let (ay, by) = slab(p.y + sy, d.y, y0, y1);
                    let enter = ax.max(ay).max(0.0);
                    let exit = bx.min(by).min(len);
                    if enter < exit {
                        keep(enter);
                    }
                }
            }
        }
        RegionPrimitive::Annulus {
            center,
            r_inner,
            r_outer,
        } => {
            for sx in shifts(px) {
                for sy in shifts(py) {
                    let w = Point::new(p.x + sx - center.x, p.y + sy - center.y);
                    let b = d.dot(w);
                    let c0 = w.dot(w);
                    let roots = |r: f64| {
                        let disc = b * b - (c0 - r * r);
                        (disc > 0.0).then(|| (-b - disc.sqrt(), -b + disc.sqrt()))
                    };
                    let Some((a1, a2)) = roots(r_outer) else { continue };
                    let pieces = match roots(r_inner) {
                        Some((b1, b2)) if r_inner > 0.0 => vec![(a1, b1), (b2, a2)],
                        _ => vec![(a1, a2)],
                    };
                    for (lo, hi) in pieces {
                        let enter = lo.max(0.0);
                        if enter < hi.min(len) {
                            keep(enter);
                        }
                    }
                }
            }
        }
        RegionPrimitive::Neighborhood { .. } => return None,
    }
    Some(best)
}

/// First entry time of one leg into the region, sampling primitives
/// without a closed form.
fn leg_entry(domain: &DomainSpec, v: &Region, p: Point, d: Point, len: f64) -> Option<f64> {
    let mut best: Option<f64> = None;
    for part in &v.parts {
        let found = match exact_entry(domain, part, p, d, len) {
            Some(t) => t,
            None => {
                let RegionPrimitive::Neighborhood { delta, .. } = *part else { unreachable!() };
                let single = Region { parts: vec![part.clone()] };
                let inside = |s: f64| single.contains_point(domain, p + d * s);
                let step = (delta / 8.0).min(len.max(f64::MIN_POSITIVE));
                let mut prev = 0.0;
                let mut hit = None;
                if inside(0.0) {
                    hit = Some(0.0);
                } else {
                    let mut s = step;
                    loop {
                        let s_c = s.min(len);
                        if inside(s_c) {
                            let (mut lo, mut hi) = (prev, s_c);
                            while hi - lo > 1e-13 {
                                let mid = 0.5 * (lo + hi);
                                if inside(mid) {
                                    hi = mid;
                                } else {
                                    lo = mid;
                                }
                            }
                            hit = Some(hi);
                            break;
                        }
                        if s_c >= len {
                            break;
                        }
                        prev = s_c;
                        s += step;
                    }
                }
                hit
            }
        };
        if let Some(t) = found {
            best = Some(best.map_or(t, |b| b.min(t)));
        }
    }
    best
}

/// First time the trajectory enters `v`, if it does before `t_max`.
pub fn hitting_time(
    domain: &DomainSpec,
    start: Point,
    direction: Point,
    v: &Region,
    t_max: f64,
) -> Result<Option<f64>> {
    let table = Billiard::new(domain)?;
    v.validate(domain)?;
    hitting_time_on(&table, start, direction, v, t_max)
}

pub fn hitting_time_on(
    table: &Billiard,
    start: Point,
    direction: Point,
    v: &Region,
    t_max: f64,
) -> Result<Option<f64>> {
    if !(t_max > 0.0) {
        return Err(Error::InvalidArgument(format!("time horizon must be positive, got {t_max}")));
    }
    let dir = check_start(&table.domain, start, direction)?;
    if v.contains_point(&table.domain, start) {
        return Ok(Some(0.0));
    }
    let mut walker = Walker::new(table, start, dir);
    let mut stalls = 0;
    while walker.t < t_max {
        let t0 = walker.t;
        let step = walker.step(t_max);
        if let Some(s) = leg_entry(&table.domain, v, step.start, step.dir, step.len) {
            return Ok(Some(t0 + s));
        }
        stalls = if step.len == 0.0 { stalls + 1 } else { 0 };
        if stalls > 16 || matches!(step.end, StepEnd::Horizon) {
            break;
        }
    }
    Ok(None)
}

/// Grid of initial conditions: cell centres of the bounding box in the
/// domain, times equally spaced angles starting at 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSampling {
    pub nx: usize,
    pub ny: usize,
    pub angles: usize,
}

impl Default for ControlSampling {
    fn default() -> Self {
        Self {
            nx: 32,
            ny: 32,
            angles: 64,
        }
    }
}

impl ControlSampling {
    pub const MIN: ControlSampling = ControlSampling {
        nx: 32,
        ny: 32,
        angles: 64,
    };

    fn validate(&self) -> Result<()> {
        if self.nx < Self::MIN.nx || self.ny < Self::MIN.ny || self.angles < Self::MIN.angles {
            return Err(Error::InvalidArgument(format!(
                "sampling {}x{}x{} is below the minimum 32x32x64",
                self.nx, self.ny, self.angles
            )));
        }
        Ok(())
    }

    /// `(x, y, θ)` initial conditions inside the open domain.
    pub fn starts(&self, domain: &DomainSpec) -> Vec<(f64, f64, f64)> {
        let (lo, hi) = domain.bounding_box();
        let mut out = Vec::new();
        for j in 0..self.ny {
            for i in 0..self.nx {
                let p = Point::new(
                    lo.x + (hi.x - lo.x) * (i as f64 + 0.5) / self.nx as f64,
                    lo.y + (hi.y - lo.y) * (j as f64 + 0.5) / self.ny as f64,
                );
                if !domain.contains(p) {
                    continue;
                }
                for k in 0..self.angles {
                    out.push((p.x, p.y, std::f64::consts::TAU * k as f64 / self.angles as f64));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlReport {
    pub length: f64,
    pub total: usize,
    pub controlled: usize,
    pub fraction: f64,
    /// `(x, y, θ)` of the trajectories that miss `V` within `length`.
    pub uncontrolled: Vec<(f64, f64, f64)>,
}

impl ControlReport {
    pub fn uncontrolled_csv(&self) -> CsvTable {
        let mut csv = CsvTable::new(&["x", "y", "theta"]);
        for &(x, y, th) in &self.uncontrolled {
            csv.push(vec![fmt_f64(x), fmt_f64(y), fmt_f64(th)]);
        }
        csv
    }
}

/// Fraction of sampled trajectories meeting `v` within time `l`.
pub fn geometric_control_check(
    domain: &DomainSpec,
    v: &Region,
    l: f64,
    sampling: ControlSampling,
) -> Result<ControlReport> {
    Ok(control_fraction_curve(domain, v, &[l], sampling)?.remove(0))
}

/// [`geometric_control_check`] at several lengths from one set of hitting
/// times, so the fractions are monotone in the length.
pub fn control_fraction_curve(
    domain: &DomainSpec,
    v: &Region,
    lengths: &[f64],
    sampling: ControlSampling,
) -> Result<Vec<ControlReport>> {
    sampling.validate()?;
    v.validate(domain)?;
    let t_max = lengths.iter().copied().fold(0.0, f64::max);
    if lengths.is_empty() || !(t_max > 0.0) || lengths.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::InvalidArgument("control lengths must be positive".into()));
    }
    let table = Billiard::new(domain)?;
    let starts = sampling.starts(domain);
    let times: Vec<Option<f64>> = starts
        .par_iter()
        .map(|&(x, y, th)| hitting_time_on(&table, Point::new(x, y), Point::new(th.cos(), th.sin()), v, t_max))
        .collect::<Result<_>>()?;
    Ok(lengths
        .iter()
        .map(|&l| {
            let uncontrolled: Vec<(f64, f64, f64)> = starts
                .iter()
                .zip(&times)
                .filter(|(_, t)| t.is_none_or(|t| t > l))
                .map(|(s, _)| *s)
                .collect();
            let total = starts.len();
            let controlled = total - uncontrolled.len();
            ControlReport {
                length: l,
                total,
                controlled,
                fraction: if total == 0 { 0.0 } else { controlled as f64 / total as f64 },
                uncontrolled,
            }
        })
        .collect())
}
