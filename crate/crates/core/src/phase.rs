//! Phase-space diagnostics on periodic grids: Kohn–Nirenberg quantization
//! of symbols, Husimi densities, and Fourier-multiplier projectors.
//!
//! Frequencies are scaled so the characteristic set sits at `|hξ| = 1`
//! with `h = 1/√λ`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::discretize::Grid;
use crate::error::{Error, Result};
use crate::geometry::{BoundaryPiece, DomainSpec, Point};
use crate::io::{fmt_f64, heatmap_pixels, CsvTable};

/// Complex samples on a periodic tensor grid, `x_i = x0 + i·hx`.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicField {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub x0: f64,
    pub y0: f64,
    /// Row-major, `j·nx + i`.
    pub values: Vec<Complex64>,
}

impl PeriodicField {
    pub fn from_fn(nx: usize, ny: usize, lx: f64, ly: f64, f: impl Fn(Point) -> Complex64) -> Self {
        let mut field = Self {
            nx,
            ny,
            lx,
            ly,
            x0: 0.0,
            y0: 0.0,
            values: Vec::with_capacity(nx * ny),
        };
        for j in 0..ny {
            for i in 0..nx {
                let p = field.position(i, j);
                field.values.push(f(p));
            }
        }
        field
    }

    /// Field on a grid that is periodic along both axes; masked-out nodes
    /// are zero.
    pub fn from_grid(grid: &Grid, u: &[f64]) -> Result<Self> {
        if !(grid.periodic_x && grid.periodic_y) {
            return Err(Error::NotPeriodic);
        }
        Self::embed(grid, u, 0)
    }

    /// Zero extension of a field on any grid into a periodic box one ghost
    /// layer wider per axis (none along periodic axes).
    pub fn zero_extension(grid: &Grid, u: &[f64]) -> Result<Self> {
        Self::embed(grid, u, 1)
    }

    fn embed(grid: &Grid, u: &[f64], pad: usize) -> Result<Self> {
        if u.len() != grid.len() {
            return Err(Error::Dimension {
                expected: grid.len(),
                got: u.len(),
            });
        }
        let px = if grid.periodic_x { 0 } else { pad };
        let py = if grid.periodic_y { 0 } else { pad };
        let (nx, ny) = (grid.nx + px, grid.ny + py);
        let full = grid.to_full(u);
        let mut values = vec![Complex64::new(0.0, 0.0); nx * ny];
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                values[(j + py) * nx + i + px] = Complex64::new(full[j * grid.nx + i], 0.0);
            }
        }
        Ok(Self {
            nx,
            ny,
            lx: nx as f64 * grid.hx,
            ly: ny as f64 * grid.hy,
            x0: grid.x_coord(0) - px as f64 * grid.hx,
            y0: grid.y_coord(0) - py as f64 * grid.hy,
            values,
        })
    }

    /// Odd reflection of a Dirichlet rectangle field across both axes onto
    /// the doubled torus `[0, 2] x [0, 2a]`.
    pub fn odd_extension(grid: &Grid, u: &[f64]) -> Result<Self> {
        if grid.periodic_x || grid.periodic_y || !grid.is_full() || grid.x_offset != 1.0 || grid.y_offset != 1.0 {
            return Err(Error::InvalidArgument(
                "odd extension needs a full vertex-centred Dirichlet grid".into(),
            ));
        }
        if u.len() != grid.len() {
            return Err(Error::Dimension {
                expected: grid.len(),
                got: u.len(),
            });
        }
        let (mx, my) = (2 * (grid.nx + 1), 2 * (grid.ny + 1));
        let fold = |i: usize, n: usize| -> Option<(usize, f64)> {
            // node index i on the doubled period, interior nodes 1..=n
            if i == 0 || i == n + 1 {
                None
            } else if i <= n {
                Some((i - 1, 1.0))
            } else {
                Some((2 * (n + 1) - i - 1, -1.0))
            }
        };
        let mut values = vec![Complex64::new(0.0, 0.0); mx * my];
        for j in 0..my {
            for i in 0..mx {
                if let (Some((a, sa)), Some((b, sb))) = (fold(i, grid.nx), fold(j, grid.ny)) {
                    values[j * mx + i] = Complex64::new(sa * sb * u[b * grid.nx + a], 0.0);
                }
            }
        }
        Ok(Self {
            nx: mx,
            ny: my,
            lx: mx as f64 * grid.hx,
            ly: my as f64 * grid.hy,
            x0: 0.0,
            y0: 0.0,
            values,
        })
    }

    pub fn hx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        self.ly / self.ny as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.hx() * self.hy()
    }

    pub fn position(&self, i: usize, j: usize) -> Point {
        Point::new(self.x0 + i as f64 * self.hx(), self.y0 + j as f64 * self.hy())
    }

    /// `∫ f conj(g)`.
    pub fn inner(&self, other: &Self) -> Complex64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b.conj()).sum::<Complex64>() * self.cell_area()
    }

    pub fn norm(&self) -> f64 {
        (self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.cell_area()).sqrt()
    }

    pub fn scaled(mut self, s: f64) -> Self {
        self.values.iter_mut().for_each(|v| *v *= s);
        self
    }

    /// Pointwise product with a real function of position.
    pub fn with_cutoff(&self, chi: impl Fn(Point) -> f64) -> Self {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(k, v)| v * chi(self.position(k % self.nx, k / self.nx)))
            .collect();
        self.with_values(values)
    }

    /// Same grid, new values.
    fn with_values(&self, values: Vec<Complex64>) -> Self {
        Self {
            values,
            ..self.clone()
        }
    }

    /// Angular wavenumber of FFT bin `m` along an axis with `n` points.
    pub fn wavenumber(m: usize, n: usize, l: f64) -> f64 {
        let s = if m <= n / 2 { m as f64 } else { m as f64 - n as f64 };
        2.0 * PI * s / l
    }

    pub fn kx(&self, m: usize) -> f64 {
        Self::wavenumber(m, self.nx, self.lx)
    }

    pub fn ky(&self, m: usize) -> f64 {
        Self::wavenumber(m, self.ny, self.ly)
    }

    /// Coefficients `û` with `u(x_j) = Σ û_m e^{i k_m·x_j}`.
    pub fn coefficients(&self) -> Vec<Complex64> {
        let mut c = self.values.clone();
        fft2(&mut c, self.nx, self.ny, false);
        let scale = 1.0 / (self.nx * self.ny) as f64;
        for my in 0..self.ny {
            for mx in 0..self.nx {
                let ph = -(self.kx(mx) * self.x0 + self.ky(my) * self.y0);
                c[my * self.nx + mx] *= Complex64::from_polar(scale, ph);
            }
        }
        c
    }

    pub fn from_coefficients(&self, coeffs: &[Complex64]) -> Self {
        let mut v = coeffs.to_vec();
        for my in 0..self.ny {
            for mx in 0..self.nx {
                let ph = self.kx(mx) * self.x0 + self.ky(my) * self.y0;
                v[my * self.nx + mx] *= Complex64::from_polar(1.0, ph);
            }
        }
        fft2(&mut v, self.nx, self.ny, true);
        self.with_values(v)
    }
}

fn fft2(data: &mut [Complex64], nx: usize, ny: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let (fx, fy) = if inverse {
        (planner.plan_fft_inverse(nx), planner.plan_fft_inverse(ny))
    } else {
        (planner.plan_fft_forward(nx), planner.plan_fft_forward(ny))
    };
    for row in data.chunks_mut(nx) {
        fx.process(row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); ny];
    for i in 0..nx {
        for j in 0..ny {
            col[j] = data[j * nx + i];
        }
        fy.process(&mut col);
        for j in 0..ny {
            data[j * nx + i] = col[j];
        }
    }
}

/// `exp(1 − 1/(1 − t²))` on `|t| < 1`, zero outside; equals 1 at 0.
pub fn bump(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - t * t)).exp()
    }
}

/// Smooth cutoff equal to 1 on `[0, 1/2]` and 0 on `[1, ∞)`.
pub fn flat_top(s: f64) -> f64 {
    let e = |t: f64| if t > 0.0 { (-1.0 / t).exp() } else { 0.0 };
    let tau = (2.0 * (1.0 - s)).clamp(0.0, 1.0);
    let (a, b) = (e(tau), e(1.0 - tau));
    if a + b == 0.0 {
        0.0
    } else {
        a / (a + b)
    }
}

/// A factor of a symbol depending on `x` or on `ξ` only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Atom {
    /// `exp(−|x − c|²/(2σ²))`, minimum image.
    Gx { center: Point, sigma: f64 },
    /// `bump(|x − c|/r)`, minimum image.
    Bx { center: Point, radius: f64 },
    /// `exp(−|ξ − c|²/(2σ²))`.
    Gxi { center: Point, sigma: f64 },
    /// `bump(|ξ − c|/r)`.
    Bxi { center: Point, radius: f64 },
    /// `bump((|ξ| − r)/w)`.
    Rxi { radius: f64, width: f64 },
}

impl Atom {
    fn is_spatial(&self) -> bool {
        matches!(self, Atom::Gx { .. } | Atom::Bx { .. })
    }

    fn eval(&self, x: Point, xi: Point, periods: (f64, f64)) -> f64 {
        let wrap = |d: f64, l: f64| d - l * (d / l).round();
        let dx = |c: Point| Point::new(wrap(x.x - c.x, periods.0), wrap(x.y - c.y, periods.1)).norm();
        match *self {
            Atom::Gx { center, sigma } => (-dx(center).powi(2) / (2.0 * sigma * sigma)).exp(),
            Atom::Bx { center, radius } => bump(dx(center) / radius),
            Atom::Gxi { center, sigma } => (-(xi - center).dot(xi - center) / (2.0 * sigma * sigma)).exp(),
            Atom::Bxi { center, radius } => bump(xi.dist(center) / radius),
            Atom::Rxi { radius, width } => bump((xi.norm() - radius) / width),
        }
    }

    /// Radius outside which a spatial factor is negligible (below 1e-14).
    fn spatial_reach(&self) -> Option<(Point, f64)> {
        match *self {
            Atom::Gx { center, sigma } => Some((center, 8.0 * sigma)),
            Atom::Bx { center, radius } => Some((center, radius)),
            _ => None,
        }
    }
}

/// `coeff · Π atoms`.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub coeff: f64,
    pub atoms: Vec<Atom>,
}

/// A symbol `a(x, ξ)` written in a small expression language: sums and
/// products of numbers, `one`, and the atoms `gx(x0, y0, s)`,
/// `bx(x0, y0, r)`, `gxi(k1, k2, s)`, `bxi(k1, k2, r)`, `rxi(r, w)`.
/// Every expression expands to a finite sum of separable terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SymbolSpec {
    source: String,
    terms: Vec<Term>,
}

impl SymbolSpec {
    pub fn parse(src: &str) -> Result<Self> {
        let mut p = Parser {
            toks: tokenize(src)?,
            pos: 0,
        };
        let terms = p.expr()?;
        if p.pos != p.toks.len() {
            return Err(Error::Symbol(format!("unexpected trailing input in {src:?}")));
        }
        Ok(Self {
            source: src.trim().to_string(),
            terms: simplify(terms),
        })
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn eval(&self, x: Point, xi: Point, periods: (f64, f64)) -> f64 {
        self.terms
            .iter()
            .map(|t| t.coeff * t.atoms.iter().map(|a| a.eval(x, xi, periods)).product::<f64>())
            .sum()
    }

    /// Symbol transported by the free flow for time `t`:
    /// `(x, ξ) ↦ a(x + t ξ/|ξ|, ξ)`.
    pub fn transported(&self, t: f64, periods: (f64, f64)) -> impl Fn(Point, Point) -> f64 + Sync + '_ {
        move |x, xi| {
            let n = xi.norm();
            let y = if n > 0.0 { x + xi * (t / n) } else { x };
            self.eval(y, xi, periods)
        }
    }

    /// For each term, a disc outside which its spatial factor is
    /// negligible; `None` when some term is not localized in `x`.
    pub fn spatial_support(&self) -> Option<Vec<(Point, f64)>> {
        self.terms
            .iter()
            .map(|t| {
                t.atoms
                    .iter()
                    .filter_map(Atom::spatial_reach)
                    .min_by(|a, b| a.1.total_cmp(&b.1))
            })
            .collect()
    }
}

impl fmt::Display for SymbolSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

impl FromStr for SymbolSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

impl TryFrom<String> for SymbolSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        Self::parse(&s)
    }
}

impl From<SymbolSpec> for String {
    fn from(s: SymbolSpec) -> String {
        s.source
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
}

fn tokenize(src: &str) -> Result<Vec<Tok>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len()
                && (chars[i].is_ascii_digit()
                    || chars[i] == '.'
                    || chars[i] == 'e'
                    || chars[i] == 'E'
                    || ((chars[i] == '-' || chars[i] == '+') && matches!(chars[i - 1], 'e' | 'E')))
            {
                i += 1;
            }
            let s: String = chars[start..i].iter().collect();
            let v = s.parse().map_err(|_| Error::Symbol(format!("bad number {s:?}")))?;
            out.push(Tok::Num(v));
        } else if c.is_ascii_alphabetic() {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else if "+-*(),".contains(c) {
            out.push(Tok::Sym(c));
            i += 1;
        } else {
            return Err(Error::Symbol(format!("unexpected character {c:?}")));
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Sym(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(Error::Symbol(format!("expected {c:?}")))
        }
    }

    fn expr(&mut self) -> Result<Vec<Term>> {
        let mut terms = self.product()?;
        loop {
            if self.eat('+') {
                terms.extend(self.product()?);
            } else if self.eat('-') {
                terms.extend(negate(self.product()?));
            } else {
                return Ok(terms);
            }
        }
    }

    fn product(&mut self) -> Result<Vec<Term>> {
        let mut acc = self.factor()?;
        while self.eat('*') {
            let rhs = self.factor()?;
            acc = distribute(&acc, &rhs);
        }
        Ok(acc)
    }

    fn factor(&mut self) -> Result<Vec<Term>> {
        if self.eat('-') {
            return Ok(negate(self.factor()?));
        }
        if self.eat('(') {
            let e = self.expr()?;
            self.expect(')')?;
            return Ok(e);
        }
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(vec![Term {
                    coeff: v,
                    atoms: vec![],
                }])
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if name == "one" {
                    return Ok(vec![Term {
                        coeff: 1.0,
                        atoms: vec![],
                    }]);
                }
                let args = self.args()?;
                let need = |n: usize| {
                    if args.len() == n {
                        Ok(())
                    } else {
                        Err(Error::Symbol(format!("{name} takes {n} arguments, got {}", args.len())))
                    }
                };
                let positive = |v: f64, what: &str| {
                    if v > 0.0 {
                        Ok(v)
                    } else {
                        Err(Error::Symbol(format!("{name}: {what} must be positive")))
                    }
                };
                let atom = match name.as_str() {
                    "gx" | "bx" | "gxi" | "bxi" => {
                        need(3)?;
                        let center = Point::new(args[0], args[1]);
                        let s = positive(args[2], "width")?;
                        match name.as_str() {
                            "gx" => Atom::Gx { center, sigma: s },
                            "bx" => Atom::Bx { center, radius: s },
                            "gxi" => Atom::Gxi { center, sigma: s },
                            _ => Atom::Bxi { center, radius: s },
                        }
                    }
                    "rxi" => {
                        need(2)?;
                        Atom::Rxi {
                            radius: args[0],
                            width: positive(args[1], "width")?,
                        }
                    }
                    _ => return Err(Error::Symbol(format!("unknown function {name:?}"))),
                };
                Ok(vec![Term {
                    coeff: 1.0,
                    atoms: vec![atom],
                }])
            }
            other => Err(Error::Symbol(format!("unexpected token {other:?}"))),
        }
    }

    fn args(&mut self) -> Result<Vec<f64>> {
        self.expect('(')?;
        let mut out = Vec::new();
        loop {
            let neg = self.eat('-');
            match self.peek().cloned() {
                Some(Tok::Num(v)) => {
                    self.pos += 1;
                    out.push(if neg { -v } else { v });
                }
                other => return Err(Error::Symbol(format!("expected a number, got {other:?}"))),
            }
            if self.eat(')') {
                return Ok(out);
            }
            self.expect(',')?;
        }
    }
}

fn negate(mut terms: Vec<Term>) -> Vec<Term> {
    terms.iter_mut().for_each(|t| t.coeff = -t.coeff);
    terms
}

fn distribute(a: &[Term], b: &[Term]) -> Vec<Term> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for s in a {
        for t in b {
            let mut atoms = s.atoms.clone();
            atoms.extend_from_slice(&t.atoms);
            out.push(Term {
                coeff: s.coeff * t.coeff,
                atoms,
            });
        }
    }
    out
}

/// Merges constant terms.
fn simplify(terms: Vec<Term>) -> Vec<Term> {
    let constant: f64 = terms.iter().filter(|t| t.atoms.is_empty()).map(|t| t.coeff).sum();
    let mut out: Vec<Term> = terms.into_iter().filter(|t| !t.atoms.is_empty()).collect();
    if constant != 0.0 || out.is_empty() {
        out.insert(
            0,
            Term {
                coeff: constant,
                atoms: vec![],
            },
        );
    }
    out
}

fn check_h(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("h must be positive, got {h}")))
    }
}

/// `Op(a) u = Σ_m a(x, h k_m) û_m e^{i k_m·x}`, evaluated term by term
/// through the FFT: each term is a pointwise factor times a multiplier.
pub fn quantize_apply(a: &SymbolSpec, h: f64, u: &PeriodicField) -> Result<PeriodicField> {
    check_h(h)?;
    let coeffs = u.coefficients();
    let periods = (u.lx, u.ly);
    let origin = Point::new(0.0, 0.0);
    let mut out = vec![Complex64::new(0.0, 0.0); u.values.len()];
    for term in &a.terms {
        let (xa, ka): (Vec<Atom>, Vec<Atom>) = term.atoms.iter().partition(|a| a.is_spatial());
        let filtered = if ka.is_empty() {
            u.clone()
        } else {
            let mut c = coeffs.clone();
            for my in 0..u.ny {
                for mx in 0..u.nx {
                    let xi = Point::new(h * u.kx(mx), h * u.ky(my));
                    let m: f64 = ka.iter().map(|a| a.eval(origin, xi, periods)).product();
                    c[my * u.nx + mx] *= m;
                }
            }
            u.from_coefficients(&c)
        };
        for j in 0..u.ny {
            for i in 0..u.nx {
                let x = u.position(i, j);
                let m: f64 = xa.iter().map(|a| a.eval(x, origin, periods)).product();
                out[j * u.nx + i] += filtered.values[j * u.nx + i] * (term.coeff * m);
            }
        }
    }
    Ok(u.with_values(out))
}

/// `Op(b) u` for an arbitrary symbol by direct summation over the Fourier
/// modes carried by `u` (those above `1e-15` of the largest coefficient).
pub fn quantize_apply_direct(
    b: &(dyn Fn(Point, Point) -> f64 + Sync),
    h: f64,
    u: &PeriodicField,
) -> Result<PeriodicField> {
    check_h(h)?;
    let coeffs = u.coefficients();
    let cmax = coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let modes: Vec<(Point, Complex64)> = coeffs
        .iter()
        .enumerate()
        .filter(|(_, c)| c.norm() > 1e-15 * cmax)
        .map(|(m, c)| (Point::new(u.kx(m % u.nx), u.ky(m / u.nx)), *c))
        .collect();
    let values = (0..u.values.len())
        .into_par_iter()
        .map(|idx| {
            let x = u.position(idx % u.nx, idx / u.nx);
            modes
                .iter()
                .map(|&(k, c)| c * Complex64::from_polar(b(x, k * h), k.dot(x)))
                .sum()
        })
        .collect();
    Ok(u.with_values(values))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Pairing {
    pub re: f64,
    /// Should vanish for real symmetric realizations.
    pub im: f64,
}

/// `⟨Op(a) u, u⟩`.
pub fn semiclassical_pairing(a: &SymbolSpec, h: f64, u: &PeriodicField) -> Result<Pairing> {
    let z = quantize_apply(a, h, u)?.inner(u);
    Ok(Pairing { re: z.re, im: z.im })
}

/// `|⟨Op(a∘Φ_t) u, u⟩ − ⟨Op(a) u, u⟩|` for the free flow. The spatial
/// support of `a`, swept for time `t`, must stay off the obstacle.
pub fn flow_invariance_defect(domain: &DomainSpec, u: &PeriodicField, lambda: f64, a: &SymbolSpec, t: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("λ must be positive, got {lambda}")));
    }
    if domain.obstacle().is_some_and(|o| !o.is_empty()) {
        let discs = a.spatial_support().ok_or_else(|| {
            Error::InteriorPropagation("symbol is not localized in x; its flow-out meets the obstacle".into())
        })?;
        for (c, r) in discs {
            let clear = domain.contains(c)
                && domain
                    .piece_distance(BoundaryPiece::Obstacle, c)
                    .is_some_and(|d| d > r + t.abs());
            if !clear {
                return Err(Error::InteriorPropagation(format!(
                    "support around ({}, {}) reaches the obstacle within time {t}",
                    c.x, c.y
                )));
            }
        }
    }
    let h = 1.0 / lambda.sqrt();
    let periods = (u.lx, u.ly);
    let plain = |x: Point, xi: Point| a.eval(x, xi, periods);
    let moved = a.transported(t, periods);
    let p0 = quantize_apply_direct(&plain, h, u)?.inner(u);
    let p1 = quantize_apply_direct(&moved, h, u)?.inner(u);
    Ok((p1 - p0).norm())
}

/// Momentum samples of a Husimi slice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum XiSampling {
    /// Midpoint rule on `r_min <= |ξ| <= r_max` times `ntheta` angles
    /// starting at 0.
    Polar {
        r_min: f64,
        r_max: f64,
        nr: usize,
        ntheta: usize,
    },
    /// `n x n` cell centres of `[-max, max]²`.
    Cartesian { max: f64, n: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HusimiSlice {
    /// Position samples per axis over the period.
    pub nx: usize,
    pub ny: usize,
    pub xi: XiSampling,
}

impl Default for HusimiSlice {
    fn default() -> Self {
        Self {
            nx: 32,
            ny: 32,
            xi: XiSampling::Polar {
                r_min: 0.0,
                r_max: 2.0,
                nr: 40,
                ntheta: 64,
            },
        }
    }
}

impl HusimiSlice {
    fn validate(&self) -> Result<()> {
        let axes = match self.xi {
            XiSampling::Polar { nr, ntheta, r_min, r_max } => {
                if !(r_max > r_min && r_min >= 0.0) {
                    return Err(Error::InvalidArgument("polar momentum range is empty".into()));
                }
                [self.nx, self.ny, nr, ntheta]
            }
            XiSampling::Cartesian { n, max } => {
                if !(max > 0.0) {
                    return Err(Error::InvalidArgument("momentum box is empty".into()));
                }
                [self.nx, self.ny, n, n]
            }
        };
        match axes.iter().find(|&&n| n < 8) {
            Some(&n) => Err(Error::CoarseSlice(n)),
            None => Ok(()),
        }
    }

    /// Momentum points and their quadrature weights.
    pub fn momenta(&self) -> (Vec<Point>, Vec<f64>) {
        let mut pts = Vec::new();
        let mut w = Vec::new();
        match self.xi {
            XiSampling::Polar {
                r_min,
                r_max,
                nr,
                ntheta,
            } => {
                let dr = (r_max - r_min) / nr as f64;
                let dth = 2.0 * PI / ntheta as f64;
                for a in 0..nr {
                    let r = r_min + (a as f64 + 0.5) * dr;
                    for b in 0..ntheta {
                        let th = b as f64 * dth;
                        pts.push(Point::new(r * th.cos(), r * th.sin()));
                        w.push(r * dr * dth);
                    }
                }
            }
            XiSampling::Cartesian { max, n } => {
                let d = 2.0 * max / n as f64;
                for b in 0..n {
                    for a in 0..n {
                        pts.push(Point::new(-max + (a as f64 + 0.5) * d, -max + (b as f64 + 0.5) * d));
                        w.push(d * d);
                    }
                }
            }
        }
        (pts, w)
    }
}

/// `H(x₀, ξ₀) = |⟨u, g_{x₀,ξ₀}⟩|²` on a slice of phase space.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HusimiField {
    pub h: f64,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub momenta: Vec<Point>,
    pub momentum_weights: Vec<f64>,
    /// Area per position sample.
    pub position_weight: f64,
    /// `values[k·(nx·ny) + j·nx + i]` at `(xs[i], ys[j], momenta[k])`.
    pub values: Vec<f64>,
}

impl HusimiField {
    fn per_momentum(&self) -> usize {
        self.xs.len() * self.ys.len()
    }

    /// `∫∫ H dx dξ / (2πh)²`; equals `‖u‖²` in the continuum.
    pub fn mass(&self) -> f64 {
        self.momentum_marginal().iter().sum()
    }

    /// Mass carried by each momentum sample.
    pub fn momentum_marginal(&self) -> Vec<f64> {
        let norm = self.position_weight / (2.0 * PI * self.h).powi(2);
        self.values
            .chunks(self.per_momentum())
            .zip(&self.momentum_weights)
            .map(|(c, w)| c.iter().sum::<f64>() * w * norm)
            .collect()
    }

    /// Grayscale image of the position slice at momentum sample `k`.
    pub fn position_image(&self, k: usize) -> (usize, usize, Vec<u8>) {
        let n = self.per_momentum();
        let (nx, ny) = (self.xs.len(), self.ys.len());
        (nx, ny, heatmap_pixels(&self.values[k * n..(k + 1) * n], nx, ny))
    }

    /// Columns `x0, y0, xi_x, xi_y, H`.
    pub fn to_csv(&self) -> CsvTable {
        let mut csv = CsvTable::new(&["x0", "y0", "xi_x", "xi_y", "H"]);
        let n = self.per_momentum();
        for (k, xi) in self.momenta.iter().enumerate() {
            for (j, y) in self.ys.iter().enumerate() {
                for (i, x) in self.xs.iter().enumerate() {
                    let v = self.values[k * n + j * self.xs.len() + i];
                    csv.push(vec![fmt_f64(*x), fmt_f64(*y), fmt_f64(xi.x), fmt_f64(xi.y), fmt_f64(v)]);
                }
            }
        }
        csv
    }
}

/// Husimi density with coherent states of width `√h`, `h = 1/√λ`, using
/// the closed form of the Gaussian overlap with each Fourier mode:
/// `⟨u, g⟩ = 2√(πh) Σ û_m e^{i k_m·x₀} exp(−|h k_m − ξ₀|²/(2h))` up to a
/// unimodular factor.
pub fn husimi(u: &PeriodicField, lambda: f64, slice: &HusimiSlice) -> Result<HusimiField> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("λ must be positive, got {lambda}")));
    }
    slice.validate()?;
    let h = 1.0 / lambda.sqrt();
    let coeffs = u.coefficients();
    let xs: Vec<f64> = (0..slice.nx).map(|i| u.x0 + u.lx * i as f64 / slice.nx as f64).collect();
    let ys: Vec<f64> = (0..slice.ny).map(|j| u.y0 + u.ly * j as f64 / slice.ny as f64).collect();
    let (momenta, weights) = slice.momenta();
    // phase tables e^{i k x} per mode and sample
    let ex: Vec<Vec<Complex64>> = (0..u.nx)
        .map(|m| xs.iter().map(|&x| Complex64::from_polar(1.0, u.kx(m) * x)).collect())
        .collect();
    let ey: Vec<Vec<Complex64>> = (0..u.ny)
        .map(|m| ys.iter().map(|&y| Complex64::from_polar(1.0, u.ky(m) * y)).collect())
        .collect();
    let pref = 4.0 * PI * h;
    let cut = 40.0;
    let values: Vec<Vec<f64>> = momenta
        .par_iter()
        .map(|xi| {
            let gx: Vec<(usize, f64)> = (0..u.nx)
                .filter_map(|m| {
                    let e = (h * u.kx(m) - xi.x).powi(2) / (2.0 * h);
                    (e < cut).then(|| (m, (-e).exp()))
                })
                .collect();
            let gy: Vec<(usize, f64)> = (0..u.ny)
                .filter_map(|m| {
                    let e = (h * u.ky(m) - xi.y).powi(2) / (2.0 * h);
                    (e < cut).then(|| (m, (-e).exp()))
                })
                .collect();
            // B[my][i] = Σ_mx Gx û e^{i kx x_i}
            let b: Vec<Vec<Complex64>> = gy
                .iter()
                .map(|&(my, _)| {
                    let mut row = vec![Complex64::new(0.0, 0.0); xs.len()];
                    for &(mx, g) in &gx {
                        let c = coeffs[my * u.nx + mx] * g;
                        for (r, e) in row.iter_mut().zip(&ex[mx]) {
                            *r += c * e;
                        }
                    }
                    row
                })
                .collect();
            let mut out = Vec::with_capacity(xs.len() * ys.len());
            for j in 0..ys.len() {
                for i in 0..xs.len() {
                    let mut a = Complex64::new(0.0, 0.0);
                    for (row, &(my, g)) in b.iter().zip(&gy) {
                        a += row[i] * ey[my][j] * g;
                    }
                    out.push(pref * a.norm_sqr());
                }
            }
            out
        })
        .collect();
    Ok(HusimiField {
        h,
        position_weight: u.lx * u.ly / (xs.len() * ys.len()) as f64,
        xs,
        ys,
        momenta,
        momentum_weights: weights,
        values: values.concat(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HusimiStats {
    pub total_mass: f64,
    /// Fraction of mass with `|ξ₀|` in the band.
    pub shell_mass: f64,
    /// Fraction of mass per angle bin of `ξ₀`, bin `b` covering
    /// `[2πb/n, 2π(b+1)/n)` shifted back by half a bin so that bin 0 is
    /// centred on angle 0.
    pub direction_marginal: Vec<f64>,
    /// Bins above three times the median bin.
    pub peaks: Vec<usize>,
}

impl HusimiStats {
    pub fn bin_center(&self, b: usize) -> f64 {
        2.0 * PI * b as f64 / self.direction_marginal.len() as f64
    }

    /// Columns `theta_bin, mass`.
    pub fn marginal_csv(&self) -> CsvTable {
        let mut csv = CsvTable::new(&["theta_bin", "mass"]);
        for (b, m) in self.direction_marginal.iter().enumerate() {
            csv.push_numbers(&[self.bin_center(b), *m]);
        }
        csv
    }
}

pub fn husimi_statistics(field: &HusimiField, band: (f64, f64), bins: usize) -> Result<HusimiStats> {
    if bins == 0 {
        return Err(Error::InvalidArgument("need at least one angle bin".into()));
    }
    let marg = field.momentum_marginal();
    let total: f64 = marg.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroMass);
    }
    let mut shell = 0.0;
    let mut hist = vec![0.0; bins];
    let width = 2.0 * PI / bins as f64;
    for (xi, m) in field.momenta.iter().zip(&marg) {
        let r = xi.norm();
        if r >= band.0 && r <= band.1 {
            shell += m;
        }
        let th = (xi.y.atan2(xi.x) + 0.5 * width).rem_euclid(2.0 * PI);
        hist[((th / width) as usize).min(bins - 1)] += m;
    }
    hist.iter_mut().for_each(|v| *v /= total);
    let mut sorted = hist.clone();
    sorted.sort_by(f64::total_cmp);
    let median = if bins % 2 == 1 {
        sorted[bins / 2]
    } else {
        0.5 * (sorted[bins / 2 - 1] + sorted[bins / 2])
    };
    let peaks = (0..bins).filter(|&b| hist[b] > 3.0 * median).collect();
    Ok(HusimiStats {
        total_mass: total,
        shell_mass: shell / total,
        direction_marginal: hist,
        peaks,
    })
}

/// Multiplier `ψ(|h k − ξ₀| / width)` of the projector on each Fourier bin.
pub fn projector_multiplier(u: &PeriodicField, xi0: Point, width: f64, h: f64) -> Result<Vec<f64>> {
    check_h(h)?;
    let spacing = h * 2.0 * PI / u.lx.min(u.ly);
    if !(width >= spacing) {
        return Err(Error::EmptyProjector(format!(
            "width {width} is below the Fourier bin spacing {spacing}"
        )));
    }
    let mut m = Vec::with_capacity(u.nx * u.ny);
    for my in 0..u.ny {
        for mx in 0..u.nx {
            let k = Point::new(h * u.kx(mx), h * u.ky(my));
            m.push(flat_top(k.dist(xi0) / width));
        }
    }
    if m.iter().all(|&v| v == 0.0) {
        return Err(Error::EmptyProjector("no Fourier bin inside the cutoff".into()));
    }
    Ok(m)
}

/// `E_ξ u`: the smooth Fourier cutoff around `ξ₀`.
pub fn microlocal_project(u: &PeriodicField, xi0: Point, width: f64, h: f64) -> Result<PeriodicField> {
    let m = projector_multiplier(u, xi0, width, h)?;
    let c: Vec<Complex64> = u.coefficients().iter().zip(&m).map(|(c, s)| c * s).collect();
    Ok(u.from_coefficients(&c))
}

/// `max |ψ² − ψ|` over the bins; zero when the cutoff is 0/1 on every bin.
pub fn idempotency_defect(multiplier: &[f64]) -> f64 {
    multiplier.iter().map(|&s| (s * s - s).abs()).fold(0.0, f64::max)
}

/// Five-point Laplacian `−Δ_h` on the periodic grid.
pub fn periodic_laplacian(u: &PeriodicField) -> PeriodicField {
    let (nx, ny) = (u.nx, u.ny);
    let (cx, cy) = (1.0 / u.hx().powi(2), 1.0 / u.hy().powi(2));
    let mut out = vec![Complex64::new(0.0, 0.0); nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            let at = |a: usize, b: usize| u.values[b * nx + a];
            let c = at(i, j);
            let lap = (c * 2.0 - at((i + 1) % nx, j) - at((i + nx - 1) % nx, j)) * cx
                + (c * 2.0 - at(i, (j + 1) % ny) - at(i, (j + ny - 1) % ny)) * cy;
            out[j * nx + i] = lap;
        }
    }
    u.with_values(out)
}

/// Eigenvalue of [`periodic_laplacian`] on Fourier bin `(mx, my)`.
pub fn periodic_laplacian_symbol(u: &PeriodicField, mx: usize, my: usize) -> f64 {
    let s = |k: f64, h: f64| 4.0 / (h * h) * (0.5 * k * h).sin().powi(2);
    s(u.kx(mx), u.hx()) + s(u.ky(my), u.hy())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CommutatorReport {
    /// `‖[A, E] v‖ / ‖v‖` with both operators diagonal in the Fourier basis.
    pub fourier: f64,
    /// The same through the real-space stencil, relative to `‖A‖ ‖v‖`.
    pub real_space: f64,
    pub laplacian_norm: f64,
}

pub fn projector_commutator(v: &PeriodicField, xi0: Point, width: f64, h: f64) -> Result<CommutatorReport> {
    let m = projector_multiplier(v, xi0, width, h)?;
    let c = v.coefficients();
    let vn = v.norm();
    if vn == 0.0 {
        return Err(Error::ZeroVector);
    }
    let mut diff = Vec::with_capacity(c.len());
    for my in 0..v.ny {
        for mx in 0..v.nx {
            let k = my * v.nx + mx;
            let a = periodic_laplacian_symbol(v, mx, my);
            let (projected, differentiated) = (c[k] * m[k], c[k] * a);
            diff.push(projected * a - differentiated * m[k]);
        }
    }
    let fourier = v.from_coefficients(&diff).norm() / vn;
    let ae = periodic_laplacian(&microlocal_project(v, xi0, width, h)?);
    let ea = microlocal_project(&periodic_laplacian(v), xi0, width, h)?;
    let d = ae.with_values(ae.values.iter().zip(&ea.values).map(|(a, b)| a - b).collect());
    let a_norm = 4.0 / v.hx().powi(2) + 4.0 / v.hy().powi(2);
    Ok(CommutatorReport {
        fourier,
        real_space: d.norm() / (a_norm * vn),
        laplacian_norm: a_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane_wave(n: usize, m: (i32, i32)) -> PeriodicField {
        PeriodicField::from_fn(n, n, 1.0, 1.0, |p| {
            Complex64::from_polar(1.0, 2.0 * PI * (m.0 as f64 * p.x + m.1 as f64 * p.y))
        })
    }

    #[test]
    fn parser_expands_products() {
        let s = SymbolSpec::parse("2*(gx(0.5,0.5,0.1) + 1) * rxi(1, 0.2) - 3").unwrap();
        assert_eq!(s.terms().len(), 3);
        let x = Point::new(0.5, 0.5);
        let xi = Point::new(1.0, 0.0);
        assert!((s.eval(x, xi, (1.0, 1.0)) - (2.0 * 2.0 - 3.0)).abs() < 1e-15);
        assert!(SymbolSpec::parse("gx(1, 2)").is_err());
        assert!(SymbolSpec::parse("foo(1)").is_err());
        assert!(SymbolSpec::parse("1 +").is_err());
        let back: SymbolSpec = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn identity_multiplier_and_fourier_multiplier() {
        let u = plane_wave(32, (3, -2));
        let one = SymbolSpec::parse("one").unwrap();
        let id = quantize_apply(&one, 0.05, &u).unwrap();
        let err = id.values.iter().zip(&u.values).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-12);
        let h = 0.05;
        let a = SymbolSpec::parse("rxi(1, 0.5)").unwrap();
        let k = 2.0 * PI * 13f64.sqrt();
        let out = quantize_apply(&a, h, &u).unwrap();
        let expect = bump((h * k - 1.0) / 0.5);
        for (o, v) in out.values.iter().zip(&u.values) {
            assert!((o - v * expect).norm() < 1e-12);
        }
    }

    #[test]
    fn spatial_symbol_multiplies_pointwise() {
        let u = PeriodicField::from_fn(24, 24, 1.0, 1.0, |p| Complex64::new((2.0 * PI * p.x).cos() + p.y, 0.0));
        let a = SymbolSpec::parse("gx(0.3, 0.6, 0.15)").unwrap();
        let out = quantize_apply(&a, 0.1, &u).unwrap();
        for j in 0..24 {
            for i in 0..24 {
                let x = u.position(i, j);
                let w = a.eval(x, Point::new(0.0, 0.0), (1.0, 1.0));
                assert!((out.values[j * 24 + i] - u.values[j * 24 + i] * w).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn husimi_of_zero_and_plane_wave() {
        let slice = HusimiSlice {
            nx: 8,
            ny: 8,
            xi: XiSampling::Polar {
                r_min: 0.0,
                r_max: 2.0,
                nr: 64,
                ntheta: 128,
            },
        };
        let zero = PeriodicField::from_fn(16, 16, 1.0, 1.0, |_| Complex64::new(0.0, 0.0));
        let hz = husimi(&zero, 100.0, &slice).unwrap();
        assert!(hz.values.iter().all(|&v| v == 0.0));
        assert!(matches!(husimi_statistics(&hz, (0.8, 1.2), 16), Err(Error::ZeroMass)));
        // |k| = 20π, so λ = (20π)² puts the wave on |hξ| = 1
        let u = plane_wave(64, (10, 0));
        let lambda = (20.0 * PI).powi(2);
        let hu = husimi(&u, lambda, &slice).unwrap();
        assert!(hu.values.iter().all(|&v| v >= 0.0));
        assert!((hu.mass() - 1.0).abs() < 1e-3, "{}", hu.mass());
        let st = husimi_statistics(&hu, (0.5, 1.5), 16).unwrap();
        assert!((st.shell_mass - 1.0).abs() < 1e-6);
        assert!(st.peaks.contains(&0));
        assert!(st.direction_marginal[0] > 0.9, "{:?}", st.direction_marginal);
        // uniform in x0
        let top = hu.values.iter().cloned().fold(0.0, f64::max);
        for chunk in hu.values.chunks(64) {
            assert!(chunk.iter().all(|v| (v - chunk[0]).abs() <= 1e-10 * top));
        }
        let coarse = HusimiSlice { nx: 4, ..slice };
        assert!(matches!(husimi(&u, lambda, &coarse), Err(Error::CoarseSlice(4))));
    }

    #[test]
    fn projector_is_identity_inside_and_zero_outside() {
        let h = 1.0 / (2.0 * PI * 8.0);
        let inside = plane_wave(32, (8, 0));
        let p = microlocal_project(&inside, Point::new(1.0, 0.0), 0.3, h).unwrap();
        let err = p.values.iter().zip(&inside.values).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-12);
        let outside = plane_wave(32, (0, 8));
        let q = microlocal_project(&outside, Point::new(1.0, 0.0), 0.3, h).unwrap();
        assert!(q.norm() < 1e-12);
        assert!(matches!(
            microlocal_project(&inside, Point::new(1.0, 0.0), 0.01, h),
            Err(Error::EmptyProjector(_))
        ));
    }

    #[test]
    fn flat_top_profile() {
        assert_eq!(flat_top(0.0), 1.0);
        assert_eq!(flat_top(0.5), 1.0);
        assert_eq!(flat_top(1.0), 0.0);
        assert!((flat_top(0.75) - 0.5).abs() < 1e-15);
    }
}
