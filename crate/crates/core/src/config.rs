//! Run configuration read from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::discretize::{assemble_laplacian, build_grid, Grid, SparseOperator};
use crate::eigensolve::{solve_lowest, solve_window_with, EigenPair, SolverOptions};
use crate::error::{Error, Result};
use crate::geometry::{DomainSpec, Point, Region};
use crate::phase::{HusimiSlice, SymbolSpec};
use crate::rays::ControlSampling;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds every random choice of the run.
    #[serde(default)]
    pub seed: u64,
    pub domain: DomainSpec,
    pub grid: GridConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    /// Control region `V`.
    #[serde(default)]
    pub region: Option<Region>,
    #[serde(default)]
    pub scan: ScanConfig,
    #[serde(default)]
    pub rays: RaysConfig,
    #[serde(default)]
    pub husimi: HusimiConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub resolution: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub count: usize,
    pub tol: f64,
    /// Solve around this value instead of the bottom of the spectrum.
    pub target: Option<f64>,
    pub max_restarts: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            count: 20,
            tol: 1e-8,
            target: None,
            max_restarts: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    /// Modes per window of the window minima.
    pub window: usize,
    pub resolvent: ResolventConfig,
    pub orbit: Option<OrbitConfig>,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            window: 20,
            resolvent: ResolventConfig::default(),
            orbit: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResolventConfig {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub points: usize,
    pub trials: usize,
}

impl Default for ResolventConfig {
    fn default() -> Self {
        Self {
            lambda_min: 10.0,
            lambda_max: 500.0,
            points: 8,
            trials: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrbitConfig {
    /// Closed polyline of the orbit.
    pub points: Vec<Point>,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RaysConfig {
    pub start: Point,
    pub direction: Point,
    pub time: f64,
    /// Lengths of the geometric control curve.
    pub lengths: Vec<f64>,
    pub sampling: ControlSampling,
}

impl Default for RaysConfig {
    fn default() -> Self {
        Self {
            start: Point::new(0.1, 0.1),
            direction: Point::new(1.0, (1.0 + 5f64.sqrt()) / 2.0),
            time: 50.0,
            lengths: vec![1.0, 2.0, 5.0, 10.0, 20.0, 50.0],
            sampling: ControlSampling::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HusimiConfig {
    /// Indices into the solved pairs; empty means all.
    pub modes: Vec<usize>,
    pub slice: HusimiSlice,
    pub band: [f64; 2],
    pub bins: usize,
    /// Symbol whose pairing is reported for each mode.
    pub symbol: Option<SymbolSpec>,
}

impl Default for HusimiConfig {
    fn default() -> Self {
        Self {
            modes: Vec::new(),
            slice: HusimiSlice::default(),
            band: [0.8, 1.2],
            bins: 16,
            symbol: None,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.domain.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.grid.resolution == 0 {
            return bad("grid.resolution must be positive".into());
        }
        if self.solver.count == 0 {
            return bad("solver.count must be positive".into());
        }
        if !(self.solver.tol > 0.0 && self.solver.tol < 1.0) {
            return bad(format!("solver.tol must lie in (0, 1), got {}", self.solver.tol));
        }
        if let Some(r) = &self.region {
            r.validate(&self.domain).map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.scan.window == 0 {
            return bad("scan.window must be positive".into());
        }
        let rc = &self.scan.resolvent;
        if !(rc.lambda_max >= rc.lambda_min && rc.trials > 0) {
            return bad("scan.resolvent needs lambda_max >= lambda_min and trials > 0".into());
        }
        if !(self.husimi.band[1] > self.husimi.band[0] && self.husimi.bins > 0) {
            return bad("husimi needs a nonempty band and at least one bin".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        digest(self)
    }

    /// Hash of the inputs that determine the eigenpairs; caches are keyed
    /// on it.
    pub fn solve_hash(&self) -> String {
        #[derive(Serialize)]
        struct Key<'a> {
            seed: u64,
            domain: &'a DomainSpec,
            grid: &'a GridConfig,
            solver: &'a SolverConfig,
        }
        digest(&Key {
            seed: self.seed,
            domain: &self.domain,
            grid: &self.grid,
            solver: &self.solver,
        })
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            max_restarts: self.solver.max_restarts,
            seed: self.seed,
            ..SolverOptions::new(self.solver.tol)
        }
    }

    pub fn discretize(&self) -> Result<(Grid, SparseOperator)> {
        let grid = build_grid(&self.domain, self.grid.resolution)?;
        let op = assemble_laplacian(&self.domain, &grid)?;
        Ok((grid, op))
    }

    pub fn solve(&self, op: &SparseOperator) -> Result<Vec<EigenPair>> {
        let opts = self.solver_options();
        match self.solver.target {
            Some(t) => solve_window_with(op, t, self.solver.count, &opts),
            None => solve_lowest(op, self.solver.count, &opts),
        }
    }

    /// Short label of the boundary conditions for manifests.
    pub fn bc_label(&self) -> String {
        match &self.domain {
            DomainSpec::Rectangle { bc_x, bc_y, .. } => format!("x:{bc_x:?},y:{bc_y:?}"),
            DomainSpec::Stadium { bc, .. } => format!("{bc:?}"),
            DomainSpec::TorusMinusObstacle { obstacle_bc, .. } => format!("obstacle:{obstacle_bc:?}"),
            DomainSpec::SquareMinusObstacle {
                outer_bc, obstacle_bc, ..
            } => format!("outer:{outer_bc:?},obstacle:{obstacle_bc:?}"),
            DomainSpec::Barrier { outer_bc, slit_bc, .. } => format!("outer:{outer_bc:?},slit:{slit_bc:?}"),
        }
        .to_lowercase()
    }
}

fn digest<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const STADIUM: &str = r#"
seed = 3

[domain]
kind = "stadium"
height = 1.0
bc = "dirichlet"

[grid]
resolution = 64

[solver]
count = 10

[region]
parts = [{ type = "neighborhood", piece = "gamma1", delta = 0.15 }]
"#;

    #[test]
    fn parses_with_defaults() {
        let cfg = RunConfig::parse(STADIUM).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.solver.tol, 1e-8);
        assert_eq!(cfg.scan.window, 20);
        assert_eq!(cfg.rays.sampling, ControlSampling::default());
        assert!(cfg.region.is_some());
    }

    #[test]
    fn hashes_track_relevant_fields() {
        let a = RunConfig::parse(STADIUM).unwrap();
        let mut b = a.clone();
        b.scan.window = 5;
        assert_eq!(a.solve_hash(), b.solve_hash());
        assert_ne!(a.hash(), b.hash());
        b.grid.resolution = 65;
        assert_ne!(a.solve_hash(), b.solve_hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "seed = 1",
            "[domain]\nkind = \"blob\"\n[grid]\nresolution = 8",
            &STADIUM.replace("resolution = 64", "resolution = 0"),
            &STADIUM.replace("count = 10", "count = 10\nbogus = 1"),
            &STADIUM.replace("delta = 0.15", "delta = -1"),
        ] {
            assert!(matches!(RunConfig::parse(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn symbol_round_trips_through_toml() {
        let text = format!("{STADIUM}\n[husimi]\nsymbol = \"gx(0.5, 0.5, 0.1) * rxi(1, 0.2)\"\n");
        let cfg = RunConfig::parse(&text).unwrap();
        let back = RunConfig::parse(&toml::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
