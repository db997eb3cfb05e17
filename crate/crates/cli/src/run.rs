use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use serde::Serialize;

use bsl_core::config::RunConfig;
use bsl_core::control::{
    heatmap, orbit_weakness_measure, resolvent_control_check, resolvent_lambdas, theorem1_scan, theorem2_scan,
    MassScanReport,
};
use bsl_core::discretize::{build_grid, Grid};
use bsl_core::eigensolve::{read_cache, write_cache, CacheManifest, EigenPair};
use bsl_core::geometry::{region_mask, BoundaryPiece, DomainSpec, Region};
use bsl_core::io::{fmt_f64, write_json, write_pgm, write_png_overlay, CsvTable};
use bsl_core::phase::{husimi as husimi_density, husimi_statistics, semiclassical_pairing, PeriodicField};
use bsl_core::rays::{control_fraction_curve, evolve};
use bsl_core::verify::{run_suite, Suite, VerifyOptions};
use bsl_core::Error;

use crate::ScanKind;

pub const CACHE_NAME: &str = "eigenpairs.bsleig";

pub struct Context {
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
}

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn other(message: String) -> Self {
        Self { code: 1, message }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) => 2,
            Error::NoConvergence { .. } => 3,
            Error::Cache(_) => 4,
            _ => 1,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type Res<T> = Result<T, Failure>;

#[derive(Debug, Serialize)]
struct Tolerances {
    tol: f64,
    max_restarts: usize,
}

/// Record of one invocation; written last so every listed file exists.
#[derive(Debug, Serialize)]
struct RunManifest {
    command: String,
    config_hash: Option<String>,
    domain: Option<DomainSpec>,
    resolution: Option<usize>,
    bc: Option<String>,
    tolerances: Option<Tolerances>,
    seed: u64,
    artifacts: Vec<String>,
    timings: BTreeMap<String, f64>,
}

struct Run {
    out: PathBuf,
    manifest: RunManifest,
    clock: Instant,
}

impl Run {
    fn new(ctx: &Context, command: &str, cfg: Option<&RunConfig>, seed: u64) -> Self {
        Self {
            out: ctx.out.clone(),
            manifest: RunManifest {
                command: command.to_string(),
                config_hash: cfg.map(RunConfig::hash),
                domain: cfg.map(|c| c.domain.clone()),
                resolution: cfg.map(|c| c.grid.resolution),
                bc: cfg.map(RunConfig::bc_label),
                tolerances: cfg.map(|c| Tolerances {
                    tol: c.solver.tol,
                    max_restarts: c.solver.max_restarts,
                }),
                seed,
                artifacts: Vec::new(),
                timings: BTreeMap::new(),
            },
            clock: Instant::now(),
        }
    }

    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.manifest
            .timings
            .insert(stage.to_string(), now.duration_since(self.clock).as_secs_f64());
        self.clock = now;
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.manifest.artifacts.push(name.to_string());
        self.out.join(name)
    }

    fn csv(&mut self, name: &str, table: &CsvTable) -> Res<()> {
        let p = self.path(name);
        Ok(table.write(&p)?)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Res<()> {
        let p = self.path(name);
        Ok(write_json(&p, value)?)
    }

    fn finish(self, name: &str) -> Res<()> {
        Ok(write_json(&self.out.join(name), &self.manifest)?)
    }
}

fn load_config(ctx: &Context) -> Res<RunConfig> {
    let path = ctx.config.as_ref().ok_or_else(|| Failure {
        code: 2,
        message: "--config is required".into(),
    })?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = ctx.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn config_error(message: String) -> Failure {
    Failure { code: 2, message }
}

pub fn solve(ctx: &Context) -> Res<()> {
    let cfg = load_config(ctx)?;
    let mut run = Run::new(ctx, "solve", Some(&cfg), cfg.seed);
    let (grid, op) = cfg.discretize()?;
    run.lap("discretize");
    let pairs = cfg.solve(&op)?;
    run.lap("solve");
    let manifest = CacheManifest {
        config_hash: cfg.solve_hash(),
        domain: serde_json::to_string(&cfg.domain).map_err(|e| Failure::other(e.to_string()))?,
        resolution: cfg.grid.resolution,
        bc: cfg.bc_label(),
        tol: cfg.solver.tol,
        dim: grid.len(),
        count: pairs.len(),
    };
    let cache = run.path(CACHE_NAME);
    write_cache(&cache, &pairs, &manifest)?;
    run.manifest.artifacts.push(format!("{CACHE_NAME}.manifest"));
    let mut csv = CsvTable::new(&["index", "lambda", "residual"]);
    for (i, p) in pairs.iter().enumerate() {
        csv.push(vec![i.to_string(), fmt_f64(p.lambda), fmt_f64(p.residual)]);
    }
    run.csv("eigenvalues.csv", &csv)?;
    run.lap("write");
    println!(
        "solved {} pairs on {} nodes, lambda in [{:.6}, {:.6}]",
        pairs.len(),
        grid.len(),
        pairs.first().map_or(f64::NAN, |p| p.lambda),
        pairs.last().map_or(f64::NAN, |p| p.lambda)
    );
    run.finish("solve.manifest.json")
}

/// Cached pairs for `cfg`, refusing caches produced from other inputs.
fn load_pairs(ctx: &Context, cfg: &RunConfig, cache: Option<PathBuf>) -> Res<(Grid, Vec<EigenPair>)> {
    let path = cache.unwrap_or_else(|| ctx.out.join(CACHE_NAME));
    let (pairs, manifest) = read_cache(&path).map_err(|e| match e {
        Error::Io(io) => Failure {
            code: 4,
            message: format!("cannot read cache {}: {io}", path.display()),
        },
        e => e.into(),
    })?;
    if manifest.config_hash != cfg.solve_hash() {
        return Err(Failure {
            code: 4,
            message: format!(
                "cache {} was produced from a different configuration (hash {}, expected {})",
                path.display(),
                manifest.config_hash,
                cfg.solve_hash()
            ),
        });
    }
    let grid = build_grid(&cfg.domain, cfg.grid.resolution)?;
    if manifest.dim != grid.len() {
        return Err(Failure {
            code: 4,
            message: format!("cache dimension {} does not match grid size {}", manifest.dim, grid.len()),
        });
    }
    Ok((grid, pairs))
}

/// Configured region, or the default control region for the scan.
fn scan_region(cfg: &RunConfig, kind: ScanKind) -> Res<Region> {
    if let Some(r) = &cfg.region {
        return Ok(r.clone());
    }
    let has_obstacle = cfg.domain.obstacle().is_some_and(|o| !o.is_empty());
    match kind {
        ScanKind::Thm1 => Ok(Region::neighborhood(BoundaryPiece::Gamma1, 0.15)),
        _ if has_obstacle => Ok(Region::obstacle_annulus(&cfg.domain, 0.1)?),
        _ if cfg.domain.rectangle_part().is_some() => Ok(Region::neighborhood(BoundaryPiece::Gamma1, 0.15)),
        _ => Err(config_error(format!("scan {} needs a [region]", kind.name()))),
    }
}

pub fn scan(ctx: &Context, kind: ScanKind, cache: Option<PathBuf>) -> Res<()> {
    let cfg = load_config(ctx)?;
    let (grid, pairs) = load_pairs(ctx, &cfg, cache)?;
    let mut run = Run::new(ctx, &format!("scan {}", kind.name()), Some(&cfg), cfg.seed);
    run.lap("load");
    match kind {
        ScanKind::Thm1 | ScanKind::Thm2 => {
            let v = scan_region(&cfg, kind)?;
            let report = if kind == ScanKind::Thm1 {
                theorem1_scan(&cfg.domain, &v, &grid, &pairs, cfg.scan.window)?
            } else {
                theorem2_scan(&cfg.domain, &v, &grid, &pairs, cfg.scan.window)?
            };
            run.lap("scan");
            let mask = region_mask(&cfg.domain, &v, &grid)?;
            write_mass_scan(&mut run, kind, &report, &grid, &pairs, &mask)?;
            println!(
                "{}: {} modes, min ratio {:.6e}, slope {:.4}",
                kind.name(),
                report.rows.len(),
                report.min_ratio,
                report.slope
            );
        }
        ScanKind::Resolvent => {
            let v = scan_region(&cfg, kind)?;
            let (_, op) = cfg.discretize()?;
            let rc = &cfg.scan.resolvent;
            let eigenvalues: Vec<f64> = pairs.iter().map(|p| p.lambda).collect();
            let lambdas = resolvent_lambdas(rc.lambda_min, rc.lambda_max, rc.points, &eigenvalues);
            let mut csv = CsvTable::new(&["lambda", "trial", "ratio", "max_ratio", "least_squares"]);
            let mut worst = 0.0f64;
            for (i, &lambda) in lambdas.iter().enumerate() {
                let check =
                    resolvent_control_check(&cfg.domain, &grid, &op, lambda, &v, rc.trials, cfg.seed.wrapping_add(i as u64))?;
                worst = worst.max(check.max_ratio);
                for (t, r) in check.ratios.iter().enumerate() {
                    csv.push(vec![
                        fmt_f64(lambda),
                        t.to_string(),
                        fmt_f64(*r),
                        fmt_f64(check.max_ratio),
                        check.least_squares.to_string(),
                    ]);
                }
            }
            run.lap("scan");
            run.csv("scan_resolvent.csv", &csv)?;
            run.json(
                "scan_resolvent.summary.json",
                &serde_json::json!({ "kind": "resolvent", "lambdas": lambdas.len(), "max_ratio": worst }),
            )?;
            println!("resolvent: {} shifts, max ratio {worst:.6e}", lambdas.len());
        }
        ScanKind::Orbit => {
            let orbit = cfg
                .scan
                .orbit
                .as_ref()
                .ok_or_else(|| config_error("scan orbit needs [scan.orbit]".into()))?;
            let rows = orbit_weakness_measure(&cfg.domain, &grid, &orbit.points, orbit.width, &pairs)?;
            run.lap("scan");
            let mut csv = CsvTable::new(&["index", "lambda", "off_tube_mass", "inv_log_lambda"]);
            for (i, r) in rows.iter().enumerate() {
                csv.push(vec![
                    i.to_string(),
                    fmt_f64(r.lambda),
                    fmt_f64(r.off_tube_mass),
                    fmt_f64(r.inv_log_lambda),
                ]);
            }
            run.csv("scan_orbit.csv", &csv)?;
            let min = rows.iter().map(|r| r.off_tube_mass).fold(f64::INFINITY, f64::min);
            run.json(
                "scan_orbit.summary.json",
                &serde_json::json!({ "kind": "orbit", "modes": rows.len(), "min_off_tube_mass": min }),
            )?;
            println!("orbit: {} modes, min off-tube mass {min:.6e}", rows.len());
        }
    }
    run.lap("write");
    run.finish(&format!("scan_{}.manifest.json", kind.name()))
}

fn write_mass_scan(
    run: &mut Run,
    kind: ScanKind,
    report: &MassScanReport,
    grid: &Grid,
    pairs: &[EigenPair],
    mask: &[bool],
) -> Res<()> {
    let name = kind.name();
    for (i, p) in pairs.iter().enumerate() {
        let hm = heatmap(grid, &p.u, mask);
        let pgm = run.path(&format!("heatmaps/{name}_mode_{i:04}.pgm"));
        write_pgm(&pgm, hm.width, hm.height, &hm.pixels)?;
        let png = run.path(&format!("heatmaps/{name}_mode_{i:04}.png"));
        write_png_overlay(&png, hm.width, hm.height, &hm.pixels, &hm.overlay)?;
    }
    run.csv(&format!("scan_{name}.csv"), &report.to_csv())?;
    run.json(
        &format!("scan_{name}.summary.json"),
        &serde_json::json!({
            "kind": name,
            "modes": report.rows.len(),
            "min_ratio": report.min_ratio,
            "slope": report.slope,
            "implied_constant": report.implied_constant,
            "window_minima": report.window_minima,
        }),
    )
}

pub fn rays(ctx: &Context) -> Res<()> {
    let cfg = load_config(ctx)?;
    let rc = &cfg.rays;
    let mut run = Run::new(ctx, "rays", Some(&cfg), cfg.seed);
    let traj = evolve(&cfg.domain, rc.start, rc.direction, rc.time)?;
    run.lap("evolve");
    let curve = match &cfg.region {
        Some(v) => Some(control_fraction_curve(&cfg.domain, v, &rc.lengths, rc.sampling)?),
        None => None,
    };
    run.lap("control");
    run.csv("trajectory.csv", &traj.to_csv())?;
    for w in &traj.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(curve) = curve {
        let mut csv = CsvTable::new(&["length", "total", "controlled", "fraction"]);
        for r in &curve {
            csv.push(vec![
                fmt_f64(r.length),
                r.total.to_string(),
                r.controlled.to_string(),
                fmt_f64(r.fraction),
            ]);
        }
        run.csv("control_curve.csv", &csv)?;
        if let Some(last) = curve.last() {
            run.csv("uncontrolled.csv", &last.uncontrolled_csv())?;
            println!(
                "control fraction {:.6} at length {} ({} of {} sampled trajectories)",
                last.fraction, last.length, last.controlled, last.total
            );
        }
    }
    println!(
        "trajectory: {} events ({} on the obstacle) over t = {}",
        traj.events.len(),
        traj.obstacle_events(),
        traj.total_time
    );
    run.lap("write");
    run.finish("rays.manifest.json")
}

/// Periodic representative of an eigenfunction: itself on periodic grids,
/// the odd reflection on full Dirichlet rectangles, the zero extension
/// otherwise. Normalized.
fn periodic_field(grid: &Grid, u: &[f64]) -> Res<PeriodicField> {
    let field = if grid.periodic_x && grid.periodic_y {
        PeriodicField::from_grid(grid, u)?
    } else {
        PeriodicField::odd_extension(grid, u).or_else(|_| PeriodicField::zero_extension(grid, u))?
    };
    let n = field.norm();
    if !(n > 0.0) {
        return Err(Error::ZeroMass.into());
    }
    Ok(field.scaled(1.0 / n))
}

pub fn husimi(ctx: &Context, cache: Option<PathBuf>) -> Res<()> {
    let cfg = load_config(ctx)?;
    let (grid, pairs) = load_pairs(ctx, &cfg, cache)?;
    let hc = &cfg.husimi;
    let indices: Vec<usize> = if hc.modes.is_empty() {
        (0..pairs.len()).collect()
    } else {
        hc.modes.clone()
    };
    if let Some(&bad) = indices.iter().find(|&&i| i >= pairs.len()) {
        return Err(config_error(format!(
            "husimi.modes index {bad} out of range, cache holds {} pairs",
            pairs.len()
        )));
    }
    let mut run = Run::new(ctx, "husimi", Some(&cfg), cfg.seed);
    let mut rows = Vec::with_capacity(indices.len());
    for &i in &indices {
        let p = &pairs[i];
        let u = periodic_field(&grid, &p.u)?;
        let field = husimi_density(&u, p.lambda, &hc.slice)?;
        let stats = husimi_statistics(&field, (hc.band[0], hc.band[1]), hc.bins)?;
        let pairing = match &hc.symbol {
            Some(a) => Some(semiclassical_pairing(a, 1.0 / p.lambda.sqrt(), &u)?),
            None => None,
        };
        rows.push((i, p.lambda, stats, pairing));
    }
    run.lap("husimi");
    let mut csv = CsvTable::new(&[
        "index",
        "lambda",
        "total_mass",
        "shell_mass",
        "shell_fraction",
        "peaks",
        "pairing_re",
        "pairing_im",
    ]);
    for (i, lambda, stats, pairing) in &rows {
        let peaks: Vec<String> = stats.peaks.iter().map(ToString::to_string).collect();
        csv.push(vec![
            i.to_string(),
            fmt_f64(*lambda),
            fmt_f64(stats.total_mass),
            fmt_f64(stats.shell_mass),
            fmt_f64(stats.shell_mass / stats.total_mass),
            peaks.join(" "),
            pairing.map_or(String::new(), |q| fmt_f64(q.re)),
            pairing.map_or(String::new(), |q| fmt_f64(q.im)),
        ]);
        run.csv(&format!("husimi/marginal_{i:04}.csv"), &stats.marginal_csv())?;
    }
    run.csv("husimi.csv", &csv)?;
    run.lap("write");
    println!("husimi: {} modes", rows.len());
    run.finish("husimi.manifest.json")
}

pub fn verify(ctx: &Context, suite: Suite) -> Res<()> {
    let cfg = match &ctx.config {
        Some(_) => Some(load_config(ctx)?),
        None => None,
    };
    let seed = ctx.seed.or(cfg.as_ref().map(|c| c.seed)).unwrap_or(0);
    let opts = VerifyOptions {
        seed,
        region: cfg.as_ref().and_then(|c| c.region.clone()),
    };
    let mut run = Run::new(ctx, &format!("verify {suite}"), cfg.as_ref(), seed);
    let report = run_suite(suite, &opts);
    run.lap("suite");
    run.csv(&format!("verify_{suite}.csv"), &report.to_csv())?;
    run.finish(&format!("verify_{suite}.manifest.json"))?;
    let failures: Vec<_> = report.failures().collect();
    println!(
        "{suite}: {} checks, {} failed",
        report.checks.len(),
        failures.len()
    );
    if failures.is_empty() {
        return Ok(());
    }
    for c in &failures {
        if c.note.is_empty() {
            eprintln!("FAIL {}: expected {}, got {} (tol {})", c.name, c.expected, c.actual, c.tolerance);
        } else {
            eprintln!("FAIL {}: {}", c.name, c.note);
        }
    }
    Err(Failure::other(format!("{} {suite} check(s) failed", failures.len())))
}
