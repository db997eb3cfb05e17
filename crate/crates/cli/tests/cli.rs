use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bsl_core::discretize::build_grid;
use bsl_core::eigensolve::read_cache;
use bsl_core::config::RunConfig;

const SQUARE: &str = r#"
seed = 1

[domain]
kind = "rectangle"
bc_x = "dirichlet"
bc_y = "dirichlet"

[grid]
resolution = 15

[solver]
count = 6
"#;

const STRIP_TORUS: &str = r#"
seed = 3

[domain]
kind = "torus_minus_obstacle"
obstacle_bc = "dirichlet"
obstacle = { shape = "union", parts = [] }

[grid]
resolution = 32

[solver]
count = 12

[region]
parts = [{ type = "rect", x0 = 0.0, x1 = 1.0, y0 = 0.0, y1 = 0.25 }]
"#;

const STADIUM: &str = r#"
seed = 2

[domain]
kind = "stadium"
bc = "dirichlet"

[grid]
resolution = 48

[solver]
count = 20

[region]
parts = [{ type = "neighborhood", piece = "gamma1", delta = 0.15 }]
"#;

fn bsl(args: &[&str], config: Option<&Path>, out: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_bsl"));
    cmd.env_remove("BSL_OUT").arg("--out").arg(out);
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn manifest(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn column(csv: &str, name: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let idx = lines.next().unwrap().split(',').position(|h| h == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().parse().unwrap()).collect()
}

#[test]
fn solve_writes_cache_listed_in_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "square.toml", SQUARE);
    let out = dir.path().join("out");
    let o = bsl(&["solve"], Some(&cfg), &out);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = manifest(&out.join("solve.manifest.json"));
    let artifacts: Vec<&str> = m["artifacts"].as_array().unwrap().iter().map(|a| a.as_str().unwrap()).collect();
    assert!(artifacts.contains(&"eigenpairs.bsleig"));
    for a in &artifacts {
        assert!(out.join(a).exists(), "{a} listed but missing");
    }
    assert_eq!(m["resolution"], 15);
    assert_eq!(m["seed"], 1);
    assert_eq!(m["domain"]["kind"], "rectangle");
    let bytes = fs::read(out.join("eigenpairs.bsleig")).unwrap();
    assert_eq!(&bytes[..8], b"BSLEIG01");
    let (pairs, _) = read_cache(&out.join("eigenpairs.bsleig")).unwrap();
    assert_eq!(pairs.len(), 6);
}

#[test]
fn malformed_config_exits_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    for (i, text) in ["this is not toml [", "[grid]\nresolution = 8", &SQUARE.replace("count = 6", "count = 6\nwat = 1")]
        .iter()
        .enumerate()
    {
        let cfg = write_config(dir.path(), &format!("bad{i}.toml"), text);
        let o = bsl(&["solve"], Some(&cfg), &out);
        assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    }
    let missing = bsl(&["solve"], Some(&dir.path().join("absent.toml")), &out);
    assert_eq!(missing.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn non_convergence_exits_3_and_reports_residual() {
    let dir = tempfile::tempdir().unwrap();
    let text = SQUARE.replace("count = 6", "count = 6\nmax_restarts = 0\ntol = 1e-15");
    let cfg = write_config(dir.path(), "tight.toml", &text);
    let out = dir.path().join("out");
    let o = bsl(&["solve"], Some(&cfg), &out);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("attained residual"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn thm2_on_obstacle_free_torus_reports_strip_masses() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "torus.toml", STRIP_TORUS);
    let out = dir.path().join("out");
    assert!(bsl(&["solve"], Some(&cfg), &out).status.success());
    let o = bsl(&["scan", "thm2"], Some(&cfg), &out);
    assert!(o.status.success(), "{}", stderr(&o));

    let (pairs, _) = read_cache(&out.join("eigenpairs.bsleig")).unwrap();
    let domain = RunConfig::parse(STRIP_TORUS).unwrap().domain;
    let grid = build_grid(&domain, 32).unwrap();
    let strip: Vec<f64> = pairs
        .iter()
        .map(|p| {
            let (inside, total) = (0..grid.len()).fold((0.0, 0.0), |(a, b), k| {
                let y = grid.node_position(k).y;
                let w = p.u[k] * p.u[k];
                (if y > 0.0 && y < 0.25 { a + w } else { a }, b + w)
            });
            inside / total
        })
        .collect();
    let csv = fs::read_to_string(out.join("scan_thm2.csv")).unwrap();
    let lambdas = column(&csv, "lambda");
    let ratios = column(&csv, "ratio");
    for (i, p) in pairs.iter().enumerate() {
        let same: Vec<usize> = (0..lambdas.len()).filter(|&r| lambdas[r] == p.lambda).collect();
        assert!(
            same.iter().any(|&r| (ratios[r] - strip[i]).abs() < 1e-12),
            "mode {i}: strip mass {} not among {:?}",
            strip[i],
            same.iter().map(|&r| ratios[r]).collect::<Vec<_>>()
        );
    }
    assert!((strip[0] - 0.25).abs() < 1e-12, "constant mode sees the strip area");
    let summary = manifest(&out.join("scan_thm2.summary.json"));
    assert!(summary["min_ratio"].as_f64().unwrap() > 0.0);
}

#[test]
fn thm1_on_stadium_and_cache_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "stadium.toml", STADIUM);
    let out = dir.path().join("out");
    assert!(bsl(&["solve"], Some(&cfg), &out).status.success());
    let o = bsl(&["scan", "thm1"], Some(&cfg), &out);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = manifest(&out.join("scan_thm1.summary.json"));
    assert!(summary["min_ratio"].as_f64().unwrap() > 0.0);
    assert!(summary["slope"].as_f64().unwrap().is_finite());
    assert_eq!(summary["window_minima"].as_array().unwrap().len(), 1);
    let m = manifest(&out.join("scan_thm1.manifest.json"));
    let artifacts = m["artifacts"].as_array().unwrap();
    assert_eq!(
        artifacts.iter().filter(|a| a.as_str().unwrap().ends_with(".pgm")).count(),
        20
    );
    for a in artifacts {
        assert!(out.join(a.as_str().unwrap()).exists());
    }

    let other = write_config(dir.path(), "other.toml", &STADIUM.replace("resolution = 48", "resolution = 40"));
    let o = bsl(&["scan", "thm1"], Some(&other), &out);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    let reseeded = bsl(&["--seed", "99", "scan", "thm1"], Some(&cfg), &out);
    assert_eq!(reseeded.status.code(), Some(4));
    let absent = bsl(&["scan", "thm1", "--cache", "nowhere.bsleig"], Some(&cfg), &out);
    assert_eq!(absent.status.code(), Some(4));
}

#[test]
fn sinai_rerun_reproduces_eigenvalue_csv() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
seed = 5

[domain]
kind = "torus_minus_obstacle"
obstacle_bc = "dirichlet"
obstacle = { shape = "disc", center = [0.5, 0.5], radius = 0.25 }

[grid]
resolution = 256

[solver]
count = 100
"#;
    let cfg = write_config(dir.path(), "sinai.toml", text);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let oa = bsl(&["solve"], Some(&cfg), &a);
    assert!(oa.status.success(), "{}", stderr(&oa));
    let ob = bsl(&["--threads", "1", "solve"], Some(&cfg), &b);
    assert!(ob.status.success(), "{}", stderr(&ob));
    let ea = fs::read(a.join("eigenvalues.csv")).unwrap();
    assert_eq!(ea, fs::read(b.join("eigenvalues.csv")).unwrap());
    assert_eq!(column(&String::from_utf8(ea).unwrap(), "lambda").len(), 100);
    assert_eq!(
        fs::read(a.join("eigenpairs.bsleig")).unwrap(),
        fs::read(b.join("eigenpairs.bsleig")).unwrap()
    );
}

#[test]
fn verify_suites_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = bsl(&["verify", "unit"], None, &out);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("verify_unit.csv")).unwrap();
    assert!(csv.starts_with("suite,check,relation,expected,actual,tolerance,passed,note"));
    assert!(csv.lines().skip(1).all(|l| l.contains(",true,")));

    let sliver = SQUARE.to_string()
        + "\n[region]\nparts = [{ type = \"rect\", x0 = 0.3001, x1 = 0.3002, y0 = 0.3001, y1 = 0.3002 }]\n";
    let cfg = write_config(dir.path(), "sliver.toml", &sliver);
    let o = bsl(&["verify", "theorems"], Some(&cfg), &out);
    assert_eq!(o.status.code(), Some(1));
    let csv = fs::read_to_string(out.join("verify_theorems.csv")).unwrap();
    let failed: Vec<&str> = csv
        .lines()
        .filter(|l| l.contains(",false,"))
        .map(|l| l.split(',').nth(1).unwrap())
        .collect();
    assert_eq!(failed, ["stadium_gamma1_mass", "sinai_annulus_mass"]);
}

#[test]
fn bsl_out_overrides_out_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "square.toml", SQUARE);
    let (flag, env) = (dir.path().join("flag"), dir.path().join("env"));
    let o = Command::new(env!("CARGO_BIN_EXE_bsl"))
        .env("BSL_OUT", &env)
        .arg("--out")
        .arg(&flag)
        .arg("--config")
        .arg(&cfg)
        .arg("solve")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(env.join("eigenpairs.bsleig").exists());
    assert!(!flag.exists());
}

#[test]
fn rays_and_husimi_outputs_are_thread_independent() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
seed = 4

[domain]
kind = "torus_minus_obstacle"
obstacle_bc = "dirichlet"

[grid]
resolution = 48

[solver]
count = 8

[region]
parts = [{ type = "annulus", center = [0.5, 0.5], r_inner = 0.25, r_outer = 0.35 }]

[rays]
time = 20.0
lengths = [1.0, 5.0, 10.0]

[husimi]
modes = [0, 7]
symbol = "gx(0.5, 0.1, 0.05) * rxi(1, 0.3)"

[husimi.slice]
nx = 8
ny = 8
xi = { kind = "polar", r_min = 0.0, r_max = 2.0, nr = 10, ntheta = 16 }
"#;
    let cfg = write_config(dir.path(), "sinai.toml", text);
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let out = dir.path().join(format!("t{threads}"));
        for args in [&["solve"][..], &["rays"], &["husimi"]] {
            let mut full = vec!["--threads", threads];
            full.extend_from_slice(args);
            let o = bsl(&full, Some(&cfg), &out);
            assert!(o.status.success(), "{args:?}: {}", stderr(&o));
        }
        let read = |n: &str| fs::read(out.join(n)).unwrap();
        outputs.push([
            read("trajectory.csv"),
            read("control_curve.csv"),
            read("husimi.csv"),
            read("husimi/marginal_0007.csv"),
        ]);
    }
    assert_eq!(outputs[0], outputs[1]);
    let husimi = String::from_utf8(outputs[0][2].clone()).unwrap();
    assert_eq!(husimi.lines().count(), 3);
    let fractions = column(&String::from_utf8(outputs[0][1].clone()).unwrap(), "fraction");
    assert!(fractions.windows(2).all(|w| w[0] <= w[1]));
}
