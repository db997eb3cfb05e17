use std::f64::consts::PI;

use bsl_core::discretize::{assemble_laplacian, build_grid};
use bsl_core::eigensolve::solve_window;
use bsl_core::geometry::{maximal_rectangle, Bc, DomainSpec, ObstacleSpec, Point};
use bsl_core::modes::{control_table, ControlSearch};
use bsl_core::phase::{
    flow_invariance_defect, husimi, husimi_statistics, idempotency_defect, microlocal_project, projector_commutator,
    projector_multiplier, quantize_apply, semiclassical_pairing, HusimiField, HusimiSlice, PeriodicField, SymbolSpec,
    XiSampling,
};
use bsl_core::Error;
use num_complex::Complex64;
use proptest::prelude::*;

fn empty_torus() -> DomainSpec {
    DomainSpec::TorusMinusObstacle {
        obstacle: ObstacleSpec::none(),
        obstacle_bc: Bc::Dirichlet,
    }
}

fn normalized(f: PeriodicField) -> PeriodicField {
    let n = f.norm();
    f.scaled(1.0 / n)
}

fn random_field(n: usize, seed: &[f64]) -> PeriodicField {
    PeriodicField::from_fn(n, n, 1.0, 1.0, |p| {
        let mut z = Complex64::new(0.0, 0.0);
        for (m, c) in seed.iter().enumerate() {
            let k = 2.0 * PI * (m as f64 + 1.0);
            z += Complex64::new(c * (k * p.x + 0.3 * m as f64).cos(), c * (k * p.y).sin());
        }
        z
    })
}

/// A normalized Sinai eigenfunction near λ ≈ 1000 on the periodic grid.
fn sinai_mode() -> (PeriodicField, f64) {
    let d = DomainSpec::sinai(Bc::Dirichlet);
    let g = build_grid(&d, 32).unwrap();
    let op = assemble_laplacian(&d, &g).unwrap();
    let pair = solve_window(&op, 1000.0, 1, 1e-10).unwrap().remove(0);
    (normalized(PeriodicField::from_grid(&g, &pair.u).unwrap()), pair.lambda)
}

#[test]
fn identity_and_multiplication_pairings() {
    let u = normalized(random_field(32, &[1.0, -0.5, 0.25]));
    let one = SymbolSpec::parse("one").unwrap();
    let p = semiclassical_pairing(&one, 0.02, &u).unwrap();
    assert!((p.re - 1.0).abs() < 1e-10 && p.im.abs() < 1e-12);

    let c = normalized(PeriodicField::from_fn(32, 32, 1.0, 1.0, |_| Complex64::new(1.0, 0.0)));
    let a = SymbolSpec::parse("bx(0.4, 0.5, 0.3)").unwrap();
    let p = semiclassical_pairing(&a, 0.02, &c).unwrap();
    let mean: f64 = (0..32 * 32)
        .map(|k| a.eval(c.position(k % 32, k / 32), Point::new(0.0, 0.0), (1.0, 1.0)))
        .sum::<f64>()
        / 1024.0;
    assert!((p.re - mean).abs() < 1e-12);
}

#[test]
fn pairing_along_a_mode_sequence_tends_to_the_direction_mass() {
    // u_n = e^{2πi n x}, h_n = 1/(2πn): the pairing is ∫ a(x, (1, 0)) dx
    let a = SymbolSpec::parse("gx(0.5, 0.5, 0.08) * gxi(1, 0, 0.3)").unwrap();
    let exact_limit = 2.0 * PI * 0.08 * 0.08;
    for n in [4, 8, 16] {
        let u = PeriodicField::from_fn(64, 64, 1.0, 1.0, |p| Complex64::from_polar(1.0, 2.0 * PI * n as f64 * p.x));
        let h = 1.0 / (2.0 * PI * n as f64);
        let p = semiclassical_pairing(&a, h, &u).unwrap();
        // oracle: single Fourier mode, so Op(a)u = a(x, hk) u
        let oracle: f64 = (0..64 * 64)
            .map(|k| a.eval(u.position(k % 64, k / 64), Point::new(1.0, 0.0), (1.0, 1.0)))
            .sum::<f64>()
            / 4096.0;
        assert!((p.re - oracle).abs() < 1e-12);
        assert!((p.re - exact_limit).abs() < 1e-9, "{} vs {exact_limit}", p.re);
    }
}

#[test]
fn mass_consistency_with_direct_quadrature() {
    let (u, _) = sinai_mode();
    let a = SymbolSpec::parse("gx(0.2, 0.3, 0.1) * gx(0.2, 0.3, 0.1)").unwrap();
    let p = semiclassical_pairing(&a, 0.03, &u).unwrap();
    let direct: f64 = u
        .values
        .iter()
        .enumerate()
        .map(|(k, v)| a.eval(u.position(k % u.nx, k / u.nx), Point::new(0.0, 0.0), (1.0, 1.0)) * v.norm_sqr())
        .sum::<f64>()
        * u.cell_area();
    assert!((p.re - direct).abs() < 1e-6);
    assert!(p.im.abs() < 1e-8);
}

#[test]
fn husimi_matches_direct_coherent_state_quadrature() {
    let (u, lambda) = sinai_mode();
    let slice = HusimiSlice {
        nx: 8,
        ny: 8,
        xi: XiSampling::Polar {
            r_min: 0.8,
            r_max: 1.2,
            nr: 8,
            ntheta: 8,
        },
    };
    let hf = husimi(&u, lambda, &slice).unwrap();
    let h = hf.h;
    let norm = (PI * h).powf(-0.5);
    let per = slice.nx * slice.ny;
    for (k, xi) in hf.momenta.iter().enumerate() {
        for (j, &y0) in hf.ys.iter().enumerate() {
            for (i, &x0) in hf.xs.iter().enumerate() {
                // periodized coherent state summed over neighbouring images
                let mut z = Complex64::new(0.0, 0.0);
                for (idx, v) in u.values.iter().enumerate() {
                    let x = u.position(idx % u.nx, idx / u.nx);
                    let mut g = Complex64::new(0.0, 0.0);
                    for sx in -1..=1 {
                        for sy in -1..=1 {
                            let dx = x.x + sx as f64 - x0;
                            let dy = x.y + sy as f64 - y0;
                            let env = (-(dx * dx + dy * dy) / (2.0 * h)).exp();
                            g += Complex64::from_polar(norm * env, (xi.x * dx + xi.y * dy) / h);
                        }
                    }
                    z += v * g.conj();
                }
                let direct = (z * u.cell_area()).norm_sqr();
                let fast = hf.values[k * per + j * slice.nx + i];
                assert!((direct - fast).abs() < 1e-9, "{direct} vs {fast}");
            }
        }
    }
}

#[test]
fn isotropic_field_has_flat_direction_marginal() {
    let slice = HusimiSlice {
        nx: 8,
        ny: 8,
        xi: XiSampling::Polar {
            r_min: 0.5,
            r_max: 1.5,
            nr: 10,
            ntheta: 144,
        },
    };
    let (momenta, momentum_weights) = slice.momenta();
    let field = HusimiField {
        h: 0.05,
        xs: (0..8).map(|i| i as f64 / 8.0).collect(),
        ys: (0..8).map(|i| i as f64 / 8.0).collect(),
        values: vec![1.0; momenta.len() * 64],
        momenta,
        momentum_weights,
        position_weight: 1.0 / 64.0,
    };
    assert!(field.values.len() >= 10_000);
    let st = husimi_statistics(&field, (0.8, 1.2), 16).unwrap();
    let max = st.direction_marginal.iter().cloned().fold(0.0, f64::max);
    let min = st.direction_marginal.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(max / min <= 1.1);
    assert!(st.peaks.is_empty());
}

#[test]
fn bouncing_ball_profile_peaks_across_the_corridor() {
    let d = DomainSpec::sinai(Bc::Dirichlet);
    let c = maximal_rectangle(&d, (1, 0), Point::new(0.0, 0.1)).unwrap();
    let width = 2.0 * c.half_width;
    let k = 9.0;
    let u = normalized(PeriodicField::from_fn(64, 64, 1.0, 1.0, |p| {
        let s = c.transverse_offset(p) + c.half_width;
        let v = if (0.0..=width).contains(&s) { (k * PI * s / width).sin() } else { 0.0 };
        Complex64::new(v, 0.0)
    }));
    let lambda = (k * PI / width).powi(2);
    let hf = husimi(&u, lambda, &HusimiSlice::default()).unwrap();
    let st = husimi_statistics(&hf, (0.8, 1.2), 8).unwrap();
    assert!(!st.peaks.is_empty());
    assert!(st.peaks.iter().all(|&b| b == 2 || b == 6), "{:?}", st.peaks);
    assert!(st.shell_mass > 0.8);
}

#[test]
fn flow_invariance_cases() {
    let d = empty_torus();
    let u = normalized(random_field(32, &[1.0, 0.4]));
    let a = SymbolSpec::parse("gx(0.3, 0.6, 0.07) * rxi(1, 0.5)").unwrap();
    assert_eq!(flow_invariance_defect(&d, &u, 400.0, &a, 0.0).unwrap(), 0.0);

    let radial = SymbolSpec::parse("rxi(1, 0.4)").unwrap();
    assert!(flow_invariance_defect(&d, &u, 400.0, &radial, 0.7).unwrap() <= 1e-8);

    let sinai = DomainSpec::sinai(Bc::Dirichlet);
    let near = SymbolSpec::parse("bx(0.5, 0.1, 0.05)").unwrap();
    assert!(flow_invariance_defect(&sinai, &u, 400.0, &near, 0.05).is_ok());
    assert!(matches!(
        flow_invariance_defect(&sinai, &u, 400.0, &near, 0.2),
        Err(Error::InteriorPropagation(_))
    ));
    let everywhere = SymbolSpec::parse("rxi(1, 0.4)").unwrap();
    assert!(matches!(
        flow_invariance_defect(&sinai, &u, 400.0, &everywhere, 0.1),
        Err(Error::InteriorPropagation(_))
    ));
}

#[test]
fn transported_gaussian_matches_closed_form_overlap() {
    // u = √2 cos(2π n x): modes ±k with k = 2πn e₁, |ĉ|² = 1/2
    let n = 5.0;
    let (cx, cy, s) = (0.35, 0.5, 0.06);
    let u = PeriodicField::from_fn(64, 64, 1.0, 1.0, |p| Complex64::new(2f64.sqrt() * (2.0 * PI * n * p.x).cos(), 0.0));
    let a = SymbolSpec::parse(&format!("gx({cx}, {cy}, {s})")).unwrap();
    let lambda = (2.0 * PI * n).powi(2);
    let q = 4.0 * PI * n;
    let mass = 2.0 * PI * s * s;
    let damp = (-s * s * q * q / 2.0).exp();
    // ⟨Op(b)u, u⟩ with b = G(x + tξ/|ξ| − c): diagonal terms plus the two cross terms
    let pairing = |t: f64| {
        let cross = Complex64::from_polar(mass * damp / 2.0, q * (cx - t))
            + Complex64::from_polar(mass * damp / 2.0, -q * (cx + t));
        mass + cross.re
    };
    for t in [0.1, 0.3, 0.45] {
        let defect = flow_invariance_defect(&empty_torus(), &u, lambda, &a, t).unwrap();
        let oracle = (pairing(t) - pairing(0.0)).abs();
        assert!((defect - oracle).abs() < 1e-10, "t={t}: {defect} vs {oracle}");
    }
}

#[test]
fn projector_is_a_fourier_cutoff_commuting_with_the_laplacian() {
    let v = random_field(48, &[0.3, 1.0, -0.7, 0.2, 0.9]);
    let h = 1.0 / (2.0 * PI * 3.0);
    let xi0 = Point::new(1.0, 0.0);
    let rep = projector_commutator(&v, xi0, 0.5, h).unwrap();
    assert!(rep.fourier <= 1e-12);
    assert!(rep.real_space <= 1e-12);
    let m = projector_multiplier(&v, xi0, 0.5, h).unwrap();
    let p = microlocal_project(&v, xi0, 0.5, h).unwrap();
    let pp = microlocal_project(&p, xi0, 0.5, h).unwrap();
    let diff = p.values.iter().zip(&pp.values).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    let idem = idempotency_defect(&m);
    assert!(diff <= idem * v.values.iter().map(|z| z.norm()).sum::<f64>() + 1e-12);
}

#[test]
fn corridor_projection_is_controlled_by_the_mode_constant() {
    let (u, lambda) = sinai_mode();
    let d = DomainSpec::sinai(Bc::Dirichlet);
    let c = maximal_rectangle(&d, (1, 0), Point::new(0.0, 0.1)).unwrap();
    let h = 1.0 / lambda.sqrt();
    let chi_u = u.with_cutoff(|p| {
        let s = c.transverse_offset(p) / c.half_width;
        bsl_core::phase::flat_top(s.abs())
    });
    let left = microlocal_project(&chi_u, Point::new(1.0, 0.0), 0.4, h).unwrap().norm();
    let right = chi_u.with_cutoff(|p| if p.x > 0.0 && p.x < 0.5 { 1.0 } else { 0.0 }).norm();
    // resonant shifts, where the mode equation has near-kernels
    let search = ControlSearch::new(2.0 * c.half_width, (-500.0, 0.0), (0.0, 0.5), 16);
    let c_emp = control_table(&[1, 2, 3, 4], &search)
        .unwrap()
        .iter()
        .map(|m| m.constant)
        .fold(0.0, f64::max);
    assert!(left * left <= c_emp * right * right, "{left} {right} {c_emp}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn quantization_is_linear(c in proptest::collection::vec(-1.0..1.0f64, 4), x in 0.0..1.0f64, y in 0.0..1.0f64, r in 0.2..1.5f64) {
        let u = random_field(24, &c);
        let a = SymbolSpec::parse(&format!("gx({x}, {y}, 0.2) * rxi({r}, 0.3)")).unwrap();
        let b = SymbolSpec::parse(&format!("bxi({r}, 0, 0.5) + bx({y}, {x}, 0.3)")).unwrap();
        let ab = SymbolSpec::parse(&format!("gx({x}, {y}, 0.2) * rxi({r}, 0.3) + bxi({r}, 0, 0.5) + bx({y}, {x}, 0.3)")).unwrap();
        let h = 0.04;
        let sa = quantize_apply(&a, h, &u).unwrap();
        let sb = quantize_apply(&b, h, &u).unwrap();
        let sab = quantize_apply(&ab, h, &u).unwrap();
        for ((p, q), s) in sa.values.iter().zip(&sb.values).zip(&sab.values) {
            prop_assert!((p + q - s).norm() < 1e-12);
        }
    }

    #[test]
    fn husimi_is_nonnegative(c in proptest::collection::vec(-1.0..1.0f64, 3), lambda in 50.0..2000.0f64) {
        let u = random_field(16, &c);
        let slice = HusimiSlice { nx: 8, ny: 8, xi: XiSampling::Cartesian { max: 1.5, n: 8 } };
        let hf = husimi(&u, lambda, &slice).unwrap();
        prop_assert!(hf.values.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn projector_commutes_with_laplacian(c in proptest::collection::vec(-1.0..1.0f64, 5), th in 0.0..6.3f64, w in 0.3..0.8f64) {
        let v = random_field(32, &c);
        prop_assume!(v.norm() > 1e-6);
        let rep = projector_commutator(&v, Point::new(th.cos(), th.sin()), w, 1.0 / (2.0 * PI * 4.0)).unwrap();
        prop_assert!(rep.fourier <= 1e-12);
    }
}
