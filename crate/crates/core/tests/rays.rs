use bsl_core::geometry::{maximal_rectangle, Bc, DomainSpec, ObstacleSpec, Point, Region};
use bsl_core::rays::{
    control_fraction_curve, evolve, geometric_control_check, hitting_time, ControlSampling, EventKind,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sinai() -> DomainSpec {
    DomainSpec::sinai(Bc::Dirichlet)
}

fn empty_torus() -> DomainSpec {
    DomainSpec::TorusMinusObstacle {
        obstacle: ObstacleSpec::none(),
        obstacle_bc: Bc::Dirichlet,
    }
}

fn reversal_error(d: &DomainSpec, start: Point, angle: f64, t: f64) -> Option<f64> {
    let fwd = evolve(d, start, Point::new(angle.cos(), angle.sin()), t).ok()?;
    if fwd.events.iter().any(|e| e.kind == EventKind::Grazing) {
        return None;
    }
    let back = evolve(d, fwd.end_point, -fwd.end_direction, t).ok()?;
    Some(d.periodic_distance(back.end_point, start))
}

fn random_start(d: &DomainSpec, rng: &mut ChaCha8Rng) -> Point {
    let (lo, hi) = d.bounding_box();
    loop {
        let p = Point::new(rng.gen_range(lo.x..hi.x), rng.gen_range(lo.y..hi.y));
        if d.contains(p) {
            return p;
        }
    }
}

#[test]
fn integrable_tables_reverse_over_long_times() {
    let tables = [
        empty_torus(),
        DomainSpec::unit_square(Bc::Dirichlet),
        DomainSpec::Rectangle {
            height: 0.7,
            bc_x: Bc::Periodic,
            bc_y: Bc::Neumann,
        },
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for d in &tables {
        for _ in 0..20 {
            let p = random_start(d, &mut rng);
            let a = rng.gen_range(0.0..std::f64::consts::TAU);
            let err = reversal_error(d, p, a, 100.0).unwrap();
            assert!(err < 1e-9, "{d:?}: {err}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // chaotic tables amplify round-off exponentially, so the horizon is short
    #[test]
    fn sinai_flow_is_reversible(x in 0.0..1.0f64, y in 0.0..1.0f64, a in 0.0..std::f64::consts::TAU, t in 0.5..3.0f64) {
        let d = sinai();
        let p = Point::new(x, y);
        prop_assume!(d.contains(p));
        if let Some(err) = reversal_error(&d, p, a, t) {
            prop_assert!(err < 1e-9, "{err}");
        }
    }

    #[test]
    fn speed_is_conserved(x in -0.5..1.5f64, y in 0.0..1.0f64, a in 0.0..std::f64::consts::TAU) {
        for d in [sinai(), DomainSpec::stadium(1.0, Bc::Dirichlet)] {
            let p = Point::new(x, y);
            if !d.contains(p) {
                continue;
            }
            let tr = evolve(&d, p, Point::new(a.cos(), a.sin()), 20.0).unwrap();
            for e in &tr.events {
                prop_assert!((e.outgoing.norm() - 1.0).abs() < 1e-12);
                if e.kind == EventKind::Reflection {
                    // specular: tangential component kept, normal flipped
                    let n = (e.incoming - e.outgoing).normalized();
                    let tangent = Point::new(-n.y, n.x);
                    prop_assert!((e.incoming.dot(tangent) - e.outgoing.dot(tangent)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn corridor_trajectories_never_reflect(s in -0.999..0.999f64, along in 0.0..1.0f64, dir in 0usize..3) {
        let d = sinai();
        let (direction, seed) = [((1, 0), Point::new(0.0, 0.1)), ((0, 1), Point::new(0.1, 0.0)), ((1, 1), Point::new(0.0, 0.5))][dir];
        let c = maximal_rectangle(&d, direction, seed).unwrap();
        let p = seed + c.tangent * along + c.normal * (s * c.half_width);
        let tr = evolve(&d, p, c.tangent, 50.0).unwrap();
        prop_assert!(tr.events.is_empty());
    }
}

#[test]
fn corridor_misses_the_obstacle_annulus() {
    let d = sinai();
    let c = maximal_rectangle(&d, (1, 0), Point::new(0.0, 0.1)).unwrap();
    // the corridor is |y - 0.1| < 0.15 (mod 1); the annulus stays above it
    let v = Region::annulus(Point::new(0.5, 0.5), 0.25, 0.25 + 0.1);
    for t_max in [1.0, 10.0, 1000.0] {
        let t = hitting_time(&d, Point::new(0.3, 0.1), c.tangent, &v, t_max).unwrap();
        assert_eq!(t, None);
    }
}

#[test]
fn golden_direction_always_hits() {
    let d = sinai();
    let v = Region::obstacle_annulus(&d, 0.1).unwrap();
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let dir = Point::new(1.0, phi);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let p = random_start(&d, &mut rng);
        let t = hitting_time(&d, p, dir, &v, 50.0).unwrap().expect("irrational direction hits");
        worst = worst.max(t);
    }
    assert!(worst < 50.0);
}

#[test]
fn control_fraction_grows_and_leaves_rational_stripes() {
    let d = sinai();
    let v = Region::obstacle_annulus(&d, 0.1).unwrap();
    let reps = control_fraction_curve(&d, &v, &[2.0, 10.0, 50.0], ControlSampling::default()).unwrap();
    for w in reps.windows(2) {
        assert!(w[0].fraction <= w[1].fraction);
        assert!(w[1].uncontrolled.iter().all(|u| w[0].uncontrolled.contains(u)));
    }
    let last = &reps[2];
    assert!(last.fraction > 0.5 && last.fraction < 1.0);
    // survivors sit on the axis and diagonal directions
    let rational = [0.0, 0.25, 0.5, 0.75, 1.0, 0.125, 0.375, 0.625, 0.875];
    for &(_, _, th) in &last.uncontrolled {
        let turns = th / std::f64::consts::TAU;
        assert!(rational.iter().any(|r| (turns - r).abs() < 1e-12), "angle {th}");
    }
}

#[test]
fn whole_domain_controls_instantly() {
    let d = sinai();
    let rep = geometric_control_check(&d, &Region::whole(), 1e-9, ControlSampling::default()).unwrap();
    assert_eq!(rep.fraction, 1.0);
}

#[test]
fn stadium_wing_misses_only_bouncing_balls() {
    let d = DomainSpec::stadium(1.0, Bc::Dirichlet);
    let wing = Region::rect(-1.0, 0.0, -1.0, 2.0);
    let rep = geometric_control_check(&d, &wing, 60.0, ControlSampling::default()).unwrap();
    assert!(rep.fraction > 0.9);
    let quarter = std::f64::consts::FRAC_PI_2;
    for &(x, _, th) in &rep.uncontrolled {
        assert!((0.0..=1.0).contains(&x));
        assert!((th - quarter).abs() < 1e-12 || (th - 3.0 * quarter).abs() < 1e-12, "angle {th}");
    }
}
