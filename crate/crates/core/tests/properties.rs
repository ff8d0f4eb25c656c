use proptest::prelude::*;

use driftdiffuse::config::{parse_config_str, render_config};
use driftdiffuse::integrators::{jacobian_det_fd, step_deterministic, step_full};
use driftdiffuse::output::{fmt_f64, parse_csv};
use driftdiffuse::rng::{SeedPolicy, StreamLabel};
use driftdiffuse::summation::CompensatedSum;
use driftdiffuse::{ExperimentConfig, SchemeConfig, SchemeKind, SpectralFlow, Velocity, VelocityField};

fn field<const D: usize>(seed: u64, modes: usize, dt: f64) -> VelocityField<D> {
    let flow = SpectralFlow::new(modes, 10.0, 0.75, 10.0).unwrap();
    let mut s = SeedPolicy::new(seed).path_streams(0);
    flow.sample_field(dt, &mut s.modes, &mut s.ou_init).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn modesplit_preserves_volume_3d(
        seed in 0u64..1_000_000,
        dt in 0.001f64..0.2,
        x in prop::array::uniform3(-10.0f64..10.0),
    ) {
        let f: VelocityField<3> = field(seed, 20, dt);
        let scheme = SchemeConfig::new(SchemeKind::ModeSplit);
        let det = jacobian_det_fd(|y| step_deterministic(&f, y, dt, &scheme).map(|r| r.after), &x, 1e-5).unwrap();
        prop_assert!((det - 1.0).abs() <= 1e-6, "det = {det}");
    }

    #[test]
    fn midpoint_preserves_volume_2d(
        seed in 0u64..1_000_000,
        dt in 0.001f64..0.1,
        x in prop::array::uniform2(-10.0f64..10.0),
    ) {
        let f: VelocityField<2> = field(seed, 50, dt);
        let scheme = SchemeConfig::new(SchemeKind::Midpoint2d);
        let det = jacobian_det_fd(|y| step_deterministic(&f, y, dt, &scheme).map(|r| r.after), &x, 1e-5).unwrap();
        prop_assert!((det - 1.0).abs() <= 1e-6, "det = {det}");
    }

    #[test]
    fn midpoint_step_satisfies_implicit_equation(
        seed in 0u64..1_000_000,
        dt in 0.001f64..0.1,
        x in prop::array::uniform2(-10.0f64..10.0),
    ) {
        let f: VelocityField<2> = field(seed, 50, dt);
        let rec = step_deterministic(&f, &x, dt, &SchemeConfig::new(SchemeKind::Midpoint2d)).unwrap();
        let mid = [0.5 * (x[0] + rec.after[0]), 0.5 * (x[1] + rec.after[1])];
        let b = f.velocity(&mid);
        for i in 0..2 {
            prop_assert!((rec.after[i] - x[i] - dt * b[i]).abs() <= 1e-11);
        }
    }

    #[test]
    fn zero_noise_full_step_is_deterministic_step(
        seed in 0u64..1_000_000,
        x in prop::array::uniform2(-5.0f64..5.0),
    ) {
        let dt = 0.02;
        let f: VelocityField<2> = field(seed, 30, dt);
        let scheme = SchemeConfig::new(SchemeKind::ModeSplit);
        let det = step_deterministic(&f, &x, dt, &scheme).unwrap();
        let mut rng = SeedPolicy::new(seed).stream(StreamLabel::Kick, 0);
        let full = step_full(&f, &x, dt, 0.0, &scheme, 1, &mut rng).unwrap();
        prop_assert_eq!(det.after, full.after);
    }

    #[test]
    fn fmt_f64_round_trips_through_csv(values in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..8)) {
        let header: Vec<String> = (0..values.len()).map(|i| format!("c{i}")).collect();
        let row: Vec<String> = values.iter().map(|&v| fmt_f64(v)).collect();
        let text = format!("# comment\n{}\n{}\n", header.join(","), row.join(","));
        let (h, rows) = parse_csv(&text).unwrap();
        prop_assert_eq!(h, header);
        prop_assert_eq!(&rows[0], &values);
    }

    #[test]
    fn config_render_parse_round_trip(
        theta in 0.0f64..100.0,
        sigma in 0.0f64..2.0,
        alpha in -2.0f64..0.99,
        seed in any::<u64>(),
        modes in 1usize..5000,
        dim in 2usize..=3,
    ) {
        let cfg = ExperimentConfig {
            dim,
            modes,
            theta,
            sigma,
            alpha,
            seed,
            scheme: SchemeConfig::new(SchemeKind::ModeSplit),
            ..ExperimentConfig::default()
        };
        let parsed = parse_config_str(&render_config(&cfg)).unwrap();
        prop_assert_eq!(parsed.config, cfg);
    }

    #[test]
    fn compensated_sum_is_order_insensitive(values in prop::collection::vec(-1e6f64..1e6, 1..200)) {
        let forward: CompensatedSum = values.iter().copied().collect();
        let backward: CompensatedSum = values.iter().rev().copied().collect();
        let scale: f64 = values.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
        prop_assert!((forward.value() - backward.value()).abs() <= 1e-15 * scale);
    }
}

#[test]
fn midpoint_solves_within_five_evaluations() {
    let dt = 0.01;
    let scheme = SchemeConfig::new(SchemeKind::Midpoint2d);
    let policy = SeedPolicy::new(7);
    let mut pos = policy.stream(StreamLabel::Aux(0), 0);
    let mut within = 0;
    let trials = 2000;
    for i in 0..trials {
        let f: VelocityField<2> = field(i, 1000, dt);
        let x = [
            rand::Rng::random_range(&mut pos, -20.0..20.0),
            rand::Rng::random_range(&mut pos, -20.0..20.0),
        ];
        let rec = step_deterministic(&f, &x, dt, &scheme).unwrap();
        if rec.iterations <= 5 {
            within += 1;
        }
    }
    assert!(within as f64 >= 0.99 * trials as f64, "{within} of {trials} within five evaluations");
}
