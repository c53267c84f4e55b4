use hyperinv::carleman::{verify_condition_d, WeightFunction};
use hyperinv::geometry::{build_mesh, extract_gamma0, Domain, PrincipalField, PrincipalKind};
use hyperinv::identity_lab::random_smooth_fields;
use hyperinv::inverse::{deterministic_counterexample, BumpSpec};
use hyperinv::spde::{
    dump, energy, simulate_forward, simulate_with_noise, solve_deterministic_reversed,
    CoefficientSet, Force, Recording, ScalarField, SimulationSpec, TimeGrid, TimeProfile,
};
use proptest::prelude::*;

fn wave(dim: usize) -> CoefficientSet {
    CoefficientSet::wave(PrincipalField::identity(dim))
}

fn sine_field() -> PrincipalField {
    PrincipalField::new(
        1,
        PrincipalKind::Sine {
            base: 1.5,
            amplitude: 0.3,
            wavenumber: 1.0,
        },
        1.0,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sigma_scales_with_the_weight(a in 0.1f64..20.0, cx in -2.0f64..-0.1, cy in -2.0f64..3.0) {
        let mesh = build_mesh(&Domain::unit_square(), &[9]).unwrap();
        let field = PrincipalField::identity(2);
        let d = WeightFunction::shifted_quadratic(1.0, &[cx, cy]);
        let base = extract_gamma0(&mesh, &field, &d).unwrap();
        let scaled = extract_gamma0(&mesh, &field, &d.scaled(a)).unwrap();
        prop_assert_eq!(&base.members, &scaled.members);
        for (s, t) in base.sigma.iter().zip(&scaled.sigma) {
            prop_assert!((a * s - t).abs() <= 1e-12 * (1.0 + t.abs()));
        }
    }

    #[test]
    fn gamma0_is_exactly_the_positive_sigma_slots(cx in -2.0f64..3.0, cy in -2.0f64..3.0) {
        let mesh = build_mesh(&Domain::unit_square(), &[7]).unwrap();
        let d = WeightFunction::shifted_quadratic(1.0, &[cx, cy]);
        let s = extract_gamma0(&mesh, &PrincipalField::identity(2), &d).unwrap();
        let expected: Vec<usize> = (0..s.sigma.len()).filter(|&i| s.sigma[i] > 0.0).collect();
        prop_assert_eq!(s.members, expected);
    }

    #[test]
    fn mu0_of_a_quadratic_weight_is_four_a(a in 0.1f64..50.0, c in -3.0f64..-0.5) {
        let mesh = build_mesh(&Domain::unit_interval(), &[17]).unwrap();
        let d = WeightFunction::shifted_quadratic(a, &[c]);
        let r = verify_condition_d(&d, &PrincipalField::identity(1), &mesh).unwrap();
        prop_assert!((r.mu0_max - 4.0 * a).abs() <= 1e-10 * a);
    }

    #[test]
    fn mu0_is_linear_in_the_weight_scale(k in 0.1f64..10.0) {
        let mesh = build_mesh(&Domain::unit_interval(), &[33]).unwrap();
        let d = WeightFunction::shifted_quadratic(1.0, &[-1.0]);
        let field = sine_field();
        let m1 = verify_condition_d(&d, &field, &mesh).unwrap().mu0_max;
        let mk = verify_condition_d(&d.scaled(k), &field, &mesh).unwrap().mu0_max;
        prop_assert!((mk - k * m1).abs() <= 1e-10 * mk.abs());
    }

    #[test]
    fn deterministic_solution_is_linear_in_the_data(alpha in -3.0f64..3.0, beta in -3.0f64..3.0, seed in 0u64..1000) {
        let mesh = build_mesh(&Domain::unit_interval(), &[33]).unwrap();
        let mut c = CoefficientSet::wave(sine_field());
        c.b1 = ScalarField::Constant { value: -0.2 };
        c.b3 = ScalarField::sine(0.5, &[2.0]);
        let f = random_smooth_fields(&mesh, 4, 4, seed);
        let grid = TimeGrid::with_steps(1.0, 128).unwrap();
        let run = |z0: &[f64], z1: &[f64]| {
            simulate_with_noise(&mesh, &c, z0, z1, grid, vec![vec![0.0; 128]], Recording::Terminal)
                .unwrap()
                .paths
                .remove(0)
                .z_final
        };
        let comb = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| alpha * x + beta * y).collect() };
        let u = run(&f[0], &f[1]);
        let v = run(&f[2], &f[3]);
        let w = run(&comb(&f[0], &f[2]), &comb(&f[1], &f[3]));
        let scale = u.iter().chain(&v).fold(1.0f64, |m, x| m.max(x.abs()));
        for i in 0..w.len() {
            prop_assert!((w[i] - alpha * u[i] - beta * v[i]).abs() <= 1e-11 * scale * (1.0 + alpha.abs() + beta.abs()));
        }
    }

    #[test]
    fn leapfrog_keeps_the_energy(amp in 0.1f64..5.0, k in 1usize..4) {
        let mesh = build_mesh(&Domain::unit_interval(), &[129]).unwrap();
        let c = wave(1);
        let z0 = ScalarField::sine(amp, &[k as f64]).on_mesh(&mesh).unwrap();
        let z1 = ScalarField::sine(0.5 * amp, &[1.0]).on_mesh(&mesh).unwrap();
        let grid = TimeGrid::with_steps(2.0, 512).unwrap();
        let e0 = energy(&mesh, &c, &z0, &z1);
        let p = simulate_with_noise(&mesh, &c, &z0, &z1, grid, vec![vec![0.0; 512]], Recording::Terminal)
            .unwrap()
            .paths
            .remove(0);
        let e1 = energy(&mesh, &c, &p.z_final, &p.w_final);
        prop_assert!((e1 - e0).abs() <= 1e-2 * e0, "{} {}", e0, e1);
    }

    #[test]
    fn reversed_solutions_vanish_at_the_end(seed in 0u64..1000) {
        let mesh = build_mesh(&Domain::unit_interval(), &[33]).unwrap();
        let mut c = wave(1);
        c.b1 = ScalarField::Constant { value: 0.3 };
        let w = random_smooth_fields(&mesh, 1, 5, seed).remove(0);
        let grid = TimeGrid::with_steps(1.5, 96).unwrap();
        let l = solve_deterministic_reversed(&mesh, &c, &w, grid).unwrap();
        prop_assert!(l.z.last().unwrap().iter().all(|v| *v == 0.0));
        for (a, b) in l.w.last().unwrap().iter().zip(&w) {
            prop_assert!((a - b).abs() <= 1e-14);
        }
    }

    #[test]
    fn seeded_ensembles_repeat(seed in 0u64..10_000) {
        let mesh = build_mesh(&Domain::unit_interval(), &[17]).unwrap();
        let c = wave(1).with_force(Force::Separable {
            g1: TimeProfile::Constant { value: 1.0 },
            g2: ScalarField::sine(1.0, &[1.0]),
        });
        let z0 = ScalarField::sine(1.0, &[1.0]).on_mesh(&mesh).unwrap();
        let spec = SimulationSpec { horizon: 1.0, dt: 1.0 / 32.0, paths: 3, seed, record: Recording::Observations };
        let a = simulate_forward(&mesh, &c, &z0, &z0, &spec).unwrap();
        let b = simulate_forward(&mesh, &c, &z0, &z0, &spec).unwrap();
        prop_assert_eq!(&a, &b);
        let other = simulate_forward(&mesh, &c, &z0, &z0, &SimulationSpec { seed: seed + 1, ..spec }).unwrap();
        prop_assert_ne!(a.paths[0].increments.clone(), other.paths[0].increments.clone());
    }

    #[test]
    fn any_interior_bump_is_invisible(center in 0.3f64..0.7, radius in 0.05f64..0.25, tc in 0.4f64..0.6, tr in 0.1f64..0.3) {
        let mesh = build_mesh(&Domain::unit_interval(), &[65]).unwrap();
        let grid = TimeGrid::with_steps(1.0, 128).unwrap();
        let spec = BumpSpec { amplitude: 1.0, time_center: tc, time_radius: tr, center: vec![center], radius: vec![radius] };
        let ce = deterministic_counterexample(&spec, &PrincipalField::identity(1), &mesh, grid).unwrap();
        prop_assert_eq!(ce.trace_norm, 0.0);
        prop_assert_eq!(ce.terminal_norm, 0.0);
        prop_assert_eq!(ce.initial_norm, 0.0);
        prop_assert!(ce.f_discrete_norm > 0.0);
    }

    #[test]
    fn trajectory_files_round_trip(p in 1usize..4, k in 1usize..6, n in 1usize..7, seed in 0u64..100) {
        let paths: Vec<Vec<Vec<f64>>> = (0..p)
            .map(|a| (0..k).map(|b| (0..n).map(|c| ((a * 31 + b * 7 + c) as f64 + seed as f64).sin()).collect()).collect())
            .collect();
        let mut buf = Vec::new();
        dump::write_trajectories(&mut buf, &paths).unwrap();
        prop_assert_eq!(buf.len(), 24 + 8 * p * k * n);
        prop_assert_eq!(dump::read_trajectories(&buf[..]).unwrap(), paths);
    }
}
