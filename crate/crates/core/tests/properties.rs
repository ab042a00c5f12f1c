use calabi_core::decay_iteration::{iterate, ma_ratio, ma_ratio_at, toy_grid, RadialMetricState};
use calabi_core::harness::ExperimentConfig;
use calabi_core::ma_solver::{MaProblem, NewtonConfig};
use calabi_core::mode_ode::{FundamentalPair, GreenConfig, GreenSolver, Mode, SourceBound};
use calabi_core::quadrature::QuadratureConfig;
use calabi_core::radial::RadialGrid;
use calabi_core::report::num;
use calabi_core::special::{bessel_k, gamma_fn};
use calabi_core::spectral_poisson::SpectrumProvider;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use std::sync::{Arc, OnceLock};

/// 1 - det(omega_C + eta) / det(omega_C) built from a rotated beta|_D.
fn determinant_oracle(b: &[f64], angle: f64, z: f64, a: f64, bf: f64) -> f64 {
    let m = b.len();
    let n = m + 1;
    // product of plane rotations mixes every pair of directions
    let mut q = DMatrix::<f64>::identity(m, m);
    for i in 0..m {
        for k in i + 1..m {
            let mut r = DMatrix::<f64>::identity(m, m);
            let t = angle * (1 + i + 2 * k) as f64;
            r[(i, i)] = t.cos();
            r[(k, k)] = t.cos();
            r[(i, k)] = -t.sin();
            r[(k, i)] = t.sin();
            q = q * r;
        }
    }
    let beta = &q * DMatrix::from_diagonal(&DVector::from_column_slice(b)) * q.transpose();
    let mut w = DMatrix::<f64>::zeros(n, n);
    let mut w0 = DMatrix::<f64>::zeros(n, n);
    for i in 0..m {
        for k in 0..m {
            w[(i, k)] = beta[(i, k)];
        }
        w[(i, i)] += z + a;
        w0[(i, i)] = z;
    }
    let fiber = 1.0 / (n as f64 * z.powi(m as i32));
    w[(m, m)] = fiber + bf;
    w0[(m, m)] = fiber;
    1.0 - w.determinant() / w0.determinant()
}

/// c_j = e_j(b) / binom(n-1, j) by direct expansion of prod (1 + b_i x).
fn wedge(b: &[f64]) -> Vec<f64> {
    let m = b.len();
    let mut poly = vec![1.0];
    for &x in b {
        let mut next = vec![0.0; poly.len() + 1];
        for (k, p) in poly.iter().enumerate() {
            next[k] += p;
            next[k + 1] += p * x;
        }
        poly = next;
    }
    let binom = |k: usize| (1..=k).fold(1.0, |acc, i| acc * (m + 1 - i) as f64 / i as f64);
    (1..=m).map(|j| poly[j] / binom(j)).collect()
}

fn zero_mode_solver() -> &'static (GreenSolver, Arc<RadialGrid>, SourceBound) {
    static S: OnceLock<(GreenSolver, Arc<RadialGrid>, SourceBound)> = OnceLock::new();
    S.get_or_init(|| {
        let cfg = GreenConfig::default();
        let pair = FundamentalPair::for_mode(3, &Mode::new(2.0, 0).unwrap(), &cfg.quadrature).unwrap();
        let bound = SourceBound { c0: 20.0, delta: -1.0 };
        let out = Arc::new(RadialGrid::panels(3, 1.0, 8.0, 12, 16).unwrap());
        let z_max = 2.0 * GreenSolver::suggest_z_max(&pair, 8.0, &bound, 1e-14).unwrap();
        (GreenSolver::new(pair, 1.0, z_max, &cfg).unwrap(), out, bound)
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn ratio_matches_determinant(
        b in prop::collection::vec(-0.6f64..0.6, 1..5),
        angle in 0.0f64..6.3,
        z in 1.5f64..80.0,
        a in -0.4f64..0.4,
        fb in -0.4f64..0.4,
    ) {
        let n = b.len() as u32 + 1;
        let bf = fb / (n as f64 * z.powi(n as i32 - 1));
        let oracle = determinant_oracle(&b, angle, z, a, bf);
        let f = ma_ratio_at(n, &wedge(&b), z, a, bf);
        prop_assert!((f - oracle).abs() <= 1e-10 * oracle.abs().max(1.0), "{f} vs {oracle}");
    }

    #[test]
    fn gamma_reflection(x in 0.01f64..0.99) {
        let lhs = gamma_fn(x).unwrap() * gamma_fn(1.0 - x).unwrap();
        let rhs = std::f64::consts::PI / (std::f64::consts::PI * x).sin();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs());
    }

    #[test]
    fn gamma_recurrence(x in -3.9f64..6.0) {
        prop_assume!((x - x.round()).abs() > 1e-3);
        let a = gamma_fn(x + 1.0).unwrap();
        let b = x * gamma_fn(x).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn bessel_k_even_in_order(nu in 0.0f64..2.5, y in 0.5f64..30.0) {
        let q = QuadratureConfig::default();
        let a = bessel_k(nu, y, &q).unwrap();
        let b = bessel_k(-nu, y, &q).unwrap();
        prop_assert!(a > 0.0);
        prop_assert!((a - b).abs() <= 1e-12 * a);
    }

    #[test]
    fn csv_numbers_round_trip(x in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
        prop_assert_eq!(num(x).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn config_round_trip(
        n in 2u32..5,
        b in prop::collection::vec(-0.5f64..0.5, 3),
        steps in 0usize..4,
        seed in any::<u64>(),
        slack in 0.05f64..0.5,
        base_volume in 0.1f64..10.0,
    ) {
        let mut c = ExperimentConfig::default();
        c.model.n = n;
        c.model.base_volume = base_volume;
        c.c = wedge(&b[..n as usize - 1]);
        c.iteration.steps = steps;
        c.iteration.slack = slack;
        c.seed = seed;
        c.validate().unwrap();
        let back = ExperimentConfig::from_json(&c.to_json().unwrap()).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn projection_inverts_synthesis(coef in prop::collection::vec(-1.0f64..1.0, 20)) {
        static P: OnceLock<SpectrumProvider> = OnceLock::new();
        let p = P.get_or_init(|| SpectrumProvider::new(2, 2, 2, 1.0).unwrap());
        let mut full = vec![0.0; p.len()];
        full[..coef.len()].copy_from_slice(&coef);
        let back = p.transform(&p.synthesize(&full));
        for (a, b) in back.iter().zip(&full) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn green_solve_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let (solver, out, bound) = zero_mode_solver();
        let v1 = |z: f64| z.powi(-2);
        let v2 = |z: f64| z.sin() / z;
        let u1 = solver.solve(out.clone(), v1, bound).unwrap().u;
        let u2 = solver.solve(out.clone(), v2, bound).unwrap().u;
        let u = solver.solve(out.clone(), |z| a * v1(z) + b * v2(z), bound).unwrap().u;
        let scale = u1.max_abs() * a.abs() + u2.max_abs() * b.abs();
        for ((x, p), q) in u.values().iter().zip(u1.values()).zip(u2.values()) {
            prop_assert!((x - (a * p + b * q)).abs() <= 1e-10 * scale.max(1e-300));
        }
    }

    #[test]
    fn zero_mode_wronskian_constant(lambda in 0.5f64..20.0, z in 1.0f64..5.0) {
        let q = QuadratureConfig::default();
        let pair = FundamentalPair::for_mode(3, &Mode::new(lambda, 0).unwrap(), &q).unwrap();
        let w = pair.wronskian(z).unwrap();
        prop_assert!((w + 1.5).abs() <= 1e-6 * 1.5, "W = {w}");
    }

    #[test]
    fn jacobian_matches_differences(amp in -0.02f64..0.02, k in 0.1f64..0.5) {
        static S: OnceLock<(RadialMetricState, MaProblem)> = OnceLock::new();
        let (_, p) = S.get_or_init(|| {
            let s = RadialMetricState::new(3, vec![0.3, 0.05], toy_grid(3).unwrap()).unwrap();
            let g = NewtonConfig::default().grid(3).unwrap();
            let p = MaProblem::new(&s, g, None).unwrap();
            (s, p)
        });
        let z = p.grid().z().to_vec();
        let last = z.len() - 1;
        let phi: Vec<f64> = z.iter().map(|z| amp * (z - 5.0) * (50.0 - z)).collect();
        let mut v: Vec<f64> = z.iter().map(|z| (k * z).sin()).collect();
        v[0] = 0.0;
        v[last] = 0.0;
        let jv = p.jacobian_apply(&phi, &v);
        let h = 1e-6;
        let shift = |s: f64| phi.iter().zip(&v).map(|(a, b)| a + s * b).collect::<Vec<f64>>();
        let rp = p.residual(&shift(h)).unwrap();
        let rm = p.residual(&shift(-h)).unwrap();
        let scale = jv.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for i in 1..last {
            let fd = (rp[i] - rm[i]) / (2.0 * h);
            prop_assert!((fd - jv[i]).abs() <= 1e-5 * scale, "{i}: {fd} vs {}", jv[i]);
        }
    }

    #[test]
    fn degenerate_states_rejected(s in 1.05f64..3.0) {
        // c_1 = -s z_lo makes the horizontal factor vanish inside the grid
        let g = toy_grid(2).unwrap();
        let state = RadialMetricState::new(2, vec![-s * 5.0], g);
        if let Ok(state) = state {
            prop_assert!(ma_ratio(&state).is_err());
        }
    }
}

#[test]
fn flat_state_is_a_fixed_point() {
    let s = RadialMetricState::new(3, vec![0.0, 0.0], toy_grid(3).unwrap()).unwrap();
    let r = iterate(&s, 5).unwrap();
    assert!(r.f.iter().all(|f| f.max_abs() == 0.0));
    assert!(r.u.iter().all(|u| u.u.max_abs() == 0.0));
}
