mod common;

use common::*;
use mvgeom::geometry::alpha_angle;
use mvgeom::robust::*;
use mvgeom::solvers::{gmv_portfolio, optimal_risky_portfolio, solve, Program, ProgramParams};
use mvgeom::{AlphaVector, CovMatrix};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn implicit_matches_fixed_point_four_assets() {
    let mut rng = rng(41);
    let (alpha, cov) = random_instance(4, 50.0, true, &mut rng);
    let k0 = risky_direction_cosine(&alpha, &cov).unwrap();
    let p = implicit_shrunk_theta(&alpha, &cov, 0.5 * k0).unwrap();
    let oracle = implicit_fixed_point(&alpha, &cov, 0.5 * k0);
    assert!(max_abs_diff(p.weights(), &oracle) <= 1e-8);
    assert!((p.gearing() - 1.0).abs() < 1e-12);
}

#[test]
fn max_shrink_agrees_with_identity_solutions() {
    let mut rng = rng(42);
    for n in 2..9 {
        let alpha = random_alpha(n, &mut rng);
        let eye = CovMatrix::identity(n).unwrap();
        let p6 = max_shrink_min_risk(&alpha, 0.07, 1.2).unwrap();
        let s6 = solve(Program::VI, &alpha, &eye, &ProgramParams { alpha0: Some(0.07), g0: Some(1.2), ..Default::default() }).unwrap();
        assert!(max_abs_diff(p6.weights(), s6.weights()) < 1e-12);
        let p7 = max_shrink_mean_variance(&alpha, 3.0, 0.8).unwrap();
        let s7 = solve(Program::VII, &alpha, &eye, &ProgramParams { gamma: Some(3.0), g0: Some(0.8), ..Default::default() }).unwrap();
        assert!(max_abs_diff(p7.weights(), s7.weights()) < 1e-12);
        // full identity shrink of VII lands on the same portfolio
        let full = ShrinkageSpec::identity(1.0).unwrap();
        let r7 = solve_robust(Program::VII, &alpha, &random_cov(n, 30.0, &mut rng), &full, &ProgramParams { gamma: Some(3.0), g0: Some(0.8), ..Default::default() }).unwrap();
        assert!(max_abs_diff(p7.weights(), r7.weights()) < 1e-12);
    }
}

#[test]
fn sweep_rows_follow_grid() {
    let mut rng = rng(43);
    let (alpha, cov) = random_instance(5, 1e3, true, &mut rng);
    let k0 = risky_direction_cosine(&alpha, &cov).unwrap();
    let grid: Vec<f64> = (0..10).map(|i| k0 * i as f64 / 10.0).collect();
    let params = ProgramParams { g0: Some(1.0), ..Default::default() };
    let rows = shrink_sweep(&alpha, &cov, ShrinkageMode::AngleTargeted, &grid, Program::VIII, &params).unwrap();
    assert_eq!(rows.len(), 10);
    assert_eq!(rows[0].kappa_tilde, cov.condition_number());
    for w in rows.windows(2) {
        assert!(w[1].kappa_tilde < w[0].kappa_tilde);
        assert!(w[1].bound_kantorovich > w[0].bound_kantorovich);
    }
    assert!(shrink_sweep(&alpha, &cov, ShrinkageMode::Identity, &[], Program::VIII, &params).is_err());
}

fn positive_instance(seed: u64, n: usize, kappa: f64) -> (AlphaVector, CovMatrix) {
    let mut rng = rng(seed);
    loop {
        let (alpha, cov) = random_instance(n, kappa, true, &mut rng);
        if alpha.as_vector().sum() > 0.0 {
            return (alpha, cov);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn shrinkage_never_raises_condition_number(seed in any::<u64>(), n in 2usize..9, t in 0.0f64..1.0) {
        let mut rng = rng(seed);
        let (alpha, cov) = random_instance(n, 1e5, false, &mut rng);
        let kappa = cov.condition_number();
        let k0 = risky_direction_cosine(&alpha, &cov).unwrap();
        let specs = [
            ShrinkageSpec::angle_targeted(t * k0, &alpha, &cov).unwrap(),
            ShrinkageSpec::identity(t).unwrap(),
            ShrinkageSpec::diagonal(t).unwrap(),
        ];
        for spec in specs {
            let kt = shrink_covariance(&cov, &spec).unwrap().condition_number();
            prop_assert!(kt <= kappa * (1.0 + 1e-12), "{:?}: {} > {}", spec, kt, kappa);
            if t > 0.01 && !matches!(spec, ShrinkageSpec::Diagonal { .. }) {
                prop_assert!(kt < kappa);
            }
        }
    }

    #[test]
    fn risky_angle_rises_with_k(seed in any::<u64>(), n in 2usize..9) {
        let (alpha, cov) = positive_instance(seed, n, 1e4);
        let k0 = risky_direction_cosine(&alpha, &cov).unwrap();
        let mut last_dir = f64::NEG_INFINITY;
        let mut last = None;
        for j in 0..11 {
            let spec = ShrinkageSpec::angle_targeted(k0 * j as f64 / 11.0, &alpha, &cov).unwrap();
            let shrunk = shrink_covariance(&cov, &spec).unwrap();
            let direction = shrunk.solve(alpha.as_vector());
            let c = alpha_angle(&alpha, &direction).unwrap();
            prop_assert!(c >= last_dir - 1e-12);
            last_dir = c;
            if direction.sum() > 0.0 {
                let p = shrunk_risky_portfolio(&alpha, &cov, &spec).unwrap();
                let c = alpha_angle(&alpha, p.weights()).unwrap();
                if let Some(prev) = last {
                    prop_assert!(c >= prev - 1e-12);
                }
                last = Some(c);
            } else {
                last = None;
            }
        }
    }

    #[test]
    fn limits_and_cash_neutrality(seed in any::<u64>(), n in 2usize..9, t in 0.0f64..1.0) {
        let (alpha, cov) = positive_instance(seed, n, 1e3);
        let zero = ShrinkageSpec::identity(0.0).unwrap();
        let (g, g0) = (shrunk_gmv_portfolio(&cov, &zero).unwrap(), gmv_portfolio(&cov));
        prop_assert_eq!(g.weights(), g0.weights());
        let (r, r0) = (shrunk_risky_portfolio(&alpha, &cov, &zero).unwrap(), optimal_risky_portfolio(&alpha, &cov).unwrap());
        prop_assert_eq!(r.weights(), r0.weights());

        let full = ShrinkageSpec::identity(1.0).unwrap();
        let e = DVector::from_element(n, 1.0 / n as f64);
        prop_assert!(max_abs_diff(shrunk_gmv_portfolio(&cov, &full).unwrap().weights(), &e) <= 1e-10);
        let hat = alpha.as_vector() / alpha.as_vector().sum();
        prop_assert!(max_abs_diff(shrunk_risky_portfolio(&alpha, &cov, &full).unwrap().weights(), &hat) <= 1e-10);

        let spec = ShrinkageSpec::identity(t).unwrap();
        if let Ok(risky) = shrunk_risky_portfolio(&alpha, &cov, &spec) {
            let gmv = shrunk_gmv_portfolio(&cov, &spec).unwrap();
            let scale = risky.weights().amax().max(1.0);
            prop_assert!((gmv.weights() - risky.weights()).sum().abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn robust_alpha_decomposes(seed in any::<u64>(), n in 2usize..9, k in 0.0f64..0.99) {
        let mut rng = rng(seed);
        let alpha = random_alpha(n, &mut rng);
        let theta = gaussian_vector(n, &mut rng);
        let lhs = robust_alpha(&alpha, &theta, k).unwrap();
        let scale = alpha.as_vector().norm() * theta.norm();
        let rhs = scale * (alpha_angle(&alpha, &theta).unwrap() - k);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * scale.max(1.0));
    }

    #[test]
    fn implicit_form_is_a_fixed_point(seed in any::<u64>(), n in 2usize..9) {
        let mut rng = rng(seed);
        let (alpha, cov) = random_instance(n, 1e2, true, &mut rng);
        let k0 = risky_direction_cosine(&alpha, &cov).unwrap();
        let k = k0 * (0.05 + 0.6 * rng.random::<f64>());
        let p = implicit_shrunk_theta(&alpha, &cov, k).unwrap();
        let oracle = implicit_fixed_point(&alpha, &cov, k);
        prop_assert!(max_abs_diff(p.weights(), &oracle) <= 1e-8 * oracle.amax().max(1.0));
    }
}
