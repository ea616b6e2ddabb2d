mod common;

use common::{enet, kkt_violation, noise, random_design, sparse_dataset};
use hdben::baselines::{
    cv_select_enet, enet_objective, fit_ben, fit_blasso, fit_enet, fit_ols, lambda_grid,
    lambda_max, EnetConfig, HomoBayesConfig, Penalty,
};
use hdben::diagnostics::gelman_rubin;
use hdben::model::{Dataset, Hyperparameters};
use hdben::simulation::{generate_dataset, ScenarioSpec};
use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use proptest::prelude::*;

#[test]
fn ols_identity_design() {
    let data = Dataset::new(DMatrix::identity(2, 2), dvector![1.0, 2.0]).unwrap();
    assert!((fit_ols(&data) - dvector![1.0, 2.0]).amax() < 1e-12);
}

#[test]
fn ols_hand_normal_equations() {
    let data = Dataset::new(dmatrix![1.0f64; 1.0], dvector![1.0, 3.0]).unwrap();
    assert!((fit_ols(&data)[0] - 2.0).abs() < 1e-12);
}

#[test]
fn ols_matches_pseudoinverse_when_wide() {
    let x = random_design(6, 15, 1);
    let y = noise(6, 1);
    let data = Dataset::new(x.clone(), y.clone()).unwrap();
    let beta = fit_ols(&data);
    let oracle = x.clone().pseudo_inverse(1e-12).unwrap() * &y;
    assert!((&beta - &oracle).amax() < 1e-8);
    // Interpolates the response and is orthogonal to the null space.
    assert!((&x * &beta - &y).amax() < 1e-8);
}

#[test]
fn ols_residuals_are_orthogonal_to_columns() {
    let x = random_design(50, 8, 2);
    let data = Dataset::new(x.clone(), noise(50, 2)).unwrap();
    let r = data.y() - &x * fit_ols(&data);
    assert!((x.transpose() * r).amax() < 1e-8);
}

#[test]
fn ols_handles_rank_deficiency() {
    let mut x = random_design(10, 3, 3);
    let c0 = x.column(0).clone_owned();
    x.set_column(2, &(c0 * 2.0));
    let data = Dataset::new(x.clone(), noise(10, 3)).unwrap();
    let oracle = x.pseudo_inverse(1e-10).unwrap() * data.y();
    assert!((fit_ols(&data) - oracle).amax() < 1e-8);
}

#[test]
fn unpenalized_enet_is_ols() {
    let data = Dataset::new(random_design(40, 5, 4), noise(40, 4)).unwrap();
    let fit = fit_enet(&data, &enet(0.0, 0.0)).unwrap();
    assert!(fit.converged);
    assert!((fit.beta - fit_ols(&data)).amax() < 1e-6);
}

#[test]
fn enet_beyond_lambda_max_is_zero() {
    let data = Dataset::new(random_design(30, 6, 5), noise(30, 5)).unwrap();
    let lmax = lambda_max(data.x(), data.y());
    let fit = fit_enet(&data, &enet(lmax, 0.3)).unwrap();
    assert!(fit.beta.iter().all(|&b| b == 0.0));
    let just_below = fit_enet(&data, &enet(0.9 * lmax, 0.0)).unwrap();
    assert!(just_below.beta.iter().any(|&b| b != 0.0));
}

/// Convex minimization by repeated grid zooming.
fn grid_minimum(f: impl Fn(f64, f64) -> f64) -> f64 {
    let (mut cx, mut cy, mut half) = (0.0, 0.0, 4.0);
    let k = 200;
    let mut best = f64::INFINITY;
    for _ in 0..12 {
        let h = 2.0 * half / k as f64;
        let (mut bx, mut by) = (cx, cy);
        for i in 0..=k {
            for j in 0..=k {
                let (a, b) = (cx - half + i as f64 * h, cy - half + j as f64 * h);
                let v = f(a, b);
                if v < best {
                    best = v;
                    bx = a;
                    by = b;
                }
            }
        }
        cx = bx;
        cy = by;
        half = 4.0 * h;
    }
    best
}

#[test]
fn enet_objective_matches_grid_oracle() {
    let x = dmatrix![1.0, 0.5; -0.3, 1.2; 0.8, -0.7; 2.0, 0.1; -1.1, 0.9];
    let y = dvector![1.2, 0.4, -0.3, 2.2, -0.8];
    let data = Dataset::new(x, y).unwrap();
    let fit = fit_enet(&data, &enet(0.1, 0.1)).unwrap();
    let ours = enet_objective(&data, &fit.beta, 0.1, 0.1);
    let oracle = grid_minimum(|a, b| enet_objective(&data, &dvector![a, b], 0.1, 0.1));
    assert!((ours - oracle).abs() < 1e-6, "{ours} vs {oracle}");
    assert!(ours <= oracle + 1e-12);
}

#[test]
fn enet_objective_never_increases_across_sweeps() {
    let data = sparse_dataset(60, DVector::from_fn(12, |j, _| if j < 3 { 1.5 } else { 0.0 }), DVector::zeros(12), 6);
    let fit = fit_enet(&data, &enet(0.05, 0.02)).unwrap();
    assert!(fit.objective_trace.len() >= 2);
    for w in fit.objective_trace.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
    }
}

#[test]
fn enet_flags_non_convergence() {
    let data = Dataset::new(random_design(30, 10, 7), noise(30, 7)).unwrap();
    let cfg = EnetConfig {
        max_iter: 1,
        tol: 1e-15,
        ..enet(0.01, 0.0)
    };
    let fit = fit_enet(&data, &cfg).unwrap();
    assert!(!fit.converged);
    assert_eq!(fit.sweeps, 1);
}

#[test]
fn kkt_conditions_hold_on_random_instances() {
    for seed in 0..100u64 {
        let (n, d) = (10 + (seed % 7) as usize * 5, 3 + (seed % 11) as usize * 3);
        let data = Dataset::new(random_design(n, d, 100 + seed), noise(n, 100 + seed)).unwrap();
        let lmax = lambda_max(data.x(), data.y());
        let l1 = lmax * (0.02 + 0.9 * ((seed * 37) % 100) as f64 / 100.0);
        let l2 = if seed % 2 == 0 { 0.0 } else { 0.5 * l1 };
        let fit = fit_enet(&data, &enet(l1, l2)).unwrap();
        let v = kkt_violation(&data, &fit.beta, l1, l2);
        assert!(v < 1e-6, "seed {seed}: violation {v}");
    }
}

#[test]
fn lambda_grid_spans_three_decades() {
    let g = lambda_grid(2.0, 30);
    assert_eq!(g.len(), 30);
    assert!((g[0] - 2.0).abs() < 1e-15);
    assert!((g[29] - 2e-3).abs() < 1e-15);
    assert!(g.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn cv_on_pure_noise_picks_heavy_shrinkage() {
    let data = Dataset::new(random_design(100, 20, 8), noise(100, 8)).unwrap();
    let cfg = EnetConfig::default();
    let chosen = cv_select_enet(&data, &cfg, Penalty::Lasso, 8).unwrap();
    let grid = lambda_grid(lambda_max(data.x(), data.y()), cfg.lambda_grid_size);
    let idx = grid.iter().position(|&g| g == chosen.l1_weight).unwrap();
    assert!(idx < grid.len() / 2, "selected grid index {idx}");
    assert_eq!(chosen.l2_weight, 0.0);
}

#[test]
fn cv_keeps_a_strong_single_signal() {
    let mut beta0 = DVector::zeros(15);
    beta0[6] = 3.0;
    let data = sparse_dataset(80, beta0, DVector::zeros(15), 9);
    let cfg = cv_select_enet(&data, &EnetConfig::default(), Penalty::ElasticNet, 9).unwrap();
    assert!((cfg.l2_weight - 0.5 * cfg.l1_weight).abs() < 1e-15);
    let fit = fit_enet(&data, &cfg).unwrap();
    assert!(fit.beta[6] > 1.0);
}

#[test]
fn cv_is_seed_deterministic() {
    let data = Dataset::new(random_design(60, 10, 10), noise(60, 10)).unwrap();
    let a = cv_select_enet(&data, &EnetConfig::default(), Penalty::Lasso, 3).unwrap();
    let b = cv_select_enet(&data, &EnetConfig::default(), Penalty::Lasso, 3).unwrap();
    assert_eq!(a, b);
}

#[test]
fn cv_requires_enough_rows() {
    let data = Dataset::new(random_design(3, 2, 11), noise(3, 11)).unwrap();
    assert!(cv_select_enet(&data, &EnetConfig::default(), Penalty::Lasso, 1).is_err());
}

fn homo(iterations: usize, seed: u64) -> HomoBayesConfig {
    HomoBayesConfig {
        iterations,
        burn_in: iterations / 5,
        chains: 2,
        seed,
        ..HomoBayesConfig::default()
    }
}

#[test]
fn blasso_with_huge_penalty_shrinks_to_zero() {
    let data = sparse_dataset(50, dvector![1.0, -1.0, 0.5], DVector::zeros(3), 12);
    let hyp = Hyperparameters {
        a_beta1: 1e8,
        b_beta1: 1.0,
        ..Hyperparameters::default()
    };
    let draws = fit_blasso(&data, &hyp, &homo(1_000, 12)).unwrap();
    assert!(draws.beta_mean().norm() < 0.1);
}

#[test]
fn blasso_recovers_strong_signal() {
    let data = sparse_dataset(100, dvector![2.0], DVector::zeros(1), 13);
    let draws = fit_blasso(&data, &Hyperparameters::default(), &homo(3_000, 13)).unwrap();
    assert!((draws.beta_mean()[0] - 2.0).abs() < 0.2);
}

#[test]
fn bayesian_baselines_keep_noise_variance_positive() {
    let data = sparse_dataset(40, dvector![1.0, 0.0, 0.0], dvector![0.5, 0.0, 0.0], 14);
    for draws in [
        fit_blasso(&data, &Hyperparameters::default(), &homo(500, 14)).unwrap(),
        fit_ben(&data, &Hyperparameters::default(), &homo(500, 14)).unwrap(),
    ] {
        for chain in draws.scalar_chains("sigma2").unwrap() {
            assert!(chain.iter().all(|&s| s > 0.0 && s.is_finite()));
        }
        assert_eq!(draws.d_gamma(), 0);
    }
}

#[test]
fn ben_without_ridge_matches_blasso() {
    let data = sparse_dataset(60, dvector![1.5, 0.0, -0.7, 0.0], DVector::zeros(4), 15);
    let hyp = Hyperparameters {
        a_beta2: 1e-3,
        b_beta2: 1e6,
        ..Hyperparameters::default()
    };
    let cfg = HomoBayesConfig {
        chains: 4,
        ..homo(10_000, 15)
    };
    let ben = fit_ben(&data, &hyp, &cfg).unwrap().beta_mean();
    let blasso = fit_blasso(&data, &hyp, &cfg).unwrap().beta_mean();
    assert!((ben - blasso).amax() < 0.03);
}

#[test]
fn ben_groups_correlated_columns() {
    // Two nearly collinear columns sharing one signal: the ridge term pulls
    // their posterior means together more than the lasso prior does.
    let (mut ben_gap, mut blasso_gap) = (0.0, 0.0);
    for seed in 0..20u64 {
        let n = 60;
        let mut x = random_design(n, 4, 200 + seed);
        let shared = x.column(0).clone_owned();
        let jitter = noise(n, 300 + seed) * 0.1;
        x.set_column(1, &(shared + jitter));
        let y = (x.column(0) + x.column(1)) * 1.0 + noise(n, 400 + seed);
        let data = Dataset::new(x, y).unwrap();
        let hyp = Hyperparameters::default();
        let cfg = homo(2_000, seed);
        let b = fit_ben(&data, &hyp, &cfg).unwrap().beta_mean();
        let l = fit_blasso(&data, &hyp, &cfg).unwrap().beta_mean();
        ben_gap += (b[0] - b[1]).abs();
        blasso_gap += (l[0] - l[1]).abs();
    }
    assert!(ben_gap < blasso_gap, "ben {ben_gap} vs blasso {blasso_gap}");
}

#[test]
fn bayesian_baselines_converge_at_full_length() {
    let spec = ScenarioSpec::default();
    let data = generate_dataset(&spec, 0).unwrap();
    let cfg = HomoBayesConfig {
        chains: 3,
        burn_in: 1_000,
        ..homo(5_000, 16)
    };
    for draws in [
        fit_blasso(&data, &Hyperparameters::default(), &cfg).unwrap(),
        fit_ben(&data, &Hyperparameters::default(), &cfg).unwrap(),
    ] {
        for j in 0..data.d() {
            let r = gelman_rubin(&draws.beta_coordinate(j)).unwrap();
            assert!(r < 1.1, "coordinate {j}: R-hat {r}");
        }
    }
}

#[test]
fn enet_config_validation() {
    assert!(EnetConfig { cv_folds: 1, ..EnetConfig::default() }.validate().is_err());
    assert!(EnetConfig { tol: 0.0, ..EnetConfig::default() }.validate().is_err());
    assert!(enet(-0.1, 0.0).validate().is_err());
    assert!(HomoBayesConfig { burn_in: 10, iterations: 10, ..HomoBayesConfig::default() }.validate().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn enet_solution_satisfies_kkt(seed in 0u64..100_000, frac in 0.01f64..1.2, ridge in 0.0f64..2.0) {
        let data = Dataset::new(random_design(25, 8, seed), noise(25, seed)).unwrap();
        let l1 = frac * lambda_max(data.x(), data.y());
        let l2 = ridge * l1;
        let fit = fit_enet(&data, &enet(l1, l2)).unwrap();
        prop_assert!(kkt_violation(&data, &fit.beta, l1, l2) < 1e-6);
    }

    #[test]
    fn ols_matches_pseudoinverse(seed in 0u64..100_000, n in 2usize..12, d in 1usize..20) {
        let x = random_design(n, d, seed);
        let data = Dataset::new(x.clone(), noise(n, seed)).unwrap();
        let oracle = x.pseudo_inverse(1e-10).unwrap() * data.y();
        prop_assert!((fit_ols(&data) - oracle).amax() < 1e-8);
    }
}
