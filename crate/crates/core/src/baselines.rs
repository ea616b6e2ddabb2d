//! Homoscedastic comparison estimators: OLS, lasso / elastic net by
//! coordinate descent, and Gibbs samplers for the Bayesian lasso and the
//! Bayesian elastic net.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::linalg;
use crate::model::{ChainDraws, Dataset, Hyperparameters, PosteriorDraws, ScalarTrace};
use crate::rng::{derive_seed, stream_rng};
use crate::samplers::{
    sample_gamma_variate, update_lambda1_sq, update_lambda2, update_tau_vector, SamplerConfig,
    TauUpdateMode,
};
use crate::scalar::Scalar;

/// Penalty weights and solver controls for the elastic net
/// `(1/2n)‖y − Xβ‖² + λ₁‖β‖₁ + λ₂‖β‖₂²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnetConfig {
    pub l1_weight: f64,
    pub l2_weight: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub cv_folds: usize,
    pub lambda_grid_size: usize,
}

impl Default for EnetConfig {
    fn default() -> Self {
        Self {
            l1_weight: 0.0,
            l2_weight: 0.0,
            max_iter: 10_000,
            tol: 1e-10,
            cv_folds: 5,
            lambda_grid_size: 30,
        }
    }
}

impl EnetConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.l1_weight >= 0.0 && self.l2_weight >= 0.0,
            "penalty weights must be non-negative"
        );
        ensure!(self.tol > 0.0, "tol must be positive");
        ensure!(self.max_iter >= 1, "max_iter must be positive");
        ensure!(self.cv_folds >= 2, "cv_folds must be at least 2");
        ensure!(self.lambda_grid_size >= 1, "lambda_grid_size must be positive");
        Ok(())
    }
}

/// Lasso (λ₂ = 0) or elastic net (λ₂ = λ₁ / 2) during cross-validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Penalty {
    Lasso,
    ElasticNet,
}

impl Penalty {
    fn l2_for(self, l1: f64) -> f64 {
        match self {
            Penalty::Lasso => 0.0,
            Penalty::ElasticNet => 0.5 * l1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnetFit<T: Scalar> {
    pub beta: DVector<T>,
    pub converged: bool,
    pub sweeps: usize,
    /// Objective after each full sweep.
    pub objective_trace: Vec<T>,
}

/// Minimum-norm least squares.
pub fn fit_ols<T: Scalar>(data: &Dataset<T>) -> DVector<T> {
    linalg::min_norm_lstsq(data.x(), data.y())
}

pub fn enet_objective<T: Scalar>(data: &Dataset<T>, beta: &DVector<T>, l1: T, l2: T) -> T {
    let r = data.y() - data.x() * beta;
    r.norm_squared() / (T::of(2.0) * T::of_usize(data.n())) + l1 * beta.lp_norm(1) + l2 * beta.norm_squared()
}

#[inline]
fn soft_threshold<T: Scalar>(z: T, t: T) -> T {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        T::zero()
    }
}

/// Cyclic coordinate descent from a zero start.
pub fn fit_enet<T: Scalar>(data: &Dataset<T>, cfg: &EnetConfig) -> Result<EnetFit<T>> {
    cfg.validate()?;
    enet_coordinate_descent(data.x(), data.y(), cfg, DVector::zeros(data.d()))
}

fn enet_coordinate_descent<T: Scalar>(
    x: &DMatrix<T>,
    y: &DVector<T>,
    cfg: &EnetConfig,
    start: DVector<T>,
) -> Result<EnetFit<T>> {
    let (n, d) = x.shape();
    let nf = T::of_usize(n);
    let l1 = T::of(cfg.l1_weight);
    let l2 = T::of(cfg.l2_weight);
    let col_sq: Vec<T> = (0..d).map(|j| x.column(j).norm_squared() / nf).collect();
    let mut beta = start;
    let mut r = y - x * &beta;
    let objective = |beta: &DVector<T>, r: &DVector<T>| {
        r.norm_squared() / (T::of(2.0) * nf) + l1 * beta.lp_norm(1) + l2 * beta.norm_squared()
    };
    let mut trace = Vec::new();
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < cfg.max_iter {
        sweeps += 1;
        let mut max_change = T::zero();
        for j in 0..d {
            let denom = col_sq[j] + T::of(2.0) * l2;
            let old = beta[j];
            let new = if denom > T::zero() {
                let rho = x.column(j).dot(&r) / nf + col_sq[j] * old;
                soft_threshold(rho, l1) / denom
            } else {
                T::zero()
            };
            let delta = new - old;
            if delta != T::zero() {
                r.axpy(-delta, &x.column(j), T::one());
                beta[j] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        trace.push(objective(&beta, &r));
        if max_change < T::of(cfg.tol) {
            converged = true;
            break;
        }
    }
    Ok(EnetFit {
        beta,
        converged,
        sweeps,
        objective_trace: trace,
    })
}

/// `max_j |(1/n) x_jᵀ y|`, the smallest λ₁ giving β = 0 for the lasso.
pub fn lambda_max<T: Scalar>(x: &DMatrix<T>, y: &DVector<T>) -> T {
    let n = T::of_usize(x.nrows());
    x.tr_mul(y).amax() / n
}

/// Geometric grid of `size` values from `λ_max` down to `1e-3 · λ_max`.
pub fn lambda_grid(lambda_max: f64, size: usize) -> Vec<f64> {
    if size == 1 {
        return vec![lambda_max];
    }
    let lo = 1e-3f64.ln();
    (0..size)
        .map(|k| lambda_max * (lo * k as f64 / (size - 1) as f64).exp())
        .collect()
}

/// K-fold cross-validated choice of λ₁ (λ₂ tied to λ₁ by `penalty`).
///
/// Folds are a seeded shuffle of the rows; the grid is walked from the
/// largest penalty down with warm starts. Ties favour the larger penalty.
pub fn cv_select_enet<T: Scalar>(
    data: &Dataset<T>,
    cfg: &EnetConfig,
    penalty: Penalty,
    seed: u64,
) -> Result<EnetConfig> {
    cfg.validate()?;
    let n = data.n();
    ensure!(n >= cfg.cv_folds, "need at least cv_folds = {} rows, got {n}", cfg.cv_folds);
    let lmax = lambda_max(data.x(), data.y()).as_f64();
    let grid = lambda_grid(lmax.max(f64::MIN_POSITIVE), cfg.lambda_grid_size);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(derive_seed(seed, &[0xc5]), 0));
    let mut fold_of = vec![0usize; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % cfg.cv_folds;
    }

    let fold_errors: Vec<Vec<f64>> = (0..cfg.cv_folds)
        .into_par_iter()
        .map(|k| -> Result<Vec<f64>> {
            let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != k).collect();
            let test: Vec<usize> = (0..n).filter(|&i| fold_of[i] == k).collect();
            let xtr = data.x().select_rows(&train);
            let ytr = data.y().select_rows(&train);
            let xte = data.x().select_rows(&test);
            let yte = data.y().select_rows(&test);
            let mut warm = DVector::zeros(data.d());
            let mut errs = Vec::with_capacity(grid.len());
            for &l1 in &grid {
                let step = EnetConfig {
                    l1_weight: l1,
                    l2_weight: penalty.l2_for(l1),
                    ..cfg.clone()
                };
                let fit = enet_coordinate_descent(&xtr, &ytr, &step, warm)?;
                let resid = &yte - &xte * &fit.beta;
                errs.push(resid.norm_squared().as_f64() / test.len() as f64);
                warm = fit.beta;
            }
            Ok(errs)
        })
        .collect::<Result<_>>()?;

    let mut best = 0;
    let mut best_err = f64::INFINITY;
    for g in 0..grid.len() {
        let mean: f64 = fold_errors.iter().map(|e| e[g]).sum::<f64>() / cfg.cv_folds as f64;
        if mean < best_err {
            best_err = mean;
            best = g;
        }
    }
    Ok(EnetConfig {
        l1_weight: grid[best],
        l2_weight: penalty.l2_for(grid[best]),
        ..cfg.clone()
    })
}

/// Controls for the homoscedastic Bayesian baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomoBayesConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub chains: usize,
    pub seed: u64,
    /// Inverse-gamma prior on the noise variance σ².
    pub sigma2_shape: f64,
    pub sigma2_rate: f64,
}

impl Default for HomoBayesConfig {
    fn default() -> Self {
        Self::from_sampler(&SamplerConfig::default())
    }
}

impl HomoBayesConfig {
    pub fn from_sampler(cfg: &SamplerConfig) -> Self {
        Self {
            iterations: cfg.iterations,
            burn_in: cfg.burn_in,
            chains: cfg.chains,
            seed: cfg.seed,
            sigma2_shape: 1.0,
            sigma2_rate: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.iterations >= 1, "iterations must be positive");
        ensure!(self.burn_in < self.iterations, "burn_in must be smaller than iterations");
        ensure!(self.chains >= 1, "chains must be positive");
        ensure!(
            self.sigma2_shape > 0.0 && self.sigma2_rate > 0.0,
            "sigma2 prior parameters must be positive"
        );
        Ok(())
    }
}

/// Bayesian lasso: `y ~ N(Xβ, σ²I)`, `β_j | τ_j ~ N(0, τ_j)`,
/// `τ_j ~ Exp(λ₁²/2)`, `λ₁² ~ Gamma(a_β1, b_β1)`, `σ² ~ InvGamma`.
///
/// Draws are recorded for β and the scalars `sigma2`, `lambda1_beta_sq`.
pub fn fit_blasso<T: Scalar>(
    data: &Dataset<T>,
    hyp: &Hyperparameters<T>,
    cfg: &HomoBayesConfig,
) -> Result<PosteriorDraws<T>> {
    fit_homoscedastic(data, hyp, cfg, false)
}

/// Bayesian elastic net: the lasso model with prior precision
/// `1/τ_j + λ₂β` and `λ₂β ~ Gamma(a_β2, b_β2)`.
///
/// Adds a `lambda2_beta` scalar trace.
pub fn fit_ben<T: Scalar>(
    data: &Dataset<T>,
    hyp: &Hyperparameters<T>,
    cfg: &HomoBayesConfig,
) -> Result<PosteriorDraws<T>> {
    fit_homoscedastic(data, hyp, cfg, true)
}

fn fit_homoscedastic<T: Scalar>(
    data: &Dataset<T>,
    hyp: &Hyperparameters<T>,
    cfg: &HomoBayesConfig,
    ridge: bool,
) -> Result<PosteriorDraws<T>> {
    cfg.validate()?;
    hyp.validate()?;
    let gram = data.x().transpose() * data.x();
    let xty = data.x().tr_mul(data.y());
    let results: Vec<Result<ChainDraws<T>>> = (0..cfg.chains)
        .into_par_iter()
        .map(|c| homoscedastic_chain(data, &gram, &xty, hyp, cfg, ridge, c))
        .collect();
    crate::samplers::collect_chains(results, cfg.iterations - cfg.burn_in, cfg.iterations)
}

fn homoscedastic_chain<T: Scalar>(
    data: &Dataset<T>,
    gram: &DMatrix<T>,
    xty: &DVector<T>,
    hyp: &Hyperparameters<T>,
    cfg: &HomoBayesConfig,
    ridge: bool,
    chain_index: usize,
) -> Result<ChainDraws<T>> {
    let mut rng = stream_rng(cfg.seed, chain_index as u64);
    let (n, d) = (data.n(), data.d());
    let kept = cfg.iterations - cfg.burn_in;
    let names: Vec<&'static str> = if ridge {
        vec!["sigma2", "lambda1_beta_sq", "lambda2_beta"]
    } else {
        vec!["sigma2", "lambda1_beta_sq"]
    };
    let mut beta_draws = DMatrix::zeros(kept, d);
    let mut scalar_draws = DMatrix::zeros(kept, names.len());

    let mut sigma2 = T::one();
    let mut tau = DVector::from_element(d, T::one());
    let mut lambda1_sq = T::one();
    let mut lambda2 = if ridge { T::one() } else { T::zero() };
    let floor = T::of(1e-10);
    let a_sigma = T::of(cfg.sigma2_shape) + T::of(0.5) * T::of_usize(n);

    for it in 0..cfg.iterations {
        let prior = tau.map(|t| T::one() / t + lambda2);
        let beta = draw_from_gram(data, gram, xty, T::one() / sigma2, &prior, &mut rng)
            .map_err(|e| e.with_context(format!("chain {chain_index}, iteration {it}")))?;
        let rss = (data.y() - data.x() * &beta).norm_squared();
        let precision = sample_gamma_variate(a_sigma, T::of(cfg.sigma2_rate) + T::of(0.5) * rss, &mut rng)?;
        sigma2 = (T::one() / precision).max(T::tiny());
        tau = update_tau_vector(&beta, lambda1_sq, TauUpdateMode::Reciprocal, floor, &mut rng)?;
        lambda1_sq = update_lambda1_sq(&tau, hyp.a_beta1, hyp.b_beta1, &mut rng)?;
        if ridge {
            lambda2 = update_lambda2(&beta, hyp.a_beta2, hyp.b_beta2, &mut rng)?;
        }
        if it >= cfg.burn_in {
            let row = it - cfg.burn_in;
            beta_draws.row_mut(row).copy_from(&beta.transpose());
            scalar_draws[(row, 0)] = sigma2;
            scalar_draws[(row, 1)] = lambda1_sq;
            if ridge {
                scalar_draws[(row, 2)] = lambda2;
            }
        }
    }
    Ok(ChainDraws {
        beta: beta_draws,
        gamma: DMatrix::zeros(kept, 0),
        scalars: ScalarTrace {
            names,
            values: scalar_draws,
        },
        mh_proposed: 0,
        mh_accepted: 0,
        final_step: 0.0,
    })
}

/// Draws `β ~ N(A⁻¹ s Xᵀy, A⁻¹)` with `A = s XᵀX + diag(prior)` from a
/// precomputed Gram matrix; wide designs go through the n-dimensional route.
fn draw_from_gram<T: Scalar, R: Rng + ?Sized>(
    data: &Dataset<T>,
    gram: &DMatrix<T>,
    xty: &DVector<T>,
    scale: T,
    prior: &DVector<T>,
    rng: &mut R,
) -> Result<DVector<T>> {
    let (n, d) = (data.n(), data.d());
    if d > 4 * n {
        let w = DVector::from_element(n, scale);
        return crate::samplers::draw_weighted_gaussian(data.x(), data.y(), &w, prior, rng);
    }
    let mut precision = gram * scale;
    for j in 0..d {
        precision[(j, j)] += prior[j];
    }
    let l = linalg::cholesky_or_singular(&precision, "beta posterior precision")?;
    let mean = linalg::cholesky_solve(&l, &(xty * scale));
    let z = DVector::from_fn(d, |_, _| T::standard_normal(rng));
    Ok(mean + linalg::solve_lower_transpose(&l, &z))
}
