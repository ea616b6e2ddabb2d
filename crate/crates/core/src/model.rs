//! Domain types and pure density computations for the heteroscedastic model
//!
//! ```text
//! y_i ~ N(x_iᵀβ, exp(x_iᵀγ))
//! β | τ_β, λ₂β ~ N(0, (D_β⁻¹ + λ₂β I)⁻¹),   τ_β,j ~ Exp(λ₁β² / 2)
//! γ | τ_γ, λ₂γ ~ N(0, (D_γ⁻¹ + λ₂γ I)⁻¹),   τ_γ,j ~ Exp(λ₁γ² / 2)
//! λ₁β², λ₁γ², λ₂β, λ₂γ ~ Gamma(a, b)  (shape / rate)
//! ```
//!
//! Prior covariances are never inverted densely: every computation uses the
//! diagonal precision `1/τ_j + λ₂` directly.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{ensure, Error, Result};
use crate::scalar::Scalar;

/// Linear predictors `x_iᵀγ` are clamped to `[-C, C]` before exponentiation.
pub const LINEAR_PREDICTOR_CLAMP: f64 = 30.0;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[inline]
pub fn clamp_linear_predictor<T: Scalar>(eta: T) -> T {
    let c = T::of(LINEAR_PREDICTOR_CLAMP);
    eta.max(-c).min(c)
}

/// Clamped log-variance `x_iᵀγ` for every observation.
pub fn log_variance<T: Scalar>(x: &DMatrix<T>, gamma: &DVector<T>) -> DVector<T> {
    (x * gamma).map(clamp_linear_predictor)
}

/// Regression data: design `x` (n × d), response `y`, optional simulation truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T: Scalar> {
    x: DMatrix<T>,
    y: DVector<T>,
    truth: Option<GroundTruth<T>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(x: DMatrix<T>, y: DVector<T>) -> Result<Self> {
        ensure!(x.nrows() >= 1, "dataset needs at least one observation");
        ensure!(x.ncols() >= 1, "dataset needs at least one covariate");
        ensure!(
            y.len() == x.nrows(),
            "response length {} does not match {} design rows",
            y.len(),
            x.nrows()
        );
        ensure!(
            x.iter().chain(y.iter()).all(|v| v.is_finite_value()),
            "dataset contains non-finite entries"
        );
        Ok(Self { x, y, truth: None })
    }

    pub fn with_truth(mut self, truth: GroundTruth<T>) -> Result<Self> {
        ensure!(
            truth.beta0.len() == self.d() && truth.gamma0.len() == self.d(),
            "ground truth has length {}/{} but d = {}",
            truth.beta0.len(),
            truth.gamma0.len(),
            self.d()
        );
        self.truth = Some(truth);
        Ok(self)
    }

    pub fn x(&self) -> &DMatrix<T> {
        &self.x
    }

    pub fn y(&self) -> &DVector<T> {
        &self.y
    }

    pub fn truth(&self) -> Option<&GroundTruth<T>> {
        self.truth.as_ref()
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    /// Same design, different response (used by joint-distribution tests).
    pub fn with_response(&self, y: DVector<T>) -> Result<Self> {
        let mut out = Dataset::new(self.x.clone(), y)?;
        out.truth = self.truth.clone();
        Ok(out)
    }
}

/// True coefficients of a simulated dataset and their supports.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth<T: Scalar> {
    pub beta0: DVector<T>,
    pub gamma0: DVector<T>,
    pub support_beta: Vec<usize>,
    pub support_gamma: Vec<usize>,
}

impl<T: Scalar> GroundTruth<T> {
    pub fn from_coefficients(beta0: DVector<T>, gamma0: DVector<T>) -> Self {
        let support_beta = support_of(&beta0);
        let support_gamma = support_of(&gamma0);
        Self {
            beta0,
            gamma0,
            support_beta,
            support_gamma,
        }
    }

    pub fn s_beta(&self) -> usize {
        self.support_beta.len()
    }

    pub fn s_gamma(&self) -> usize {
        self.support_gamma.len()
    }
}

/// Indices of the nonzero entries.
pub fn support_of<T: Scalar>(v: &DVector<T>) -> Vec<usize> {
    v.iter()
        .enumerate()
        .filter(|(_, x)| **x != T::zero())
        .map(|(j, _)| j)
        .collect()
}

/// Gamma shape/rate pairs for the four penalty hyperpriors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters<T> {
    pub a_beta1: T,
    pub b_beta1: T,
    pub a_gamma1: T,
    pub b_gamma1: T,
    pub a_beta2: T,
    pub b_beta2: T,
    pub a_gamma2: T,
    pub b_gamma2: T,
}

impl<T: Scalar> Hyperparameters<T> {
    /// Every shape set to `a` and every rate set to `b`.
    pub fn uniform(a: T, b: T) -> Self {
        Self {
            a_beta1: a,
            b_beta1: b,
            a_gamma1: a,
            b_gamma1: b,
            a_beta2: a,
            b_beta2: b,
            a_gamma2: a,
            b_gamma2: b,
        }
    }

    pub fn named(&self) -> [(&'static str, T); 8] {
        [
            ("a_beta1", self.a_beta1),
            ("b_beta1", self.b_beta1),
            ("a_gamma1", self.a_gamma1),
            ("b_gamma1", self.b_gamma1),
            ("a_beta2", self.a_beta2),
            ("b_beta2", self.b_beta2),
            ("a_gamma2", self.a_gamma2),
            ("b_gamma2", self.b_gamma2),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.named() {
            ensure!(
                v > T::zero() && v.is_finite_value(),
                "hyperparameter {name} must be positive and finite"
            );
        }
        Ok(())
    }
}

impl<T: Scalar> Default for Hyperparameters<T> {
    /// Shape 2, rate 1 everywhere; shapes exceed 1 as the theory requires.
    fn default() -> Self {
        Self::uniform(T::of(2.0), T::one())
    }
}

/// Current value of every parameter block of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState<T: Scalar> {
    pub beta: DVector<T>,
    pub gamma: DVector<T>,
    pub tau_beta: DVector<T>,
    pub tau_gamma: DVector<T>,
    pub lambda1_beta_sq: T,
    pub lambda1_gamma_sq: T,
    pub lambda2_beta: T,
    pub lambda2_gamma: T,
}

impl<T: Scalar> ChainState<T> {
    /// All scales at 1, coefficients as given.
    pub fn unit_scales(beta: DVector<T>, gamma: DVector<T>) -> Self {
        let d = beta.len();
        Self {
            beta,
            gamma,
            tau_beta: DVector::from_element(d, T::one()),
            tau_gamma: DVector::from_element(d, T::one()),
            lambda1_beta_sq: T::one(),
            lambda1_gamma_sq: T::one(),
            lambda2_beta: T::one(),
            lambda2_gamma: T::one(),
        }
    }

    pub fn d(&self) -> usize {
        self.beta.len()
    }

    /// Checks positivity of scales and finiteness of the implied precisions.
    ///
    /// The ridge weights λ₂ may sit on the boundary 0 (pure lasso prior);
    /// λ₁² and every τ must be strictly positive.
    pub fn validate(&self) -> Result<()> {
        let d = self.d();
        ensure!(
            self.gamma.len() == d && self.tau_beta.len() == d && self.tau_gamma.len() == d,
            "chain state blocks have inconsistent lengths"
        );
        for (name, tau) in [("tau_beta", &self.tau_beta), ("tau_gamma", &self.tau_gamma)] {
            ensure!(
                tau.iter().all(|t| *t > T::zero() && t.is_finite_value()),
                "{name} must be strictly positive and finite"
            );
        }
        for (name, v) in [
            ("lambda1_beta_sq", self.lambda1_beta_sq),
            ("lambda1_gamma_sq", self.lambda1_gamma_sq),
        ] {
            ensure!(v > T::zero() && v.is_finite_value(), "{name} must be positive");
        }
        for (name, v) in [
            ("lambda2_beta", self.lambda2_beta),
            ("lambda2_gamma", self.lambda2_gamma),
        ] {
            ensure!(v >= T::zero() && v.is_finite_value(), "{name} must be non-negative");
        }
        ensure!(
            self.beta.iter().chain(self.gamma.iter()).all(|v| v.is_finite_value()),
            "coefficients must be finite"
        );
        for p in self
            .prior_precision_beta()
            .iter()
            .chain(self.prior_precision_gamma().iter())
        {
            ensure!(
                *p > T::zero() && p.is_finite_value(),
                "implied prior precision must be positive and finite"
            );
        }
        Ok(())
    }

    /// Diagonal of `D_β⁻¹ + λ₂β I`.
    pub fn prior_precision_beta(&self) -> DVector<T> {
        prior_precision(&self.tau_beta, self.lambda2_beta)
    }

    /// Diagonal of `D_γ⁻¹ + λ₂γ I`.
    pub fn prior_precision_gamma(&self) -> DVector<T> {
        prior_precision(&self.tau_gamma, self.lambda2_gamma)
    }
}

pub fn prior_precision<T: Scalar>(tau: &DVector<T>, lambda2: T) -> DVector<T> {
    tau.map(|t| T::one() / t + lambda2)
}

/// Named per-iteration traces of scalar parameters (kept × k).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarTrace<T: Scalar> {
    pub names: Vec<&'static str>,
    pub values: DMatrix<T>,
}

impl<T: Scalar> ScalarTrace<T> {
    pub fn column(&self, name: &str) -> Option<Vec<T>> {
        let k = self.names.iter().position(|n| *n == name)?;
        Some(self.values.column(k).iter().copied().collect())
    }
}

/// Retained draws of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainDraws<T: Scalar> {
    /// kept × d
    pub beta: DMatrix<T>,
    /// kept × d, or kept × 0 for homoscedastic models
    pub gamma: DMatrix<T>,
    pub scalars: ScalarTrace<T>,
    pub mh_proposed: usize,
    pub mh_accepted: usize,
    pub final_step: f64,
}

/// Retained post-burn-in draws of every chain of a fit.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws<T: Scalar> {
    pub chains: Vec<ChainDraws<T>>,
    pub kept: usize,
    pub iterations: usize,
}

impl<T: Scalar> PosteriorDraws<T> {
    pub fn n_chains(&self) -> usize {
        self.chains.len()
    }

    pub fn d(&self) -> usize {
        self.chains.first().map_or(0, |c| c.beta.ncols())
    }

    pub fn d_gamma(&self) -> usize {
        self.chains.first().map_or(0, |c| c.gamma.ncols())
    }

    /// Per-chain traces of coordinate `j` of β.
    pub fn beta_coordinate(&self, j: usize) -> Vec<Vec<T>> {
        self.chains
            .iter()
            .map(|c| c.beta.column(j).iter().copied().collect())
            .collect()
    }

    pub fn gamma_coordinate(&self, j: usize) -> Vec<Vec<T>> {
        self.chains
            .iter()
            .map(|c| c.gamma.column(j).iter().copied().collect())
            .collect()
    }

    pub fn scalar_chains(&self, name: &str) -> Option<Vec<Vec<T>>> {
        self.chains.iter().map(|c| c.scalars.column(name)).collect()
    }

    /// Posterior mean of β pooled over chains.
    pub fn beta_mean(&self) -> DVector<T> {
        pooled_mean(self.chains.iter().map(|c| &c.beta), self.d())
    }

    pub fn gamma_mean(&self) -> DVector<T> {
        pooled_mean(self.chains.iter().map(|c| &c.gamma), self.d_gamma())
    }

    pub fn mh_acceptance(&self) -> f64 {
        let proposed: usize = self.chains.iter().map(|c| c.mh_proposed).sum();
        let accepted: usize = self.chains.iter().map(|c| c.mh_accepted).sum();
        if proposed == 0 {
            0.0
        } else {
            accepted as f64 / proposed as f64
        }
    }
}

fn pooled_mean<'a, T: Scalar>(blocks: impl Iterator<Item = &'a DMatrix<T>>, d: usize) -> DVector<T> {
    let mut sum = DVector::zeros(d);
    let mut rows = 0usize;
    for b in blocks {
        for r in b.row_iter() {
            sum += r.transpose();
        }
        rows += b.nrows();
    }
    if rows > 0 {
        sum /= T::of_usize(rows);
    }
    sum
}

fn check_len<T: Scalar>(v: &DVector<T>, d: usize, name: &str) -> Result<()> {
    ensure!(v.len() == d, "{name} has length {} but d = {d}", v.len());
    Ok(())
}

/// Heteroscedastic Gaussian log-likelihood `Σ log N(y_i | x_iᵀβ, exp(x_iᵀγ))`.
pub fn log_likelihood<T: Scalar>(
    beta: &DVector<T>,
    gamma: &DVector<T>,
    data: &Dataset<T>,
) -> Result<T> {
    check_len(beta, data.d(), "beta")?;
    check_len(gamma, data.d(), "gamma")?;
    let mean = data.x() * beta;
    let eta = log_variance(data.x(), gamma);
    Ok(log_likelihood_from_predictors(data.y(), &mean, &eta))
}

/// Log-likelihood from precomputed means and clamped log-variances.
pub fn log_likelihood_from_predictors<T: Scalar>(
    y: &DVector<T>,
    mean: &DVector<T>,
    eta: &DVector<T>,
) -> T {
    let half = T::of(0.5);
    let c = T::of(-0.5 * LN_2PI);
    y.iter()
        .zip(mean.iter())
        .zip(eta.iter())
        .map(|((&yi, &mi), &ei)| {
            let r = yi - mi;
            c - half * ei - half * r * r * (-ei).exp()
        })
        .sum()
}

/// Log-density of `Gamma(shape, rate)` at `x ≥ 0`.
///
/// At `x = 0` the density is `rate` for shape 1, zero for shape > 1 and
/// unbounded for shape < 1.
pub fn gamma_log_density<T: Scalar>(x: T, shape: T, rate: T) -> T {
    let (x, a, b) = (x.as_f64(), shape.as_f64(), rate.as_f64());
    let kernel = if x == 0.0 {
        if a == 1.0 {
            0.0
        } else if a > 1.0 {
            f64::NEG_INFINITY
        } else {
            f64::INFINITY
        }
    } else {
        (a - 1.0) * x.ln()
    };
    T::of(a * b.ln() - ln_gamma(a) + kernel - b * x)
}

/// Log-density of the Gaussian prior with diagonal precision `1/τ_j + λ₂`.
pub fn gaussian_prior_log_density<T: Scalar>(coefs: &DVector<T>, tau: &DVector<T>, lambda2: T) -> T {
    let half = T::of(0.5);
    let c = T::of(-0.5 * LN_2PI);
    coefs
        .iter()
        .zip(tau.iter())
        .map(|(&b, &t)| {
            let p = T::one() / t + lambda2;
            c + half * p.ln() - half * p * b * b
        })
        .sum()
}

/// Sum of `Exp(λ₁² / 2)` log-densities of the latent scales.
pub fn exponential_scales_log_density<T: Scalar>(tau: &DVector<T>, lambda1_sq: T) -> T {
    let rate = lambda1_sq * T::of(0.5);
    let log_rate = rate.ln();
    tau.iter().map(|&t| log_rate - rate * t).sum()
}

/// Log prior density of a full chain state.
pub fn log_prior<T: Scalar>(state: &ChainState<T>, hyp: &Hyperparameters<T>) -> Result<T> {
    state.validate()?;
    hyp.validate()?;
    let s = state;
    Ok(gaussian_prior_log_density(&s.beta, &s.tau_beta, s.lambda2_beta)
        + gaussian_prior_log_density(&s.gamma, &s.tau_gamma, s.lambda2_gamma)
        + exponential_scales_log_density(&s.tau_beta, s.lambda1_beta_sq)
        + exponential_scales_log_density(&s.tau_gamma, s.lambda1_gamma_sq)
        + gamma_log_density(s.lambda1_beta_sq, hyp.a_beta1, hyp.b_beta1)
        + gamma_log_density(s.lambda1_gamma_sq, hyp.a_gamma1, hyp.b_gamma1)
        + gamma_log_density(s.lambda2_beta, hyp.a_beta2, hyp.b_beta2)
        + gamma_log_density(s.lambda2_gamma, hyp.a_gamma2, hyp.b_gamma2))
}

/// Unnormalized joint log posterior: likelihood plus prior.
pub fn log_posterior_unnorm<T: Scalar>(
    state: &ChainState<T>,
    data: &Dataset<T>,
    hyp: &Hyperparameters<T>,
) -> Result<T> {
    check_len(&state.beta, data.d(), "beta")?;
    Ok(log_likelihood(&state.beta, &state.gamma, data)? + log_prior(state, hyp)?)
}

/// Observation-averaged KL divergence from the model at `(β₀, γ₀)` to the one
/// at `(β, γ)`.
pub fn gaussian_kl<T: Scalar>(
    beta0: &DVector<T>,
    gamma0: &DVector<T>,
    beta: &DVector<T>,
    gamma: &DVector<T>,
    data: &Dataset<T>,
) -> Result<T> {
    let d = data.d();
    check_len(beta0, d, "beta0")?;
    check_len(gamma0, d, "gamma0")?;
    check_len(beta, d, "beta")?;
    check_len(gamma, d, "gamma")?;
    let x = data.x();
    let eta0 = log_variance(x, gamma0);
    let eta = log_variance(x, gamma);
    let dmean = x * (beta - beta0);
    let half = T::of(0.5);
    let total: T = eta0
        .iter()
        .zip(eta.iter())
        .zip(dmean.iter())
        .map(|((&e0, &e), &dm)| half * ((e - e0) + (e0.exp() + dm * dm) * (-e).exp() - T::one()))
        .sum();
    Ok((total / T::of_usize(data.n())).max(T::zero()))
}

/// Block-diagonal information matrix restricted to the active coordinates:
/// `diag((1/n) X_Sβᵀ X_Sβ, (1/n) X_Sγᵀ X_Sγ)`.
pub fn fisher_information_active<T: Scalar>(
    data: &Dataset<T>,
    support_beta: &[usize],
    support_gamma: &[usize],
) -> Result<DMatrix<T>> {
    let d = data.d();
    for &j in support_beta.iter().chain(support_gamma) {
        if j >= d {
            return Err(Error::contract(format!("support index {j} out of range for d = {d}")));
        }
    }
    let (sb, sg) = (support_beta.len(), support_gamma.len());
    let mut info = DMatrix::zeros(sb + sg, sb + sg);
    let inv_n = T::one() / T::of_usize(data.n());
    let x = data.x();
    for (offset, support) in [(0, support_beta), (sb, support_gamma)] {
        let cols = x.select_columns(support);
        let block = (cols.transpose() * &cols) * inv_n;
        info.view_mut((offset, offset), (support.len(), support.len()))
            .copy_from(&block);
    }
    Ok(info)
}
