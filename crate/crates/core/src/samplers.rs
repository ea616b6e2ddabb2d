//! Random-variate primitives and the Gibbs sampler with an embedded
//! random-walk Metropolis–Hastings step for γ.
//!
//! One sweep updates, in order: β (conjugate Gaussian), γ (MH), τ_β, τ_γ
//! (inverse Gaussian), λ₁β², λ₁γ² (Gamma), λ₂β, λ₂γ (Gamma).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::linalg;
use crate::model::{
    clamp_linear_predictor, log_variance, LINEAR_PREDICTOR_CLAMP, ChainDraws, ChainState, Dataset, Hyperparameters, PosteriorDraws, ScalarTrace,
};
use crate::rng::{stream_rng, StreamRng};
use crate::scalar::Scalar;

/// Names of the scalar traces recorded by [`run_chain`].
pub const HDBEN_SCALARS: [&str; 4] = [
    "lambda1_beta_sq",
    "lambda1_gamma_sq",
    "lambda2_beta",
    "lambda2_gamma",
];

/// Which inverse-Gaussian conditional is used for the latent scales.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TauUpdateMode {
    /// `τ_j ~ IG(√(λ₁²/β_j²), λ₁²)`.
    #[default]
    Paper,
    /// `1/τ_j ~ IG(√(λ₁²/β_j²), λ₁²)`, the scale-mixture conditional.
    Reciprocal,
}

/// Shape of the γ random-walk proposal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GammaProposal {
    /// `η ~ N(0, step² I)`.
    Spherical,
    /// `η ~ N(0, step² (½XᵀX + D_γ⁻¹ + λ₂γ I)⁻¹)`: the expected information of
    /// the γ-conditional. Symmetric in γ, so the acceptance ratio is unchanged.
    Fisher,
    /// Langevin drift plus Fisher-shaped noise; the acceptance ratio carries
    /// the proposal densities.
    #[default]
    Langevin,
}

/// Parameter blocks held at their initial values instead of being resampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FrozenBlocks {
    pub gamma: bool,
    pub tau: bool,
    pub lambda1: bool,
    pub lambda2: bool,
}

impl FrozenBlocks {
    /// τ and every λ fixed; only β and γ move.
    pub fn scales() -> Self {
        Self {
            gamma: false,
            tau: true,
            lambda1: true,
            lambda2: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub chains: usize,
    pub seed: u64,
    /// Initial random-walk standard deviation of the γ proposal.
    pub mh_step_init: f64,
    pub adapt_enabled: bool,
    pub adapt_window: usize,
    pub adapt_target: f64,
    pub gamma_proposal: GammaProposal,
    /// Metropolis–Hastings moves of γ per (β, γ) cycle.
    pub mh_moves: usize,
    /// Repetitions of the (β, γ) block pair before the scale updates.
    pub block_cycles: usize,
    pub tau_update_mode: TauUpdateMode,
    /// Lower bound on |coefficient| inside the inverse-Gaussian mean.
    pub beta_floor: f64,
    #[serde(skip)]
    pub frozen: FrozenBlocks,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            iterations: 2_500,
            burn_in: 500,
            thinning: 1,
            chains: 2,
            seed: 20_250_101,
            mh_step_init: 0.05,
            adapt_enabled: true,
            adapt_window: 25,
            adapt_target: 0.3,
            gamma_proposal: GammaProposal::Langevin,
            mh_moves: 8,
            block_cycles: 4,
            tau_update_mode: TauUpdateMode::Paper,
            beta_floor: 1e-10,
            frozen: FrozenBlocks::default(),
        }
    }
}

impl SamplerConfig {
    /// 5,000 iterations, 1,000 burn-in, 3 chains.
    pub fn full() -> Self {
        Self {
            iterations: 5_000,
            burn_in: 1_000,
            chains: 3,
            ..Self::default()
        }
    }

    pub fn kept(&self) -> usize {
        (self.iterations - self.burn_in) / self.thinning
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.iterations >= 1, "iterations must be positive");
        ensure!(self.burn_in < self.iterations, "burn_in must be smaller than iterations");
        ensure!(self.thinning >= 1, "thinning must be positive");
        ensure!(
            (self.iterations - self.burn_in) % self.thinning == 0,
            "iterations - burn_in must be divisible by thinning"
        );
        ensure!(self.chains >= 1, "chains must be positive");
        ensure!(
            self.mh_step_init > 0.0 && self.mh_step_init.is_finite(),
            "mh_step_init must be positive"
        );
        ensure!(self.mh_moves >= 1, "mh_moves must be positive");
        ensure!(self.block_cycles >= 1, "block_cycles must be positive");
        ensure!(self.adapt_window >= 1, "adapt_window must be positive");
        ensure!(
            (0.1..=0.6).contains(&self.adapt_target),
            "adapt_target must lie in [0.1, 0.6]"
        );
        ensure!(
            self.beta_floor > 0.0 && self.beta_floor.is_finite(),
            "beta_floor must be positive"
        );
        Ok(())
    }
}

/// Running Metropolis–Hastings bookkeeping for one chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MhStats<T> {
    pub proposed: usize,
    pub accepted: usize,
    pub current_step: T,
    window_proposed: usize,
    window_accepted: usize,
}

impl<T: Scalar> MhStats<T> {
    pub fn new(step: T) -> Self {
        Self {
            proposed: 0,
            accepted: 0,
            current_step: step,
            window_proposed: 0,
            window_accepted: 0,
        }
    }

    fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.window_proposed += 1;
        if accepted {
            self.accepted += 1;
            self.window_accepted += 1;
        }
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    /// Rescales the step by `exp(rate − target)` using the acceptance rate of
    /// the window since the last call, then opens a new window.
    pub fn adapt(&mut self, target: f64) {
        if self.window_proposed > 0 {
            let rate = self.window_accepted as f64 / self.window_proposed as f64;
            self.current_step *= T::of((rate - target).exp());
        }
        self.window_proposed = 0;
        self.window_accepted = 0;
    }
}

/// Gamma variate with the given shape and rate (mean `shape / rate`).
pub fn sample_gamma_variate<T: Scalar, R: Rng + ?Sized>(shape: T, rate: T, rng: &mut R) -> Result<T> {
    ensure!(
        shape > T::zero() && rate > T::zero() && shape.is_finite_value() && rate.is_finite_value(),
        "gamma parameters must be positive and finite (shape {}, rate {})",
        shape.as_f64(),
        rate.as_f64()
    );
    Ok(T::gamma_shape_rate(shape, rate, rng))
}

/// Inverse-Gaussian variate with mean `mu` and shape `lam`, by the
/// transformation-with-uniform-correction method.
///
/// A chi-square(1) draw fixes the two roots of the transformation; the smaller
/// root is kept with probability `mu / (mu + x)` and the larger one otherwise.
/// The smaller root is obtained as `mu² / larger` to avoid cancellation when
/// `mu` is large.
pub fn sample_inverse_gaussian<T: Scalar, R: Rng + ?Sized>(mu: T, lam: T, rng: &mut R) -> Result<T> {
    ensure!(
        mu > T::zero() && lam > T::zero() && mu.is_finite_value() && lam.is_finite_value(),
        "inverse Gaussian parameters must be positive and finite (mu {}, lambda {})",
        mu.as_f64(),
        lam.as_f64()
    );
    let v = T::standard_normal(rng);
    let y = v * v;
    let two_lam = T::of(2.0) * lam;
    let mu_y = mu * y;
    let larger = mu + mu * mu_y / two_lam
        + mu / two_lam * (T::of(4.0) * lam * mu_y + mu_y * mu_y).sqrt();
    let smaller = mu * (mu / larger);
    let u = T::open01(rng);
    let draw = if u <= mu / (mu + smaller) { smaller } else { larger };
    Ok(draw.max(T::tiny()))
}

/// Whether the matrix handed to [`sample_mvn_spd`] is a covariance or a
/// precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpdKind {
    Covariance,
    Precision,
}

/// Multivariate normal draw with the given mean and covariance (or precision).
pub fn sample_mvn_spd<T: Scalar, R: Rng + ?Sized>(
    mean: &DVector<T>,
    matrix: &DMatrix<T>,
    kind: SpdKind,
    rng: &mut R,
) -> Result<DVector<T>> {
    ensure!(
        matrix.is_square() && matrix.nrows() == mean.len(),
        "matrix shape {:?} does not match mean length {}",
        matrix.shape(),
        mean.len()
    );
    let l = linalg::cholesky_or_singular(matrix, "multivariate normal factor")?;
    let z = DVector::from_fn(mean.len(), |_, _| T::standard_normal(rng));
    let offset = match kind {
        SpdKind::Covariance => &l * z,
        SpdKind::Precision => linalg::solve_lower_transpose(&l, &z),
    };
    Ok(mean + offset)
}

/// Observation weights `exp(−x_iᵀγ)` with the clamped linear predictor.
pub fn precision_weights<T: Scalar>(x: &DMatrix<T>, gamma: &DVector<T>) -> DVector<T> {
    log_variance(x, gamma).map(|e| (-e).exp())
}

/// Draws `β ~ N(Σ* Xᵀ W y, Σ*)`, `Σ* = (Xᵀ W X + D_β⁻¹ + λ₂β I)⁻¹`.
///
/// Factorizes the d × d precision when `d ≤ 4n`; otherwise draws through the
/// equivalent n × n system
/// `u ~ N(0, Λ⁻¹)`, `v = Φu + δ`, `w = (ΦΛ⁻¹Φᵀ + I)⁻¹(α − v)`, `β = u + Λ⁻¹Φᵀw`
/// with `Φ = W^½ X`, `α = W^½ y` and `Λ` the diagonal prior precision.
pub fn update_beta<T: Scalar, R: Rng + ?Sized>(
    state: &ChainState<T>,
    data: &Dataset<T>,
    rng: &mut R,
) -> Result<DVector<T>> {
    let w = precision_weights(data.x(), &state.gamma);
    let prior = state.prior_precision_beta();
    draw_weighted_gaussian(data.x(), data.y(), &w, &prior, rng)
}

/// Gaussian draw for the weighted ridge posterior shared by the
/// heteroscedastic and homoscedastic samplers.
pub(crate) fn draw_weighted_gaussian<T: Scalar, R: Rng + ?Sized>(
    x: &DMatrix<T>,
    y: &DVector<T>,
    w: &DVector<T>,
    prior_precision: &DVector<T>,
    rng: &mut R,
) -> Result<DVector<T>> {
    let (n, d) = x.shape();
    if d <= 4 * n {
        let mut precision = linalg::weighted_gram(x, w);
        for j in 0..d {
            precision[(j, j)] += prior_precision[j];
        }
        let l = linalg::cholesky_or_singular(&precision, "beta posterior precision")?;
        let rhs = x.tr_mul(&y.component_mul(w));
        let mean = linalg::cholesky_solve(&l, &rhs);
        let z = DVector::from_fn(d, |_, _| T::standard_normal(rng));
        Ok(mean + linalg::solve_lower_transpose(&l, &z))
    } else {
        let sqrt_w = w.map(|v| v.sqrt());
        let mut phi = x.clone();
        for (i, s) in sqrt_w.iter().enumerate() {
            phi.row_mut(i).scale_mut(*s);
        }
        let alpha = y.component_mul(&sqrt_w);
        let prior_var = prior_precision.map(|p| T::one() / p);
        let u = DVector::from_fn(d, |j, _| prior_var[j].sqrt() * T::standard_normal(rng));
        let delta = DVector::from_fn(n, |_, _| T::standard_normal(rng));
        let v = &phi * &u + delta;
        let mut phi_scaled = phi.clone();
        for (j, pv) in prior_var.iter().enumerate() {
            phi_scaled.column_mut(j).scale_mut(*pv);
        }
        let mut m = &phi_scaled * phi.transpose();
        for i in 0..n {
            m[(i, i)] += T::one();
        }
        let l = linalg::cholesky_or_singular(&m, "beta dual system")?;
        let wv = linalg::cholesky_solve(&l, &(alpha - v));
        Ok(u + phi_scaled.tr_mul(&wv))
    }
}

/// `min(1, exp(log_ratio))`, with NaN treated as rejection.
pub fn mh_acceptance_probability<T: Scalar>(log_ratio: T) -> T {
    if log_ratio.as_f64().is_nan() {
        T::zero()
    } else if log_ratio >= T::zero() {
        T::one()
    } else {
        log_ratio.exp()
    }
}

/// Metropolis accept/reject decision for a log target ratio.
pub fn mh_accept<T: Scalar, R: Rng + ?Sized>(log_ratio: T, rng: &mut R) -> bool {
    if log_ratio.as_f64().is_nan() {
        return false;
    }
    if log_ratio >= T::zero() {
        return true;
    }
    T::open01(rng).ln() < log_ratio
}

/// γ-conditional log target up to a constant: likelihood at fixed β plus the
/// Gaussian prior quadratic form.
pub fn gamma_log_target<T: Scalar>(
    x: &DMatrix<T>,
    residual_sq: &DVector<T>,
    gamma: &DVector<T>,
    prior_precision: &DVector<T>,
) -> T {
    let half = T::of(0.5);
    let eta = log_variance(x, gamma);
    let lik: T = eta
        .iter()
        .zip(residual_sq.iter())
        .map(|(&e, &r2)| -half * e - half * r2 * (-e).exp())
        .sum();
    let quad: T = gamma
        .iter()
        .zip(prior_precision.iter())
        .map(|(&g, &p)| p * g * g)
        .sum();
    lik - half * quad
}

/// One random-walk Metropolis–Hastings update of γ with proposal
/// `γ* = γ + η`, `η ~ N(0, step² I)`. Returns the new γ and whether the
/// proposal was accepted; `stats` counts the outcome.
pub fn update_gamma_mh<T: Scalar, R: Rng + ?Sized>(
    state: &ChainState<T>,
    data: &Dataset<T>,
    stats: &mut MhStats<T>,
    rng: &mut R,
) -> Result<(DVector<T>, bool)> {
    let mut target = GammaTarget::new(state, data);
    let d = state.gamma.len();
    let step = stats.current_step;
    let eta = DVector::from_fn(d, |_, _| step * T::standard_normal(rng));
    let accepted = target.propose(eta, stats, rng);
    Ok((target.gamma, accepted))
}

/// The γ-conditional at fixed β, τ_γ and λ₂γ, with the current point's log
/// density (and, for Langevin moves, gradient) cached across moves.
struct GammaTarget<'a, T: Scalar> {
    x: &'a DMatrix<T>,
    residual_sq: DVector<T>,
    prior: DVector<T>,
    gamma: DVector<T>,
    log_density: T,
    gradient: Option<DVector<T>>,
}

impl<'a, T: Scalar> GammaTarget<'a, T> {
    fn new(state: &ChainState<T>, data: &'a Dataset<T>) -> Self {
        let x = data.x();
        let residual_sq = (data.y() - x * &state.beta).map(|r| r * r);
        let prior = state.prior_precision_gamma();
        let log_density = gamma_log_target(x, &residual_sq, &state.gamma, &prior);
        Self {
            x,
            residual_sq,
            prior,
            gamma: state.gamma.clone(),
            log_density,
            gradient: None,
        }
    }

    /// Log density and gradient at `gamma`. The gradient treats the clamp on
    /// the linear predictor as flat.
    fn evaluate(&self, gamma: &DVector<T>) -> (T, DVector<T>) {
        let half = T::of(0.5);
        let raw = self.x * gamma;
        let bound = T::of(LINEAR_PREDICTOR_CLAMP);
        let mut lik = T::zero();
        let mut score = DVector::zeros(raw.len());
        for (i, &e) in raw.iter().enumerate() {
            let ec = clamp_linear_predictor(e);
            let scaled = self.residual_sq[i] * (-ec).exp();
            lik -= half * (ec + scaled);
            if e.abs() < bound {
                score[i] = half * (scaled - T::one());
            }
        }
        let pg = gamma.component_mul(&self.prior);
        let quad = gamma.dot(&pg);
        (lik - half * quad, self.x.tr_mul(&score) - pg)
    }

    fn propose<R: Rng + ?Sized>(&mut self, eta: DVector<T>, stats: &mut MhStats<T>, rng: &mut R) -> bool {
        let proposal = &self.gamma + eta;
        let lp = gamma_log_target(self.x, &self.residual_sq, &proposal, &self.prior);
        let accepted = mh_accept(lp - self.log_density, rng);
        stats.record(accepted);
        if accepted {
            self.gamma = proposal;
            self.log_density = lp;
        }
        accepted
    }

    /// Preconditioned Langevin move with metric `F = ½XᵀX + diag(prior)`:
    /// `γ* ~ N(γ + ½h² F⁻¹∇, h² F⁻¹)`, accepted with the proposal-density
    /// correction.
    fn propose_langevin<R: Rng + ?Sized>(
        &mut self,
        factor: &FisherFactor<T>,
        stats: &mut MhStats<T>,
        rng: &mut R,
    ) -> bool {
        let h = stats.current_step;
        let drift = h * h * T::of(0.5);
        let grad = match self.gradient.take() {
            Some(g) => g,
            None => self.evaluate(&self.gamma).1,
        };
        let forward = &self.gamma + factor.solve(&grad) * drift;
        let proposal = &forward + factor.draw(h, rng);
        let (lp, grad_p) = self.evaluate(&proposal);
        let backward = &proposal + factor.solve(&grad_p) * drift;
        let denom = T::of(2.0) * h * h;
        let log_q_fwd = -factor.quad(&(&proposal - &forward)) / denom;
        let log_q_bwd = -factor.quad(&(&self.gamma - &backward)) / denom;
        let accepted = mh_accept(lp - self.log_density + log_q_bwd - log_q_fwd, rng);
        stats.record(accepted);
        if accepted {
            self.gamma = proposal;
            self.log_density = lp;
            self.gradient = Some(grad_p);
        } else {
            self.gradient = Some(grad);
        }
        accepted
    }
}

/// Factor of `F = ½XᵀX + diag(prior)` used to shape γ proposals.
///
/// With `d > 4n` every operation goes through the n × n dual system, as for β.
enum FisherFactor<T: Scalar> {
    Primal(DMatrix<T>),
    Dual {
        phi: DMatrix<T>,
        phi_scaled: DMatrix<T>,
        prior: DVector<T>,
        prior_var: DVector<T>,
        chol: DMatrix<T>,
    },
}

impl<T: Scalar> FisherFactor<T> {
    fn new(x: &DMatrix<T>, half_gram: Option<&DMatrix<T>>, prior: &DVector<T>) -> Result<Self> {
        let (n, d) = x.shape();
        match half_gram {
            Some(g) => {
                let mut p = g.clone();
                for j in 0..d {
                    p[(j, j)] += prior[j];
                }
                Ok(FisherFactor::Primal(linalg::cholesky_or_singular(&p, "gamma proposal precision")?))
            }
            None => {
                let phi = x * T::of(0.5).sqrt();
                let prior_var = prior.map(|p| T::one() / p);
                let mut phi_scaled = phi.clone();
                for (j, pv) in prior_var.iter().enumerate() {
                    phi_scaled.column_mut(j).scale_mut(*pv);
                }
                let mut m = &phi_scaled * phi.transpose();
                for i in 0..n {
                    m[(i, i)] += T::one();
                }
                let chol = linalg::cholesky_or_singular(&m, "gamma proposal dual system")?;
                Ok(FisherFactor::Dual {
                    phi,
                    phi_scaled,
                    prior: prior.clone(),
                    prior_var,
                    chol,
                })
            }
        }
    }

    /// A draw from `N(0, step² F⁻¹)`.
    fn draw<R: Rng + ?Sized>(&self, step: T, rng: &mut R) -> DVector<T> {
        match self {
            FisherFactor::Primal(l) => {
                let z = DVector::from_fn(l.nrows(), |_, _| T::standard_normal(rng));
                linalg::solve_lower_transpose(l, &z) * step
            }
            FisherFactor::Dual {
                phi,
                phi_scaled,
                prior_var,
                chol,
                ..
            } => {
                let u = DVector::from_fn(prior_var.len(), |j, _| prior_var[j].sqrt() * T::standard_normal(rng));
                let delta = DVector::from_fn(phi.nrows(), |_, _| T::standard_normal(rng));
                let v = phi * &u + delta;
                let w = linalg::cholesky_solve(chol, &(-v));
                (u + phi_scaled.tr_mul(&w)) * step
            }
        }
    }

    /// `F⁻¹ v`.
    fn solve(&self, v: &DVector<T>) -> DVector<T> {
        match self {
            FisherFactor::Primal(l) => linalg::cholesky_solve(l, v),
            FisherFactor::Dual {
                phi_scaled,
                prior_var,
                chol,
                ..
            } => {
                let w = linalg::cholesky_solve(chol, &(phi_scaled * v));
                v.component_mul(prior_var) - phi_scaled.tr_mul(&w)
            }
        }
    }

    /// `vᵀ F v`.
    fn quad(&self, v: &DVector<T>) -> T {
        match self {
            FisherFactor::Primal(l) => (l.transpose() * v).norm_squared(),
            FisherFactor::Dual { phi, prior, .. } => {
                v.component_mul(prior).dot(v) + (phi * v).norm_squared()
            }
        }
    }
}

/// Redraws every latent scale from its inverse-Gaussian conditional with mean
/// `√(λ₁² / max(c_j², floor²))` and shape `λ₁²`.
pub fn update_tau_vector<T: Scalar, R: Rng + ?Sized>(
    coefs: &DVector<T>,
    lambda1_sq: T,
    mode: TauUpdateMode,
    floor: T,
    rng: &mut R,
) -> Result<DVector<T>> {
    ensure!(lambda1_sq > T::zero(), "lambda1_sq must be positive");
    ensure!(floor > T::zero(), "floor must be positive");
    let floor_sq = floor * floor;
    let mut out = DVector::zeros(coefs.len());
    for (j, &c) in coefs.iter().enumerate() {
        let mu = (lambda1_sq / (c * c).max(floor_sq)).sqrt();
        let draw = sample_inverse_gaussian(mu, lambda1_sq, rng)?;
        out[j] = match mode {
            TauUpdateMode::Paper => draw,
            TauUpdateMode::Reciprocal => (T::one() / draw).max(T::tiny()),
        };
    }
    Ok(out)
}

/// `λ₁² ~ Gamma(a + d, b + ½ Σ τ_j)`.
pub fn update_lambda1_sq<T: Scalar, R: Rng + ?Sized>(
    tau: &DVector<T>,
    a: T,
    b: T,
    rng: &mut R,
) -> Result<T> {
    ensure!(tau.iter().all(|t| *t >= T::zero()), "tau entries must be non-negative");
    let shape = a + T::of_usize(tau.len());
    let rate = b + T::of(0.5) * tau.iter().copied().sum::<T>();
    sample_gamma_variate(shape, rate, rng)
}

/// `λ₂ ~ Gamma(a + d/2, b + ½ Σ c_j²)`.
pub fn update_lambda2<T: Scalar, R: Rng + ?Sized>(
    coefs: &DVector<T>,
    a: T,
    b: T,
    rng: &mut R,
) -> Result<T> {
    let shape = a + T::of(0.5) * T::of_usize(coefs.len());
    let rate = b + T::of(0.5) * coefs.norm_squared();
    sample_gamma_variate(shape, rate, rng)
}

/// Starting point: minimum-norm least-squares β, γ = 0, all scales 1.
pub fn initial_state<T: Scalar>(data: &Dataset<T>) -> ChainState<T> {
    let beta = linalg::min_norm_lstsq(data.x(), data.y());
    ChainState::unit_scales(beta, DVector::zeros(data.d()))
}

/// A single chain that can be advanced one sweep at a time.
///
/// The dataset is passed to every [`Chain::step`] so callers may change the
/// response between sweeps (as joint-distribution tests do). The design
/// matrix must stay the same: its Gram matrix is cached on the first sweep.
pub struct Chain<T: Scalar> {
    hyp: Hyperparameters<T>,
    cfg: SamplerConfig,
    state: ChainState<T>,
    stats: MhStats<T>,
    rng: StreamRng,
    iteration: usize,
    half_gram: Option<DMatrix<T>>,
}

impl<T: Scalar> Chain<T> {
    pub fn new(
        hyp: Hyperparameters<T>,
        cfg: SamplerConfig,
        state: ChainState<T>,
        chain_index: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        hyp.validate()?;
        state.validate()?;
        let stats = MhStats::new(T::of(cfg.mh_step_init));
        let rng = stream_rng(cfg.seed, chain_index as u64);
        Ok(Self {
            hyp,
            cfg,
            state,
            stats,
            rng,
            iteration: 0,
            half_gram: None,
        })
    }

    pub fn state(&self) -> &ChainState<T> {
        &self.state
    }

    pub fn stats(&self) -> &MhStats<T> {
        &self.stats
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn rng_mut(&mut self) -> &mut StreamRng {
        &mut self.rng
    }

    /// One full sweep over all unfrozen blocks.
    pub fn step(&mut self, data: &Dataset<T>) -> Result<()> {
        let frozen = self.cfg.frozen;
        let floor = T::of(self.cfg.beta_floor);
        let mode = self.cfg.tau_update_mode;
        let hyp = self.hyp;
        let rng = &mut self.rng;
        let s = &mut self.state;

        let factor = match self.cfg.gamma_proposal {
            GammaProposal::Fisher | GammaProposal::Langevin if !frozen.gamma => {
                let (n, d) = data.x().shape();
                if d <= 4 * n && self.half_gram.is_none() {
                    self.half_gram = Some(data.x().transpose() * data.x() * T::of(0.5));
                }
                let prior = s.prior_precision_gamma();
                Some(FisherFactor::new(data.x(), self.half_gram.as_ref(), &prior)?)
            }
            _ => None,
        };
        for _ in 0..self.cfg.block_cycles {
            s.beta = update_beta(s, data, rng)?;
            if !frozen.gamma {
                let mut target = GammaTarget::new(s, data);
                for _ in 0..self.cfg.mh_moves {
                    let step = self.stats.current_step;
                    match (&factor, self.cfg.gamma_proposal) {
                        (Some(f), GammaProposal::Langevin) => {
                            target.propose_langevin(f, &mut self.stats, rng);
                        }
                        (Some(f), _) => {
                            let eta = f.draw(step, rng);
                            target.propose(eta, &mut self.stats, rng);
                        }
                        (None, _) => {
                            let eta = DVector::from_fn(s.d(), |_, _| step * T::standard_normal(rng));
                            target.propose(eta, &mut self.stats, rng);
                        }
                    }
                }
                s.gamma = target.gamma;
            }
        }
        if !frozen.tau {
            s.tau_beta = update_tau_vector(&s.beta, s.lambda1_beta_sq, mode, floor, rng)?;
            s.tau_gamma = update_tau_vector(&s.gamma, s.lambda1_gamma_sq, mode, floor, rng)?;
        }
        if !frozen.lambda1 {
            s.lambda1_beta_sq = update_lambda1_sq(&s.tau_beta, hyp.a_beta1, hyp.b_beta1, rng)?;
            s.lambda1_gamma_sq = update_lambda1_sq(&s.tau_gamma, hyp.a_gamma1, hyp.b_gamma1, rng)?;
        }
        if !frozen.lambda2 {
            s.lambda2_beta = update_lambda2(&s.beta, hyp.a_beta2, hyp.b_beta2, rng)?;
            s.lambda2_gamma = update_lambda2(&s.gamma, hyp.a_gamma2, hyp.b_gamma2, rng)?;
        }

        if self.cfg.adapt_enabled
            && !frozen.gamma
            && self.iteration < self.cfg.burn_in
            && (self.iteration + 1) % self.cfg.adapt_window == 0
        {
            self.stats.adapt(self.cfg.adapt_target);
        }
        self.iteration += 1;
        Ok(())
    }
}

/// Runs one chain from the default starting point.
pub fn run_chain<T: Scalar>(
    data: &Dataset<T>,
    hyp: &Hyperparameters<T>,
    cfg: &SamplerConfig,
    chain_index: usize,
) -> Result<ChainDraws<T>> {
    run_chain_from(data, hyp, cfg, chain_index, initial_state(data))
}

/// Runs one chain from a caller-supplied starting state.
pub fn run_chain_from<T: Scalar>(
    data: &Dataset<T>,
    hyp: &Hyperparameters<T>,
    cfg: &SamplerConfig,
    chain_index: usize,
    initial: ChainState<T>,
) -> Result<ChainDraws<T>> {
    ensure!(initial.d() == data.d(), "initial state dimension does not match data");
    let d = data.d();
    let kept = cfg.kept();
    let mut chain = Chain::new(*hyp, cfg.clone(), initial, chain_index)?;
    let mut beta = DMatrix::zeros(kept, d);
    let mut gamma = DMatrix::zeros(kept, d);
    let mut scalars = DMatrix::zeros(kept, HDBEN_SCALARS.len());
    let mut row = 0;
    for it in 0..cfg.iterations {
        chain
            .step(data)
            .map_err(|e| e.with_context(format!("chain {chain_index}, iteration {it}")))?;
        if it >= cfg.burn_in && (it - cfg.burn_in) % cfg.thinning == 0 {
            let s = chain.state();
            beta.row_mut(row).copy_from(&s.beta.transpose());
            gamma.row_mut(row).copy_from(&s.gamma.transpose());
            scalars[(row, 0)] = s.lambda1_beta_sq;
            scalars[(row, 1)] = s.lambda1_gamma_sq;
            scalars[(row, 2)] = s.lambda2_beta;
            scalars[(row, 3)] = s.lambda2_gamma;
            row += 1;
        }
    }
    debug_assert_eq!(row, kept);
    let stats = chain.stats();
    Ok(ChainDraws {
        beta,
        gamma,
        scalars: ScalarTrace {
            names: HDBEN_SCALARS.to_vec(),
            values: scalars,
        },
        mh_proposed: stats.proposed,
        mh_accepted: stats.accepted,
        final_step: stats.current_step.as_f64(),
    })
}

/// Runs `cfg.chains` independent chains (in parallel when threads are
/// available) and gathers their draws in chain order.
pub fn fit_hdben<T: Scalar>(
    data: &Dataset<T>,
    hyp: &Hyperparameters<T>,
    cfg: &SamplerConfig,
) -> Result<PosteriorDraws<T>> {
    cfg.validate()?;
    hyp.validate()?;
    let results: Vec<Result<ChainDraws<T>>> = (0..cfg.chains)
        .into_par_iter()
        .map(|c| run_chain(data, hyp, cfg, c))
        .collect();
    collect_chains(results, cfg.kept(), cfg.iterations)
}

pub(crate) fn collect_chains<T: Scalar>(
    results: Vec<Result<ChainDraws<T>>>,
    kept: usize,
    iterations: usize,
) -> Result<PosteriorDraws<T>> {
    let mut chains = Vec::with_capacity(results.len());
    let mut failed = Vec::new();
    let mut messages = Vec::new();
    for (c, r) in results.into_iter().enumerate() {
        match r {
            Ok(draws) => chains.push(draws),
            Err(e) => {
                failed.push(c);
                messages.push(e.to_string());
            }
        }
    }
    if !failed.is_empty() {
        return Err(Error::ChainsFailed {
            indices: failed,
            message: messages.join("; "),
        });
    }
    Ok(PosteriorDraws {
        chains,
        kept,
        iterations,
    })
}
