//! Oracles shared by the integration test targets.
#![allow(dead_code)]

use hdben::baselines::EnetConfig;
use hdben::diagnostics::effective_sample_size;
use hdben::model::{ChainState, Dataset, GroundTruth, Hyperparameters};
use hdben::rng::stream_rng;
use hdben::samplers::{run_chain_from, Chain, FrozenBlocks, SamplerConfig, TauUpdateMode};
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Gamma, Normal, StandardNormal};
use statrs::distribution::{ChiSquared, ContinuousCDF};

pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Pearson χ² goodness of fit over `bins` equal-probability cells.
///
/// `quantile` is the inverse CDF of the reference law. Returns the statistic
/// and the upper `alpha` critical value of χ²(bins − 1).
pub fn chi_square_fit(draws: &[f64], bins: usize, alpha: f64, quantile: impl Fn(f64) -> f64) -> (f64, f64) {
    let edges: Vec<f64> = (1..bins).map(|k| quantile(k as f64 / bins as f64)).collect();
    let mut counts = vec![0usize; bins];
    for &x in draws {
        counts[edges.partition_point(|&e| e <= x)] += 1;
    }
    let expected = draws.len() as f64 / bins as f64;
    let stat = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    let crit = ChiSquared::new((bins - 1) as f64).unwrap().inverse_cdf(1.0 - alpha);
    (stat, crit)
}

/// Inverse of a continuous CDF by bisection on `[lo, hi]`.
pub fn invert_cdf(cdf: impl Fn(f64) -> f64, p: f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)
}

/// Inverse-Gaussian CDF with mean `mu` and shape `lam`.
pub fn inverse_gaussian_cdf(x: f64, mu: f64, lam: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let r = (lam / x).sqrt();
    let a = normal_cdf(r * (x / mu - 1.0));
    // e^{2λ/μ} Φ(−r(x/μ + 1)) evaluated in log space to avoid overflow
    let z = -r * (x / mu + 1.0);
    let b = (2.0 * lam / mu + normal_cdf(z).max(f64::MIN_POSITIVE).ln()).exp();
    (a + b).min(1.0)
}

pub fn random_design(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = stream_rng(seed, 0);
    DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng))
}

pub fn noise(n: usize, seed: u64) -> DVector<f64> {
    let mut rng = stream_rng(seed, 7);
    DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng))
}

pub fn enet(l1: f64, l2: f64) -> EnetConfig {
    EnetConfig {
        l1_weight: l1,
        l2_weight: l2,
        ..EnetConfig::default()
    }
}

/// Largest KKT violation of an elastic-net solution.
pub fn kkt_violation(data: &Dataset<f64>, beta: &DVector<f64>, l1: f64, l2: f64) -> f64 {
    let n = data.n() as f64;
    let grad = data.x().transpose() * (data.y() - data.x() * beta) / n;
    (0..beta.len())
        .map(|j| {
            let g = grad[j] - 2.0 * l2 * beta[j];
            if beta[j] == 0.0 {
                (g.abs() - l1).max(0.0)
            } else {
                (g - l1 * beta[j].signum()).abs()
            }
        })
        .fold(0.0, f64::max)
}

/// A small heteroscedastic dataset with ground truth.
pub fn sparse_dataset(n: usize, beta0: DVector<f64>, gamma0: DVector<f64>, seed: u64) -> Dataset<f64> {
    let x = random_design(n, beta0.len(), seed);
    let mut rng = stream_rng(seed, 1);
    let eta = &x * &gamma0;
    let mean = &x * &beta0;
    let y = DVector::from_fn(n, |i, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        mean[i] + (0.5 * eta[i]).exp() * z
    });
    Dataset::new(x, y)
        .unwrap()
        .with_truth(GroundTruth::from_coefficients(beta0, gamma0))
        .unwrap()
}

/// Result of comparing one statistic between the two Geweke simulators.
#[derive(Debug)]
pub struct GewekeMoment {
    pub name: &'static str,
    pub marginal: f64,
    pub successive: f64,
    pub z: f64,
}

/// Joint-distribution test on an n = 4, d = 1 model.
///
/// The successive-conditional simulator alternates one sampler sweep with a
/// fresh response drawn from the likelihood; its parameter moments must match
/// direct prior simulation. The sweep runs in its exact configuration:
/// reciprocal scale conditional, no step adaptation, and λ₂ held at 0 so
/// the ridge term and its Gamma update (which ignores the prior's
/// determinant) drop out.
pub fn geweke_test(draws: usize, seed: u64) -> Vec<GewekeMoment> {
    let hyp = Hyperparameters::uniform(3.0, 1.0);
    let x = DMatrix::from_column_slice(4, 1, &[0.5, -1.0, 1.5, 0.8]);

    let mut rng = stream_rng(seed, 99);
    let prior_draw = |rng: &mut hdben::rng::StreamRng| -> ChainState<f64> {
        let l1b = Gamma::new(3.0, 1.0).unwrap().sample(rng);
        let l1g = Gamma::new(3.0, 1.0).unwrap().sample(rng);
        let tb: f64 = rand_distr::Exp::new(l1b / 2.0).unwrap().sample(rng);
        let tg: f64 = rand_distr::Exp::new(l1g / 2.0).unwrap().sample(rng);
        let b = Normal::new(0.0, tb.sqrt()).unwrap().sample(rng);
        let g = Normal::new(0.0, tg.sqrt()).unwrap().sample(rng);
        ChainState {
            beta: DVector::from_element(1, b),
            gamma: DVector::from_element(1, g),
            tau_beta: DVector::from_element(1, tb),
            tau_gamma: DVector::from_element(1, tg),
            lambda1_beta_sq: l1b,
            lambda1_gamma_sq: l1g,
            lambda2_beta: 0.0,
            lambda2_gamma: 0.0,
        }
    };
    let redraw_y = |s: &ChainState<f64>, rng: &mut hdben::rng::StreamRng| -> DVector<f64> {
        DVector::from_fn(4, |i, _| {
            let eta = (x[(i, 0)] * s.gamma[0]).clamp(-30.0, 30.0);
            let z: f64 = StandardNormal.sample(rng);
            x[(i, 0)] * s.beta[0] + (0.5 * eta).exp() * z
        })
    };
    let stats = |s: &ChainState<f64>| -> [f64; 5] {
        [s.beta[0], s.beta[0].powi(2), s.gamma[0], s.gamma[0].powi(2), s.lambda1_beta_sq]
    };
    let names = ["beta", "beta^2", "gamma", "gamma^2", "lambda1_beta_sq"];

    let mut marginal: Vec<Vec<f64>> = vec![Vec::with_capacity(draws); 5];
    for _ in 0..draws {
        for (k, v) in stats(&prior_draw(&mut rng)).into_iter().enumerate() {
            marginal[k].push(v);
        }
    }

    let cfg = SamplerConfig {
        iterations: 1,
        burn_in: 0,
        chains: 1,
        seed,
        adapt_enabled: false,
        mh_step_init: 0.5,
        tau_update_mode: TauUpdateMode::Reciprocal,
        frozen: FrozenBlocks {
            lambda2: true,
            ..FrozenBlocks::default()
        },
        ..SamplerConfig::default()
    };
    let start = prior_draw(&mut rng);
    let mut data = Dataset::new(x.clone(), redraw_y(&start, &mut rng)).unwrap();
    let mut chain = Chain::new(hyp, cfg, start, 0).unwrap();
    let mut successive: Vec<Vec<f64>> = vec![Vec::with_capacity(draws); 5];
    for _ in 0..draws {
        chain.step(&data).unwrap();
        let s = chain.state().clone();
        for (k, v) in stats(&s).into_iter().enumerate() {
            successive[k].push(v);
        }
        let y = redraw_y(&s, chain.rng_mut());
        data = data.with_response(y).unwrap();
    }

    (0..5)
        .map(|k| {
            let (m1, v1) = mean_var(&marginal[k]);
            let (m2, v2) = mean_var(&successive[k]);
            let ess = effective_sample_size(&[successive[k].clone()]).unwrap();
            let se = (v1 / draws as f64 + v2 / ess).sqrt();
            GewekeMoment {
                name: names[k],
                marginal: m1,
                successive: m2,
                z: (m2 - m1) / se,
            }
        })
        .collect()
}

/// Histogram of MCMC β draws against a grid-integrated exact posterior on a
/// d = 1 model with τ and every λ fixed (β and γ move).
///
/// The exact joint density of (β, γ) is evaluated on a fine 2-D grid and
/// summed over γ; both sides are binned on the same β cells and compared in
/// total variation. Returns (tv, kept draws).
pub fn grid_posterior_tv(n: usize, kept: usize, seed: u64) -> (f64, usize) {
    let data = sparse_dataset(n, DVector::from_element(1, 1.0), DVector::zeros(1), seed);
    let hyp = Hyperparameters::default();
    let mut start = ChainState::unit_scales(DVector::from_element(1, 1.0), DVector::zeros(1));
    start.tau_beta[0] = 2.0;
    start.tau_gamma[0] = 0.5;
    start.lambda2_beta = 0.5;
    start.lambda2_gamma = 0.5;
    let prec_b = 1.0 / start.tau_beta[0] + start.lambda2_beta;
    let prec_g = 1.0 / start.tau_gamma[0] + start.lambda2_gamma;

    let burn = 2_000;
    let cfg = SamplerConfig {
        iterations: burn + kept,
        burn_in: burn,
        chains: 1,
        seed,
        frozen: FrozenBlocks::scales(),
        ..SamplerConfig::default()
    };
    let draws = run_chain_from(&data, &hyp, &cfg, 0, start).unwrap();
    let beta: Vec<f64> = draws.beta.column(0).iter().copied().collect();

    let log_joint = |b: f64, g: f64| -> f64 {
        let mut lp = -0.5 * prec_b * b * b - 0.5 * prec_g * g * g;
        for i in 0..n {
            let xi = data.x()[(i, 0)];
            let eta = (xi * g).clamp(-30.0, 30.0);
            let r = data.y()[i] - xi * b;
            lp += -0.5 * eta - 0.5 * r * r * (-eta).exp();
        }
        lp
    };
    let (mb, sb) = {
        let (m, v) = mean_var(&beta);
        (m, v.sqrt())
    };
    let (blo, bhi) = (mb - 6.0 * sb, mb + 6.0 * sb);
    let (glo, ghi) = (-2.0, 2.0);
    let (nb, ng) = (1_200, 800);
    let mut logs = DMatrix::zeros(nb, ng);
    for a in 0..nb {
        let b = blo + (a as f64 + 0.5) * (bhi - blo) / nb as f64;
        for c in 0..ng {
            let g = glo + (c as f64 + 0.5) * (ghi - glo) / ng as f64;
            logs[(a, c)] = log_joint(b, g);
        }
    }
    let top = logs.max();
    let marg: Vec<f64> = (0..nb)
        .map(|a| logs.row(a).iter().map(|l| (l - top).exp()).sum())
        .collect();
    let total: f64 = marg.iter().sum();

    let cells = 40;
    let per = nb / cells;
    let mut exact = vec![0.0; cells];
    for (a, m) in marg.iter().enumerate() {
        exact[a / per] += m / total;
    }
    let mut hist = vec![0.0; cells];
    let width = (bhi - blo) / cells as f64;
    for &b in &beta {
        let k = ((b - blo) / width).floor();
        if k >= 0.0 && (k as usize) < cells {
            hist[k as usize] += 1.0 / beta.len() as f64;
        }
    }
    let outside = 1.0 - hist.iter().sum::<f64>();
    let tv = 0.5 * (exact.iter().zip(&hist).map(|(e, h)| (e - h).abs()).sum::<f64>() + outside);
    (tv, beta.len())
}
