//! Convergence diagnostics, posterior summaries, support selection and the
//! evaluation metrics used by the simulation harness.

use std::collections::BTreeSet;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::model::PosteriorDraws;
use crate::scalar::Scalar;

fn mean_and_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

fn to_f64<T: Scalar>(chains: &[Vec<T>]) -> Vec<Vec<f64>> {
    chains
        .iter()
        .map(|c| c.iter().map(|v| v.as_f64()).collect())
        .collect()
}

/// Split-chain potential scale reduction factor.
///
/// Every chain is cut into two halves of `m` draws (the middle draw of an
/// odd-length chain is dropped) and the classical between/within estimate is
/// formed over the halves. Returns 1 when the within-half variance is zero.
pub fn gelman_rubin<T: Scalar>(chains: &[Vec<T>]) -> Result<f64> {
    ensure!(!chains.is_empty(), "gelman_rubin needs at least one chain");
    let len = chains[0].len();
    ensure!(
        chains.iter().all(|c| c.len() == len),
        "gelman_rubin needs chains of equal length"
    );
    ensure!(len >= 4, "gelman_rubin needs at least 4 draws per chain");
    let m = len / 2;
    let mut halves = Vec::with_capacity(2 * chains.len());
    for c in to_f64(chains) {
        halves.push(c[..m].to_vec());
        halves.push(c[len - m..].to_vec());
    }
    let stats: Vec<(f64, f64)> = halves.iter().map(|h| mean_and_var(h)).collect();
    let k = stats.len() as f64;
    let w = stats.iter().map(|s| s.1).sum::<f64>() / k;
    if !(w > 0.0) {
        return Ok(1.0);
    }
    let means: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let (_, var_means) = mean_and_var(&means);
    let mf = m as f64;
    let b = mf * var_means;
    let pooled = (mf - 1.0) / mf * w + b / mf;
    Ok((pooled / w).sqrt())
}

/// Effective sample size of one or more equal-length chains.
///
/// Autocorrelations are combined across chains through the within- and
/// between-chain variances and summed in adjacent pairs until the first
/// non-positive pair, with the pair sums forced to be non-increasing.
/// The result is clamped to `(0, N]`; zero-variance input returns `N`.
pub fn effective_sample_size<T: Scalar>(chains: &[Vec<T>]) -> Result<f64> {
    ensure!(!chains.is_empty(), "effective_sample_size needs at least one chain");
    let n = chains[0].len();
    ensure!(
        chains.iter().all(|c| c.len() == n),
        "effective_sample_size needs chains of equal length"
    );
    let m = chains.len();
    let total = (m * n) as f64;
    ensure!(m * n >= 10, "effective_sample_size needs at least 10 draws");
    ensure!(n >= 2, "effective_sample_size needs at least 2 draws per chain");

    let chains = to_f64(chains);
    let stats: Vec<(f64, f64)> = chains.iter().map(|c| mean_and_var(c)).collect();
    let w = stats.iter().map(|s| s.1).sum::<f64>() / m as f64;
    if !(w > 0.0) {
        return Ok(total);
    }
    let nf = n as f64;
    let b_over_n = if m > 1 {
        let means: Vec<f64> = stats.iter().map(|s| s.0).collect();
        mean_and_var(&means).1
    } else {
        0.0
    };
    let var_plus = (nf - 1.0) / nf * w + b_over_n;

    let centered: Vec<Vec<f64>> = chains
        .iter()
        .zip(&stats)
        .map(|(c, (mu, _))| c.iter().map(|x| x - mu).collect())
        .collect();
    let rho = |t: usize| -> f64 {
        let mean_acov = centered
            .iter()
            .map(|c| c[..n - t].iter().zip(&c[t..]).map(|(a, b)| a * b).sum::<f64>() / nf)
            .sum::<f64>()
            / m as f64;
        1.0 - (w - mean_acov) / var_plus
    };

    let mut tau = -1.0;
    let mut prev_pair = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let r0 = if t == 0 { 1.0 } else { rho(t) };
        let pair = r0 + rho(t + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        tau += 2.0 * pair;
        prev_pair = pair;
        t += 2;
    }
    let ess = total / tau.max(1.0 / total);
    Ok(ess.clamp(f64::MIN_POSITIVE, total))
}

/// Linear interpolation between order statistics; `sorted` must be ascending.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted_copy(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportRuleKind {
    /// Select `j` when the equal-tailed credible interval excludes 0.
    CredibleInterval,
    /// Select `j` when `|median_j|` exceeds the threshold.
    Magnitude,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportRule {
    pub kind: SupportRuleKind,
    pub level: f64,
    pub threshold: f64,
}

impl Default for SupportRule {
    fn default() -> Self {
        Self {
            kind: SupportRuleKind::CredibleInterval,
            level: 0.95,
            threshold: 0.0,
        }
    }
}

impl SupportRule {
    pub fn magnitude(threshold: f64) -> Self {
        Self {
            kind: SupportRuleKind::Magnitude,
            threshold,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.level > 0.5 && self.level < 1.0,
            "support rule level must lie in (0.5, 1)"
        );
        ensure!(self.threshold >= 0.0, "support rule threshold must be non-negative");
        Ok(())
    }
}

/// Selected coordinates given pooled draws per coordinate (`samples[j]`).
///
/// A credible interval that touches 0 counts as containing it.
pub fn select_support<T: Scalar>(samples: &[Vec<T>], rule: &SupportRule) -> Result<Vec<usize>> {
    rule.validate()?;
    let mut out = Vec::new();
    for (j, s) in samples.iter().enumerate() {
        ensure!(!s.is_empty(), "coordinate {j} has no draws");
        let sorted = sorted_copy(&s.iter().map(|v| v.as_f64()).collect::<Vec<_>>());
        let keep = match rule.kind {
            SupportRuleKind::CredibleInterval => {
                let tail = 0.5 * (1.0 - rule.level);
                let lo = quantile_sorted(&sorted, tail);
                let hi = quantile_sorted(&sorted, 1.0 - tail);
                lo > 0.0 || hi < 0.0
            }
            SupportRuleKind::Magnitude => quantile_sorted(&sorted, 0.5).abs() > rule.threshold,
        };
        if keep {
            out.push(j);
        }
    }
    Ok(out)
}

/// Per-coordinate summary of one parameter block.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BlockSummary {
    pub mean: Vec<f64>,
    pub median: Vec<f64>,
    pub sd: Vec<f64>,
    pub q_lower: Vec<f64>,
    pub q_upper: Vec<f64>,
    pub rhat: Vec<f64>,
    pub ess: Vec<f64>,
}

impl BlockSummary {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Summary from per-chain traces of each coordinate (`coords[j][chain]`).
    pub fn from_traces<T: Scalar>(coords: &[Vec<Vec<T>>]) -> Result<Self> {
        let mut s = BlockSummary::default();
        for chains in coords {
            let pooled: Vec<f64> = chains.iter().flatten().map(|v| v.as_f64()).collect();
            ensure!(!pooled.is_empty(), "no draws to summarize");
            let (mean, var) = mean_and_var(&pooled);
            let sorted = sorted_copy(&pooled);
            s.mean.push(mean);
            s.sd.push(var.sqrt());
            s.median.push(quantile_sorted(&sorted, 0.5));
            s.q_lower.push(quantile_sorted(&sorted, 0.025));
            s.q_upper.push(quantile_sorted(&sorted, 0.975));
            s.rhat.push(gelman_rubin(chains)?);
            s.ess.push(effective_sample_size(chains)?);
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub beta: BlockSummary,
    pub gamma: BlockSummary,
    pub support_beta: Vec<usize>,
    pub support_gamma: Vec<usize>,
    pub mh_acceptance: f64,
}

impl FitSummary {
    pub fn beta_mean(&self) -> DVector<f64> {
        DVector::from_vec(self.beta.mean.clone())
    }

    pub fn gamma_mean(&self) -> DVector<f64> {
        DVector::from_vec(self.gamma.mean.clone())
    }

    pub fn max_rhat(&self) -> f64 {
        self.beta
            .rhat
            .iter()
            .chain(&self.gamma.rhat)
            .copied()
            .fold(f64::NAN, f64::max)
    }

    pub fn min_ess(&self) -> f64 {
        self.beta
            .ess
            .iter()
            .chain(&self.gamma.ess)
            .copied()
            .fold(f64::NAN, f64::min)
    }
}

/// Summary with the default 95% credible-interval support rule.
pub fn summarize<T: Scalar>(draws: &PosteriorDraws<T>) -> Result<FitSummary> {
    summarize_with(draws, &SupportRule::default())
}

pub fn summarize_with<T: Scalar>(draws: &PosteriorDraws<T>, rule: &SupportRule) -> Result<FitSummary> {
    ensure!(draws.n_chains() >= 1, "no chains to summarize");
    ensure!(draws.kept >= 4, "need at least 4 kept draws per chain");
    let beta_coords: Vec<Vec<Vec<T>>> = (0..draws.d()).map(|j| draws.beta_coordinate(j)).collect();
    let gamma_coords: Vec<Vec<Vec<T>>> =
        (0..draws.d_gamma()).map(|j| draws.gamma_coordinate(j)).collect();
    let pooled = |coords: &[Vec<Vec<T>>]| -> Vec<Vec<T>> {
        coords.iter().map(|c| c.iter().flatten().copied().collect()).collect()
    };
    Ok(FitSummary {
        beta: BlockSummary::from_traces(&beta_coords)?,
        gamma: BlockSummary::from_traces(&gamma_coords)?,
        support_beta: select_support(&pooled(&beta_coords), rule)?,
        support_gamma: select_support(&pooled(&gamma_coords), rule)?,
        mh_acceptance: draws.mh_acceptance(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportMetrics {
    pub tpr: f64,
    pub fpr: f64,
    pub exact: bool,
}

/// True/false positive rates of a selected index set against the truth.
pub fn support_metrics(selected: &[usize], truth: &[usize], d: usize) -> Result<SupportMetrics> {
    ensure!(
        selected.iter().chain(truth).all(|&j| j < d),
        "support index out of range for d = {d}"
    );
    let sel: BTreeSet<usize> = selected.iter().copied().collect();
    let tru: BTreeSet<usize> = truth.iter().copied().collect();
    let hits = sel.intersection(&tru).count();
    let false_pos = sel.difference(&tru).count();
    let tpr = if tru.is_empty() {
        1.0
    } else {
        hits as f64 / tru.len() as f64
    };
    let negatives = d - tru.len();
    let fpr = if negatives == 0 {
        0.0
    } else {
        false_pos as f64 / negatives as f64
    };
    Ok(SupportMetrics {
        tpr,
        fpr,
        exact: sel == tru,
    })
}

/// Euclidean distance between an estimate and the truth.
pub fn l2_error<T: Scalar>(estimate: &DVector<T>, truth: &DVector<T>) -> Result<f64> {
    ensure!(
        estimate.len() == truth.len(),
        "estimate length {} differs from truth length {}",
        estimate.len(),
        truth.len()
    );
    Ok((estimate - truth).norm().as_f64())
}

/// Squared error divided by the rate `(s_β + s_γ) ln d / n`; an estimate of
/// the constant in front of the contraction rate.
pub fn contraction_ratio(err_sq: f64, n: usize, d: usize, s_beta: usize, s_gamma: usize) -> Result<f64> {
    ensure!(n >= 1, "n must be positive");
    ensure!(d >= 2, "contraction rate needs d >= 2 (ln d > 0)");
    ensure!(s_beta + s_gamma >= 1, "contraction rate needs a nonempty support");
    ensure!(err_sq >= 0.0, "squared error must be non-negative");
    let rate = (s_beta + s_gamma) as f64 * (d as f64).ln() / n as f64;
    Ok(err_sq / rate)
}
