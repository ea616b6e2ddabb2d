//! Synthetic heteroscedastic data, replicate execution across methods and
//! aggregation into mean ± sd cells.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{cv_select_enet, fit_ben, fit_blasso, fit_enet, fit_ols, EnetConfig, HomoBayesConfig, Penalty};
use crate::diagnostics::{l2_error, select_support, summarize_with, support_metrics, SupportRule};
use crate::error::{ensure, Error, Result};
use crate::model::{support_of, Dataset, GroundTruth, Hyperparameters, PosteriorDraws};
use crate::rng::{derive_seed, stream_rng};
use crate::samplers::{fit_hdben, SamplerConfig};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ols,
    Lasso,
    Enet,
    Blasso,
    Ben,
    Hdben,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Ols,
        Method::Lasso,
        Method::Enet,
        Method::Blasso,
        Method::Ben,
        Method::Hdben,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ols => "ols",
            Method::Lasso => "lasso",
            Method::Enet => "enet",
            Method::Blasso => "blasso",
            Method::Ben => "ben",
            Method::Hdben => "hdben",
        }
    }

    /// Label used in table-shaped output.
    pub fn display_name(self) -> &'static str {
        match self {
            Method::Ols => "OLS",
            Method::Lasso => "Lasso",
            Method::Enet => "EN",
            Method::Blasso => "BLasso",
            Method::Ben => "BEN",
            Method::Hdben => "HDBEN",
        }
    }

    pub fn is_bayesian(self) -> bool {
        matches!(self, Method::Blasso | Method::Ben | Method::Hdben)
    }

    fn stream_id(self) -> u64 {
        self as u64 + 1
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::contract(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub n: usize,
    pub d: usize,
    pub s_beta: usize,
    pub s_gamma: usize,
    pub beta_range: [f64; 2],
    pub gamma_range: [f64; 2],
    pub replicates: usize,
    pub methods: Vec<Method>,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            n: 200,
            d: 100,
            s_beta: 10,
            s_gamma: 10,
            beta_range: [1.0, 2.0],
            gamma_range: [0.5, 1.5],
            replicates: 5,
            methods: Method::ALL.to_vec(),
            seed: 20_250_101,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.n >= 1, "n must be positive");
        ensure!(self.d >= 1, "d must be positive");
        ensure!(self.s_beta <= self.d, "s_beta = {} exceeds d = {}", self.s_beta, self.d);
        ensure!(self.s_gamma <= self.d, "s_gamma = {} exceeds d = {}", self.s_gamma, self.d);
        for (name, r) in [("beta_range", self.beta_range), ("gamma_range", self.gamma_range)] {
            ensure!(
                r[0].is_finite() && r[1].is_finite() && r[0] <= r[1],
                "{name} must be a finite interval with lower <= upper"
            );
        }
        ensure!(self.replicates >= 1, "replicates must be positive");
        Ok(())
    }
}

fn sparse_vector<R: Rng + ?Sized>(d: usize, s: usize, range: [f64; 2], rng: &mut R) -> DVector<f64> {
    let mut idx = sample_indices(rng, d, s).into_vec();
    idx.sort_unstable();
    let mut v = DVector::zeros(d);
    for j in idx {
        v[j] = range[0] + (range[1] - range[0]) * rng.random::<f64>();
    }
    v
}

/// Draws one replicate of the data-generating process.
///
/// Depends only on `(spec.seed, replicate)` and the shape fields of `spec`.
pub fn generate_dataset(spec: &ScenarioSpec, replicate: usize) -> Result<Dataset<f64>> {
    spec.validate()?;
    let mut rng = stream_rng(derive_seed(spec.seed, &[replicate as u64]), 0);
    let (n, d) = (spec.n, spec.d);
    let x = DMatrix::from_fn(n, d, |_, _| f64::standard_normal(&mut rng));
    let beta0 = sparse_vector(d, spec.s_beta, spec.beta_range, &mut rng);
    let gamma0 = sparse_vector(d, spec.s_gamma, spec.gamma_range, &mut rng);
    let mean = &x * &beta0;
    let log_var = crate::model::log_variance(&x, &gamma0);
    let y = DVector::from_fn(n, |i, _| {
        mean[i] + (0.5 * log_var[i]).exp() * f64::standard_normal(&mut rng)
    });
    Dataset::new(x, y)?.with_truth(GroundTruth::from_coefficients(beta0, gamma0))
}

/// Fitting controls shared by every method in a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub sampler: SamplerConfig,
    pub homo: HomoBayesConfig,
    pub enet: EnetConfig,
    pub hyper: Hyperparameters<f64>,
    pub support_rule: SupportRule,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self::from_sampler(SamplerConfig::default())
    }
}

impl RunSettings {
    pub fn from_sampler(sampler: SamplerConfig) -> Self {
        Self {
            homo: HomoBayesConfig::from_sampler(&sampler),
            sampler,
            enet: EnetConfig::default(),
            hyper: Hyperparameters::default(),
            support_rule: SupportRule::default(),
        }
    }
}

/// Outcome of one (method, replicate) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub method: Method,
    pub replicate: usize,
    pub beta_hat: Vec<f64>,
    pub gamma_hat: Option<Vec<f64>>,
    pub l2_error: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub exact: bool,
    pub seconds: f64,
    pub max_rhat: Option<f64>,
    pub min_ess: Option<f64>,
    pub mh_acceptance: Option<f64>,
}

impl ReplicateRecord {
    /// Scores an estimate against the dataset's ground truth.
    pub fn score(
        method: Method,
        replicate: usize,
        data: &Dataset<f64>,
        beta_hat: DVector<f64>,
        selected: &[usize],
    ) -> Result<Self> {
        let truth = data
            .truth()
            .ok_or_else(|| Error::contract("dataset carries no ground truth"))?;
        let metrics = support_metrics(selected, &truth.support_beta, data.d())?;
        Ok(Self {
            method,
            replicate,
            l2_error: l2_error(&beta_hat, &truth.beta0)?,
            beta_hat: beta_hat.iter().copied().collect(),
            gamma_hat: None,
            tpr: metrics.tpr,
            fpr: metrics.fpr,
            exact: metrics.exact,
            seconds: 0.0,
            max_rhat: None,
            min_ess: None,
            mh_acceptance: None,
        })
    }
}

fn pooled_beta(draws: &PosteriorDraws<f64>) -> Vec<Vec<f64>> {
    (0..draws.d())
        .map(|j| draws.beta_coordinate(j).into_iter().flatten().collect())
        .collect()
}

/// Generates the replicate's data and fits `method` to it.
///
/// Bayesian estimates are posterior means; every method gets its own seed
/// derived from `(spec.seed, replicate, method)`.
pub fn run_replicate(
    spec: &ScenarioSpec,
    replicate: usize,
    method: Method,
    settings: &RunSettings,
) -> Result<ReplicateRecord> {
    let data = generate_dataset(spec, replicate)?;
    let seed = derive_seed(spec.seed, &[replicate as u64, method.stream_id()]);
    let start = Instant::now();
    let mut record = match method {
        Method::Ols => {
            let beta = fit_ols(&data);
            let sel = support_of(&beta);
            ReplicateRecord::score(method, replicate, &data, beta, &sel)?
        }
        Method::Lasso | Method::Enet => {
            let penalty = if method == Method::Lasso {
                Penalty::Lasso
            } else {
                Penalty::ElasticNet
            };
            let cfg = cv_select_enet(&data, &settings.enet, penalty, seed)?;
            let beta = fit_enet(&data, &cfg)?.beta;
            let sel = support_of(&beta);
            ReplicateRecord::score(method, replicate, &data, beta, &sel)?
        }
        Method::Blasso | Method::Ben => {
            let cfg = HomoBayesConfig {
                seed,
                ..settings.homo.clone()
            };
            let draws = if method == Method::Blasso {
                fit_blasso(&data, &settings.hyper, &cfg)?
            } else {
                fit_ben(&data, &settings.hyper, &cfg)?
            };
            let sel = select_support(&pooled_beta(&draws), &settings.support_rule)?;
            ReplicateRecord::score(method, replicate, &data, draws.beta_mean(), &sel)?
        }
        Method::Hdben => {
            let cfg = SamplerConfig {
                seed,
                ..settings.sampler.clone()
            };
            let draws = fit_hdben(&data, &settings.hyper, &cfg)?;
            let summary = summarize_with(&draws, &settings.support_rule)?;
            let mut r = ReplicateRecord::score(
                method,
                replicate,
                &data,
                draws.beta_mean(),
                &summary.support_beta,
            )?;
            r.gamma_hat = Some(draws.gamma_mean().iter().copied().collect());
            r.max_rhat = Some(summary.beta.rhat.iter().copied().fold(f64::NAN, f64::max));
            r.min_ess = Some(summary.beta.ess.iter().copied().fold(f64::NAN, f64::min));
            r.mh_acceptance = Some(summary.mh_acceptance);
            r
        }
    };
    record.seconds = start.elapsed().as_secs_f64();
    Ok(record)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub method: Method,
    pub replicate: usize,
    pub message: String,
}

/// Aggregate over the successful replicates of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub successes: usize,
    pub failures: usize,
    /// NaN when no replicate succeeded.
    pub mean_error: f64,
    /// Sample standard deviation; 0 with a single success.
    pub sd_error: f64,
    pub mean_tpr: f64,
    pub mean_fpr: f64,
    pub exact_rate: f64,
    pub mean_seconds: f64,
}

impl MethodSummary {
    pub fn from_records(method: Method, records: &[&ReplicateRecord], failures: usize) -> Self {
        let k = records.len();
        let mean = |f: &dyn Fn(&ReplicateRecord) -> f64| -> f64 {
            if k == 0 {
                f64::NAN
            } else {
                records.iter().map(|r| f(r)).sum::<f64>() / k as f64
            }
        };
        let mean_error = mean(&|r| r.l2_error);
        let sd_error = if k < 2 {
            if k == 1 { 0.0 } else { f64::NAN }
        } else {
            (records
                .iter()
                .map(|r| (r.l2_error - mean_error).powi(2))
                .sum::<f64>()
                / (k - 1) as f64)
                .sqrt()
        };
        Self {
            method,
            successes: k,
            failures,
            mean_error,
            sd_error,
            mean_tpr: mean(&|r| r.tpr),
            mean_fpr: mean(&|r| r.fpr),
            exact_rate: mean(&|r| if r.exact { 1.0 } else { 0.0 }),
            mean_seconds: mean(&|r| r.seconds),
        }
    }

    /// `"mean ± sd"` with four decimals, or `"NA"` when nothing succeeded.
    pub fn cell(&self) -> String {
        if self.successes == 0 {
            "NA".to_string()
        } else {
            format!("{:.4} ± {:.4}", self.mean_error, self.sd_error)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub spec: ScenarioSpec,
    /// One entry per method, in `spec.methods` order.
    pub summaries: Vec<MethodSummary>,
    /// Sorted by (method position, replicate).
    pub records: Vec<ReplicateRecord>,
    pub failures: Vec<ReplicateFailure>,
}

impl ScenarioResult {
    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    /// Rebuilds the per-method summaries from the raw records.
    pub fn aggregate(spec: ScenarioSpec, mut records: Vec<ReplicateRecord>, mut failures: Vec<ReplicateFailure>) -> Self {
        let pos = |m: Method| spec.methods.iter().position(|&x| x == m).unwrap_or(usize::MAX);
        records.sort_by_key(|r| (pos(r.method), r.replicate));
        failures.sort_by_key(|f| (pos(f.method), f.replicate));
        let mut methods = spec.methods.clone();
        methods.dedup();
        let summaries = methods
            .iter()
            .map(|&m| {
                let rs: Vec<&ReplicateRecord> = records.iter().filter(|r| r.method == m).collect();
                let nf = failures.iter().filter(|f| f.method == m).count();
                MethodSummary::from_records(m, &rs, nf)
            })
            .collect();
        Self {
            spec,
            summaries,
            records,
            failures,
        }
    }

    /// Methods for which every replicate failed.
    pub fn fully_failed(&self) -> Vec<Method> {
        self.summaries
            .iter()
            .filter(|s| s.successes == 0 && s.failures > 0)
            .map(|s| s.method)
            .collect()
    }
}

/// Runs every (spec, method, replicate) cell with the real fitting code.
pub fn run_grid(specs: &[ScenarioSpec], settings: &RunSettings) -> Result<Vec<ScenarioResult>> {
    run_grid_with(specs, |spec, rep, method| run_replicate(spec, rep, method, settings))
}

/// Runs a grid with a caller-supplied replicate runner.
///
/// Cells run in parallel; a failing cell is recorded, not propagated. Only
/// an invalid spec aborts the grid.
pub fn run_grid_with<F>(specs: &[ScenarioSpec], runner: F) -> Result<Vec<ScenarioResult>>
where
    F: Fn(&ScenarioSpec, usize, Method) -> Result<ReplicateRecord> + Sync,
{
    for s in specs {
        s.validate()?;
    }
    specs
        .iter()
        .map(|spec| {
            let mut methods = spec.methods.clone();
            methods.sort();
            methods.dedup();
            let cells: Vec<(Method, usize)> = methods
                .iter()
                .flat_map(|&m| (0..spec.replicates).map(move |r| (m, r)))
                .collect();
            let outcomes: Vec<(Method, usize, Result<ReplicateRecord>)> = cells
                .into_par_iter()
                .map(|(m, r)| (m, r, runner(spec, r, m)))
                .collect();
            let mut records = Vec::new();
            let mut failures = Vec::new();
            for (method, replicate, out) in outcomes {
                match out {
                    Ok(rec) => records.push(rec),
                    Err(e) => failures.push(ReplicateFailure {
                        method,
                        replicate,
                        message: e.to_string(),
                    }),
                }
            }
            Ok(ScenarioResult::aggregate(spec.clone(), records, failures))
        })
        .collect()
}

/// Desk or full reproduction scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    #[default]
    Desk,
    Full,
}

impl Profile {
    pub fn replicates(self) -> usize {
        match self {
            Profile::Desk => 5,
            Profile::Full => 20,
        }
    }

    pub fn sampler(self) -> SamplerConfig {
        match self {
            Profile::Desk => SamplerConfig::default(),
            Profile::Full => SamplerConfig::full(),
        }
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "desk" => Ok(Profile::Desk),
            "full" => Ok(Profile::Full),
            other => Err(Error::contract(format!("unknown profile {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Table {
    Table2,
    Table3,
}

impl FromStr for Table {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "table2" => Ok(Table::Table2),
            "table3" => Ok(Table::Table3),
            other => Err(Error::contract(format!("unknown table {other:?}"))),
        }
    }
}

/// Row and column layout of a reproduced table.
#[derive(Debug, Clone, PartialEq)]
pub struct TableLayout {
    pub table: Table,
    /// Row labels within each method block, e.g. `s_beta = 10`.
    pub row_labels: Vec<String>,
    pub column_labels: Vec<String>,
    /// `specs[row][column]`.
    pub specs: Vec<Vec<ScenarioSpec>>,
}

/// Scenario grid for one table. Table 2 varies (s_β, d) at n = 200; Table 3
/// varies (d, n) at s_β = 10. Both use s_γ = 10.
pub fn table_layout(table: Table, profile: Profile, base: &ScenarioSpec) -> TableLayout {
    let spec = |n: usize, d: usize, s_beta: usize| ScenarioSpec {
        n,
        d,
        s_beta,
        s_gamma: 10,
        replicates: profile.replicates(),
        ..base.clone()
    };
    match table {
        Table::Table2 => {
            let (rows, cols): (Vec<usize>, Vec<usize>) = match profile {
                Profile::Desk => (vec![10], vec![100, 250]),
                Profile::Full => (vec![10, 50, 100], vec![250, 500, 750, 1000]),
            };
            TableLayout {
                table,
                row_labels: rows.iter().map(|s| format!("s_beta = {s}")).collect(),
                column_labels: cols.iter().map(|d| format!("d = {d}")).collect(),
                specs: rows
                    .iter()
                    .map(|&s| cols.iter().map(|&d| spec(200, d, s)).collect())
                    .collect(),
            }
        }
        Table::Table3 => {
            let rows: Vec<usize> = match profile {
                Profile::Desk => vec![100],
                Profile::Full => vec![100, 500, 1000],
            };
            let cols = [50usize, 100, 150, 200];
            TableLayout {
                table,
                row_labels: rows.iter().map(|d| format!("d = {d}")).collect(),
                column_labels: cols.iter().map(|n| format!("n = {n}")).collect(),
                specs: rows
                    .iter()
                    .map(|&d| cols.iter().map(|&n| spec(n, d, 10)).collect())
                    .collect(),
            }
        }
    }
}
