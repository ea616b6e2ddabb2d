//! Command-line front end: configuration, the `fit`, `simulate` and
//! `reproduce` subcommands, and result files.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::diagnostics::{summarize, FitSummary};
use crate::error::Error;
use crate::model::{Dataset, Hyperparameters, PosteriorDraws};
use crate::samplers::{fit_hdben, GammaProposal, SamplerConfig, TauUpdateMode, HDBEN_SCALARS};
use crate::simulation::{
    run_grid, table_layout, Method, Profile, RunSettings, ScenarioResult, ScenarioSpec, Table,
};

/// Exit codes: 0 success, 2 usage or configuration, 3 numerical failure,
/// 4 every replicate of some method failed.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("experiment failure: {0}")]
    Experiment(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Experiment(_) => 4,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Contract(msg) => CliError::Usage(msg),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

/// Flat run configuration. Every key is optional; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub a_beta1: f64,
    pub b_beta1: f64,
    pub a_gamma1: f64,
    pub b_gamma1: f64,
    pub a_beta2: f64,
    pub b_beta2: f64,
    pub a_gamma2: f64,
    pub b_gamma2: f64,

    pub iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub chains: usize,
    pub seed: u64,
    pub mh_step_init: f64,
    pub adapt_enabled: bool,
    pub adapt_window: usize,
    pub adapt_target: f64,
    pub gamma_proposal: GammaProposal,
    pub mh_moves: usize,
    pub block_cycles: usize,
    pub tau_update_mode: TauUpdateMode,
    pub beta_floor: f64,

    pub n: usize,
    pub d: usize,
    pub s_beta: usize,
    pub s_gamma: usize,
    pub beta_range: [f64; 2],
    pub gamma_range: [f64; 2],
    pub replicates: usize,
    pub methods: Vec<Method>,

    pub output_dir: PathBuf,
    pub format: OutputFormat,
}

impl Default for RunConfig {
    fn default() -> Self {
        let h = Hyperparameters::<f64>::default();
        let s = SamplerConfig::default();
        let spec = ScenarioSpec::default();
        Self {
            a_beta1: h.a_beta1,
            b_beta1: h.b_beta1,
            a_gamma1: h.a_gamma1,
            b_gamma1: h.b_gamma1,
            a_beta2: h.a_beta2,
            b_beta2: h.b_beta2,
            a_gamma2: h.a_gamma2,
            b_gamma2: h.b_gamma2,
            iterations: s.iterations,
            burn_in: s.burn_in,
            thinning: s.thinning,
            chains: s.chains,
            seed: s.seed,
            mh_step_init: s.mh_step_init,
            adapt_enabled: s.adapt_enabled,
            adapt_window: s.adapt_window,
            adapt_target: s.adapt_target,
            gamma_proposal: s.gamma_proposal,
            mh_moves: s.mh_moves,
            block_cycles: s.block_cycles,
            tau_update_mode: s.tau_update_mode,
            beta_floor: s.beta_floor,
            n: spec.n,
            d: spec.d,
            s_beta: spec.s_beta,
            s_gamma: spec.s_gamma,
            beta_range: spec.beta_range,
            gamma_range: spec.gamma_range,
            replicates: spec.replicates,
            methods: spec.methods,
            output_dir: PathBuf::from("hdben_out"),
            format: OutputFormat::Csv,
        }
    }
}

impl RunConfig {
    pub fn hyperparameters(&self) -> Hyperparameters<f64> {
        Hyperparameters {
            a_beta1: self.a_beta1,
            b_beta1: self.b_beta1,
            a_gamma1: self.a_gamma1,
            b_gamma1: self.b_gamma1,
            a_beta2: self.a_beta2,
            b_beta2: self.b_beta2,
            a_gamma2: self.a_gamma2,
            b_gamma2: self.b_gamma2,
        }
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            iterations: self.iterations,
            burn_in: self.burn_in,
            thinning: self.thinning,
            chains: self.chains,
            seed: self.seed,
            mh_step_init: self.mh_step_init,
            adapt_enabled: self.adapt_enabled,
            adapt_window: self.adapt_window,
            adapt_target: self.adapt_target,
            gamma_proposal: self.gamma_proposal,
            mh_moves: self.mh_moves,
            block_cycles: self.block_cycles,
            tau_update_mode: self.tau_update_mode,
            beta_floor: self.beta_floor,
            ..SamplerConfig::default()
        }
    }

    pub fn scenario(&self) -> ScenarioSpec {
        ScenarioSpec {
            n: self.n,
            d: self.d,
            s_beta: self.s_beta,
            s_gamma: self.s_gamma,
            beta_range: self.beta_range,
            gamma_range: self.gamma_range,
            replicates: self.replicates,
            methods: self.methods.clone(),
            seed: self.seed,
        }
    }

    pub fn settings(&self) -> RunSettings {
        RunSettings {
            hyper: self.hyperparameters(),
            ..RunSettings::from_sampler(self.sampler())
        }
    }

    /// Replicate count and chain lengths of a reproduction profile.
    pub fn apply_profile(&mut self, profile: Profile) {
        let s = profile.sampler();
        self.iterations = s.iterations;
        self.burn_in = s.burn_in;
        self.chains = s.chains;
        self.replicates = profile.replicates();
    }

    /// Checks every numeric invariant; messages name the offending key.
    pub fn validate(&self) -> CliResult<()> {
        self.hyperparameters().validate()?;
        self.sampler().validate()?;
        self.scenario().validate()?;
        Ok(())
    }
}

/// Reads and validates a configuration file.
pub fn parse_config(path: &Path) -> CliResult<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> CliResult<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        CliError::Usage(format!("invalid configuration at key `{key}`: {}", e.inner()))
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads a CSV whose header names the columns and whose first column is y.
pub fn read_dataset(path: &Path) -> CliResult<(Dataset<f64>, Vec<String>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| io_error(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| io_error(path, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.len() < 2 {
        return Err(CliError::Usage(format!(
            "{}: need a response column and at least one predictor",
            path.display()
        )));
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| io_error(path, e))?;
        let row = record
            .iter()
            .enumerate()
            .map(|(c, field)| {
                field.trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                    CliError::Usage(format!(
                        "{}: row {}, column {:?}: {field:?} is not a finite number",
                        path.display(),
                        r + 2,
                        header[c]
                    ))
                })
            })
            .collect::<CliResult<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::Usage(format!("{}: no data rows", path.display())));
    }
    let (n, d) = (rows.len(), header.len() - 1);
    let y = DVector::from_fn(n, |i, _| rows[i][0]);
    let x = DMatrix::from_fn(n, d, |i, j| rows[i][j + 1]);
    Ok((Dataset::new(x, y)?, header[1..].to_vec()))
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| io_error(path, e))?;
    write_file(path, &(text + "\n"))
}

fn csv_text<F>(header: &[&str], fill: F) -> CliResult<String>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    let wrap = |e: csv::Error| CliError::Usage(format!("csv output: {e}"));
    w.write_record(header).map_err(wrap)?;
    fill(&mut w).map_err(wrap)?;
    let bytes = w.into_inner().map_err(|e| CliError::Usage(format!("csv output: {e}")))?;
    String::from_utf8(bytes).map_err(|e| CliError::Usage(format!("csv output: {e}")))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

/// Per-coordinate rows of `summary.csv`.
pub fn summary_csv(summary: &FitSummary, names: &[String]) -> CliResult<String> {
    let header = ["coordinate", "block", "mean", "sd", "q2.5", "q97.5", "rhat", "ess", "selected"];
    csv_text(&header, |w| {
        for (block, b, selected) in [
            ("beta", &summary.beta, &summary.support_beta),
            ("gamma", &summary.gamma, &summary.support_gamma),
        ] {
            for j in 0..b.len() {
                w.write_record([
                    names[j].clone(),
                    block.to_string(),
                    b.mean[j].to_string(),
                    b.sd[j].to_string(),
                    b.q_lower[j].to_string(),
                    b.q_upper[j].to_string(),
                    b.rhat[j].to_string(),
                    b.ess[j].to_string(),
                    selected.contains(&j).to_string(),
                ])?;
            }
        }
        Ok(())
    })
}

fn draws_csv(draws: &PosteriorDraws<f64>, names: &[String]) -> CliResult<String> {
    let mut header: Vec<String> = vec!["chain".into(), "draw".into()];
    header.extend(names.iter().map(|n| format!("beta_{n}")));
    header.extend(names.iter().map(|n| format!("gamma_{n}")));
    header.extend(HDBEN_SCALARS.iter().map(|s| s.to_string()));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    csv_text(&header_refs, |w| {
        for (c, chain) in draws.chains.iter().enumerate() {
            for k in 0..draws.kept {
                let mut row = vec![c.to_string(), k.to_string()];
                row.extend(chain.beta.row(k).iter().map(|v| v.to_string()));
                row.extend(chain.gamma.row(k).iter().map(|v| v.to_string()));
                row.extend(chain.scalars.values.row(k).iter().map(|v| v.to_string()));
                w.write_record(&row)?;
            }
        }
        Ok(())
    })
}

#[derive(Serialize)]
struct FitMeta<'a> {
    command: &'static str,
    data: String,
    seed: u64,
    n: usize,
    d: usize,
    chains: usize,
    kept_per_chain: usize,
    acceptance_rate: f64,
    wall_seconds: f64,
    config: &'a RunConfig,
}

/// Fits the model to a CSV file and writes `summary.csv`, `meta.json` and
/// optionally `draws.csv` into `cfg.output_dir`.
pub fn cmd_fit(cfg: &RunConfig, data_path: &Path, save_draws: bool) -> CliResult<()> {
    cfg.validate()?;
    let (data, names) = read_dataset(data_path)?;
    let start = Instant::now();
    let draws = fit_hdben(&data, &cfg.hyperparameters(), &cfg.sampler())?;
    let summary = summarize(&draws)?;
    let wall = start.elapsed().as_secs_f64();

    let out = &cfg.output_dir;
    create_dir(out)?;
    write_file(&out.join("summary.csv"), &summary_csv(&summary, &names)?)?;
    if save_draws {
        write_file(&out.join("draws.csv"), &draws_csv(&draws, &names)?)?;
    }
    if cfg.format == OutputFormat::Json {
        write_json(&out.join("summary.json"), &summary)?;
    }
    write_json(
        &out.join("meta.json"),
        &FitMeta {
            command: "fit",
            data: data_path.display().to_string(),
            seed: cfg.seed,
            n: data.n(),
            d: data.d(),
            chains: draws.n_chains(),
            kept_per_chain: draws.kept,
            acceptance_rate: draws.mh_acceptance(),
            wall_seconds: wall,
            config: cfg,
        },
    )
}

const RESULT_HEADER: [&str; 11] = [
    "n", "d", "s_beta", "s_gamma", "method", "replicate", "l2_error", "tpr", "fpr", "exact", "seconds",
];

const SUMMARY_HEADER: [&str; 13] = [
    "n",
    "d",
    "s_beta",
    "s_gamma",
    "method",
    "successes",
    "failures",
    "mean_l2_error",
    "sd_l2_error",
    "mean_tpr",
    "mean_fpr",
    "exact_rate",
    "mean_seconds",
];

fn scenario_key(s: &ScenarioSpec) -> [String; 4] {
    [s.n.to_string(), s.d.to_string(), s.s_beta.to_string(), s.s_gamma.to_string()]
}

/// Raw per-replicate rows for every scenario.
pub fn results_csv(results: &[ScenarioResult]) -> CliResult<String> {
    csv_text(&RESULT_HEADER, |w| {
        for res in results {
            let key = scenario_key(&res.spec);
            for r in &res.records {
                let mut row = key.to_vec();
                row.extend([
                    r.method.to_string(),
                    r.replicate.to_string(),
                    r.l2_error.to_string(),
                    r.tpr.to_string(),
                    r.fpr.to_string(),
                    r.exact.to_string(),
                    r.seconds.to_string(),
                ]);
                w.write_record(&row)?;
            }
        }
        Ok(())
    })
}

/// One aggregated row per (scenario, method).
pub fn results_summary_csv(results: &[ScenarioResult]) -> CliResult<String> {
    csv_text(&SUMMARY_HEADER, |w| {
        for res in results {
            let key = scenario_key(&res.spec);
            for s in &res.summaries {
                let mut row = key.to_vec();
                row.extend([
                    s.method.to_string(),
                    s.successes.to_string(),
                    s.failures.to_string(),
                    s.mean_error.to_string(),
                    s.sd_error.to_string(),
                    s.mean_tpr.to_string(),
                    s.mean_fpr.to_string(),
                    s.exact_rate.to_string(),
                    s.mean_seconds.to_string(),
                ]);
                w.write_record(&row)?;
            }
        }
        Ok(())
    })
}

#[derive(Serialize)]
struct GridMeta<'a> {
    command: &'static str,
    table: Option<Table>,
    profile: Option<Profile>,
    seed: u64,
    wall_seconds: f64,
    failures: usize,
    config: &'a RunConfig,
}

fn write_grid_outputs(cfg: &RunConfig, results: &[ScenarioResult], meta: GridMeta) -> CliResult<()> {
    let out = &cfg.output_dir;
    create_dir(out)?;
    write_file(&out.join("results.csv"), &results_csv(results)?)?;
    write_file(&out.join("results_summary.csv"), &results_summary_csv(results)?)?;
    if cfg.format == OutputFormat::Json {
        write_json(&out.join("results.json"), &results)?;
    }
    write_json(&out.join("meta.json"), &meta)
}

fn check_failures(results: &[ScenarioResult]) -> CliResult<()> {
    let failed: Vec<String> = results
        .iter()
        .flat_map(|r| {
            r.fully_failed().into_iter().map(move |m| {
                format!("{m} at n={}, d={}, s_beta={}", r.spec.n, r.spec.d, r.spec.s_beta)
            })
        })
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Experiment(format!("all replicates failed for {}", failed.join("; "))))
    }
}

/// Runs the configured scenario and writes `results.csv`,
/// `results_summary.csv` and `meta.json`.
pub fn cmd_simulate(cfg: &RunConfig) -> CliResult<Vec<ScenarioResult>> {
    cfg.validate()?;
    let start = Instant::now();
    let results = run_grid(&[cfg.scenario()], &cfg.settings())?;
    let meta = GridMeta {
        command: "simulate",
        table: None,
        profile: None,
        seed: cfg.seed,
        wall_seconds: start.elapsed().as_secs_f64(),
        failures: results.iter().map(|r| r.failures.len()).sum(),
        config: cfg,
    };
    write_grid_outputs(cfg, &results, meta)?;
    check_failures(&results)?;
    Ok(results)
}

/// Table-shaped CSV: one row per (method, table row) with `mean ± sd` cells.
pub fn table_csv(
    row_labels: &[String],
    column_labels: &[String],
    methods: &[Method],
    results: &[Vec<ScenarioResult>],
) -> CliResult<String> {
    let mut header = vec!["model", ""];
    header.extend(column_labels.iter().map(String::as_str));
    csv_text(&header, |w| {
        for &m in methods {
            for (r, label) in row_labels.iter().enumerate() {
                let mut row = vec![m.display_name().to_string(), label.clone()];
                for res in &results[r] {
                    row.push(res.summary(m).map_or_else(|| "NA".to_string(), |s| s.cell()));
                }
                w.write_record(&row)?;
            }
        }
        Ok(())
    })
}

/// Runs a table grid and writes `<table>.csv` next to the raw result files.
pub fn cmd_reproduce(cfg: &RunConfig, table: Table, profile: Profile) -> CliResult<Vec<ScenarioResult>> {
    let mut cfg = cfg.clone();
    cfg.apply_profile(profile);
    cfg.validate()?;
    let layout = table_layout(table, profile, &cfg.scenario());
    let start = Instant::now();
    let specs: Vec<ScenarioSpec> = layout.specs.iter().flatten().cloned().collect();
    let results = run_grid(&specs, &cfg.settings())?;
    let ncol = layout.column_labels.len();
    let grid: Vec<Vec<ScenarioResult>> = results.chunks(ncol).map(|c| c.to_vec()).collect();

    let mut methods = cfg.methods.clone();
    methods.sort();
    methods.dedup();
    let name = match table {
        Table::Table2 => "table2.csv",
        Table::Table3 => "table3.csv",
    };
    let meta = GridMeta {
        command: "reproduce",
        table: Some(table),
        profile: Some(profile),
        seed: cfg.seed,
        wall_seconds: start.elapsed().as_secs_f64(),
        failures: results.iter().map(|r| r.failures.len()).sum(),
        config: &cfg,
    };
    write_grid_outputs(&cfg, &results, meta)?;
    write_file(
        &cfg.output_dir.join(name),
        &table_csv(&layout.row_labels, &layout.column_labels, &methods, &grid)?,
    )?;
    check_failures(&results)?;
    Ok(results)
}

#[derive(Debug, Parser)]
#[command(name = "hdben", version, about = "Heteroscedastic double Bayesian elastic net")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProfileArg {
    Desk,
    Full,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Desk => Profile::Desk,
            ProfileArg::Full => Profile::Full,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TableArg {
    Table2,
    Table3,
}

impl From<TableArg> for Table {
    fn from(t: TableArg) -> Self {
        match t {
            TableArg::Table2 => Table::Table2,
            TableArg::Table3 => Table::Table3,
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct CommonArgs {
    /// JSON configuration file.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Root seed (overrides `seed`).
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the model to a CSV file (header row, response in the first column).
    Fit {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        /// Chain lengths of a reproduction profile.
        #[arg(long, value_enum)]
        profile: Option<ProfileArg>,
        /// Also write every kept draw to draws.csv.
        #[arg(long)]
        save_draws: bool,
    },
    /// Run one simulated scenario across methods and replicates.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum)]
        profile: Option<ProfileArg>,
        /// Comma-separated methods (overrides `methods`).
        #[arg(long, value_name = "LIST", value_delimiter = ',')]
        method: Option<Vec<String>>,
    },
    /// Rerun the grid behind one of the result tables.
    Reproduce {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum)]
        table: TableArg,
        #[arg(long, value_enum, default_value = "desk")]
        profile: ProfileArg,
        #[arg(long, value_name = "LIST", value_delimiter = ',')]
        method: Option<Vec<String>>,
    },
}

fn load_config(common: &CommonArgs) -> CliResult<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => parse_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn apply_methods(cfg: &mut RunConfig, list: &Option<Vec<String>>) -> CliResult<()> {
    if let Some(list) = list {
        cfg.methods = list
            .iter()
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.parse::<Method>())
            .collect::<Result<_, _>>()?;
    }
    Ok(())
}

/// Executes a parsed command line.
pub fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Fit {
            common,
            data,
            profile,
            save_draws,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(p) = profile {
                cfg.apply_profile(p.into());
            }
            cmd_fit(&cfg, &data, save_draws)
        }
        Command::Simulate {
            common,
            profile,
            method,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(p) = profile {
                cfg.apply_profile(p.into());
            }
            apply_methods(&mut cfg, &method)?;
            cmd_simulate(&cfg).map(|_| ())
        }
        Command::Reproduce {
            common,
            table,
            profile,
            method,
        } => {
            let mut cfg = load_config(&common)?;
            apply_methods(&mut cfg, &method)?;
            cmd_reproduce(&cfg, table.into(), profile.into()).map(|_| ())
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
