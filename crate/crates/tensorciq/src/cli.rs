//! Command-line interface: `simulate`, `complete`, `uq` and `experiment`.
//!
//! Exit codes: 0 success, 2 input error, 3 algorithmic failure, 4 internal
//! invariant violation.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use tensorciq_core::estimator::{complete, default_params, EstimatorParams};
use tensorciq_core::synth::{make_instance, InstanceConfig};
use tensorciq_core::tensor::{canonical_triples, canonicalize, CanonicalTriple};
use tensorciq_core::uq::{ci_entry, ci_factor, entry_variance, estimate_noise, estimate_sigmas};
use tensorciq_core::Error;

use crate::harness::{aggregate, risk_table, run_experiment, ExperimentConfig};
use crate::io::{self, write_atomic, IoError};

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_ALGORITHM: u8 = 3;
pub const EXIT_INTERNAL: u8 = 4;

/// A failed command with its exit code.
#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn input(message: impl Into<String>) -> Self {
        Self { code: EXIT_INPUT, message: message.into() }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        Self::input(e.to_string())
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::IndexOutOfRange { .. } | Error::DimensionMismatch(_) | Error::InvalidParameter(_) => {
                EXIT_INPUT
            }
            Error::InitExhausted { .. }
            | Error::NonFinite { .. }
            | Error::EigenNoConvergence { .. }
            | Error::SingularGram { .. } => EXIT_ALGORITHM,
            Error::NegativeVariance { .. } => EXIT_INTERNAL,
        };
        Self { code, message: e.to_string() }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "tensorciq", version, about = "Noisy symmetric tensor completion with confidence intervals")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic instance from a JSON config.
    Simulate(SimulateArgs),
    /// Estimate CP factors from an observation file.
    Complete(CompleteArgs),
    /// Confidence intervals for factor and tensor entries.
    Uq(UqArgs),
    /// Run a Monte-Carlo coverage experiment.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON with keys d, r, p, sigma, beta, seed.
    #[arg(long)]
    pub config: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct TuningArgs {
    /// Random restarts L (default r²).
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Pruning threshold (default 0.4).
    #[arg(long)]
    pub eps_th: Option<f64>,
    /// Step size (default 3e-5/p).
    #[arg(long)]
    pub eta: Option<f64>,
    /// Gradient iterations (default 100).
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Stop once the gradient is negligible.
    #[arg(long)]
    pub early_stop: bool,
}

impl TuningArgs {
    fn resolve(&self, d: usize, r: usize, p: f64) -> EstimatorParams {
        let mut params = default_params(d, r, p);
        params.restarts = self.restarts.unwrap_or(params.restarts);
        params.eps_th = self.eps_th.unwrap_or(params.eps_th);
        params.eta = self.eta.unwrap_or(params.eta);
        params.iterations = self.iterations.unwrap_or(params.iterations);
        params.early_stop = self.early_stop;
        params
    }
}

#[derive(Debug, Args)]
pub struct CompleteArgs {
    #[arg(long)]
    pub obs: PathBuf,
    #[arg(long)]
    pub rank: usize,
    /// Seed of the initialization probes.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub tuning: TuningArgs,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct UqArgs {
    #[arg(long)]
    pub obs: PathBuf,
    #[arg(long)]
    pub factors: PathBuf,
    /// Miss level α in (0, 1).
    #[arg(long, default_value_t = 0.05, value_parser = parse_alpha)]
    pub alpha: f64,
    /// Tensor entry `i,j,k` (1-based, any order); repeatable.
    #[arg(long = "entry", value_parser = parse_entry)]
    pub entries: Vec<[usize; 3]>,
    /// Report every canonical tensor entry.
    #[arg(long)]
    pub all_entries: bool,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// JSON experiment config.
    #[arg(long)]
    pub config: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the miss level α.
    #[arg(long, value_parser = parse_alpha)]
    pub alpha: Option<f64>,
    /// Track every canonical tensor entry.
    #[arg(long)]
    pub all_entries: bool,
    /// Worker threads.
    #[arg(long, env = "TENSORCIQ_JOBS")]
    pub jobs: Option<usize>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

fn parse_alpha(s: &str) -> Result<f64, String> {
    let a: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if a > 0.0 && a < 1.0 {
        Ok(a)
    } else {
        Err(format!("alpha must lie strictly between 0 and 1, got {a}"))
    }
}

fn parse_entry(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected i,j,k, got `{s}`"));
    }
    let mut out = [0; 3];
    for (slot, part) in out.iter_mut().zip(parts) {
        *slot = part.parse().map_err(|_| format!("invalid index `{part}`"))?;
        if *slot == 0 {
            return Err("indices are 1-based".into());
        }
    }
    Ok(out)
}

/// Generator config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub d: usize,
    pub r: usize,
    pub p: f64,
    pub sigma: f64,
    pub beta: f64,
    pub seed: u64,
}

/// Written next to every set of outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub outputs: Vec<String>,
    pub wall_time_secs: f64,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

/// Collects output files and writes them atomically, followed by the manifest.
struct Outputs {
    dir: PathBuf,
    names: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::input(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf(), names: Vec::new() })
    }

    fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> CliResult<()> {
        write_atomic(&self.dir.join(name), contents.as_ref())?;
        self.names.push(name.to_string());
        Ok(())
    }

    fn finish(self, command: &str, config: impl Serialize, seed: u64, start: Instant) -> CliResult<()> {
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config: serde_json::to_value(config).expect("config serializes"),
            seed,
            outputs: self.names.clone(),
            wall_time_secs: start.elapsed().as_secs_f64(),
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        write_atomic(&self.dir.join("manifest.json"), json.as_bytes())?;
        Ok(())
    }
}

pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<()> {
    let start = Instant::now();
    let mut cfg: SimulateConfig = read_json(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let inst = make_instance(&InstanceConfig {
        d: cfg.d,
        r: cfg.r,
        p: cfg.p,
        sigma: cfg.sigma,
        beta: cfg.beta,
        seed: cfg.seed,
    })?;
    let mut out = Outputs::new(&args.out_dir)?;
    out.write("obs.txt", io::format_observations(&inst.obs))?;
    out.write("truth.txt", io::format_factors(&inst.truth))?;
    out.write("noise.txt", io::format_noise(&inst.noise))?;
    println!("simulated {} observations (d={}, r={})", inst.obs.len(), cfg.d, cfg.r);
    out.finish("simulate", &cfg, cfg.seed, start)
}

#[derive(Serialize)]
struct LossRow {
    iteration: usize,
    loss: f64,
}

#[derive(Serialize)]
struct CompleteManifestConfig<'a> {
    obs: &'a Path,
    rank: usize,
    restarts: usize,
    eps_th: f64,
    eta: f64,
    iterations: usize,
    early_stop: bool,
}

pub fn cmd_complete(args: &CompleteArgs) -> CliResult<()> {
    let start = Instant::now();
    let obs = io::read_observations(&args.obs)?;
    if args.rank == 0 || args.rank > obs.d() {
        return Err(CliError::input(format!("rank must lie in 1..={}", obs.d())));
    }
    let params = args.tuning.resolve(obs.d(), args.rank, obs.p());
    params.validate(args.rank)?;
    let fit = complete(&obs, args.rank, &params, args.seed)?;
    let mut out = Outputs::new(&args.out_dir)?;
    out.write("factors.txt", io::format_factors(&fit.factors))?;
    out.write(
        "losses.csv",
        io::to_csv(fit.losses.iter().enumerate().map(|(iteration, &loss)| LossRow { iteration, loss })),
    )?;
    println!(
        "completed rank {} from {} observations: loss {:e} -> {:e}",
        args.rank,
        obs.len(),
        fit.losses.first().copied().unwrap_or(f64::NAN),
        fit.losses.last().copied().unwrap_or(f64::NAN)
    );
    let config = CompleteManifestConfig {
        obs: &args.obs,
        rank: args.rank,
        restarts: params.restarts,
        eps_th: params.eps_th,
        eta: params.eta,
        iterations: params.iterations,
        early_stop: params.early_stop,
    };
    out.finish("complete", config, args.seed, start)
}

#[derive(Serialize)]
struct FactorCiRow {
    l: usize,
    k: usize,
    center: f64,
    half_width: f64,
}

#[derive(Serialize)]
struct EntryCiRow {
    i: usize,
    j: usize,
    k: usize,
    center: f64,
    half_width: f64,
}

#[derive(Serialize)]
struct UqManifestConfig<'a> {
    obs: &'a Path,
    factors: &'a Path,
    alpha: f64,
    entries: Vec<[usize; 3]>,
    all_entries: bool,
}

pub fn cmd_uq(args: &UqArgs) -> CliResult<()> {
    let start = Instant::now();
    let obs = io::read_observations(&args.obs)?;
    let u = io::read_factors(&args.factors)?;
    if u.d() != obs.d() {
        return Err(CliError::input(format!(
            "factor dimension {} differs from observation dimension {}",
            u.d(),
            obs.d()
        )));
    }
    let targets: Vec<CanonicalTriple> = if args.all_entries {
        canonical_triples(obs.d()).collect()
    } else {
        args.entries
            .iter()
            .map(|&[a, b, c]| canonicalize(a - 1, b - 1, c - 1, obs.d()))
            .collect::<Result<_, _>>()?
    };
    let residuals = estimate_noise(&obs, &u)?;
    let sigmas = estimate_sigmas(&u, &residuals)?;
    let mut factor_rows = Vec::with_capacity(u.d() * u.r());
    for l in 0..u.r() {
        for k in 0..u.d() {
            let ci = ci_factor(u.get(k, l), &sigmas[k], l, args.alpha)?;
            factor_rows.push(FactorCiRow { l: l + 1, k: k + 1, center: ci.center, half_width: ci.half_width });
        }
    }
    let mut entry_rows = Vec::with_capacity(targets.len());
    for &t in &targets {
        let v = entry_variance(&u, &sigmas, t)?;
        let ci = ci_entry(u.cp_eval(t), &v, args.alpha)?;
        entry_rows.push(EntryCiRow {
            i: t.i() + 1,
            j: t.j() + 1,
            k: t.k() + 1,
            center: ci.center,
            half_width: ci.half_width,
        });
    }
    let mut out = Outputs::new(&args.out_dir)?;
    out.write("factor_ci.csv", io::to_csv(factor_rows))?;
    out.write("entry_ci.csv", entry_csv(entry_rows))?;
    println!("wrote {} factor and {} entry intervals", u.d() * u.r(), targets.len());
    let config = UqManifestConfig {
        obs: &args.obs,
        factors: &args.factors,
        alpha: args.alpha,
        entries: targets.iter().map(|t| [t.i() + 1, t.j() + 1, t.k() + 1]).collect(),
        all_entries: args.all_entries,
    };
    out.finish("uq", config, 0, start)
}

/// CSV of entry intervals; an empty list still gets its header.
fn entry_csv(rows: Vec<EntryCiRow>) -> Vec<u8> {
    if rows.is_empty() {
        return b"i,j,k,center,half_width\n".to_vec();
    }
    io::to_csv(rows)
}

#[derive(Serialize)]
struct CoverageRow<'a> {
    target: &'a str,
    mean: f64,
    std: f64,
    locations: usize,
}

#[derive(Serialize)]
struct QqRow {
    theoretical: f64,
    empirical: f64,
}

#[derive(Serialize)]
struct FailureRow<'a> {
    trial: usize,
    error: &'a str,
}

pub fn cmd_experiment(args: &ExperimentArgs) -> CliResult<()> {
    let start = Instant::now();
    let mut cfg: ExperimentConfig = read_json(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(alpha) = args.alpha {
        cfg.alpha = alpha;
    }
    cfg.all_entries |= args.all_entries;
    cfg.validate().map_err(CliError::input)?;
    let jobs = args
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let run = run_experiment(&cfg, jobs).map_err(CliError::input)?;
    for f in &run.failures {
        eprintln!("trial {} failed: {}", f.trial_index, f.error);
    }
    let agg = aggregate(&run.context, &run.reports, run.failures.len()).map_err(|e| CliError {
        code: EXIT_ALGORITHM,
        message: format!("{e} ({} of {} trials failed)", run.failures.len(), cfg.trials),
    })?;

    let mut out = Outputs::new(&args.out_dir)?;
    out.write(
        "coverage.csv",
        io::to_csv([
            CoverageRow {
                target: "factor",
                mean: agg.coverage_factor.mean,
                std: agg.coverage_factor.std,
                locations: agg.coverage_factor.locations,
            },
            CoverageRow {
                target: "entry",
                mean: agg.coverage_entry.mean,
                std: agg.coverage_entry.std,
                locations: agg.coverage_entry.locations,
            },
        ]),
    )?;
    for series in &agg.qq {
        let rows = series.points.iter().map(|&(theoretical, empirical)| QqRow { theoretical, empirical });
        out.write(&format!("qq_{}.csv", series.name), io::to_csv(rows))?;
    }
    out.write("ks.csv", io::to_csv(&agg.ks))?;
    out.write("risk.csv", io::to_csv(risk_table(&agg)))?;
    let failures = run.failures.iter().map(|f| FailureRow { trial: f.trial_index, error: &f.error });
    out.write("failures.csv", failures_csv(failures.collect()))?;
    let json = serde_json::to_string_pretty(&agg).expect("aggregate serializes") + "\n";
    out.write("aggregate.json", json)?;
    println!(
        "{} trials ({} failed): factor coverage {:.4} ± {:.4}, entry coverage {:.4} ± {:.4}",
        cfg.trials,
        run.failures.len(),
        agg.coverage_factor.mean,
        agg.coverage_factor.std,
        agg.coverage_entry.mean,
        agg.coverage_entry.std
    );
    out.finish("experiment", &cfg, cfg.seed, start)
}

fn failures_csv(rows: Vec<FailureRow<'_>>) -> Vec<u8> {
    if rows.is_empty() {
        return b"trial,error\n".to_vec();
    }
    io::to_csv(rows)
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Complete(a) => cmd_complete(a),
        Command::Uq(a) => cmd_uq(a),
        Command::Experiment(a) => cmd_experiment(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
