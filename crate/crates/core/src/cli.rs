//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 invalid data or I/O failure,
//! 3 solver stalled, 4 validation threshold exceeded.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::dataio::{self, DataError};
use crate::estimation::{self, check_variant, fit, fit_naive, fit_two_stage, param_count, EstimationError, FitReport};
use crate::model::{mean_percentage_error, predict, ModelError, MpeSummary, Parameterization, TransientDataset};
use crate::solver::{SolverOptions, Termination};
use crate::synth::{self, ProfileSpec, SynthError, TruthSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_STALLED: i32 = 3;
pub const EXIT_VALIDATION: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "lplsp",
    version,
    about = "Identify and run lumped-parameter thermal reduced-order models"
)]
pub struct Cli {
    /// Seed for every pseudo-random draw.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Primary output file of the subcommand.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset and its ground-truth model.
    Synth(SynthArgs),
    /// Fit a coupling model to a dataset.
    Fit(FitArgs),
    /// Predict temperatures for new power inputs.
    Predict(PredictArgs),
    /// Compare a model against a dataset.
    Validate(ValidateArgs),
    /// Suggest a rank from a model's singular values.
    Rank(RankArgs),
    /// Time fits across system sizes and methods.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    /// Full parameterization with the loop-based forward model.
    Naive,
    Symmetric,
    Lowrank,
    TwoStage,
}

impl Method {
    fn parameterization(self, rank: usize) -> Parameterization {
        match self {
            Method::Naive => Parameterization::Full,
            Method::Symmetric => Parameterization::Symmetric,
            Method::Lowrank => Parameterization::LowRank { rank },
            Method::TwoStage => Parameterization::TwoStage,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Method::Naive => "naive",
            Method::Symmetric => "symmetric",
            Method::Lowrank => "lowrank",
            Method::TwoStage => "two-stage",
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub sources: usize,
    #[arg(long)]
    pub monitors: usize,
    /// Seconds.
    #[arg(long, default_value_t = 600.0)]
    pub duration: f64,
    /// Sample interval in seconds.
    #[arg(long, default_value_t = 2.0)]
    pub dt: f64,
    /// Piecewise-constant segments per source.
    #[arg(long, default_value_t = 15)]
    pub segments: usize,
    /// Largest power level in watts.
    #[arg(long, default_value_t = 5.0)]
    pub max_power: f64,
    /// Relative standard deviation of noise on the temperature rise.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Where to write the ground-truth model.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Make the co-located source block symmetric.
    #[arg(long)]
    pub symmetric: bool,
    /// Make the truth exactly this rank.
    #[arg(long)]
    pub rank: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    /// Cost, step and gradient tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
}

impl SolverArgs {
    fn options(&self) -> Result<SolverOptions, CliError> {
        let mut opts = SolverOptions::default();
        if let Some(tol) = self.tol {
            if !(tol > 0.0 && tol.is_finite()) {
                return Err(CliError::Usage(format!("--tol must be positive, got {tol}")));
            }
            opts.cost_tolerance = tol;
            opts.step_tolerance = tol;
            opts.gradient_tolerance = tol;
        }
        if let Some(n) = self.max_iter {
            opts.max_iterations = n;
        }
        Ok(opts)
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub method: Method,
    /// Rank for `--method lowrank`.
    #[arg(long, default_value_t = estimation::DEFAULT_RANK)]
    pub rank: usize,
    /// Where to write the fit report (JSON).
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// CSV with `time, P1..PN`.
    #[arg(long)]
    pub inputs: PathBuf,
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub plot: Option<PathBuf>,
    /// Largest acceptable per-monitor MPE, percent.
    #[arg(long, default_value_t = 5.0)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Fraction of singular-value mass to capture, in (0, 1].
    #[arg(long, default_value_t = estimation::DEFAULT_TAU)]
    pub tau: f64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Comma-separated sizes: `N` (square) or `N+S` (N sources, S sinks).
    #[arg(long, value_delimiter = ',', default_value = "2,3,6")]
    pub sizes: Vec<BenchSize>,
    #[arg(
        long,
        value_enum,
        value_delimiter = ',',
        default_value = "naive,symmetric,lowrank,two-stage"
    )]
    pub methods: Vec<Method>,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    /// Rank for lowrank fits and of the synthetic truth.
    #[arg(long, default_value_t = 3)]
    pub rank: usize,
    /// Relative noise on the synthetic rise.
    #[arg(long, default_value_t = 0.01)]
    pub noise: f64,
    #[command(flatten)]
    pub solver: SolverArgs,
}

/// `N` sources and `N + sinks` monitors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchSize {
    pub sources: usize,
    pub sinks: usize,
}

impl std::str::FromStr for BenchSize {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parse = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("invalid size {s:?}"));
        let (sources, sinks) = match s.split_once('+') {
            Some((n, k)) => (parse(n)?, parse(k)?),
            None => (parse(s)?, 0),
        };
        if sources == 0 {
            return Err(format!("size {s:?} needs at least one source"));
        }
        Ok(Self { sources, sinks })
    }
}

impl std::fmt::Display for BenchSize {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.sinks == 0 {
            write!(f, "{}", self.sources)
        } else {
            write!(f, "{}+{}", self.sources, self.sinks)
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Stalled(String),
    #[error("validation failed: {0}")]
    Validation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Stalled(_) => EXIT_STALLED,
            CliError::Validation(_) => EXIT_VALIDATION,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Spec(reason) => CliError::Usage(reason),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<EstimationError> for CliError {
    fn from(e: EstimationError) -> Self {
        match innermost(&e) {
            EstimationError::Stalled { .. } => CliError::Stalled(e.to_string()),
            EstimationError::Shape { .. } | EstimationError::Solver(crate::solver::SolverError::Options(_)) => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

fn innermost(e: &EstimationError) -> &EstimationError {
    match e {
        EstimationError::Stage { source, .. } => innermost(source),
        other => other,
    }
}

type CliResult<T> = Result<T, CliError>;

/// Parses `std::env::args` and runs; returns the process exit code.
pub fn run() -> i32 {
    run_from(std::env::args_os())
}

pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .try_init();
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Synth(args) => cmd_synth(args, cli.seed, required_out(cli)?),
        Command::Fit(args) => cmd_fit(args, cli.out.as_deref()),
        Command::Predict(args) => cmd_predict(args, required_out(cli)?),
        Command::Validate(args) => cmd_validate(args, cli.out.as_deref()),
        Command::Rank(args) => cmd_rank(args, cli.out.as_deref()),
        Command::Bench(args) => cmd_bench(args, cli.seed, cli.out.as_deref()),
    }
}

fn required_out(cli: &Cli) -> CliResult<&Path> {
    cli.out
        .as_deref()
        .ok_or_else(|| CliError::Usage("this subcommand requires --out".into()))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn profile(duration: f64, dt: f64, segments: usize, max_power: f64, seed: u64) -> ProfileSpec {
    ProfileSpec {
        duration,
        sample_interval: dt,
        segment_count: segments,
        amplitude_range: [0.0, max_power],
        seed,
    }
}

fn cmd_synth(args: &SynthArgs, seed: u64, out: &Path) -> CliResult<()> {
    let truth = synth::generate_truth(&TruthSpec {
        symmetric: args.symmetric,
        target_rank: args.rank,
        ..TruthSpec::new(args.monitors, args.sources, seed)
    })?;
    let spec = profile(args.duration, args.dt, args.segments, args.max_power, seed);
    let (grid, powers) = synth::generate_excitation(&spec, args.sources)?;
    let dataset = synth::synthesize_dataset(&truth, &powers, &grid, args.noise, seed)?;
    dataio::write_dataset(&dataset, out)?;
    if let Some(path) = &args.truth {
        dataio::save_model(&truth, path)?;
    }
    println!(
        "wrote {}: N={} sources, M={} monitors, {} samples, colocated={}",
        out.display(),
        dataset.source_count(),
        dataset.monitor_count(),
        dataset.len(),
        dataset.colocated_count()
    );
    Ok(())
}

/// JSON written by `fit --report`.
#[derive(Debug, Serialize)]
pub struct FitReportFile {
    pub method: String,
    pub parameterization: Parameterization,
    pub status: &'static str,
    pub param_count: usize,
    pub per_monitor_mpe: Vec<f64>,
    pub mpe_undefined_samples: Vec<usize>,
    pub residual_norm: Option<f64>,
    pub final_cost: Vec<f64>,
    pub iterations: usize,
    pub termination: Vec<Termination>,
    pub floored_entries: usize,
    pub elapsed_s: f64,
}

fn run_fit(
    dataset: &TransientDataset,
    method: Method,
    rank: usize,
    opts: &SolverOptions,
) -> Result<FitReport, EstimationError> {
    match method {
        Method::Naive => fit_naive(dataset, opts),
        Method::TwoStage => fit_two_stage(dataset, opts),
        other => fit(dataset, other.parameterization(rank), opts),
    }
}

fn check_method(dataset: &TransientDataset, method: Method, rank: usize) -> CliResult<Parameterization> {
    let variant = method.parameterization(rank);
    check_variant(
        variant,
        dataset.monitor_count(),
        dataset.source_count(),
        dataset.colocated_count(),
    )
    .map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(variant)
}

fn cmd_fit(args: &FitArgs, out: Option<&Path>) -> CliResult<()> {
    let opts = args.solver.options()?;
    let dataset = dataio::read_dataset(&args.data)?;
    let variant = check_method(&dataset, args.method, args.rank)?;
    let param_count = param_count(variant, dataset.monitor_count(), dataset.source_count())?;
    let started = Instant::now();
    match run_fit(&dataset, args.method, args.rank, &opts) {
        Ok(report) => {
            if let Some(path) = out {
                dataio::save_model(&report.model, path)?;
            }
            let file = FitReportFile {
                method: args.method.name().into(),
                parameterization: variant,
                status: "converged",
                param_count: report.param_count,
                per_monitor_mpe: report.per_monitor_mpe.per_monitor.clone(),
                mpe_undefined_samples: report.per_monitor_mpe.undefined_samples.clone(),
                residual_norm: Some(report.residual_norm),
                final_cost: report.solver.iter().map(|s| s.final_cost).collect(),
                iterations: report.iterations(),
                termination: report.solver.iter().map(|s| s.termination).collect(),
                floored_entries: report.floored_entries,
                elapsed_s: report.elapsed_s,
            };
            if file.termination.contains(&Termination::MaxIter) {
                log::warn!("iteration limit reached before convergence");
            }
            if let Some(path) = &args.report {
                write_json(&file, path)?;
            }
            println!(
                "{}: {} parameters, {} iterations, residual norm {:.6e}, max training MPE {:.4}%",
                args.method.name(),
                file.param_count,
                file.iterations,
                report.residual_norm,
                report.per_monitor_mpe.max()
            );
            Ok(())
        }
        Err(e) => {
            if let (EstimationError::Stalled { result }, Some(path)) = (innermost(&e), &args.report) {
                let file = FitReportFile {
                    method: args.method.name().into(),
                    parameterization: variant,
                    status: "stalled",
                    param_count,
                    per_monitor_mpe: Vec::new(),
                    mpe_undefined_samples: Vec::new(),
                    residual_norm: Some(result.final_cost.sqrt()),
                    final_cost: vec![result.final_cost],
                    iterations: result.iterations,
                    termination: vec![result.termination],
                    floored_entries: 0,
                    elapsed_s: started.elapsed().as_secs_f64(),
                };
                write_json(&file, path)?;
            }
            Err(e.into())
        }
    }
}

fn cmd_predict(args: &PredictArgs, out: &Path) -> CliResult<()> {
    let model = dataio::load_model(&args.model)?;
    let (grid, powers) = dataio::read_power_inputs(&args.inputs)?;
    if powers.source_count() != model.source_count() {
        return Err(CliError::Data(format!(
            "model expects {} power columns, inputs have {}",
            model.source_count(),
            powers.source_count()
        )));
    }
    let temps = predict(&model, &powers, &grid)?;
    dataio::write_traces(&grid, &powers, &temps, model.t0(), out)?;
    if let Some(path) = &args.plot {
        dataio::write_validation_plot(&grid, &temps, &temps, path)?;
    }
    println!(
        "wrote {}: {} monitors, {} samples",
        out.display(),
        temps.monitor_count(),
        temps.len()
    );
    Ok(())
}

/// JSON written by `validate --report`.
#[derive(Debug, Serialize)]
pub struct ValidationReportFile {
    pub threshold_percent: f64,
    pub pass: bool,
    pub per_monitor_mpe: Vec<f64>,
    pub mpe_undefined_samples: Vec<usize>,
    pub per_monitor_max_abs_error: Vec<f64>,
    pub max_mpe: f64,
}

fn cmd_validate(args: &ValidateArgs, out: Option<&Path>) -> CliResult<()> {
    if !(args.threshold >= 0.0 && args.threshold.is_finite()) {
        return Err(CliError::Usage(format!(
            "--threshold must be non-negative, got {}",
            args.threshold
        )));
    }
    let model = dataio::load_model(&args.model)?;
    let dataset = dataio::read_dataset(&args.data)?;
    if model.source_count() != dataset.source_count() || model.monitor_count() != dataset.monitor_count() {
        return Err(CliError::Data(format!(
            "model is {}x{} (M x N) but dataset is {}x{}",
            model.monitor_count(),
            model.source_count(),
            dataset.monitor_count(),
            dataset.source_count()
        )));
    }
    let pred = predict(&model, dataset.powers(), dataset.grid())?;
    let MpeSummary {
        per_monitor,
        undefined_samples,
    } = mean_percentage_error(&pred, dataset.temperatures())?;
    let max_abs: Vec<f64> = pred
        .rows()
        .iter()
        .zip(dataset.temperatures().rows())
        .map(|(p, m)| p.iter().zip(m).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
        .collect();
    let max_mpe = per_monitor.iter().copied().fold(0.0, f64::max);
    let report = ValidationReportFile {
        threshold_percent: args.threshold,
        pass: max_mpe <= args.threshold,
        per_monitor_mpe: per_monitor,
        mpe_undefined_samples: undefined_samples,
        per_monitor_max_abs_error: max_abs,
        max_mpe,
    };
    for path in [args.report.as_deref(), out].into_iter().flatten() {
        write_json(&report, path)?;
    }
    if let Some(path) = &args.plot {
        dataio::write_validation_plot(dataset.grid(), dataset.temperatures(), &pred, path)?;
    }
    for (i, mpe) in report.per_monitor_mpe.iter().enumerate() {
        println!(
            "T{}: MPE {mpe:.4}%, max |error| {:.4} °C",
            i + 1,
            report.per_monitor_max_abs_error[i]
        );
    }
    if report.pass {
        println!("PASS: max MPE {max_mpe:.4}% <= {}%", args.threshold);
        Ok(())
    } else {
        Err(CliError::Validation(format!(
            "max MPE {max_mpe:.4}% > {}%",
            args.threshold
        )))
    }
}

/// JSON written by `rank --out`.
#[derive(Debug, Serialize)]
pub struct RankReportFile {
    pub tau: f64,
    pub rank_r: usize,
    pub rank_k: usize,
    pub spectrum_r: Vec<f64>,
    pub spectrum_k: Vec<f64>,
}

fn normalized(sigma: &[f64]) -> Vec<f64> {
    let total: f64 = sigma.iter().sum();
    sigma
        .iter()
        .map(|s| if total > 0.0 { s / total } else { 0.0 })
        .collect()
}

fn cmd_rank(args: &RankArgs, out: Option<&Path>) -> CliResult<()> {
    if !(args.tau > 0.0 && args.tau <= 1.0) {
        return Err(CliError::Usage(format!("--tau must lie in (0, 1], got {}", args.tau)));
    }
    let model = dataio::load_model(&args.model)?;
    let (rank_r, rank_k) = estimation::suggest_rank(&model, args.tau)?;
    let report = RankReportFile {
        tau: args.tau,
        rank_r,
        rank_k,
        spectrum_r: normalized(&estimation::singular_values(model.r())?),
        spectrum_k: normalized(&estimation::singular_values(model.k())?),
    };
    let fmt = |s: &[f64]| s.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(" ");
    println!("R: rank {rank_r} (tau {})", args.tau);
    println!("R spectrum: {}", fmt(&report.spectrum_r));
    println!("K: rank {rank_k} (tau {})", args.tau);
    println!("K spectrum: {}", fmt(&report.spectrum_k));
    if let Some(path) = out {
        write_json(&report, path)?;
    }
    Ok(())
}

/// One row of the benchmark table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub size: String,
    pub method: String,
    pub params: usize,
    pub median_s: f64,
    pub mpe_train: f64,
}

/// Synthetic dataset for one benchmark size: symmetric source block, truth of
/// rank `min(rank, N)`, 600 s at 2 s sampling with 15 power levels per source.
pub fn bench_dataset(size: BenchSize, rank: usize, noise: f64, seed: u64) -> CliResult<TransientDataset> {
    let (n, m) = (size.sources, size.sources + size.sinks);
    let truth = synth::generate_truth(&TruthSpec {
        symmetric: true,
        target_rank: Some(rank.clamp(1, n)),
        ..TruthSpec::new(m, n, seed)
    })?;
    let (grid, powers) = synth::generate_excitation(&profile(600.0, 2.0, 15, 5.0, seed), n)?;
    Ok(synth::synthesize_dataset(&truth, &powers, &grid, noise, seed)?)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Runs every feasible (size, method) pair; infeasible pairs are skipped.
pub fn run_bench(args: &BenchArgs, seed: u64) -> CliResult<Vec<BenchRow>> {
    if args.repeats == 0 {
        return Err(CliError::Usage("--repeats must be at least 1".into()));
    }
    if args.rank == 0 {
        return Err(CliError::Usage("--rank must be at least 1".into()));
    }
    let opts = args.solver.options()?;
    let mut rows = Vec::new();
    for &size in &args.sizes {
        let dataset = bench_dataset(size, args.rank, args.noise, seed)?;
        for &method in &args.methods {
            let rank = args.rank.min(size.sources);
            let variant = method.parameterization(rank);
            let (m, n) = (dataset.monitor_count(), dataset.source_count());
            if let Err(e) = check_variant(variant, m, n, dataset.colocated_count()) {
                log::info!("skipping {} at size {size}: {e}", method.name());
                continue;
            }
            let mut times = Vec::with_capacity(args.repeats);
            let mut mpe = 0.0;
            for _ in 0..args.repeats {
                let started = Instant::now();
                let report = run_fit(&dataset, method, rank, &opts)?;
                times.push(started.elapsed().as_secs_f64());
                mpe = report.per_monitor_mpe.max();
            }
            let row = BenchRow {
                size: size.to_string(),
                method: method.name().into(),
                params: param_count(variant, m, n)?,
                median_s: median(times),
                mpe_train: mpe,
            };
            log::info!("{row:?}");
            rows.push(row);
        }
    }
    Ok(rows)
}

fn cmd_bench(args: &BenchArgs, seed: u64, out: Option<&Path>) -> CliResult<()> {
    let rows = run_bench(args, seed)?;
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in &rows {
        writer.serialize(row).map_err(|e| CliError::Data(e.to_string()))?;
    }
    let bytes = writer.into_inner().expect("flushing into a Vec cannot fail");
    let text = String::from_utf8(bytes).expect("csv output is UTF-8");
    match out {
        Some(path) => std::fs::write(path, &text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?,
        None => print!("{text}"),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bench_size_parsing() {
        assert_eq!("6".parse::<BenchSize>().unwrap(), BenchSize { sources: 6, sinks: 0 });
        assert_eq!("6+2".parse::<BenchSize>().unwrap(), BenchSize { sources: 6, sinks: 2 });
        assert_eq!(BenchSize { sources: 6, sinks: 2 }.to_string(), "6+2");
        assert!("0".parse::<BenchSize>().is_err());
        assert!("x+1".parse::<BenchSize>().is_err());
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run_from(["lplsp", "fit"]), EXIT_USAGE);
        assert_eq!(run_from(["lplsp", "nonsense"]), EXIT_USAGE);
        assert_eq!(run_from(["lplsp", "--help"]), EXIT_OK);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
