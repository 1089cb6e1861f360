use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hetgof::estimation;
use hetgof::harness::{self, ExperimentConfig, McSettings};
use hetgof::limitproc;
use hetgof::models::{self, Bounds, InnovationLaw, ModelKind, ModelParams};
use hetgof::{rng, Error, NullFamily, Result};
use serde::Serialize;

/// Goodness-of-fit tests for the innovation law of GARCH-type models.
#[derive(Debug, Parser)]
#[command(name = "hetgof", version)]
struct Cli {
    /// More log output (repeat for more); RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the limiting distribution and write a critical-value table.
    Critvals(CritvalsArgs),
    /// Simulate a series from a model.
    Simulate(SimulateArgs),
    /// Quasi-MLE plus one-step update for a series.
    Fit(FitArgs),
    /// Fit a series and test its innovation law.
    Test(TestArgs),
    /// Run a size/power experiment described by a JSON config.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Debug, Args)]
struct CritvalsArgs {
    /// Null family: normal or dexp.
    #[arg(long, default_value = "normal")]
    family: String,
    #[arg(long, default_value_t = limitproc::MAX_TABLE_R)]
    r_max: usize,
    #[arg(long, default_value_t = limitproc::DEFAULT_REPS)]
    reps: usize,
    #[arg(long, default_value_t = limitproc::DEFAULT_GRID_POINTS)]
    grid: usize,
    #[arg(long, default_value_t = limitproc::DEFAULT_SEED)]
    seed: u64,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, default_value = "garch")]
    model: String,
    /// Comma-separated parameters in storage order, e.g. 0.025,0.25,0.5.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    params: Vec<f64>,
    #[arg(long)]
    n: usize,
    /// normal, dexp or a1..a5.
    #[arg(long, default_value = "normal")]
    law: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = models::DEFAULT_BURN_IN)]
    burn_in: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SeriesArgs {
    /// Single-column CSV, header optional.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "garch")]
    model: String,
    #[arg(long, default_value = "normal")]
    null: String,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    series: SeriesArgs,
}

#[derive(Debug, Args)]
struct TestArgs {
    #[command(flatten)]
    series: SeriesArgs,
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.05,0.10")]
    levels: Vec<f64>,
    /// Draws of the limiting distribution behind p-value and critical values.
    #[arg(long, default_value_t = limitproc::DEFAULT_REPS)]
    mc_reps: usize,
    #[arg(long, default_value_t = limitproc::DEFAULT_GRID_POINTS)]
    grid: usize,
    #[arg(long, default_value_t = limitproc::DEFAULT_SEED)]
    mc_seed: u64,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Rejection-rate CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write every replication's statistic as JSON.
    #[arg(long)]
    statistics: Option<PathBuf>,
}

fn io_error(path: &Path, e: io::Error) -> Error {
    Error::Input(format!("{}: {e}", path.display()))
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| io_error(p, e))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn read_input(path: &Path) -> Result<Vec<f64>> {
    let file = File::open(path).map_err(|e| io_error(path, e))?;
    harness::read_series(BufReader::new(file))
}

/// Writes to stdout; a closed pipe (as in `| head`) is not an error.
fn emit(text: &str) -> Result<()> {
    let mut out = io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(Error::Input(format!("writing output: {e}"))),
        _ => Ok(()),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Numeric(format!("serializing output: {e}")))?;
    emit(&(text + "\n"))
}

fn critvals(args: CritvalsArgs) -> Result<()> {
    let null = NullFamily::from_key(&args.family)?;
    let out = open_output(args.out.as_deref())?;
    harness::tabulate(&null, args.r_max, args.reps, args.grid, args.seed, out)?;
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let kind: ModelKind = args.model.parse()?;
    let params = ModelParams::from_vec(kind, args.params)?;
    let law: InnovationLaw = args.law.parse()?;
    let path = models::simulate(&params, &law, args.n, args.burn_in, &mut rng::seeded(args.seed))?;
    harness::write_series(&path.y, open_output(args.out.as_deref())?)
}

#[derive(Serialize)]
struct FitOutput<'a> {
    model: String,
    null: &'a str,
    n: usize,
    parameters: Vec<String>,
    #[serde(flatten)]
    fit: &'a estimation::FitResult,
}

fn fit(args: FitArgs) -> Result<()> {
    let s = &args.series;
    let kind: ModelKind = s.model.parse()?;
    let null = NullFamily::from_key(&s.null)?;
    let y = read_input(&s.input)?;
    let fit = estimation::fit(&y, kind, &null, &Bounds::default())?;
    match s.format {
        Format::Json => print_json(&FitOutput {
            model: kind.to_string(),
            null: null.key(),
            n: y.len(),
            parameters: kind.parameter_names(),
            fit: &fit,
        }),
        Format::Text => {
            use std::fmt::Write as _;
            let mut t = String::new();
            let _ = writeln!(t, "model {kind}  null {}  n = {}\n", null.key(), y.len());
            let _ = writeln!(t, "{:<10} {:>12} {:>12} {:>12}", "parameter", "qmle", "one-step", "std.err");
            for (k, name) in kind.parameter_names().iter().enumerate() {
                let _ = writeln!(
                    t,
                    "{name:<10} {:>12.6} {:>12.6} {:>12.6}",
                    fit.theta_tilde.as_slice()[k],
                    fit.theta_hat.as_slice()[k],
                    fit.std_errors[k]
                );
            }
            let _ = writeln!(t, "\nlog-likelihood {:.4}", fit.loglik);
            let _ = writeln!(t, "converged {} after {} iterations", fit.converged, fit.iterations);
            for w in &fit.warnings {
                let _ = writeln!(t, "warning: {w}");
            }
            emit(&t)
        }
    }
}

fn test(args: TestArgs) -> Result<()> {
    let s = &args.series;
    let kind: ModelKind = s.model.parse()?;
    let null = NullFamily::from_key(&s.null)?;
    let y = read_input(&s.input)?;
    let mc = McSettings { grid_points: args.grid, reps: args.mc_reps, seed: args.mc_seed };
    let report = harness::analyze_with(&y, kind, &null, &args.levels, mc)?;
    match s.format {
        Format::Json => print_json(&report),
        Format::Text => emit(&report.to_string()),
    }
}

fn experiment(args: ExperimentArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| io_error(&args.config, e))?;
    let config = ExperimentConfig::from_json(&text)?;
    let result = harness::run_size_power(&config)?;
    if result.failures > 0 {
        log::warn!("{} of {} replications failed to fit and were excluded", result.failures, result.reps);
    }
    result.write_csv(open_output(args.out.as_deref())?)?;
    if let Some(path) = &args.statistics {
        let text = serde_json::to_string(&result.statistics).map_err(|e| Error::Numeric(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| io_error(path, e))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let outcome = match cli.command {
        Command::Critvals(a) => critvals(a),
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Test(a) => test(a),
        Command::Experiment(a) => experiment(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
