use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use taskalloc_core::harness::{
    compare_series, emit_histogram, output_root, read_series_csv, run_experiment, write_atomic,
    ConvergenceOptions, ExperimentConfig, OUTPUT_ROOT_ENV,
};
use taskalloc_core::Error;

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_THRESHOLD: u8 = 3;

#[derive(Parser)]
#[command(
    name = "taskalloc",
    version,
    about = "Red/Green task allocation experiments"
)]
struct Cli {
    /// Root directory for experiment outputs.
    #[arg(long, global = true, env = OUTPUT_ROOT_ENV)]
    output_root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a stochastic experiment (microsim or meanfield_stochastic).
    Simulate { config: PathBuf },
    /// Evaluate a deterministic model (analytic, meanfield_ode, master_equation).
    Model { config: PathBuf },
    /// Compare two series CSVs on the first file's time grid.
    Compare {
        csv_a: PathBuf,
        csv_b: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        band: f64,
        #[arg(long, default_value_t = 50.0)]
        dwell: f64,
        /// Config whose schedule defines the convergence segments.
        #[arg(long)]
        schedule: Option<PathBuf>,
        /// Exit with status 3 if the max absolute gap exceeds this.
        #[arg(long)]
        max_gap: Option<f64>,
        /// Exit with status 3 if the RMSE exceeds this.
        #[arg(long)]
        max_rmse: Option<f64>,
    },
    /// Pool post-convergence samples of a microsim experiment into a histogram.
    Histogram {
        config: PathBuf,
        #[arg(long)]
        t_start: f64,
        /// Exit with status 3 if the binomial chi-square test rejects.
        #[arg(long)]
        require_fit: bool,
    },
    /// Parse and validate a config, printing the resolved form.
    Validate { config: PathBuf },
}

enum Failure {
    Core(Error),
    Threshold(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Threshold(msg)) => {
            eprintln!("threshold breached: {msg}");
            ExitCode::from(EXIT_THRESHOLD)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() {
                EXIT_VALIDATION
            } else {
                EXIT_RUNTIME
            })
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let root = cli.output_root.as_deref();
    match cli.command {
        Command::Simulate { config } => experiment(&config, root, true),
        Command::Model { config } => experiment(&config, root, false),
        Command::Compare {
            csv_a,
            csv_b,
            band,
            dwell,
            schedule,
            max_gap,
            max_rmse,
        } => {
            if !(band > 0.0 && dwell >= 0.0) {
                return Err(Error::Config("--band must be > 0 and --dwell >= 0".into()).into());
            }
            let a = read_series_csv(&csv_a)?;
            let b = read_series_csv(&csv_b)?;
            let sched = schedule
                .map(|p| ExperimentConfig::load(&p).map(|c| c.schedule))
                .transpose()?;
            let report =
                compare_series(&a, &b, sched.as_ref(), ConvergenceOptions { band, dwell })?;
            println!(
                "{}",
                serde_json::to_string_pretty(&report).expect("report serializes")
            );
            if let Some(limit) = max_gap.filter(|&l| report.max_abs_gap > l) {
                return Err(Failure::Threshold(format!(
                    "max gap {} > {limit} at t={}",
                    report.max_abs_gap, report.max_gap_time
                )));
            }
            if let Some(limit) = max_rmse.filter(|&l| report.rmse > l) {
                return Err(Failure::Threshold(format!(
                    "rmse {} > {limit}",
                    report.rmse
                )));
            }
            Ok(())
        }
        Command::Histogram {
            config,
            t_start,
            require_fit,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let report = emit_histogram(&cfg, t_start)?;
            let path = output_root(&cfg, root)
                .join(&cfg.name)
                .join("histogram.csv");
            write_atomic(&path, report.table().to_csv().as_bytes())?;
            println!(
                "{}",
                serde_json::to_string_pretty(&json!({
                    "histogram_csv": path,
                    "samples": report.histogram.total(),
                    "mean_fraction": report.mean_fraction,
                    "chi_square": report.chi_square,
                }))
                .expect("summary serializes")
            );
            if require_fit && !report.chi_square.passes() {
                return Err(Failure::Threshold(format!(
                    "chi-square {} >= {}",
                    report.chi_square.statistic, report.chi_square.critical_95
                )));
            }
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            print!("{}", cfg.resolved().to_toml_string()?);
            Ok(())
        }
    }
}

fn experiment(config: &Path, root: Option<&Path>, stochastic: bool) -> Result<(), Failure> {
    let cfg = ExperimentConfig::load(config)?;
    if cfg.engine.is_stochastic() != stochastic {
        let other = if stochastic { "model" } else { "simulate" };
        return Err(Error::Config(format!(
            "engine: {} is run with `taskalloc {other}`",
            cfg.engine.name()
        ))
        .into());
    }
    let art = run_experiment(&cfg, &output_root(&cfg, root))?;
    let mean = &art.output.mean;
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "name": cfg.name,
            "dir": art.dir,
            "series_csv": art.series_csv,
            "runs_csv": art.runs_csv,
            "histogram_csv": art.histogram_csv,
            "manifest": art.manifest,
            "final_mean": mean.last_value(),
        }))
        .expect("summary serializes")
    );
    Ok(())
}
