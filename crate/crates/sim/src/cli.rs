use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hfl_core::gradcheck::gradcheck;
use hfl_core::{ScenarioConfig, Sequential};

use crate::checkpoint::Checkpoint;
use crate::error::{Result, SimError};
use crate::exec::Parallel;
use crate::output::metrics_csv;
use crate::run::{evaluate_checkpoint, export_telemetry, run_to_dir};
use crate::scenario::load_scenario;

/// Output directory used when `--out` is not given.
pub const OUT_DIR_ENV: &str = "HFL_OUT_DIR";

/// Largest gradient relative error `gradcheck` accepts.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "hfl", version, about = "Hierarchical federated anomaly detection simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario end to end and write its artifacts.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Override the scenario's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the number of communication rounds.
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long, env = OUT_DIR_ENV)]
        out: PathBuf,
        /// Train clients on the calling thread only.
        #[arg(long)]
        sequential: bool,
    },
    /// Score a checkpoint on a scenario's held-out split; prints metrics CSV.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Compare analytic and finite-difference gradients.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write each vehicle's raw telemetry as CSV.
    Export {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, env = OUT_DIR_ENV)]
        out: PathBuf,
    },
}

/// Parses `args` (including the program name), runs the command and maps
/// the result to 0 (ok), 1 (invalid input) or 2 (runtime failure).
pub fn cli_main<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn scenario_with(path: &Path, seed: Option<u64>, rounds: Option<usize>) -> Result<ScenarioConfig> {
    let mut config = load_scenario(path)?;
    if let Some(seed) = seed {
        config.master_seed = seed;
    }
    if let Some(rounds) = rounds {
        config.training.rounds = rounds;
    }
    config.validate().map_err(|source| SimError::Scenario {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(config)
}

fn dispatch(command: Command) -> Result<u8> {
    match command {
        Command::Run {
            scenario,
            seed,
            rounds,
            out,
            sequential,
        } => {
            let config = scenario_with(&scenario, seed, rounds)?;
            let outcome = if sequential {
                run_to_dir(config, &out, &Sequential)?
            } else {
                run_to_dir(config, &out, &Parallel)?
            };
            let m = outcome.final_global();
            println!(
                "rounds={} f1={:.4} baseline_f1={:.4} reports={} out={}",
                outcome.history.len(),
                m.f1,
                m.confusion.random_baseline_f1(),
                outcome.reports.len(),
                out.display()
            );
            Ok(0)
        }
        Command::Evaluate { checkpoint, scenario } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let config = load_scenario(&scenario)?;
            let rows = evaluate_checkpoint(&ck, config, &checkpoint)?;
            print!("{}", metrics_csv(&rows));
            Ok(0)
        }
        Command::Gradcheck { seed } => {
            let report = gradcheck(seed)?;
            let err = report.max_relative_error();
            let ok = report.passes(GRADCHECK_TOLERANCE);
            println!(
                "max relative error {err:.3e} over {} groups (tolerance {GRADCHECK_TOLERANCE:e}): {}",
                report.groups.len(),
                if ok { "ok" } else { "FAIL" }
            );
            Ok(if ok { 0 } else { 2 })
        }
        Command::Export { scenario, out } => {
            let config = load_scenario(&scenario)?;
            let n = export_telemetry(config, &out)?;
            println!("wrote {n} telemetry files to {}", out.join("telemetry").display());
            Ok(0)
        }
    }
}
