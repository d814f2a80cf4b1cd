//! `starris`: run, sweep, oracle replay and scenario validation.
//!
//! Exit codes: 0 ok, 1 other failure (I/O, failed oracle check),
//! 2 invalid input, 3 infeasible, 4 numerical failure.

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use starris::bcd::{run_scheme, BcdConfig, Scheme, Termination};
use starris::conic::{Backend, SOLVER_ENV};
use starris::experiment::{run_sweep, write_run, write_sweep};
use starris::oracle::{check_fixture, OracleFixture};
use starris::scenario::{load_scenario, load_sweep};
use starris::Error;
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_OTHER: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser)]
#[command(name = "starris", version, about = "STAR-RIS QoS beamforming simulator")]
#[command(after_help = "The SDP backend is chosen by the STARRIS_SOLVER environment variable (native | clarabel).")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize one scheme and write result.json and trace.jsonl.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// proposed, fixed_55, fixed_37 or refl_trans_only.
        #[arg(long)]
        scheme: Scheme,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a parameter sweep and write sweep.csv and sweep_<axis>.svg.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        sweep: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay an oracle fixture against a fresh grid search and the optimizer.
    Oracle {
        #[arg(long)]
        fixture: PathBuf,
    },
    /// Parse and validate a scenario file.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Validation(_) | Error::Parse { .. } | Error::Domain(_) | Error::Dimension { .. } | Error::Coupling { .. }) => {
            EXIT_VALIDATION
        }
        Some(Error::Infeasible(_)) => EXIT_INFEASIBLE,
        Some(Error::Numerical(_) | Error::Program(_)) => EXIT_NUMERICAL,
        _ => EXIT_OTHER,
    }
}

fn execute(command: Command) -> Result<u8> {
    Backend::from_env().with_context(|| format!("reading {SOLVER_ENV}"))?;
    match command {
        Command::Run { scenario, scheme, out, seed } => {
            let mut spec = load_scenario(&scenario)?;
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            let config = BcdConfig::from_scenario(&spec);
            let result = run_scheme(&spec, &config, scheme)?;
            write_run(&out, &result).with_context(|| format!("writing results to {}", out.display()))?;
            println!(
                "{}: {} after {} iterations, sum rate {:.6} bits/s/Hz",
                scheme,
                result.termination,
                result.iterations(),
                result.report.sum_rate
            );
            Ok(if result.termination == Termination::Infeasible { EXIT_INFEASIBLE } else { 0 })
        }
        Command::Sweep { scenario, sweep, out } => {
            let spec = load_scenario(&scenario)?;
            let sweep = load_sweep(&sweep)?;
            let outcome = run_sweep(&spec, &sweep)?;
            let (csv, svg) = write_sweep(&out, &outcome)?;
            let failed = outcome.rows.iter().filter(|r| r.sum_rate.is_none()).count();
            println!(
                "{} rows ({} without a feasible point) -> {}, {}",
                outcome.rows.len(),
                failed,
                csv.display(),
                svg.display()
            );
            Ok(0)
        }
        Command::Oracle { fixture } => {
            let fixture = OracleFixture::load(&fixture)?;
            let check = check_fixture(&fixture)?;
            println!("{}", serde_json::to_string_pretty(&check)?);
            Ok(if check.passed() { 0 } else { EXIT_OTHER })
        }
        Command::Validate { scenario } => {
            let spec = load_scenario(&scenario)?;
            println!(
                "ok: {} antennas, {} surfaces ({:?} elements), {} users",
                spec.bs.antenna_count,
                spec.surface_count(),
                spec.element_counts(),
                spec.user_count()
            );
            Ok(0)
        }
    }
}
