use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dbsim::config::{load_config, ConfigError, ScenarioConfig};
use dbsim::report::{format_comparison, SgdCheckSummary};
use dbsim::runner::{self, RunError};
use dbsim::scenarios::{builtin, BUILTINS};

/// Dynamic batch size simulator: scenario runs, SGD checks and the builtin catalog.
#[derive(Parser)]
#[command(name = "dbsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate every strategy of a scenario and write CSV and JSON reports.
    Run {
        /// Path to a TOML scenario file, or the name of a builtin scenario.
        scenario: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Run independent strategies on separate threads.
        #[arg(long)]
        parallel: bool,
    },
    /// Run the SGD checks configured in a scenario's [sgd_check] table.
    Check {
        scenario: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the builtin scenarios.
    List,
}

fn resolve(scenario: &str, seed: Option<u64>) -> Result<ScenarioConfig, RunError> {
    let path = Path::new(scenario);
    let mut config = match builtin(scenario) {
        Some(c) if !path.exists() => c,
        None if !path.exists() => {
            return Err(RunError::Config(ConfigError::Io {
                path: path.to_path_buf(),
                message: "no such file and no builtin scenario with this name (see `dbsim list`)".into(),
            }))
        }
        _ => load_config(path)?,
    };
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

fn run(scenario: &str, out: &Path, seed: Option<u64>, parallel: bool) -> Result<ExitCode, RunError> {
    let config = resolve(scenario, seed)?;
    let outcome = runner::run_scenario(&config, out, parallel)?;
    println!("scenario {} (seed {})", config.name, config.seed);
    print!("{}", format_comparison(&outcome.comparison));
    for f in &outcome.files {
        println!("wrote {}", f.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn describe(check: &SgdCheckSummary) -> String {
    let margin = match check {
        SgdCheckSummary::ConvergenceBound { result, .. } => {
            format!("worst slack {:.6} at iteration {}", result.worst_slack, result.worst_iteration)
        }
        SgdCheckSummary::VarianceMonotonicity { result, .. } => format!("ratios {:?}", result.ratios),
        SgdCheckSummary::ScheduleEquivalence { result, .. } => format!(
            "relative gap {:.4} (limit {}), max z {:.3}",
            result.relative_difference, result.relative_tolerance, result.max_z
        ),
    };
    let verdict = if check.passed() { "pass" } else { "FAIL" };
    format!("{verdict}  {}: {margin}", check.label())
}

fn check(scenario: &str, out: &Path, seed: Option<u64>) -> Result<ExitCode, RunError> {
    let config = resolve(scenario, seed)?;
    let outcome = runner::run_sgd_check(&config, out)?;
    for c in &outcome.checks {
        println!("{}", describe(c));
    }
    println!("wrote {}", outcome.file.display());
    if outcome.passed() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("failed checks: {}", outcome.failed().join(", "));
        Ok(ExitCode::from(3))
    }
}

fn main() -> ExitCode {
    // Usage errors count as validation failures; clap's own default would be 2.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Run { scenario, out, seed, parallel } => run(scenario, out, *seed, *parallel),
        Command::Check { scenario, out, seed } => check(scenario, out, *seed),
        Command::List => {
            for b in BUILTINS {
                println!("{:<16} {}", b.name, b.description);
            }
            Ok(ExitCode::SUCCESS)
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
