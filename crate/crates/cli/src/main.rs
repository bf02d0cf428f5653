use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use supmin_cli::run::error_status;
use supmin_cli::{run_audit, run_check, run_solve, RunConfig, Status};

#[derive(Parser)]
#[command(name = "supmin", version, about = "Power-sweep minimizers of supremal functionals and their audits")]
struct Cli {
    /// Worker threads for audits and multi-starts (0 = all cores).
    #[arg(long, global = true, env = "SUPMIN_JOBS", default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the m sweep and write the candidate, energies and residuals.
    Solve { config: PathBuf },
    /// Audit the candidate in the output directory for absolute minimality.
    Audit {
        config: PathBuf,
        /// Run `solve` first in the same invocation.
        #[arg(long)]
        solve_first: bool,
    },
    /// Sample the level-convexity and growth hypotheses of the model.
    Check { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config_path = match &cli.command {
        Command::Solve { config } | Command::Audit { config, .. } | Command::Check { config } => config,
    };
    let cfg = match RunConfig::from_path(config_path) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(Status::ConfigError.code());
        }
    };
    let result = match cli.command {
        Command::Solve { .. } => run_solve(&cfg, cli.jobs),
        Command::Audit { solve_first, .. } => run_audit(&cfg, cli.jobs, solve_first),
        Command::Check { .. } => run_check(&cfg),
    };
    let status = result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        error_status(&e)
    });
    ExitCode::from(status.code())
}
