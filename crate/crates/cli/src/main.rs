//! `anchortraj`: anchor filtering, trajectory refinement, canonicalization,
//! evaluation, synthetic database sampling and drift simulation.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};

use commands::{CanonicalizeArgs, EvaluateArgs, FilterArgs, PipelineArgs, RefineArgs, SampleDbArgs, SimulateArgs};
use error::CliError;

const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (csv format 1, report schema 1)");

#[derive(Parser, Debug)]
#[command(name = "anchortraj", version = VERSION, about = "Drift-corrected camera trajectories from SLAM and absolute-pose anchors")]
struct Cli {
    /// Worker threads; results do not depend on this [default: all cores]
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// TOML config file; command-line flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Log more to stderr (-v info, -vv debug)
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample virtual database camera poses over a point cloud
    SampleDb(SampleDbArgs),
    /// Keep reliable, well-spaced anchor candidates
    FilterAnchors(FilterArgs),
    /// Correct a SLAM trajectory with anchors
    Refine(RefineArgs),
    /// Move a trajectory to its first frame, heading along +x
    Canonicalize(CanonicalizeArgs),
    /// Compare a trajectory (and optionally joint motion) to ground truth
    Evaluate(EvaluateArgs),
    /// Generate ground truth, drifting SLAM and anchor candidates
    Simulate(SimulateArgs),
    /// filter-anchors, refine, canonicalize and evaluate in one go
    Pipeline(PipelineArgs),
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let loaded = config::load(cli.config.as_deref())?;
    match &cli.command {
        Command::SampleDb(a) => commands::sample_db(a, &loaded),
        Command::FilterAnchors(a) => commands::filter_cmd(a, &loaded),
        Command::Refine(a) => commands::refine_cmd(a, &loaded),
        Command::Canonicalize(a) => commands::canonicalize_cmd(a),
        Command::Evaluate(a) => commands::evaluate_cmd(a, &loaded),
        Command::Simulate(a) => commands::simulate(a, &loaded),
        Command::Pipeline(a) => commands::pipeline(a, &loaded),
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match cli.threads {
        None => dispatch(cli),
        Some(0) => Err(CliError::usage("--threads must be at least 1")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::domain("cli", format!("cannot start {n} threads: {e}"), None))?;
            pool.install(|| dispatch(cli))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn version_mentions_current_formats() {
        assert_eq!(anchortraj::trajio::FORMAT_VERSION, 1);
        assert_eq!(anchortraj::metrics::REPORT_SCHEMA_VERSION, 1);
        assert!(VERSION.starts_with(env!("CARGO_PKG_VERSION")));
    }
}
