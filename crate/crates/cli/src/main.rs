use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use kernelrn_cli::{execute, validate_config, Command, EXIT_ERROR};

#[derive(Parser)]
#[command(
    name = "kernelrn",
    version,
    about = "Moment kernel density and von Neumann checks for random matrices"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Moment sequences and ratio tests.
    Moments(RunArgs),
    /// Radon-Nikodym density of the shifted kernel.
    Rn(RunArgs),
    /// Localized von Neumann bounds.
    Vn(RunArgs),
    /// Check a config and print it with defaults filled in.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = "KERNELRN_WORKERS")]
    workers: Option<usize>,
    /// Overrides the output directory in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    let (command, args) = match cli.command {
        Cmd::Validate { config } => {
            let cfg = validate_config(&config)?;
            println!("{}", serde_json::to_string_pretty(&cfg)?);
            return Ok(0);
        }
        Cmd::Moments(a) => (Command::Moments, a),
        Cmd::Rn(a) => (Command::Rn, a),
        Cmd::Vn(a) => (Command::Vn, a),
    };
    let mut cfg = validate_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let workers = args
        .workers
        .or(cfg.workers)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    anyhow::ensure!(workers > 0, "workers must be at least 1");
    let out = args.out.unwrap_or_else(|| cfg.output.directory.clone());
    let report = execute(command, &cfg, workers, &out).context("run failed")?;
    println!("{}", serde_json::to_string(&report.outcome)?.trim_matches('"'));
    Ok(report.outcome.exit_code())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("kernelrn: error: {e:#}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}
