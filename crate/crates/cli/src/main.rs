use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use cbo_lab::config::parse_config;
use cbo_lab::runner::run_to_dir;

#[derive(Parser)]
#[command(
    name = "cbo-lab",
    version,
    about = "Consensus-based optimization runs and invariant checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a run configuration and write its artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the configuration.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Worker threads; 0 or unset uses all cores.
        #[arg(long, env = "CBO_LAB_THREADS")]
        threads: Option<usize>,
    },
    /// Parse and validate a configuration without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load(path: &PathBuf) -> Result<cbo_lab::RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_config(&text).with_context(|| format!("in {}", path.display()))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Validate { config } => {
            let cfg = load(&config)?;
            println!("ok: mode {}", serde_mode(&cfg));
            Ok(true)
        }
        Command::Run {
            config,
            output,
            threads,
        } => {
            let cfg = load(&config)?;
            let Some(dir) = output.or_else(|| cfg.output_dir.clone()) else {
                bail!("no output directory: pass --output or set output_dir");
            };
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads.unwrap_or(0))
                .build()
                .context("building the thread pool")?;
            let (outcome, manifest) = pool.install(|| run_to_dir(&cfg, &dir))?;
            if let Some(report) = &outcome.report {
                for c in &report.checks {
                    let status = if c.pass { "pass" } else { "FAIL" };
                    println!(
                        "{status} [{:?}] {}: {} {} {}",
                        c.severity,
                        c.name,
                        c.measured,
                        serde_json::to_value(c.relation)
                            .map(|v| v.as_str().unwrap_or("").to_owned())
                            .unwrap_or_default(),
                        c.allowed
                    );
                }
            }
            println!("wrote {} files to {}", manifest.files.len() + 1, dir.display());
            Ok(outcome.passed)
        }
    }
}

fn serde_mode(cfg: &cbo_lab::RunConfig) -> String {
    serde_json::to_value(cfg.mode)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("hard check failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
