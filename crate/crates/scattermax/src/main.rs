use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use scattermax::cli::{self, NaiveOptions, RunOptions, SliceOptions};
use scattermax::error::{Error, Result};

/// Robust design optimization under manufacturing scatter.
#[derive(Parser)]
#[command(name = "scattermax", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute (or resume) a two-pass campaign from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Campaign directory (overrides SCATTERMAX_DIR and the config).
        #[arg(long)]
        dir: Option<PathBuf>,
        /// Continue an interrupted campaign, skipping completed stages.
        #[arg(long)]
        resume: bool,
        /// Replace the config's master seed.
        #[arg(long)]
        seed_override: Option<u64>,
        /// Worker threads for batch evaluation.
        #[arg(long)]
        parallelism: Option<usize>,
    },
    /// Maximize the raw model without robustness and measure what that costs.
    Naive {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dir: Option<PathBuf>,
        #[arg(long)]
        seed_override: Option<u64>,
        #[arg(long)]
        parallelism: Option<usize>,
    },
    /// Re-evaluate a finished campaign's surrogate under new uncertainties.
    Reevaluate {
        #[arg(long)]
        dir: PathBuf,
        /// Comma-separated per-axis standard deviations.
        #[arg(long)]
        sigma: String,
        #[arg(long)]
        parallelism: Option<usize>,
    },
    /// Export a 2-D landscape slice as CSV plus an ellipse sidecar.
    Slice {
        #[arg(long)]
        dir: PathBuf,
        /// "selected", "pass1", "naive", or comma-separated coordinates.
        #[arg(long, default_value = "selected")]
        center: String,
        /// Two comma-separated axis indices, e.g. "0,1".
        #[arg(long)]
        axes: String,
        #[arg(long, default_value_t = 41)]
        grid: usize,
        #[arg(long, default_value_t = 3.0)]
        extent_sigmas: f64,
        /// "surrogate" or "model".
        #[arg(long, default_value = "surrogate")]
        source: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse and validate a config file without running anything.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Re-print the summary of a finished campaign.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Serve a built-in model over the external-objective line protocol.
    Worker {
        #[arg(long)]
        model: String,
    },
}

fn parse_axes(axes: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = axes.split(',').collect();
    if parts.len() != 2 {
        return Err(Error::Config(format!("--axes wants 'i,j', got '{axes}'")));
    }
    let i = parts[0]
        .trim()
        .parse()
        .map_err(|e| Error::Config(format!("bad axis '{}': {e}", parts[0])))?;
    let j = parts[1]
        .trim()
        .parse()
        .map_err(|e| Error::Config(format!("bad axis '{}': {e}", parts[1])))?;
    Ok((i, j))
}

fn parse_sigma(sigma: &str) -> Result<Vec<f64>> {
    sigma
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("bad sigma '{t}': {e}")))
        })
        .collect()
}

fn dispatch(command: Command) -> Result<()> {
    let mut out = std::io::stdout();
    match command {
        Command::Run {
            config,
            dir,
            resume,
            seed_override,
            parallelism,
        } => {
            cli::cmd_run(
                &RunOptions {
                    config_path: config,
                    dir,
                    resume,
                    seed_override,
                    parallelism,
                },
                &mut out,
            )?;
            Ok(())
        }
        Command::Naive {
            config,
            dir,
            seed_override,
            parallelism,
        } => {
            cli::cmd_naive(
                &NaiveOptions {
                    config_path: config,
                    dir,
                    seed_override,
                    parallelism,
                },
                &mut out,
            )?;
            Ok(())
        }
        Command::Reevaluate { dir, sigma, parallelism } => {
            if let Some(p) = parallelism {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(p).build_global();
            }
            cli::cmd_reevaluate(&dir, &parse_sigma(&sigma)?, &mut out)?;
            Ok(())
        }
        Command::Slice {
            dir,
            center,
            axes,
            grid,
            extent_sigmas,
            source,
            out: out_path,
        } => cli::cmd_slice(
            &SliceOptions {
                dir,
                center,
                axes: parse_axes(&axes)?,
                grid,
                extent_sigmas,
                source,
                out_path,
            },
            &mut out,
        ),
        Command::Validate { config } => cli::cmd_validate(&config, &mut out),
        Command::Report { dir } => cli::cmd_report(&dir, &mut out),
        Command::Worker { model } => cli::cmd_worker(&model),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
