use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use graphnav_cli::artifacts;
use graphnav_cli::commands;
use graphnav_cli::config::{ConfigError, ExperimentConfig};
use graphnav_cli::OUT_ENV;

/// Group-relative policy optimization experiments on synthetic navigation
/// graphs.
#[derive(Debug, Parser)]
#[command(name = "graphnav", version)]
struct Cli {
    /// TOML experiment config; defaults apply to anything it omits.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the config's top-level seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for rollouts and evaluation. Results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Output directory; takes precedence over the environment variable and
    /// the config.
    #[arg(long, global = true, env = OUT_ENV)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the training and unseen-validation environment bundle.
    GenEnv,
    /// Supervised warm-up followed by RL fine-tuning.
    Train {
        /// Environment bundle; defaults to env.json in the output directory.
        #[arg(long)]
        env: Option<PathBuf>,
        /// Write zero in the wall_ms column.
        #[arg(long)]
        no_wall_clock: bool,
    },
    /// Robustness sweep of one or more checkpoints on the unseen split.
    Eval {
        #[arg(long)]
        env: Option<PathBuf>,
        /// `NAME=PATH` or `PATH`; repeatable. Defaults to the SFT and final
        /// checkpoints in the output directory.
        #[arg(long = "checkpoint")]
        checkpoints: Vec<String>,
    },
    /// Render robustness.json and the training log as report.md.
    Report,
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.output_dir = out;
    }
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(ConfigError("invalid flag `--workers`: must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot start worker pool")?;
    }
    let out = cfg.output_dir.clone();
    let default_env = out.join(artifacts::ENV_FILE);

    match cli.command {
        Command::GenEnv => {
            let path = commands::gen_env(&cfg, &out)?;
            println!("wrote {}", path.display());
        }
        Command::Train { env, no_wall_clock } => {
            let s = commands::train(&cfg, &out, env.as_deref().unwrap_or(&default_env), !no_wall_clock)?;
            let last = s.rows.last().map_or(f64::NAN, |r| r.success_frac);
            println!("wrote {}, {}, {}", s.sft.display(), s.last.display(), s.log.display());
            println!("{} RL iterations, {} hard-case passes, final success_frac {last:.3}", s.rows.len(), s.flushes);
        }
        Command::Eval { env, checkpoints } => {
            let named = if checkpoints.is_empty() {
                commands::default_checkpoints(&cfg, &out)
            } else {
                checkpoints
                    .iter()
                    .map(|c| commands::parse_checkpoint_arg(c))
                    .collect::<Result<_>>()?
            };
            let report = commands::eval(&cfg, &out, env.as_deref().unwrap_or(&default_env), &named)?;
            for r in &report.table.summary {
                println!(
                    "{:<12} {:<12} SR {:6.2}  SPL {:6.2}  ΔSPL {:+7.2}",
                    r.method, r.perturbation.to_string(), r.sr, r.spl, r.delta_spl
                );
            }
        }
        Command::Report => print!("{}", commands::report(&out)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
