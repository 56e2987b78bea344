//! `ptb` — a desk-scale lab for physically robust backdoor attacks.
//!
//! One config file drives all subcommands; see the repository README for the
//! config grammar and output formats. Exit status: 0 success, 1 usage error,
//! 2 runtime failure.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "ptb", version, about = "Physical-transformation backdoor lab")]
struct Cli {
    /// Experiment config file (built-in defaults when omitted)
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override the output directory
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Override the top-level seed
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Worker threads (results are identical for any worker count)
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,

    /// Override a config entry, e.g. --set poison.count=50
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write per-transform preview images for inspection
    Preview {
        /// How many training samples to preview
        #[arg(long, default_value_t = 1)]
        samples: usize,
    },
    /// Build the poisoned dataset directory plus manifest
    Poison,
    /// Train the classifier, writing a checkpoint and epoch log
    Train,
    /// Evaluate a checkpoint under the simple and complex scenes
    Eval {
        /// Checkpoint path (default: <out>/model.ckpt)
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Run the full protocol across injection counts
    Sweep {
        /// Comma-separated injection counts
        #[arg(long, value_delimiter = ',', value_name = "N,N,...")]
        counts: Option<Vec<usize>>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0u8,
                _ => 1u8,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    if let Some(workers) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
        {
            eprintln!("ptb: cannot configure {workers} workers: {e}");
            return ExitCode::from(1);
        }
    }

    let mut cfg = match config::load(cli.config.as_deref(), &cli.sets) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("ptb: config error: {e:#}");
            return ExitCode::from(1);
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }

    let result = match cli.command {
        Command::Preview { samples } => commands::cmd_preview(&cfg, samples),
        Command::Poison => commands::cmd_poison(&cfg),
        Command::Train => commands::cmd_train(&cfg),
        Command::Eval { checkpoint } => commands::cmd_eval(&cfg, checkpoint),
        Command::Sweep { counts } => {
            let counts = counts.unwrap_or_else(|| vec![5, 10, 20, 50, 100]);
            commands::cmd_sweep(&cfg, &counts)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ptb: {e:#}");
            ExitCode::from(2)
        }
    }
}
