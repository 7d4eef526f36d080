//! Experiment harness: configuration, execution, CSV emission and
//! bound-versus-empirical verification.

pub mod commands;
pub mod config;
pub mod csvio;
pub mod selftest;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::error::Error;
use config::ExperimentConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_VERIFY_FAILED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "coupled-sa", version, about = "Coupled stochastic approximation experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long = "k")]
    pub k: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    Run(CommonArgs),
    Sweep(CommonArgs),
    Verify(CommonArgs),
    Selftest {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(args: &CommonArgs) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::from_path(&args.config)?;
    if let Some(o) = &args.out {
        cfg.out_dir = o.clone();
    } else if cfg.out_dir.is_relative() {
        cfg.out_dir = cfg.base_dir.join(&cfg.out_dir);
    }
    if let Some(s) = args.seed {
        cfg.base_seed = s;
    }
    if let Some(w) = args.workers {
        cfg.workers = Some(w);
    }
    if let Some(k) = args.k {
        cfg.k = k;
        cfg.k_grid.retain(|&g| g <= k);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn report(e: &Error) -> i32 {
    eprintln!("error: {e}");
    EXIT_CONFIG
}

/// Runs the harness and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let outcome = match &cli.command {
        Command::Run(a) => load(a).and_then(|c| commands::cmd_run(&c)).map(|o| {
            for s in &o.failed_seeds {
                eprintln!("seed {s} failed; see summary.csv");
            }
            println!("wrote {} traces and {}", o.traces.len(), o.summary.display());
            EXIT_OK
        }),
        Command::Sweep(a) => load(a).and_then(|c| commands::cmd_sweep(&c)).map(|o| {
            println!("{} run entries written to {}", o.entries, o.path.display());
            EXIT_OK
        }),
        Command::Verify(a) => load(a).and_then(|c| commands::cmd_verify(&c)).map(|r| {
            print!("{}", r.text());
            if r.all_pass() {
                EXIT_OK
            } else {
                EXIT_VERIFY_FAILED
            }
        }),
        Command::Selftest { out } => selftest::cmd_selftest().and_then(|r| {
            print!("{}", r.text());
            if let Some(dir) = out {
                std::fs::create_dir_all(dir)?;
                std::fs::write(dir.join("selftest.txt"), r.text())?;
            }
            Ok(if r.failures() == 0 { EXIT_OK } else { EXIT_VERIFY_FAILED })
        }),
    };
    outcome.unwrap_or_else(|e| report(&e))
}

pub fn main_entry() -> i32 {
    run(Cli::parse())
}
