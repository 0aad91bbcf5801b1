//! `edgepress` — experiments for weight-level edge compression: multi-bit
//! quantization with adaptive bitwidth, nested sparse subnets, and
//! communication-efficient partial updating, all on a small MLP.

mod commands;
mod data;
mod selftest;

use clap::{Parser, Subcommand};
use edgepress::error::Error;
use edgepress::io::ExperimentConfig;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "edgepress", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Plain-text key=value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override or set a single config key (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// RNG seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for the data-parallel paths (1 = sequential).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    /// Output directory for artifacts and traces.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Sketch a dense model file into multi-bit form (MBN1).
    Sketch,
    /// Train the dense baseline and run the adaptive quantization pipeline.
    Alq,
    /// Train nested sparse subnets and export the DCSR1 format.
    Dress,
    /// Multi-round partial-updating simulation across arms.
    Dpu {
        /// Run a single arm (DPU, GCPU, RPU, PRUNE or FULL).
        #[arg(long)]
        arm: Option<String>,
        /// Number of rounds.
        #[arg(long)]
        rounds: Option<usize>,
    },
    /// Aggregate trace files into summary tables.
    Report {
        /// CSV trace files.
        files: Vec<PathBuf>,
    },
    /// Fast acceptance-style checks; exits 4 on any failure.
    Selftest,
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let mut overrides = Vec::new();
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set needs KEY=VALUE, got '{kv}'")))?;
        overrides.push((k.trim().to_owned(), v.trim().to_owned()));
    }
    cfg.override_with(&overrides);
    if let Some(seed) = cli.seed {
        cfg.set("seed", seed);
    }
    Ok(cfg)
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Io(_)
        | Error::BadMagic { .. }
        | Error::TruncatedFile { .. }
        | Error::VersionMismatch { .. }
        | Error::CorruptHeader(_)
        | Error::CountMismatch { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    edgepress::exec::configure_threads(cli.threads);
    let cfg = match build_config(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let result = match &cli.command {
        Command::Sketch => commands::cmd_sketch(&cfg, &cli.out_dir),
        Command::Alq => commands::cmd_alq(&cfg, &cli.out_dir),
        Command::Dress => commands::cmd_dress(&cfg, &cli.out_dir),
        Command::Dpu { arm, rounds } => {
            let mut cfg = cfg.clone();
            if let Some(arm) = arm {
                cfg.set("arms", arm);
            }
            if let Some(rounds) = rounds {
                cfg.set("rounds", rounds);
            }
            commands::cmd_dpu(&cfg, &cli.out_dir)
        }
        Command::Report { files } => commands::cmd_report(&cfg, files, &cli.out_dir),
        Command::Selftest => {
            return match selftest::run() {
                Ok(true) => ExitCode::SUCCESS,
                Ok(false) => ExitCode::from(4),
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(exit_code_for(&e))
                }
            };
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
