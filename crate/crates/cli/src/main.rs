use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use fedgala_core::config::ExperimentConfig;
use fedgala_core::harness::{apply_env_overrides, complexity_audit, run_and_write, Mode};

#[derive(Parser)]
#[command(
    name = "fedgala",
    about = "Federated graph-text pre-training and prompt tuning simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Skip pre-training and fine-tune prompts on the random-init backbone.
        #[arg(long)]
        control: bool,
        /// Also write `audit.json` with per-client compute and traffic.
        #[arg(long)]
        audit: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    let Command::Run {
        config,
        control,
        audit,
        out,
    } = Cli::parse().command;
    let mut cfg =
        ExperimentConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
    apply_env_overrides(&mut cfg)?;
    cfg.validate()?;
    let mode = if control {
        Mode::Control
    } else {
        Mode::Pretrained
    };
    let report = if audit {
        Some(complexity_audit(&cfg)?)
    } else {
        None
    };
    let summary = run_and_write(&cfg, mode, &out)?;
    if let Some(report) = report {
        std::fs::write(
            out.join("audit.json"),
            serde_json::to_string_pretty(&report)? + "\n",
        )?;
    }
    println!(
        "mean test accuracy {:.4} over {} clients; {} bytes exchanged; artifacts in {}",
        summary.mean_test_accuracy,
        summary.clients,
        summary.bytes.total,
        out.display()
    );
    Ok(())
}
