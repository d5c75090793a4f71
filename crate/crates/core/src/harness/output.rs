use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use super::pipeline::{run_pipeline, Mode, Outcome, Summary};
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::report::write_jsonl;

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "FEDGALA_SEED";

/// Applies `FEDGALA_SEED` when set.
pub fn apply_env_overrides(config: &mut ExperimentConfig) -> Result<()> {
    if let Ok(v) = std::env::var(SEED_ENV) {
        config.set("seed", v.trim())?;
    }
    Ok(())
}

/// Writes `reports.jsonl`, `prototypes.jsonl`, `summary.json`,
/// `config.txt` and one checkpoint per client backbone under `out`.
pub fn write_artifacts(outcome: &Outcome, config: &ExperimentConfig, out: &Path) -> Result<()> {
    let ckpt_dir = out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir)?;
    let mut reports = BufWriter::new(File::create(out.join("reports.jsonl"))?);
    write_jsonl(&mut reports, &outcome.reports())?;
    reports.flush()?;
    let mut protos = BufWriter::new(File::create(out.join("prototypes.jsonl"))?);
    write_jsonl(&mut protos, &outcome.prototype_logs)?;
    protos.flush()?;
    let mut summary = serde_json::to_string_pretty(&outcome.summary)?;
    summary.push('\n');
    fs::write(out.join("summary.json"), summary)?;
    fs::write(out.join("config.txt"), config.to_config_string())?;
    for (k, params) in outcome.backbones.iter().enumerate() {
        let mut w = BufWriter::new(File::create(ckpt_dir.join(format!("client{k}.ckpt")))?);
        params.write_checkpoint(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

/// Runs the full protocol and writes its artifacts. The config is
/// validated and the whole run completes before anything is written.
pub fn run_experiment(config: &ExperimentConfig, out: &Path) -> Result<Summary> {
    run_and_write(config, Mode::Pretrained, out)
}

/// Phase II alone on the untrained backbone.
pub fn run_control(config: &ExperimentConfig) -> Result<Summary> {
    Ok(run_pipeline(config, Mode::Control)?.summary)
}

pub fn run_and_write(config: &ExperimentConfig, mode: Mode, out: &Path) -> Result<Summary> {
    config.validate()?;
    let outcome = run_pipeline(config, mode)?;
    write_artifacts(&outcome, config, out)?;
    Ok(outcome.summary)
}
