use serde::Serialize;

use super::pipeline::{run_pipeline, Mode, Outcome};
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::transport::PROMPT_METADATA_BYTES;

/// Message-passing layers per branch.
pub const LAYERS: u64 = 2;

/// `L(|V| d^2 + |E| d) + |V| d^2`.
pub fn client_flops(nodes: u64, edges: u64, d: u64) -> u64 {
    LAYERS * (nodes * d * d + edges * d) + nodes * d * d
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditRow {
    pub client: usize,
    pub nodes: usize,
    pub edges: usize,
    pub flops_per_epoch: u64,
    /// Measured Phase I upload of every round.
    pub pretrain_bytes_up: Vec<u64>,
    pub finetune_bytes_up: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Audit {
    pub structural_params: usize,
    pub expected_pretrain_bytes_up: u64,
    pub expected_finetune_bytes_up: u64,
    pub rows: Vec<AuditRow>,
    /// Every Phase I upload equals `4 |theta_str| + 8`.
    pub pretrain_upload_exact: bool,
    /// Every Phase II upload is prompts plus selection metadata only.
    pub finetune_upload_prompt_only: bool,
    /// Phase I traffic with `2M` prompts minus traffic with `M`.
    pub pool_doubling_delta: i64,
}

fn rows(outcome: &Outcome, config: &ExperimentConfig) -> Vec<AuditRow> {
    outcome
        .shards
        .iter()
        .enumerate()
        .map(|(k, s)| AuditRow {
            client: k,
            nodes: s.num_nodes(),
            edges: s.graph.num_edges(),
            flops_per_epoch: client_flops(
                s.num_nodes() as u64,
                s.graph.num_edges() as u64,
                config.d as u64,
            ),
            pretrain_bytes_up: outcome
                .pretrained
                .reports
                .iter()
                .filter(|r| r.client == k)
                .map(|r| r.bytes_up)
                .collect(),
            finetune_bytes_up: outcome
                .finetuned
                .reports
                .iter()
                .filter(|r| r.client == k)
                .map(|r| r.bytes_up)
                .collect(),
        })
        .collect()
}

fn phase1_traffic(outcome: &Outcome) -> i64 {
    (outcome.summary.bytes.pretrain_up + outcome.summary.bytes.pretrain_down) as i64
}

/// Analytic per-client compute and measured traffic on a shortened run
/// (at most 2 + 1 rounds), repeated with the prompt pool doubled.
pub fn complexity_audit(config: &ExperimentConfig) -> Result<Audit> {
    config.validate()?;
    let mut short = config.clone();
    short.rounds = config.rounds.clamp(1, 2);
    short.ft_rounds = 1;
    short.ft_epochs = config.ft_epochs.min(1);
    let base = run_pipeline(&short, Mode::Pretrained)?;
    let mut doubled = short.clone();
    doubled.pool_size *= 2;
    let wide = run_pipeline(&doubled, Mode::Pretrained)?;

    let structural_params = config.d_pe * config.d + config.d * config.d;
    let expected_pretrain = 4 * structural_params as u64 + 8;
    let expected_finetune =
        (PROMPT_METADATA_BYTES + 4 * (config.prompt_len * config.d + config.d_in)) as u64;
    let rows = rows(&base, &short);
    Ok(Audit {
        structural_params,
        expected_pretrain_bytes_up: expected_pretrain,
        expected_finetune_bytes_up: expected_finetune,
        pretrain_upload_exact: rows
            .iter()
            .flat_map(|r| &r.pretrain_bytes_up)
            .all(|&b| b == expected_pretrain),
        finetune_upload_prompt_only: rows
            .iter()
            .flat_map(|r| &r.finetune_bytes_up)
            .all(|&b| b == expected_finetune),
        pool_doubling_delta: phase1_traffic(&wide) - phase1_traffic(&base),
        rows,
    })
}
