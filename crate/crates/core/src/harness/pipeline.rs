use ndarray::Array2;
use serde::Serialize;

use super::setup::{build_contexts, generate_shards, text_encoder};
use crate::config::ExperimentConfig;
use crate::encoders::{graph_forward, DisturbanceConfig, EncoderParams, TextEncoder};
use crate::error::Result;
use crate::federation::{run_pretraining, PretrainedBundle};
use crate::graph::ClientShard;
use crate::prompts::{init_pools, run_finetuning, FinetunedBundle, PromptShape};
use crate::prototypes::{aggregate_prototypes, client_prototypes, GlobalTokenSet, PrototypeUpload};
use crate::report::{PrototypeLog, RoundReport};
use crate::rng::{derive_seed, tag};
use crate::transport::{Direction, PrototypePayload, Transport};

/// Whether the backbone is pre-trained or left at its initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Pretrained,
    Control,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ByteTotals {
    pub pretrain_up: u64,
    pub pretrain_down: u64,
    pub prototype_up: u64,
    pub finetune_up: u64,
    pub finetune_down: u64,
    pub total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub mode: Mode,
    pub seed: u64,
    pub clients: usize,
    pub test_accuracy: Vec<f64>,
    pub mean_test_accuracy: f64,
    /// `[text, graph]` prompt indices chosen against the final pools.
    pub final_selection: Vec<[usize; 2]>,
    pub round_losses: Vec<f64>,
    pub rounds_to_convergence: Option<usize>,
    pub global_tokens: usize,
    pub bytes: ByteTotals,
    pub encoder_checksums: Vec<u64>,
    pub text_table_checksum: u64,
}

/// Everything one run produces, kept in memory.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub shards: Vec<ClientShard>,
    pub pretrained: PretrainedBundle<f32>,
    pub backbones: Vec<EncoderParams<f32>>,
    pub tokens: GlobalTokenSet<f32>,
    pub prototype_logs: Vec<PrototypeLog>,
    pub finetuned: FinetunedBundle<f32>,
    pub summary: Summary,
    /// Text-table checksum before Phase I.
    pub text_checksum_before: u64,
    /// Backbone checksums before Phase II.
    pub backbone_checksums_before: Vec<u64>,
    pub transport_up: u64,
    pub transport_down: u64,
}

impl Outcome {
    pub fn reports(&self) -> Vec<RoundReport> {
        let pre = self
            .pretrained
            .reports
            .iter()
            .cloned()
            .map(RoundReport::Pretrain);
        let fine = self
            .finetuned
            .reports
            .iter()
            .cloned()
            .map(RoundReport::Finetune);
        pre.chain(fine).collect()
    }
}

/// Trailing moving average over `window` rounds.
pub fn smoothed(losses: &[f64], window: usize) -> Vec<f64> {
    (0..losses.len())
        .map(|i| {
            let start = (i + 1).saturating_sub(window);
            let span = &losses[start..=i];
            span.iter().sum::<f64>() / span.len() as f64
        })
        .collect()
}

/// First round (1-based) whose smoothed loss is within `tol` (relative) of
/// the final smoothed loss.
pub fn rounds_to_convergence(losses: &[f64], window: usize, tol: f64) -> Option<usize> {
    let s = smoothed(losses, window);
    let last = *s.last()?;
    s.iter()
        .position(|&x| (x - last).abs() <= tol * last.abs())
        .map(|i| i + 1)
}

pub const SMOOTHING_WINDOW: usize = 3;
pub const CONVERGENCE_TOL: f64 = 0.05;

fn upload_prototypes(
    config: &ExperimentConfig,
    shards: &[ClientShard],
    backbones: &[EncoderParams<f32>],
    contexts: &[crate::alignment::LocalContext<f32>],
    transport: &Transport,
) -> Result<(Vec<PrototypeUpload<f32>>, u64)> {
    let mut uploads = Vec::new();
    let mut bytes = 0;
    for (k, shard) in shards.iter().enumerate() {
        let z = graph_forward(&backbones[k], &contexts[k].inputs, &DisturbanceConfig::NONE)?.z;
        let seed = derive_seed(config.seed, &[tag::CLARITY, k as u64]);
        let local = client_prototypes(
            &shard.graph,
            &z,
            &shard.train,
            config.sharpness,
            config.clarity_k,
            seed,
        )?;
        let sent = transport.send(
            Direction::Up,
            PrototypePayload {
                prototypes: local.prototypes,
            }
            .encode(),
        );
        bytes += sent.len() as u64;
        let received = PrototypePayload::<f32>::decode(&sent, config.d)?;
        uploads.extend(
            received
                .prototypes
                .into_iter()
                .map(|prototype| PrototypeUpload {
                    client: k,
                    prototype,
                }),
        );
    }
    Ok((uploads, bytes))
}

fn text_checksum(text: &TextEncoder<f32>) -> u64 {
    text.checksum()
}

/// Runs the whole protocol in memory. `Mode::Control` skips Phase I and
/// builds prototypes and prompts on the untrained backbone.
pub fn run_pipeline(config: &ExperimentConfig, mode: Mode) -> Result<Outcome> {
    config.validate()?;
    let shards = generate_shards(config)?;
    let text = text_encoder::<f32>(config);
    let text_checksum_before = text_checksum(&text);
    let contexts = build_contexts(config, &shards, &text)?;
    let transport = Transport::new();

    let pretrained = match mode {
        Mode::Pretrained => run_pretraining(config, &shards, &contexts, &transport)?,
        Mode::Control => PretrainedBundle::untrained(config, shards.len()),
    };
    let pretrain_up = transport.bytes_up();
    let pretrain_down = transport.bytes_down();
    let backbones: Vec<EncoderParams<f32>> =
        (0..shards.len()).map(|k| pretrained.backbone(k)).collect();

    let (uploads, prototype_up) =
        upload_prototypes(config, &shards, &backbones, &contexts, &transport)
            .map_err(|e| e.in_round("prototypes", config.rounds))?;
    let prototype_logs = uploads.iter().map(PrototypeUpload::log).collect();
    let tokens = aggregate_prototypes(&uploads, config.cos_threshold);

    let shape = PromptShape {
        pool_size: config.pool_size,
        prompt_len: config.prompt_len,
        d: config.d,
        d_in: config.d_in,
    };
    let pools = init_pools(&tokens, shape, config.seed)?;
    let backbone_checksums_before: Vec<u64> =
        backbones.iter().map(EncoderParams::checksum).collect();
    let up_before = transport.bytes_up();
    let finetuned = run_finetuning(config, &backbones, &shards, &contexts, pools, &transport)?;
    let finetune_up = transport.bytes_up() - up_before;

    let mean = finetuned.test_accuracy.iter().sum::<f64>() / finetuned.test_accuracy.len() as f64;
    let bytes = ByteTotals {
        pretrain_up,
        pretrain_down,
        prototype_up,
        finetune_up,
        finetune_down: finetuned.bytes_down,
        total: transport.bytes_up() + transport.bytes_down(),
    };
    let summary = Summary {
        mode,
        seed: config.seed,
        clients: config.clients,
        test_accuracy: finetuned.test_accuracy.clone(),
        mean_test_accuracy: mean,
        final_selection: finetuned
            .final_selections
            .iter()
            .map(|s| [s.text_index, s.graph_index])
            .collect(),
        round_losses: pretrained.round_losses.clone(),
        rounds_to_convergence: rounds_to_convergence(
            &pretrained.round_losses,
            SMOOTHING_WINDOW,
            CONVERGENCE_TOL,
        ),
        global_tokens: tokens.len(),
        bytes,
        encoder_checksums: backbones.iter().map(EncoderParams::checksum).collect(),
        text_table_checksum: text_checksum(&text),
    };
    Ok(Outcome {
        shards,
        pretrained,
        backbones,
        tokens,
        prototype_logs,
        finetuned,
        summary,
        text_checksum_before,
        backbone_checksums_before,
        transport_up: transport.bytes_up(),
        transport_down: transport.bytes_down(),
    })
}

/// Nearest-class-mean accuracy on raw features using the generator's
/// class structure: means over all nodes of each class, scored on `nodes`.
pub fn feature_oracle_accuracy(shard: &ClientShard, nodes: &[usize]) -> f64 {
    let g = &shard.graph;
    let x = g.features();
    let classes = g.num_classes();
    let mut means = Array2::<f64>::zeros((classes, x.ncols()));
    let mut counts = vec![0usize; classes];
    for v in 0..g.num_nodes() {
        let c = g.labels()[v] as usize;
        counts[c] += 1;
        for j in 0..x.ncols() {
            means[[c, j]] += x[[v, j]] as f64;
        }
    }
    for (mut row, &n) in means.rows_mut().into_iter().zip(&counts) {
        let n = n.max(1) as f64;
        row.mapv_inplace(|m| m / n);
    }
    let correct = nodes
        .iter()
        .filter(|&&v| {
            let dist = |c: usize| -> f64 {
                (0..x.ncols())
                    .map(|j| (x[[v, j]] as f64 - means[[c, j]]).powi(2))
                    .sum()
            };
            let best = (0..classes)
                .min_by(|&a, &b| dist(a).total_cmp(&dist(b)))
                .unwrap_or(0);
            best == g.labels()[v] as usize
        })
        .count();
    correct as f64 / nodes.len().max(1) as f64
}
