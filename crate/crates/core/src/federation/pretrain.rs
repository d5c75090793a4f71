use std::time::Instant;

use rand::seq::index::sample;
use rayon::prelude::*;

use super::history::{fuse_history, history_similarities, HistoryPool};
use super::weights::{aggregate_structural, aggregation_weights, history_weights};
use crate::alignment::{local_train_step, LocalContext, Temperature};
use crate::config::ExperimentConfig;
use crate::encoders::{Block, DisturbanceConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::graph::ClientShard;
use crate::report::PretrainReport;
use crate::rng::{derive_seed, stream, tag};
use crate::scalar::Scalar;
use crate::transport::{BlockShape, Direction, StructuralBroadcast, StructuralUpload, Transport};

/// A client's full encoder and temperature after its latest local round.
#[derive(Debug, Clone)]
pub struct ClientState<F> {
    pub params: EncoderParams<F>,
    pub temp: Temperature<F>,
}

#[derive(Debug, Clone)]
pub struct PretrainedBundle<F> {
    pub clients: Vec<ClientState<F>>,
    pub global: Block<F>,
    pub pool: HistoryPool<F>,
    pub reports: Vec<PretrainReport>,
    /// Pool round labels after each round, for window checks.
    pub pool_rounds: Vec<Vec<usize>>,
    /// Mean over clients of each client's mean pre-step epoch loss, per round.
    pub round_losses: Vec<f64>,
}

impl<F: Scalar> PretrainedBundle<F> {
    /// Frozen backbone for client `k`: the final global structural block
    /// paired with the client's own semantic block.
    pub fn backbone(&self, k: usize) -> EncoderParams<F> {
        EncoderParams {
            structural: self.global.clone(),
            semantic: self.clients[k].params.semantic.clone(),
        }
    }

    /// Bundle for a never-trained encoder: the round-zero initialization.
    pub fn untrained(config: &ExperimentConfig, clients: usize) -> Self {
        let (global, semantic) = initial_blocks(config);
        Self {
            clients: vec![
                ClientState {
                    params: EncoderParams {
                        structural: global.clone(),
                        semantic
                    },
                    temp: Temperature::default(),
                };
                clients
            ],
            pool: HistoryPool::new(config.history),
            global,
            reports: Vec::new(),
            pool_rounds: Vec::new(),
            round_losses: Vec::new(),
        }
    }
}

fn initial_blocks<F: Scalar>(config: &ExperimentConfig) -> (Block<F>, Block<F>) {
    let structural = Block::random(
        config.d_pe,
        config.d,
        &mut stream(config.seed, &[tag::INIT_STRUCTURAL]),
    );
    let semantic = Block::random(
        config.d_in,
        config.d,
        &mut stream(config.seed, &[tag::INIT_SEMANTIC]),
    );
    (structural, semantic)
}

/// Sorted sample of `min(size, population.len())` entries.
pub(crate) fn sorted_sample(
    population: &[usize],
    size: usize,
    seed: u64,
    tags: &[u64],
) -> Vec<usize> {
    let amount = size.min(population.len());
    let mut rng = stream(seed, tags);
    let mut picked: Vec<usize> = sample(&mut rng, population.len(), amount)
        .into_iter()
        .map(|i| population[i])
        .collect();
    picked.sort_unstable();
    picked
}

struct ClientRound<F> {
    state: ClientState<F>,
    upload: Vec<u8>,
    loss: f64,
    beta: Vec<f64>,
    bytes_down: u64,
    ms: f64,
}

#[allow(clippy::too_many_arguments)]
fn client_round<F: Scalar>(
    config: &ExperimentConfig,
    k: usize,
    round: usize,
    shard: &ClientShard,
    ctx: &LocalContext<F>,
    state: &ClientState<F>,
    broadcast: &[u8],
    history_len: usize,
    transport: &Transport,
) -> Result<ClientRound<F>> {
    let start = Instant::now();
    let shape = BlockShape {
        d_input: config.d_pe,
        d: config.d,
    };
    let received = StructuralBroadcast::<F>::decode(broadcast, shape, history_len)?;
    let (mut params, beta) = if received.history.is_empty() {
        let params = EncoderParams {
            structural: received.global,
            semantic: state.params.semantic.clone(),
        };
        (params, Vec::new())
    } else {
        let pool = HistoryPool::from_blocks(history_len, received.history);
        let (k64, t64) = (k as u64, round as u64);
        let probe = sorted_sample(
            &shard.train,
            config.probe_size,
            config.seed,
            &[tag::PROBE, k64, t64],
        );
        let scores = history_similarities(ctx, &pool, &probe, &state.params.semantic)?;
        let betas = history_weights(&scores.sums())?;
        let params = fuse_history(&state.params.semantic, &pool, &betas)?;
        (params, betas.betas)
    };

    let all: Vec<usize> = (0..shard.num_nodes()).collect();
    let mut temp = state.temp;
    let mut loss_sum = 0.0;
    for e in 0..config.local_epochs {
        let tags = [k as u64, round as u64, e as u64];
        let batch = sorted_sample(
            &all,
            config.batch,
            config.seed,
            &[&[tag::BATCH][..], &tags].concat(),
        );
        let disturb = DisturbanceConfig {
            noise_std: config.noise_std,
            seed: derive_seed(config.seed, &[&[tag::NOISE][..], &tags].concat()),
        };
        let step = local_train_step(ctx, &params, temp, &batch, F::of(config.lr), &disturb)?;
        loss_sum += step.loss.as_f64();
        params = step.params;
        temp = step.temp;
    }
    if !params.is_finite() {
        return Err(Error::Shape(format!("client {k} parameters diverged")));
    }

    let upload = StructuralUpload {
        block: params.structural.clone(),
        avg_degree: shard.avg_degree(),
    };
    let upload = transport.send(Direction::Up, upload.encode());
    Ok(ClientRound {
        state: ClientState { params, temp },
        upload,
        loss: loss_sum / config.local_epochs as f64,
        beta,
        bytes_down: broadcast.len() as u64,
        ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Phase I: `config.rounds` rounds of broadcast, history fusion, local
/// contrastive training, upload and degree-weighted aggregation.
///
/// `contexts[k]` must be built from `shards[k]`. Client work runs on up to
/// `config.workers` threads; uploads are aggregated in client order, so the
/// result does not depend on scheduling.
pub fn run_pretraining<F: Scalar>(
    config: &ExperimentConfig,
    shards: &[ClientShard],
    contexts: &[LocalContext<F>],
    transport: &Transport,
) -> Result<PretrainedBundle<F>> {
    config.validate()?;
    if shards.is_empty() || shards.len() != contexts.len() {
        return Err(Error::LengthMismatch {
            expected: shards.len().max(1),
            got: contexts.len(),
        });
    }
    let threads = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let mut bundle = PretrainedBundle::untrained(config, shards.len());
    let shape = BlockShape {
        d_input: config.d_pe,
        d: config.d,
    };

    for round in 1..=config.rounds {
        let broadcast = StructuralBroadcast {
            global: bundle.global.clone(),
            history: bundle.pool.blocks().cloned().collect(),
        }
        .encode();
        let history_len = bundle.pool.len();
        let states = &bundle.clients;
        let work = |k: usize| {
            let sent = transport.send(Direction::Down, broadcast.clone());
            client_round(
                config,
                k,
                round,
                &shards[k],
                &contexts[k],
                &states[k],
                &sent,
                history_len,
                transport,
            )
        };
        let results: Vec<Result<ClientRound<F>>> = if config.workers == 1 {
            (0..shards.len()).map(work).collect()
        } else {
            threads.install(|| (0..shards.len()).into_par_iter().map(work).collect())
        };
        let results = results
            .into_iter()
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.in_round("federation", round))?;

        let uploads = results
            .iter()
            .map(|r| StructuralUpload::<F>::decode(&r.upload, shape))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.in_round("federation", round))?;
        let degrees: Vec<f64> = uploads.iter().map(|u| u.avg_degree).collect();
        let alphas = aggregation_weights(&degrees).map_err(|e| e.in_round("federation", round))?;
        let blocks: Vec<Block<F>> = uploads.into_iter().map(|u| u.block).collect();
        bundle.global =
            aggregate_structural(&blocks, &alphas).map_err(|e| e.in_round("federation", round))?;
        bundle.pool.push(round, bundle.global.clone());
        bundle.pool_rounds.push(bundle.pool.rounds());

        let mean_loss = results.iter().map(|r| r.loss).sum::<f64>() / results.len() as f64;
        bundle.round_losses.push(mean_loss);
        bundle.clients = Vec::with_capacity(results.len());
        for (k, r) in results.into_iter().enumerate() {
            bundle.reports.push(PretrainReport {
                phase: "pretrain",
                round,
                client: k,
                loss: r.loss,
                alpha: alphas.alphas[k],
                beta: r.beta,
                bytes_up: r.upload.len() as u64,
                bytes_down: r.bytes_down,
                ms: r.ms,
            });
            bundle.clients.push(r.state);
        }
    }
    Ok(bundle)
}
