use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;

use super::{
    finetune_prompts, group_aggregate, prompted_accuracy, select_prompts, PromptPool,
    PromptSelection, PromptUpdate, TaskSpec,
};
use crate::alignment::LocalContext;
use crate::config::ExperimentConfig;
use crate::encoders::EncoderParams;
use crate::error::{Error, Result};
use crate::graph::ClientShard;
use crate::report::FinetuneReport;
use crate::scalar::Scalar;
use crate::transport::{Direction, PoolBroadcast, PromptUpload, Transport};

#[derive(Debug, Clone)]
pub struct FinetunedBundle<F> {
    pub text_pool: PromptPool<F>,
    pub graph_pool: PromptPool<F>,
    /// Per-prompt checksums of both pools: entry 0 is the initial state,
    /// entry `t` the state after round `t`.
    pub pool_checksums: Vec<(Vec<u64>, Vec<u64>)>,
    /// Selections made at the start of each round.
    pub selections: Vec<Vec<PromptSelection>>,
    pub reports: Vec<FinetuneReport>,
    /// Selections against the final pools, used for testing.
    pub final_selections: Vec<PromptSelection>,
    pub test_accuracy: Vec<f64>,
    /// Bytes of every pool broadcast, including the final one.
    pub bytes_down: u64,
}

fn broadcast<F: Scalar>(text: &PromptPool<F>, graph: &PromptPool<F>) -> Vec<u8> {
    PoolBroadcast {
        text: text.prompts.clone(),
        graph: graph.prompts.iter().map(|p| p.row(0).to_owned()).collect(),
    }
    .encode()
}

fn receive<F: Scalar>(
    config: &ExperimentConfig,
    bytes: &[u8],
) -> Result<(PromptPool<F>, PromptPool<F>)> {
    let pools = PoolBroadcast::<F>::decode(
        bytes,
        config.pool_size,
        config.prompt_len,
        config.d,
        config.d_in,
    )?;
    Ok((
        PromptPool {
            channel: super::Channel::Text,
            prompts: pools.text,
        },
        PromptPool {
            channel: super::Channel::Graph,
            prompts: pools
                .graph
                .into_iter()
                .map(|g| g.insert_axis(Axis(0)))
                .collect(),
        },
    ))
}

struct ClientRound {
    selection: PromptSelection,
    upload: Vec<u8>,
}

fn task<'a>(config: &ExperimentConfig, shard: &'a ClientShard) -> TaskSpec<'a> {
    TaskSpec {
        labels: shard.graph.labels(),
        train: &shard.train,
        classes: shard.graph.num_classes(),
        sharpness: config.sharpness,
    }
}

/// Phase II: `config.ft_rounds` rounds of selection, prompt tuning on the
/// frozen `backbones`, upload and group-aware aggregation, followed by a
/// final selection and test evaluation on the last pools.
pub fn run_finetuning<F: Scalar>(
    config: &ExperimentConfig,
    backbones: &[EncoderParams<F>],
    shards: &[ClientShard],
    contexts: &[LocalContext<F>],
    pools: (PromptPool<F>, PromptPool<F>),
    transport: &Transport,
) -> Result<FinetunedBundle<F>> {
    config.validate()?;
    let clients = shards.len();
    if clients == 0 || backbones.len() != clients || contexts.len() != clients {
        return Err(Error::LengthMismatch {
            expected: clients.max(1),
            got: backbones.len().min(contexts.len()),
        });
    }
    let threads = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let run_all = |f: &(dyn Fn(usize) -> Result<ClientRound> + Sync)| -> Vec<Result<ClientRound>> {
        if config.workers == 1 {
            (0..clients).map(f).collect()
        } else {
            threads.install(|| (0..clients).into_par_iter().map(f).collect())
        }
    };

    let (mut text_pool, mut graph_pool) = pools;
    let mut bundle = FinetunedBundle {
        pool_checksums: vec![(text_pool.checksums(), graph_pool.checksums())],
        text_pool: text_pool.clone(),
        graph_pool: graph_pool.clone(),
        selections: Vec::new(),
        reports: Vec::new(),
        final_selections: Vec::new(),
        test_accuracy: Vec::new(),
        bytes_down: 0,
    };
    let mut graph_held = vec![0usize; clients];

    for round in 1..=config.ft_rounds {
        let payload = broadcast(&text_pool, &graph_pool);
        let held = &graph_held;
        let work = |k: usize| -> Result<ClientRound> {
            let bytes = transport.send(Direction::Down, payload.clone());
            let (text, graph) = receive::<F>(config, &bytes)?;
            let shard = &shards[k];
            let task = task(config, shard);
            let sel = select_prompts(
                &contexts[k],
                &backbones[k],
                &task,
                &text,
                &graph,
                held[k],
                &shard.val,
                k,
            )?;
            let tuned = finetune_prompts(
                &contexts[k],
                &backbones[k],
                &task,
                &text.prompts[sel.text_index],
                &graph.prompts[sel.graph_index].row(0).to_owned(),
                config.lr_ft,
                config.ft_epochs,
            )?;
            let upload = PromptUpload {
                text_index: sel.text_index as u32,
                graph_index: sel.graph_index as u32,
                samples: shard.train.len() as u64,
                text_prompt: tuned.text,
                graph_prompt: tuned.graph,
            };
            Ok(ClientRound {
                selection: sel,
                upload: transport.send(Direction::Up, upload.encode()),
            })
        };
        let results = run_all(&work)
            .into_iter()
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.in_round("prompts", round))?;
        bundle.bytes_down += (payload.len() * clients) as u64;

        let mut text_updates = Vec::with_capacity(clients);
        let mut graph_updates = Vec::with_capacity(clients);
        for (k, r) in results.iter().enumerate() {
            let up = PromptUpload::<F>::decode(&r.upload, config.prompt_len, config.d, config.d_in)
                .map_err(|e| e.in_round("prompts", round))?;
            text_updates.push(PromptUpdate {
                client: k,
                index: up.text_index as usize,
                prompt: up.text_prompt,
                samples: up.samples,
            });
            graph_updates.push(PromptUpdate {
                client: k,
                index: up.graph_index as usize,
                prompt: up.graph_prompt.insert_axis(Axis(0)),
                samples: up.samples,
            });
            bundle.reports.push(FinetuneReport {
                phase: "finetune",
                round,
                client: k,
                sel_T: r.selection.text_index,
                sel_G: r.selection.graph_index,
                val: r.selection.validation_score,
                bytes_up: r.upload.len() as u64,
            });
            graph_held[k] = r.selection.graph_index;
        }
        text_pool = group_aggregate(&text_pool, &text_updates)
            .map_err(|e| e.in_round("prompts", round))?
            .0;
        graph_pool = group_aggregate(&graph_pool, &graph_updates)
            .map_err(|e| e.in_round("prompts", round))?
            .0;
        bundle
            .pool_checksums
            .push((text_pool.checksums(), graph_pool.checksums()));
        bundle
            .selections
            .push(results.into_iter().map(|r| r.selection).collect());
    }

    let payload = broadcast(&text_pool, &graph_pool);
    let finals = (0..clients)
        .map(|k| {
            let bytes = transport.send(Direction::Down, payload.clone());
            let (text, graph) = receive::<F>(config, &bytes)?;
            let shard = &shards[k];
            let task = task(config, shard);
            let sel = select_prompts(
                &contexts[k],
                &backbones[k],
                &task,
                &text,
                &graph,
                graph_held[k],
                &shard.val,
                k,
            )?;
            let phi_t: &Array2<F> = &text.prompts[sel.text_index];
            let phi_g: Array1<F> = graph.prompts[sel.graph_index].row(0).to_owned();
            let acc = prompted_accuracy(
                &contexts[k],
                &backbones[k],
                &task,
                phi_t.view(),
                phi_g.view(),
                &shard.test,
            )?;
            Ok((sel, acc))
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_round("prompts", config.ft_rounds + 1))?;
    bundle.bytes_down += (payload.len() * clients) as u64;
    for (sel, acc) in finals {
        bundle.final_selections.push(sel);
        bundle.test_accuracy.push(acc);
    }
    bundle.text_pool = text_pool;
    bundle.graph_pool = graph_pool;
    Ok(bundle)
}
