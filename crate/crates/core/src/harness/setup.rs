use crate::alignment::LocalContext;
use crate::config::ExperimentConfig;
use crate::encoders::TextEncoder;
use crate::error::Result;
use crate::graph::{
    generate_synthetic, orthogonal_means, partition, random_walk_pe, ClientShard, DomainSpec,
};
use crate::rng::{derive_seed, stream, tag};
use crate::scalar::Scalar;

/// Domain of client `k`: clients are dealt round-robin over domains.
pub fn client_domain(config: &ExperimentConfig, k: usize) -> usize {
    k % config.domains
}

/// Generator spec for domain `g`, sized for the clients assigned to it.
pub fn domain_spec(config: &ExperimentConfig, g: usize) -> Result<DomainSpec> {
    let members = (0..config.clients)
        .filter(|&k| client_domain(config, k) == g)
        .count();
    let nodes = config.nodes_per_client * members.max(1);
    let width = config.vocab / (config.domains * config.classes) as u32;
    let mut rng = stream(config.seed, &[tag::DOMAIN, g as u64]);
    Ok(DomainSpec {
        domain_id: g as u32,
        class_means: orthogonal_means(config.classes, config.d_in, config.separation, &mut rng)?,
        nodes_per_class: nodes.div_ceil(config.classes),
        noise_std: config.feature_noise,
        p_in: config.p_in,
        p_out: config.p_out,
        vocab_size: config.vocab,
        class_tokens: (0..config.classes)
            .map(|c| {
                let start = (g * config.classes + c) as u32 * width;
                start..start + width
            })
            .collect(),
        tokens_per_node: config.tokens_per_node,
        text_coupling: config.text_coupling,
    })
}

/// Generates every domain graph and splits it among that domain's clients.
/// Shards are returned in client order.
pub fn generate_shards(config: &ExperimentConfig) -> Result<Vec<ClientShard>> {
    config.validate()?;
    let split = config.split_spec();
    let mut slots: Vec<Option<ClientShard>> = vec![None; config.clients];
    for g in 0..config.domains {
        let members: Vec<usize> = (0..config.clients)
            .filter(|&k| client_domain(config, k) == g)
            .collect();
        let graph = generate_synthetic(&domain_spec(config, g)?, config.seed)?;
        let parts = partition(
            &graph,
            members.len(),
            config.partition,
            derive_seed(config.seed, &[tag::PARTITION, g as u64]),
        )?;
        for (mut shard, k) in parts.into_iter().zip(members) {
            shard.resplit(&split, derive_seed(config.seed, &[tag::SPLIT, k as u64]));
            slots[k] = Some(shard);
        }
    }
    Ok(slots
        .into_iter()
        .map(|s| s.expect("every client belongs to a domain"))
        .collect())
}

pub fn text_encoder<F: Scalar>(config: &ExperimentConfig) -> TextEncoder<F> {
    TextEncoder::new(config.vocab, config.d, config.seed)
}

/// Per-client positional encodings and neighborhood text embeddings.
pub fn build_contexts<F: Scalar>(
    config: &ExperimentConfig,
    shards: &[ClientShard],
    text: &TextEncoder<F>,
) -> Result<Vec<LocalContext<F>>> {
    shards
        .iter()
        .map(|s| {
            LocalContext::new(
                s,
                &random_walk_pe(&s.graph, config.d_pe),
                text,
                config.max_summary_len,
            )
        })
        .collect()
}
