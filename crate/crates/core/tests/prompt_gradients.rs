mod common;

use common::*;
use fedgala_core::alignment::LocalContext;
use fedgala_core::encoders::TextEncoder;
use fedgala_core::graph::{random_walk_pe, ClientShard, Graph, SplitSpec};
use fedgala_core::prompts::{prompt_loss_and_grads, TaskSpec};
use ndarray::{Array1, Array2};
use rand::Rng;

struct Instance {
    ctx: LocalContext<f64>,
    params: fedgala_core::encoders::EncoderParams<f64>,
    labels: Vec<u32>,
    phi_t: Array2<f64>,
    phi_g: Array1<f64>,
}

fn instance(seed: u64) -> Instance {
    let mut r = rng(seed);
    let (n, d, d_in, d_pe, vocab) = (5, 4, 3, 3, 6u32);
    let base = random_graph(n, d_in, &mut r);
    let labels: Vec<u32> = (0..n as u32).map(|v| v % 2).collect();
    let tokens: Vec<Vec<u32>> = (0..n)
        .map(|_| {
            (0..r.random_range(1..4))
                .map(|_| r.random_range(0..vocab))
                .collect()
        })
        .collect();
    let graph = Graph::new(
        base.edges().to_vec(),
        base.features().clone(),
        labels.clone(),
        tokens,
        2,
        vocab,
        0,
    )
    .unwrap();
    let shard = ClientShard::new(graph, (0..n).collect(), &SplitSpec::default(), seed);
    let text = TextEncoder::<f64>::new(vocab, d, seed);
    let ctx = LocalContext::new(&shard, &random_walk_pe(&shard.graph, d_pe), &text, 16).unwrap();
    Instance {
        ctx,
        params: random_params(d_pe, d_in, d, &mut r),
        labels,
        phi_t: randn(2, d, &mut r),
        phi_g: randn(1, d_in, &mut r).row(0).to_owned(),
    }
}

#[test]
fn prompt_gradients_match_central_differences() {
    let train: Vec<usize> = (0..5).collect();
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let inst = instance(seed);
        let task = TaskSpec {
            labels: &inst.labels,
            train: &train,
            classes: 2,
            sharpness: 10.0,
        };
        let loss = |t: &Array2<f64>, g: &Array1<f64>| {
            prompt_loss_and_grads(&inst.ctx, &inst.params, &task, t.view(), g.view())
                .unwrap()
                .loss
        };
        let grads = prompt_loss_and_grads(
            &inst.ctx,
            &inst.params,
            &task,
            inst.phi_t.view(),
            inst.phi_g.view(),
        )
        .unwrap();
        for idx in 0..inst.phi_t.len() {
            let (i, j) = (idx / inst.phi_t.ncols(), idx % inst.phi_t.ncols());
            let (mut up, mut down) = (inst.phi_t.clone(), inst.phi_t.clone());
            up[[i, j]] += FD_EPS;
            down[[i, j]] -= FD_EPS;
            let numeric = (loss(&up, &inst.phi_g) - loss(&down, &inst.phi_g)) / (2.0 * FD_EPS);
            worst = worst.max(rel_err(grads.text[[i, j]], numeric));
        }
        for j in 0..inst.phi_g.len() {
            let (mut up, mut down) = (inst.phi_g.clone(), inst.phi_g.clone());
            up[j] += FD_EPS;
            down[j] -= FD_EPS;
            let numeric = (loss(&inst.phi_t, &up) - loss(&inst.phi_t, &down)) / (2.0 * FD_EPS);
            worst = worst.max(rel_err(grads.graph[j], numeric));
        }
    }
    assert!(worst < 1e-4, "max relative error {worst:e}");
}
