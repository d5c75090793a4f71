#![allow(dead_code)]

use fedgala_core::alignment::{alignment_grads, contrastive_loss, similarity_matrix, Temperature};
use fedgala_core::encoders::{
    graph_backward, graph_forward, Block, DisturbanceConfig, EncoderParams, GraphInputs,
};
use fedgala_core::graph::{random_walk_pe, Graph};
use fedgala_core::rng::{stream, SimRng};
use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub const FD_EPS: f64 = 1e-4;
/// Gradient entries smaller than this are compared on an absolute scale of
/// this size: central differences at `FD_EPS` resolve about 1e-9 absolute.
pub const FD_FLOOR: f64 = 1e-3;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

pub fn randn(rows: usize, cols: usize, rng: &mut SimRng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

/// Random graph with `n` nodes, edge density 0.5, Gaussian features.
pub fn random_graph(n: usize, d_in: usize, rng: &mut SimRng) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            if rng.random_bool(0.5) {
                edges.push((u, v));
            }
        }
    }
    let feats = randn(n, d_in, rng).mapv(|x| x as f32);
    Graph::new(
        edges,
        feats,
        vec![0; n],
        (0..n).map(|v| vec![v as u32]).collect(),
        1,
        n as u32,
        0,
    )
    .unwrap()
}

pub fn random_params(d_pe: usize, d_in: usize, d: usize, rng: &mut SimRng) -> EncoderParams<f64> {
    EncoderParams {
        structural: Block::random(d_pe, d, rng),
        semantic: Block::random(d_in, d, rng),
    }
}

pub fn rng(seed: u64) -> SimRng {
    stream(seed, &[0xfd])
}

/// Visits every parameter entry in fixed order, mutably.
pub fn for_each_param(
    params: &mut EncoderParams<f64>,
    mut f: impl FnMut(&mut EncoderParams<f64>, usize, usize, usize),
) {
    let shapes = [
        params.structural.w1.dim(),
        params.structural.w2.dim(),
        params.semantic.w1.dim(),
        params.semantic.w2.dim(),
    ];
    for (m, (r, c)) in shapes.into_iter().enumerate() {
        for i in 0..r {
            for j in 0..c {
                f(params, m, i, j);
            }
        }
    }
}

pub fn entry(params: &mut EncoderParams<f64>, m: usize, i: usize, j: usize) -> &mut f64 {
    match m {
        0 => &mut params.structural.w1[[i, j]],
        1 => &mut params.structural.w2[[i, j]],
        2 => &mut params.semantic.w1[[i, j]],
        _ => &mut params.semantic.w2[[i, j]],
    }
}

pub fn entry_of(params: &EncoderParams<f64>, m: usize, i: usize, j: usize) -> f64 {
    match m {
        0 => params.structural.w1[[i, j]],
        1 => params.structural.w2[[i, j]],
        2 => params.semantic.w1[[i, j]],
        _ => params.semantic.w2[[i, j]],
    }
}

/// Max relative error of the full encoder + contrastive-loss gradient on one
/// random instance (parameters and temperature).
///
/// Instances whose fused branch outputs nearly cancel (row norm < 0.1) are
/// redrawn: the normalization's curvature there is ~1/norm^3, which swamps
/// the O(eps^2) truncation error of central differences.
pub fn full_stack_error(seed: u64) -> f64 {
    let mut rng = rng(seed);
    loop {
        let n = rng.random_range(2..=6);
        let d = rng.random_range(2..=4);
        let d_in = rng.random_range(1..=3);
        let d_pe = rng.random_range(1..=3);
        let graph = random_graph(n, d_in, &mut rng);
        let pe = random_walk_pe::<f64>(&graph, d_pe);
        let inputs = GraphInputs::new(&graph, &pe).unwrap();
        let params = random_params(d_pe, d_in, d, &mut rng);
        let text = randn(n, d, &mut rng);
        let temp = Temperature::new(rng.random_range(-1.0..1.0));
        let disturb = DisturbanceConfig {
            noise_std: 0.3,
            seed,
        };
        let cache = graph_forward(&params, &inputs, &disturb).unwrap();
        if cache.norms.iter().any(|&r| r < 0.1) {
            continue;
        }
        return instance_error(&inputs, &params, &text, temp, &disturb);
    }
}

fn instance_error(
    inputs: &GraphInputs<f64>,
    params: &EncoderParams<f64>,
    text: &Array2<f64>,
    temp: Temperature<f64>,
    disturb: &DisturbanceConfig,
) -> f64 {
    let batch: Vec<usize> = (0..inputs.num_nodes()).collect();
    let loss_at = |p: &EncoderParams<f64>, t: Temperature<f64>| {
        let cache = graph_forward(p, inputs, disturb).unwrap();
        let z = cache.z.select(Axis(0), &batch);
        contrastive_loss(&similarity_matrix(&z, text, t).unwrap())
    };

    let cache = graph_forward(params, inputs, disturb).unwrap();
    let grads = alignment_grads(&cache.z, text, temp).unwrap();
    let analytic = graph_backward(params, &inputs.propagator, &cache, &grads.grad_z_g).unwrap();

    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    for_each_param(&mut params.clone(), |_, m, i, j| {
        let orig = *entry(&mut probe, m, i, j);
        *entry(&mut probe, m, i, j) = orig + FD_EPS;
        let up = loss_at(&probe, temp);
        *entry(&mut probe, m, i, j) = orig - FD_EPS;
        let dn = loss_at(&probe, temp);
        *entry(&mut probe, m, i, j) = orig;
        let numeric = (up - dn) / (2.0 * FD_EPS);
        worst = worst.max(rel_err(entry_of(&analytic, m, i, j), numeric));
    });
    let numeric_tau = (loss_at(params, Temperature::new(temp.tau() + FD_EPS))
        - loss_at(params, Temperature::new(temp.tau() - FD_EPS)))
        / (2.0 * FD_EPS);
    worst.max(rel_err(grads.grad_tau, numeric_tau))
}
