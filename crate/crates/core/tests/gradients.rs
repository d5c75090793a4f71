//! Finite-difference checks of the hand-derived backward passes.

mod common;

use common::*;
use fedgala_core::encoders::GraphInputs;
use fedgala_core::graph::random_walk_pe;
use ndarray::Array2;
use rand::Rng;

#[test]
fn full_stack_gradients_match_central_differences() {
    let worst = (0..100).map(full_stack_error).fold(0.0, f64::max);
    assert!(worst < 1e-4, "max relative error {worst:e}");
}

#[test]
fn input_feature_gradient_matches_central_differences() {
    use fedgala_core::encoders::{graph_backward_with_input, graph_forward_on};
    for seed in 0..20 {
        let mut rng = rng(1000 + seed);
        let n = rng.random_range(2..=6);
        let graph = random_graph(n, 3, &mut rng);
        let pe = random_walk_pe::<f64>(&graph, 2);
        let inputs = GraphInputs::new(&graph, &pe).unwrap();
        let params = random_params(2, 3, 4, &mut rng);
        let weights: Array2<f64> = randn(n, 4, &mut rng);
        let objective =
            |x: &Array2<f64>| (&graph_forward_on(&params, &inputs, x).unwrap().z * &weights).sum();
        let cache = graph_forward_on(&params, &inputs, &inputs.features).unwrap();
        let (_, g_x) =
            graph_backward_with_input(&params, &inputs.propagator, &cache, &weights).unwrap();
        for i in 0..n {
            for k in 0..3 {
                let mut up = inputs.features.clone();
                up[[i, k]] += FD_EPS;
                let mut dn = inputs.features.clone();
                dn[[i, k]] -= FD_EPS;
                let numeric = (objective(&up) - objective(&dn)) / (2.0 * FD_EPS);
                assert!(
                    rel_err(g_x[[i, k]], numeric) < 1e-4,
                    "seed {seed}: {} vs {numeric}",
                    g_x[[i, k]]
                );
            }
        }
    }
}
