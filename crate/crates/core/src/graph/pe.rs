use ndarray::Array2;

use super::Graph;
use crate::scalar::Scalar;

/// Random-walk return probabilities: column `t` of row `i` is the chance a
/// uniform walk from `i` is back at `i` after `t + 1` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionalEncoding<F> {
    pub matrix: Array2<F>,
    pub depth: usize,
}

impl<F: Scalar> PositionalEncoding<F> {
    pub fn dim(&self) -> usize {
        self.depth
    }
}

/// Builds the encoding from topology alone. Isolated nodes get zero rows.
pub fn random_walk_pe<F: Scalar>(graph: &Graph, depth: usize) -> PositionalEncoding<F> {
    let n = graph.num_nodes();
    let mut matrix = Array2::<F>::zeros((n, depth));
    let mut dist = vec![0.0f64; n];
    let mut next = vec![0.0f64; n];
    for start in 0..n {
        if graph.degree(start) == 0 {
            continue;
        }
        dist.iter_mut().for_each(|x| *x = 0.0);
        dist[start] = 1.0;
        for t in 0..depth {
            next.iter_mut().for_each(|x| *x = 0.0);
            for (u, &mass) in dist.iter().enumerate() {
                if mass == 0.0 {
                    continue;
                }
                let share = mass / graph.degree(u) as f64;
                for &w in graph.neighbors(u) {
                    next[w] += share;
                }
            }
            std::mem::swap(&mut dist, &mut next);
            matrix[[start, t]] = F::of(dist[start]);
        }
    }
    PositionalEncoding { matrix, depth }
}
