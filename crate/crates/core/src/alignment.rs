//! Symmetric graph-text contrastive objective with a learnable log-scale
//! temperature, its exact gradients, and one client-side descent step.

use ndarray::{Array1, Array2, Axis};

use crate::encoders::{
    graph_backward, graph_forward, DisturbanceConfig, EncoderParams, GraphInputs, TextEncoder,
    NORM_EPS,
};
use crate::error::{Error, Result};
use crate::graph::{neighbor_summary, ClientShard, PositionalEncoding};
use crate::scalar::Scalar;

/// Log-scale temperature; similarities are multiplied by `exp(tau)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Temperature<F> {
    tau: F,
}

impl<F: Scalar> Temperature<F> {
    pub fn bound() -> F {
        F::of(100f64.ln())
    }

    /// Builds a temperature, clamping into `[-ln 100, ln 100]`.
    pub fn new(tau: F) -> Self {
        let b = Self::bound();
        Self {
            tau: tau.max(-b).min(b),
        }
    }

    pub fn tau(&self) -> F {
        self.tau
    }

    pub fn scale(&self) -> F {
        self.tau.exp()
    }
}

impl<F: Scalar> Default for Temperature<F> {
    fn default() -> Self {
        Self::new(F::zero())
    }
}

/// `s[i][j] = cos(z^G_i, z^T_j) * exp(tau)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix<F> {
    pub s: Array2<F>,
}

fn normalize_rows<F: Scalar>(z: &Array2<F>) -> Result<(Array2<F>, Array1<F>)> {
    let mut out = z.clone();
    let mut norms = Array1::zeros(z.nrows());
    for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let norm = row.iter().map(|&x| x * x).sum::<F>().sqrt();
        if norm.as_f64() <= NORM_EPS {
            return Err(Error::ZeroNorm(i));
        }
        row.mapv_inplace(|x| x / norm);
        norms[i] = norm;
    }
    Ok((out, norms))
}

fn check_pair<F>(z_g: &Array2<F>, z_t: &Array2<F>) -> Result<()> {
    if z_g.dim() != z_t.dim() {
        return Err(Error::Shape(format!(
            "graph embeddings {:?} vs text embeddings {:?}",
            z_g.dim(),
            z_t.dim()
        )));
    }
    if z_g.nrows() == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    Ok(())
}

pub fn similarity_matrix<F: Scalar>(
    z_g: &Array2<F>,
    z_t: &Array2<F>,
    temp: Temperature<F>,
) -> Result<SimilarityMatrix<F>> {
    check_pair(z_g, z_t)?;
    let (g, _) = normalize_rows(z_g)?;
    let (t, _) = normalize_rows(z_t)?;
    Ok(SimilarityMatrix {
        s: g.dot(&t.t()).mapv(|x| x * temp.scale()),
    })
}

fn log_sum_exp<'a, F: Scalar, I: Iterator<Item = &'a F> + Clone>(values: I) -> F {
    let max = values.clone().fold(F::neg_infinity(), |m, &x| m.max(x));
    max + values.map(|&x| (x - max).exp()).sum::<F>().ln()
}

/// Symmetric InfoNCE: the mean of row-wise and column-wise cross-entropy
/// with the diagonal as targets.
pub fn contrastive_loss<F: Scalar>(sim: &SimilarityMatrix<F>) -> F {
    let s = &sim.s;
    let n = s.nrows();
    let mut total = F::zero();
    for i in 0..n {
        let row = log_sum_exp(s.row(i).into_iter()) - s[[i, i]];
        let col = log_sum_exp(s.column(i).into_iter()) - s[[i, i]];
        total += row + col;
    }
    total / F::of(2.0 * n as f64)
}

#[derive(Debug, Clone)]
pub struct AlignmentGrads<F> {
    pub grad_z_g: Array2<F>,
    pub grad_tau: F,
    pub loss: F,
}

/// Gradients of [`contrastive_loss`] w.r.t. the graph embeddings and the
/// temperature. Text embeddings are constants.
pub fn alignment_grads<F: Scalar>(
    z_g: &Array2<F>,
    z_t: &Array2<F>,
    temp: Temperature<F>,
) -> Result<AlignmentGrads<F>> {
    check_pair(z_g, z_t)?;
    let (g_hat, g_norms) = normalize_rows(z_g)?;
    let (t_hat, _) = normalize_rows(z_t)?;
    let scale = temp.scale();
    let sim = SimilarityMatrix {
        s: g_hat.dot(&t_hat.t()).mapv(|x| x * scale),
    };
    let loss = contrastive_loss(&sim);
    let s = &sim.s;
    let n = s.nrows();

    // dL/ds = (softmax_row + softmax_col - 2I) / 2N
    let mut coef = Array2::<F>::zeros((n, n));
    for i in 0..n {
        let lse = log_sum_exp(s.row(i).into_iter());
        for j in 0..n {
            coef[[i, j]] = (s[[i, j]] - lse).exp();
        }
    }
    for j in 0..n {
        let lse = log_sum_exp(s.column(j).into_iter());
        for i in 0..n {
            coef[[i, j]] += (s[[i, j]] - lse).exp();
        }
    }
    let two = F::of(2.0);
    for i in 0..n {
        coef[[i, i]] -= two;
    }
    coef.mapv_inplace(|x| x / F::of(2.0 * n as f64));

    let grad_tau = (&coef * s).sum();
    let d_hat = coef.dot(&t_hat).mapv(|x| x * scale);
    let mut grad_z_g = Array2::zeros(z_g.raw_dim());
    for i in 0..n {
        let gi = g_hat.row(i);
        let di = d_hat.row(i);
        let proj = gi.dot(&di);
        let norm = g_norms[i];
        for k in 0..gi.len() {
            grad_z_g[[i, k]] = (di[k] - gi[k] * proj) / norm;
        }
    }
    Ok(AlignmentGrads {
        grad_z_g,
        grad_tau,
        loss,
    })
}

/// A client's encoder inputs plus the frozen text embeddings of every
/// node's neighborhood summary.
#[derive(Debug, Clone)]
pub struct LocalContext<F> {
    pub inputs: GraphInputs<F>,
    pub text: Array2<F>,
    /// Token count of each node's summary.
    pub summary_lens: Vec<usize>,
}

impl<F: Scalar> LocalContext<F> {
    pub fn new(
        shard: &ClientShard,
        pe: &PositionalEncoding<F>,
        text_encoder: &TextEncoder<F>,
        max_summary_len: usize,
    ) -> Result<Self> {
        let summaries: Vec<Vec<u32>> = (0..shard.num_nodes())
            .map(|v| neighbor_summary(&shard.graph, v, max_summary_len))
            .collect();
        Ok(Self {
            inputs: GraphInputs::from_shard(shard, pe)?,
            text: text_encoder.encode_many(&summaries)?,
            summary_lens: summaries.iter().map(Vec::len).collect(),
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.inputs.num_nodes()
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome<F> {
    pub params: EncoderParams<F>,
    pub temp: Temperature<F>,
    /// Loss before the update.
    pub loss: F,
}

/// Contrastive loss of `params` on `batch` without updating anything.
pub fn local_loss<F: Scalar>(
    ctx: &LocalContext<F>,
    params: &EncoderParams<F>,
    temp: Temperature<F>,
    batch: &[usize],
    disturb: &DisturbanceConfig,
) -> Result<F> {
    let cache = graph_forward(params, &ctx.inputs, disturb)?;
    let z_g = cache.z.select(Axis(0), batch);
    let z_t = ctx.text.select(Axis(0), batch);
    Ok(contrastive_loss(&similarity_matrix(&z_g, &z_t, temp)?))
}

/// One full-batch gradient-descent step on both encoder branches and the
/// temperature.
pub fn local_train_step<F: Scalar>(
    ctx: &LocalContext<F>,
    params: &EncoderParams<F>,
    temp: Temperature<F>,
    batch: &[usize],
    lr: F,
    disturb: &DisturbanceConfig,
) -> Result<StepOutcome<F>> {
    if batch.is_empty() {
        return Err(Error::Shape("empty training batch".into()));
    }
    if let Some(&v) = batch.iter().find(|&&v| v >= ctx.num_nodes()) {
        return Err(Error::Shape(format!("batch node {v} out of range")));
    }
    let cache = graph_forward(params, &ctx.inputs, disturb)?;
    let z_g = cache.z.select(Axis(0), batch);
    let z_t = ctx.text.select(Axis(0), batch);
    let grads = alignment_grads(&z_g, &z_t, temp)?;
    if lr == F::zero() {
        return Ok(StepOutcome {
            params: params.clone(),
            temp,
            loss: grads.loss,
        });
    }
    let mut upstream = Array2::zeros(cache.z.raw_dim());
    for (row, &v) in batch.iter().enumerate() {
        let mut target = upstream.row_mut(v);
        target += &grads.grad_z_g.row(row);
    }
    let g = graph_backward(params, &ctx.inputs.propagator, &cache, &upstream)?;
    let mut next = params.clone();
    next.add_scaled(-lr, &g);
    Ok(StepOutcome {
        params: next,
        temp: Temperature::new(temp.tau() - lr * grads.grad_tau),
        loss: grads.loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use ndarray::{array, Array2};
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = stream(seed, &[]);
        Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut rng))
    }

    #[test]
    fn orthonormal_rows_give_identity() {
        let eye = Array2::<f64>::eye(3);
        let sim = similarity_matrix(&eye, &eye, Temperature::default()).unwrap();
        assert_eq!(sim.s, eye);
        let doubled = similarity_matrix(&eye, &eye, Temperature::new(2f64.ln())).unwrap();
        for (a, b) in doubled.s.iter().zip(sim.s.iter()) {
            assert!((a - 2.0 * b).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_pairwise_cosine_loop() {
        let (g, t) = (randn(3, 5, 1), randn(3, 5, 2));
        let temp = Temperature::new(0.3);
        let sim = similarity_matrix(&g, &t, temp).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let (a, b) = (g.row(i), t.row(j));
                let cos = a.dot(&b) / (a.dot(&a).sqrt() * b.dot(&b).sqrt());
                assert!((sim.s[[i, j]] - cos * 0.3f64.exp()).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_row_rejected() {
        let mut g = randn(2, 3, 1);
        g.row_mut(1).fill(0.0);
        assert!(matches!(
            similarity_matrix(&g, &randn(2, 3, 2), Temperature::default()),
            Err(Error::ZeroNorm(1))
        ));
    }

    #[test]
    fn loss_examples() {
        let one = SimilarityMatrix { s: array![[3.7]] };
        assert_eq!(contrastive_loss(&one), 0.0);
        let flat = SimilarityMatrix {
            s: array![[0.4, 0.4], [0.4, 0.4]],
        };
        assert!((contrastive_loss(&flat) - 2f64.ln()).abs() < 1e-15);
        let margin = |m: f64| {
            contrastive_loss(&SimilarityMatrix {
                s: Array2::<f64>::eye(4) * m,
            })
        };
        assert!(margin(10.0) < margin(5.0));
        assert!(margin(5.0) < margin(1.0));
        assert!(margin(10.0) > 0.0 && margin(10.0) < 1e-3);
    }

    #[test]
    fn temperature_is_clamped() {
        assert!((Temperature::new(50.0f64).tau() - 100f64.ln()).abs() < 1e-15);
        assert!((Temperature::new(-50.0f64).tau() + 100f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn tau_gradient_negative_when_diagonal_dominates() {
        let g = array![[1.0, 0.1, 0.0], [0.0, 1.0, 0.1], [0.1, 0.0, 1.0]];
        let grads = alignment_grads(&g, &g, Temperature::new(0.0)).unwrap();
        assert!(grads.grad_tau < 0.0);
        let eps = 1e-6;
        let f =
            |tau: f64| contrastive_loss(&similarity_matrix(&g, &g, Temperature::new(tau)).unwrap());
        let fd = (f(eps) - f(-eps)) / (2.0 * eps);
        assert!((fd - grads.grad_tau).abs() < 1e-8);
    }

    #[test]
    fn aligned_pairs_at_large_temperature_have_small_gradients() {
        let eye = Array2::<f64>::eye(4);
        let grads = alignment_grads(&eye, &eye, Temperature::new(100f64.ln())).unwrap();
        assert!(grads.grad_z_g.iter().all(|x| x.abs() < 1e-3));
        assert!(grads.grad_tau.abs() < 1e-3);
    }

    #[test]
    fn embedding_gradient_matches_central_differences() {
        let (g, t) = (randn(4, 3, 11), randn(4, 3, 12));
        let temp = Temperature::new(0.7);
        let grads = alignment_grads(&g, &t, temp).unwrap();
        let eps = 1e-4;
        for i in 0..4 {
            for k in 0..3 {
                let mut up = g.clone();
                up[[i, k]] += eps;
                let mut dn = g.clone();
                dn[[i, k]] -= eps;
                let f =
                    |z: &Array2<f64>| contrastive_loss(&similarity_matrix(z, &t, temp).unwrap());
                let fd = (f(&up) - f(&dn)) / (2.0 * eps);
                let a = grads.grad_z_g[[i, k]];
                assert!(
                    (a - fd).abs() <= 1e-4 * a.abs().max(fd.abs()).max(1e-3),
                    "{a} vs {fd}"
                );
            }
        }
    }

    proptest! {
        #[test]
        fn loss_is_transpose_symmetric_and_nonnegative(seed in 0u64..5000, n in 1usize..7) {
            let s = randn(n, n, seed) * 3.0;
            let a = contrastive_loss(&SimilarityMatrix { s: s.clone() });
            let b = contrastive_loss(&SimilarityMatrix { s: s.t().to_owned() });
            prop_assert_eq!(a.to_bits(), b.to_bits());
            prop_assert!(a >= 0.0);
        }

        #[test]
        fn loss_is_permutation_invariant(seed in 0u64..5000, n in 2usize..7) {
            use rand::seq::SliceRandom;
            let s = randn(n, n, seed);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut stream(seed, &[1]));
            let p = Array2::from_shape_fn((n, n), |(i, j)| s[[perm[i], perm[j]]]);
            let a = contrastive_loss(&SimilarityMatrix { s });
            let b = contrastive_loss(&SimilarityMatrix { s: p });
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
