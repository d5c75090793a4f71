//! Two-layer mean-aggregation message passing with self-inclusion and
//! `tanh`, run once over positional encodings (structural branch) and once
//! over node features (semantic branch). Outputs are summed and row-wise
//! L2-normalized.

use ndarray::{Array1, Array2, Axis, Zip};
use rand_distr::{Distribution, Normal};

use super::params::{Block, EncoderParams};
use crate::error::{Error, Result};
use crate::graph::{ClientShard, Graph, PositionalEncoding};
use crate::rng::{stream, tag};
use crate::scalar::Scalar;

/// Rows with norm at or below this are left as exact zeros by the normalization.
pub const NORM_EPS: f64 = 1e-12;

/// Row-normalized `(A + I)` as neighbor lists.
#[derive(Debug, Clone)]
pub struct Propagator<F> {
    neighbors: Vec<Vec<usize>>,
    inv_count: Vec<F>,
    num_edges: usize,
}

impl<F: Scalar> Propagator<F> {
    pub fn new(graph: &Graph) -> Self {
        let n = graph.num_nodes();
        let neighbors: Vec<Vec<usize>> = (0..n).map(|v| graph.neighbors(v).to_vec()).collect();
        let inv_count = neighbors
            .iter()
            .map(|nb| F::one() / F::of((nb.len() + 1) as f64))
            .collect();
        Self {
            neighbors,
            inv_count,
            num_edges: graph.num_edges(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.neighbors.len()
    }

    pub fn num_edges(&self) -> usize {
        self.num_edges
    }

    /// `out[i] = (h[i] + sum_{j in N(i)} h[j]) / (deg(i) + 1)`.
    pub fn apply(&self, h: &Array2<F>) -> Array2<F> {
        let mut out = h.clone();
        for (i, nb) in self.neighbors.iter().enumerate() {
            let mut row = out.row_mut(i);
            for &j in nb {
                row += &h.row(j);
            }
            row.mapv_inplace(|x| x * self.inv_count[i]);
        }
        out
    }

    /// Adjoint of [`apply`](Self::apply).
    pub fn apply_transpose(&self, g: &Array2<F>) -> Array2<F> {
        let mut scaled = g.clone();
        for (i, mut row) in scaled.axis_iter_mut(Axis(0)).enumerate() {
            row.mapv_inplace(|x| x * self.inv_count[i]);
        }
        let mut out = scaled.clone();
        for (j, nb) in self.neighbors.iter().enumerate() {
            let mut row = out.row_mut(j);
            for &i in nb {
                row += &scaled.row(i);
            }
        }
        out
    }
}

/// Everything the encoder reads from one shard, converted to the model scalar.
#[derive(Debug, Clone)]
pub struct GraphInputs<F> {
    pub propagator: Propagator<F>,
    pub pe: Array2<F>,
    pub features: Array2<F>,
}

impl<F: Scalar> GraphInputs<F> {
    pub fn new(graph: &Graph, pe: &PositionalEncoding<F>) -> Result<Self> {
        if pe.matrix.nrows() != graph.num_nodes() {
            return Err(Error::Shape(format!(
                "positional encoding has {} rows for {} nodes",
                pe.matrix.nrows(),
                graph.num_nodes()
            )));
        }
        Ok(Self {
            propagator: Propagator::new(graph),
            pe: pe.matrix.clone(),
            features: graph.features().mapv(|x| F::of(x as f64)),
        })
    }

    pub fn from_shard(shard: &ClientShard, pe: &PositionalEncoding<F>) -> Result<Self> {
        Self::new(&shard.graph, pe)
    }

    pub fn num_nodes(&self) -> usize {
        self.propagator.num_nodes()
    }
}

/// Gaussian perturbation of the semantic branch input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisturbanceConfig {
    pub noise_std: f64,
    pub seed: u64,
}

impl DisturbanceConfig {
    pub const NONE: Self = Self {
        noise_std: 0.0,
        seed: 0,
    };
}

#[derive(Debug, Clone)]
pub struct BranchCache<F> {
    pub input: Array2<F>,
    /// Propagated input.
    pub ax: Array2<F>,
    pub h1: Array2<F>,
    pub ah1: Array2<F>,
    pub h2: Array2<F>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache<F> {
    pub structural: BranchCache<F>,
    pub semantic: BranchCache<F>,
    /// Sum of the two branch outputs before normalization.
    pub fused: Array2<F>,
    pub norms: Array1<F>,
    /// Normalized embeddings `Z^G`.
    pub z: Array2<F>,
    fingerprint: u64,
}

fn check_block<F: Scalar>(block: &Block<F>, input: &Array2<F>, n: usize, what: &str) -> Result<()> {
    if input.nrows() != n {
        return Err(Error::Shape(format!(
            "{what}: {} rows for {n} nodes",
            input.nrows()
        )));
    }
    if input.ncols() != block.w1.nrows() {
        return Err(Error::Shape(format!(
            "{what}: input width {} but W1 expects {}",
            input.ncols(),
            block.w1.nrows()
        )));
    }
    if block.w2.nrows() != block.w1.ncols() || block.w2.ncols() != block.w1.ncols() {
        return Err(Error::Shape(format!(
            "{what}: W2 must be square of the hidden width"
        )));
    }
    Ok(())
}

pub fn branch_forward<F: Scalar>(
    block: &Block<F>,
    prop: &Propagator<F>,
    input: &Array2<F>,
) -> BranchCache<F> {
    let ax = prop.apply(input);
    let h1 = ax.dot(&block.w1).mapv(F::tanh);
    let ah1 = prop.apply(&h1);
    let h2 = ah1.dot(&block.w2).mapv(F::tanh);
    BranchCache {
        input: input.clone(),
        ax,
        h1,
        ah1,
        h2,
    }
}

/// Sums branch outputs and L2-normalizes each row (tiny rows become zero).
pub fn fuse_and_normalize<F: Scalar>(
    structural: &Array2<F>,
    semantic: &Array2<F>,
) -> (Array2<F>, Array1<F>, Array2<F>) {
    let fused = structural + semantic;
    let norms: Array1<F> = fused
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|&x| x * x).sum::<F>().sqrt())
        .collect();
    let mut z = fused.clone();
    for (mut row, &norm) in z.axis_iter_mut(Axis(0)).zip(norms.iter()) {
        if norm.as_f64() > NORM_EPS {
            row.mapv_inplace(|x| x / norm);
        } else {
            row.fill(F::zero());
        }
    }
    (fused, norms, z)
}

fn noisy_features<F: Scalar>(features: &Array2<F>, disturb: &DisturbanceConfig) -> Array2<F> {
    if disturb.noise_std == 0.0 {
        return features.clone();
    }
    let normal = Normal::new(0.0, disturb.noise_std).expect("noise_std is finite and >= 0");
    let mut rng = stream(disturb.seed, &[tag::NOISE]);
    features.mapv(|x| x + F::of(normal.sample(&mut rng)))
}

/// Forward pass with feature disturbance drawn from `disturb`.
pub fn graph_forward<F: Scalar>(
    params: &EncoderParams<F>,
    inputs: &GraphInputs<F>,
    disturb: &DisturbanceConfig,
) -> Result<ForwardCache<F>> {
    if disturb.noise_std < 0.0 || !disturb.noise_std.is_finite() {
        return Err(Error::Shape(format!(
            "invalid noise_std {}",
            disturb.noise_std
        )));
    }
    let features = noisy_features(&inputs.features, disturb);
    graph_forward_on(params, inputs, &features)
}

/// Forward pass over explicit semantic-branch input features.
pub fn graph_forward_on<F: Scalar>(
    params: &EncoderParams<F>,
    inputs: &GraphInputs<F>,
    features: &Array2<F>,
) -> Result<ForwardCache<F>> {
    let n = inputs.num_nodes();
    check_block(&params.structural, &inputs.pe, n, "structural branch")?;
    check_block(&params.semantic, features, n, "semantic branch")?;
    if params.structural.w1.ncols() != params.semantic.w1.ncols() {
        return Err(Error::Shape("branches disagree on hidden width".into()));
    }
    let structural = branch_forward(&params.structural, &inputs.propagator, &inputs.pe);
    let semantic = branch_forward(&params.semantic, &inputs.propagator, features);
    let (fused, norms, z) = fuse_and_normalize(&structural.h2, &semantic.h2);
    Ok(ForwardCache {
        structural,
        semantic,
        fused,
        norms,
        z,
        fingerprint: params.checksum(),
    })
}

fn tanh_backward<F: Scalar>(upstream: &Array2<F>, out: &Array2<F>) -> Array2<F> {
    let mut g = upstream.clone();
    Zip::from(&mut g)
        .and(out)
        .for_each(|g, &h| *g = *g * (F::one() - h * h));
    g
}

fn branch_backward<F: Scalar>(
    block: &Block<F>,
    prop: &Propagator<F>,
    cache: &BranchCache<F>,
    g_out: &Array2<F>,
    want_input: bool,
) -> (Block<F>, Option<Array2<F>>) {
    let g_p2 = tanh_backward(g_out, &cache.h2);
    let w2 = cache.ah1.t().dot(&g_p2);
    let g_h1 = prop.apply_transpose(&g_p2.dot(&block.w2.t()));
    let g_p1 = tanh_backward(&g_h1, &cache.h1);
    let w1 = cache.ax.t().dot(&g_p1);
    let g_input = want_input.then(|| prop.apply_transpose(&g_p1.dot(&block.w1.t())));
    (Block { w1, w2 }, g_input)
}

fn normalize_backward<F: Scalar>(cache: &ForwardCache<F>, upstream: &Array2<F>) -> Array2<F> {
    let mut g = Array2::zeros(upstream.raw_dim());
    for i in 0..upstream.nrows() {
        let norm = cache.norms[i];
        if norm.as_f64() <= NORM_EPS {
            continue;
        }
        let z = cache.z.row(i);
        let up = upstream.row(i);
        let proj = z.dot(&up);
        let mut row = g.row_mut(i);
        Zip::from(&mut row)
            .and(&up)
            .and(&z)
            .for_each(|g, &u, &zz| *g = (u - zz * proj) / norm);
    }
    g
}

fn validate_backward<F: Scalar>(
    params: &EncoderParams<F>,
    cache: &ForwardCache<F>,
    upstream: &Array2<F>,
) -> Result<()> {
    if cache.fingerprint != params.checksum() {
        return Err(Error::StaleCache(
            "parameters changed since the forward pass".into(),
        ));
    }
    if upstream.dim() != cache.z.dim() {
        return Err(Error::Shape(format!(
            "upstream gradient {:?} does not match embeddings {:?}",
            upstream.dim(),
            cache.z.dim()
        )));
    }
    Ok(())
}

/// Exact parameter gradients of `sum(upstream * Z^G)`.
pub fn graph_backward<F: Scalar>(
    params: &EncoderParams<F>,
    prop: &Propagator<F>,
    cache: &ForwardCache<F>,
    upstream: &Array2<F>,
) -> Result<EncoderParams<F>> {
    graph_backward_impl(params, prop, cache, upstream, false).map(|(g, _)| g)
}

/// As [`graph_backward`], also returning the gradient w.r.t. the semantic input features.
pub fn graph_backward_with_input<F: Scalar>(
    params: &EncoderParams<F>,
    prop: &Propagator<F>,
    cache: &ForwardCache<F>,
    upstream: &Array2<F>,
) -> Result<(EncoderParams<F>, Array2<F>)> {
    graph_backward_impl(params, prop, cache, upstream, true)
        .map(|(g, x)| (g, x.expect("input gradient requested")))
}

fn graph_backward_impl<F: Scalar>(
    params: &EncoderParams<F>,
    prop: &Propagator<F>,
    cache: &ForwardCache<F>,
    upstream: &Array2<F>,
    want_input: bool,
) -> Result<(EncoderParams<F>, Option<Array2<F>>)> {
    validate_backward(params, cache, upstream)?;
    let g_fused = normalize_backward(cache, upstream);
    let (structural, _) =
        branch_backward(&params.structural, prop, &cache.structural, &g_fused, false);
    let (semantic, g_x) = branch_backward(
        &params.semantic,
        prop,
        &cache.semantic,
        &g_fused,
        want_input,
    );
    Ok((
        EncoderParams {
            structural,
            semantic,
        },
        g_x,
    ))
}
