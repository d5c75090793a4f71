//! Weighted class prototypes built on a pre-trained encoder, and their
//! greedy cosine clustering into global class-wise tokens.

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::index::sample;

use crate::checksum::checksum_values;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::report::PrototypeLog;
use crate::rng::{stream, tag};
use crate::scalar::Scalar;

/// Cosine similarity in `f64`; zero when either vector is (near) zero.
pub fn cosine<F: Scalar>(a: ArrayView1<'_, F>, b: ArrayView1<'_, F>) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        let (x, y) = (x.as_f64(), y.as_f64());
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let denom = na.sqrt() * nb.sqrt();
    if denom <= 1e-12 {
        0.0
    } else {
        dot / denom
    }
}

/// Mean embedding of the given nodes of each class.
pub fn labeled_means<F: Scalar>(
    z: &Array2<F>,
    labels: &[u32],
    nodes: &[usize],
    classes: usize,
) -> Result<Array2<F>> {
    let mut sums = Array2::<f64>::zeros((classes, z.ncols()));
    let mut counts = vec![0usize; classes];
    for &v in nodes {
        let c = labels[v] as usize;
        counts[c] += 1;
        for (s, x) in sums.row_mut(c).iter_mut().zip(z.row(v)) {
            *s += x.as_f64();
        }
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::EmptyClass(c));
    }
    Ok(Array2::from_shape_fn(sums.raw_dim(), |(c, j)| {
        F::of(sums[[c, j]] / counts[c] as f64)
    }))
}

/// Row-wise softmax of `sharpness * cos(z_i, mean_c)`.
pub fn class_probabilities<F: Scalar>(
    z: &Array2<F>,
    means: &Array2<F>,
    sharpness: f64,
) -> Result<Array2<f64>> {
    if means.nrows() < 2 {
        return Err(Error::Shape("need at least two class means".into()));
    }
    if z.ncols() != means.ncols() {
        return Err(Error::Shape("embedding and mean widths differ".into()));
    }
    if let Some(c) = means
        .rows()
        .into_iter()
        .position(|m| m.iter().all(|x| *x == F::zero()))
    {
        return Err(Error::ZeroNorm(c));
    }
    let mut probs = Array2::zeros((z.nrows(), means.nrows()));
    for (i, zi) in z.rows().into_iter().enumerate() {
        let logits: Vec<f64> = means
            .rows()
            .into_iter()
            .map(|m| sharpness * cosine(zi, m))
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        for (c, e) in exps.into_iter().enumerate() {
            probs[[i, c]] = e / total;
        }
    }
    Ok(probs)
}

pub fn knowledge_strength(prob_row: ArrayView1<'_, f64>) -> f64 {
    prob_row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// `1 - mean_j cos(z_node, z_j)`; 1 when there are no neighbors.
pub fn knowledge_clarity<F: Scalar>(z: &Array2<F>, node: usize, neighbors: &[usize]) -> f64 {
    if neighbors.is_empty() {
        return 1.0;
    }
    let total: f64 = neighbors
        .iter()
        .map(|&j| cosine(z.row(node), z.row(j)))
        .sum();
    1.0 - total / neighbors.len() as f64
}

/// Graph neighbors of `node`, subsampled without replacement to at most `k`.
pub fn clarity_neighbors(graph: &Graph, node: usize, k: usize, seed: u64) -> Vec<usize> {
    let all = graph.neighbors(node);
    if all.len() <= k {
        return all.to_vec();
    }
    let mut rng = stream(seed, &[tag::CLARITY, node as u64]);
    let mut picked: Vec<usize> = sample(&mut rng, all.len(), k)
        .into_iter()
        .map(|i| all[i])
        .collect();
    picked.sort_unstable();
    picked
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeWeight {
    pub strength: f64,
    pub clarity: f64,
    pub omega: f64,
}

impl NodeWeight {
    pub fn new(strength: f64, clarity: f64) -> Self {
        Self {
            strength,
            clarity,
            omega: strength + clarity,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassPrototype<F> {
    pub class_id: usize,
    pub vector: Array1<F>,
    pub total_weight: f64,
}

/// Omega-weighted mean over `members` of class `class_id`; `None` when the
/// class has no members or zero total weight.
pub fn class_prototype<F: Scalar>(
    z: &Array2<F>,
    omegas: &[f64],
    labels: &[u32],
    members: &[usize],
    class_id: usize,
) -> Option<ClassPrototype<F>> {
    let mut acc = vec![0.0f64; z.ncols()];
    let mut total = 0.0;
    for (&v, &w) in members.iter().zip(omegas) {
        if labels[v] as usize != class_id {
            continue;
        }
        total += w;
        for (a, x) in acc.iter_mut().zip(z.row(v)) {
            *a += w * x.as_f64();
        }
    }
    (total > 0.0).then(|| ClassPrototype {
        class_id,
        vector: acc.into_iter().map(|a| F::of(a / total)).collect(),
        total_weight: total,
    })
}

/// Node weights and class prototypes over a client's labeled nodes.
pub struct ClientPrototypes<F> {
    pub weights: Vec<NodeWeight>,
    pub prototypes: Vec<ClassPrototype<F>>,
}

pub fn client_prototypes<F: Scalar>(
    graph: &Graph,
    z: &Array2<F>,
    labeled: &[usize],
    sharpness: f64,
    clarity_k: usize,
    seed: u64,
) -> Result<ClientPrototypes<F>> {
    let classes = graph.num_classes();
    let means = labeled_means(z, graph.labels(), labeled, classes)?;
    let rows = z.select(ndarray::Axis(0), labeled);
    let probs = class_probabilities(&rows, &means, sharpness)?;
    let weights: Vec<NodeWeight> = labeled
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let neighbors = clarity_neighbors(graph, v, clarity_k, seed);
            NodeWeight::new(
                knowledge_strength(probs.row(i)),
                knowledge_clarity(z, v, &neighbors),
            )
        })
        .collect();
    let omegas: Vec<f64> = weights.iter().map(|w| w.omega).collect();
    let prototypes = (0..classes)
        .filter_map(|c| class_prototype(z, &omegas, graph.labels(), labeled, c))
        .collect();
    Ok(ClientPrototypes {
        weights,
        prototypes,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalToken<F> {
    pub vector: Array1<F>,
    /// `(client, class)` of every member prototype, in join order.
    pub members: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GlobalTokenSet<F> {
    pub tokens: Vec<GlobalToken<F>>,
}

impl<F: Scalar> GlobalTokenSet<F> {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// A prototype as uploaded by one client.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeUpload<F> {
    pub client: usize,
    pub prototype: ClassPrototype<F>,
}

impl<F: Scalar> PrototypeUpload<F> {
    pub fn log(&self) -> PrototypeLog {
        PrototypeLog {
            client: self.client,
            class: self.prototype.class_id,
            weight: self.prototype.total_weight,
            vec_checksum: checksum_values(self.prototype.vector.iter()),
        }
    }
}

/// Greedy clustering in `(client, class)` order: each prototype joins the
/// first cluster whose current centroid has cosine >= `threshold`,
/// otherwise it opens a new cluster. Centroids are unweighted member means.
pub fn aggregate_prototypes<F: Scalar>(
    uploads: &[PrototypeUpload<F>],
    threshold: f64,
) -> GlobalTokenSet<F> {
    let mut order: Vec<&PrototypeUpload<F>> = uploads.iter().collect();
    order.sort_by_key(|u| (u.client, u.prototype.class_id));
    let mut sums: Vec<Vec<f64>> = Vec::new();
    let mut tokens: Vec<GlobalToken<F>> = Vec::new();
    for u in order {
        let p = &u.prototype.vector;
        let hit = tokens
            .iter()
            .position(|t| cosine(t.vector.view(), p.view()) >= threshold);
        let idx = match hit {
            Some(i) => i,
            None => {
                sums.push(vec![0.0; p.len()]);
                tokens.push(GlobalToken {
                    vector: p.clone(),
                    members: Vec::new(),
                });
                tokens.len() - 1
            }
        };
        for (s, x) in sums[idx].iter_mut().zip(p) {
            *s += x.as_f64();
        }
        let t = &mut tokens[idx];
        t.members.push((u.client, u.prototype.class_id));
        let n = t.members.len() as f64;
        t.vector = sums[idx].iter().map(|s| F::of(s / n)).collect();
    }
    GlobalTokenSet { tokens }
}
