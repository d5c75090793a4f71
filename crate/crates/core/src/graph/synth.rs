use std::ops::Range;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Graph;
use crate::error::{Error, Result};
use crate::rng::{stream, tag, SimRng};

/// Generator parameters for one synthetic domain.
///
/// Nodes are laid out class-major: class 0 occupies ids `0..nodes_per_class`,
/// class 1 the next block, and so on.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    pub domain_id: u32,
    /// One feature-space mean per class; all rows share the feature dimension.
    pub class_means: Vec<Vec<f64>>,
    pub nodes_per_class: usize,
    pub noise_std: f64,
    /// Intra-class edge probability.
    pub p_in: f64,
    /// Inter-class edge probability.
    pub p_out: f64,
    pub vocab_size: u32,
    /// Token ids available to each class.
    pub class_tokens: Vec<Range<u32>>,
    pub tokens_per_node: usize,
    /// Scale of the bag-of-tokens term mixed into node features (0 disables it).
    pub text_coupling: f64,
}

impl DomainSpec {
    pub fn num_classes(&self) -> usize {
        self.class_means.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.class_means.first().map_or(0, Vec::len)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.nodes_per_class == 0 {
            return bad("zero nodes per class".into());
        }
        if self.num_classes() < 2 {
            return bad(format!(
                "need at least 2 classes, got {}",
                self.num_classes()
            ));
        }
        let d = self.feature_dim();
        if d == 0 || self.class_means.iter().any(|m| m.len() != d) {
            return bad("class means must share a non-zero dimension".into());
        }
        if !(0.0..=1.0).contains(&self.p_in) || !(0.0..=1.0).contains(&self.p_out) {
            return bad("edge probabilities must lie in [0, 1]".into());
        }
        if self.p_in <= self.p_out {
            return bad("intra-class edge probability must exceed inter-class".into());
        }
        if self.noise_std < 0.0 || self.text_coupling < 0.0 {
            return bad("noise and coupling scales must be non-negative".into());
        }
        if self.class_tokens.len() != self.num_classes() {
            return bad("one token range per class required".into());
        }
        if self
            .class_tokens
            .iter()
            .any(|r| r.is_empty() || r.end > self.vocab_size)
        {
            return bad("token ranges must be non-empty and inside the vocabulary".into());
        }
        if self.tokens_per_node == 0 {
            return bad("tokens_per_node must be >= 1".into());
        }
        Ok(())
    }
}

/// Class means of norm `separation / sqrt(2)` along mutually orthogonal
/// random directions, so every pair of means is exactly `separation` apart.
pub fn orthogonal_means(
    classes: usize,
    dim: usize,
    separation: f64,
    rng: &mut SimRng,
) -> Result<Vec<Vec<f64>>> {
    if classes > dim {
        return Err(Error::InvalidSpec(format!(
            "{classes} orthogonal means need dimension >= {classes}, got {dim}"
        )));
    }
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(classes);
    while basis.len() < classes {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    let scale = separation / std::f64::consts::SQRT_2;
    Ok(basis
        .into_iter()
        .map(|b| b.into_iter().map(|x| x * scale).collect())
        .collect())
}

/// Draws a stochastic-block-model graph with class-conditioned Gaussian
/// features and class-specific token sequences.
pub fn generate_synthetic(spec: &DomainSpec, seed: u64) -> Result<Graph> {
    spec.validate()?;
    let classes = spec.num_classes();
    let n = classes * spec.nodes_per_class;
    let d = spec.feature_dim();
    let mut rng = stream(seed, &[tag::GENERATE, spec.domain_id as u64]);

    let labels: Vec<u32> = (0..n).map(|v| (v / spec.nodes_per_class) as u32).collect();

    let tokens: Vec<Vec<u32>> = labels
        .iter()
        .map(|&c| {
            let range = spec.class_tokens[c as usize].clone();
            (0..spec.tokens_per_node)
                .map(|_| rng.random_range(range.clone()))
                .collect()
        })
        .collect();

    // Bag-of-tokens projection, drawn only when the coupling is active so the
    // stream for coupling-free specs stays unchanged.
    let projection: Option<Array2<f64>> = (spec.text_coupling > 0.0).then(|| {
        Array2::from_shape_simple_fn((spec.vocab_size as usize, d), || {
            StandardNormal.sample(&mut rng)
        })
    });

    let mut features = Array2::<f32>::zeros((n, d));
    for v in 0..n {
        let mean = &spec.class_means[labels[v] as usize];
        for j in 0..d {
            let noise: f64 = rng.sample(StandardNormal);
            let mut x = mean[j] + spec.noise_std * noise;
            if let Some(p) = &projection {
                let bag: f64 = tokens[v].iter().map(|&t| p[[t as usize, j]]).sum();
                x += spec.text_coupling * bag / tokens[v].len() as f64;
            }
            features[[v, j]] = x as f32;
        }
    }

    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if labels[u] == labels[v] {
                spec.p_in
            } else {
                spec.p_out
            };
            if rng.random_bool(p) {
                edges.push((u, v));
            }
        }
    }

    Graph::new(
        edges,
        features,
        labels,
        tokens,
        classes,
        spec.vocab_size,
        spec.domain_id,
    )
}
