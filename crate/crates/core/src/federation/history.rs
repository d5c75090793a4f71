use std::collections::VecDeque;

use ndarray::{Array2, Axis};

use super::weights::HistoryWeights;
use crate::alignment::LocalContext;
use crate::encoders::{branch_forward, fuse_and_normalize, Block, EncoderParams, NORM_EPS};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Ring of the most recent global structural blocks, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryPool<F> {
    capacity: usize,
    entries: VecDeque<(usize, Block<F>)>,
}

impl<F: Scalar> HistoryPool<F> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "history capacity must be >= 1");
        Self {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends the aggregate produced in `round`, evicting the oldest entry when full.
    pub fn push(&mut self, round: usize, block: Block<F>) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((round, block));
    }

    pub fn rounds(&self) -> Vec<usize> {
        self.entries.iter().map(|(r, _)| *r).collect()
    }

    pub fn blocks(&self) -> impl Iterator<Item = &Block<F>> {
        self.entries.iter().map(|(_, b)| b)
    }

    pub fn newest(&self) -> Option<&Block<F>> {
        self.entries.back().map(|(_, b)| b)
    }

    /// Pool holding `blocks` in order, labeled with rounds `1..=len`.
    pub fn from_blocks(capacity: usize, blocks: Vec<Block<F>>) -> Self {
        let mut pool = Self::new(capacity);
        for (i, b) in blocks.into_iter().enumerate() {
            pool.push(i + 1, b);
        }
        pool
    }
}

/// Per-probe-node cosine similarity to the text anchor for every pool entry.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryScores {
    /// `[probe nodes x pool entries]`.
    pub per_node: Array2<f64>,
}

impl HistoryScores {
    /// Probe-batch mean per pool entry.
    pub fn means(&self) -> Vec<f64> {
        let n = self.per_node.nrows() as f64;
        self.per_node
            .sum_axis(Axis(0))
            .iter()
            .map(|s| s / n)
            .collect()
    }

    /// Probe-batch sum per pool entry (the softmax input).
    pub fn sums(&self) -> Vec<f64> {
        self.per_node.sum_axis(Axis(0)).to_vec()
    }
}

fn cosine<F: Scalar>(a: ndarray::ArrayView1<'_, F>, b: ndarray::ArrayView1<'_, F>) -> f64 {
    let (a, b): (Vec<f64>, Vec<f64>) = (
        a.iter().map(|x| x.as_f64()).collect(),
        b.iter().map(|x| x.as_f64()).collect(),
    );
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na <= NORM_EPS || nb <= NORM_EPS {
        return 0.0;
    }
    a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

/// Scores each historical structural block: run it as the structural
/// branch next to the client's semantic block (no disturbance), fuse, and
/// take the cosine against each probe node's text anchor.
pub fn history_similarities<F: Scalar>(
    ctx: &LocalContext<F>,
    pool: &HistoryPool<F>,
    probe: &[usize],
    semantic: &Block<F>,
) -> Result<HistoryScores> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    if probe.is_empty() {
        return Err(Error::Shape("empty probe batch".into()));
    }
    let inputs = &ctx.inputs;
    if semantic.w1.nrows() != inputs.features.ncols() {
        return Err(Error::Shape(
            "semantic block does not match feature width".into(),
        ));
    }
    let sem = branch_forward(semantic, &inputs.propagator, &inputs.features);
    let mut per_node = Array2::zeros((probe.len(), pool.len()));
    for (r, block) in pool.blocks().enumerate() {
        if block.w1.nrows() != inputs.pe.ncols() || block.w1.ncols() != semantic.w1.ncols() {
            return Err(Error::Shape(format!(
                "history entry {r} has the wrong shape"
            )));
        }
        let st = branch_forward(block, &inputs.propagator, &inputs.pe);
        let (_, _, z) = fuse_and_normalize(&st.h2, &sem.h2);
        for (i, &v) in probe.iter().enumerate() {
            per_node[[i, r]] = cosine(z.row(v), ctx.text.row(v));
        }
    }
    Ok(HistoryScores { per_node })
}

/// Composes the client's encoder: semantic block kept as is, structural
/// block `sum_r beta_r * history_r`.
pub fn fuse_history<F: Scalar>(
    local_semantic: &Block<F>,
    pool: &HistoryPool<F>,
    betas: &HistoryWeights,
) -> Result<EncoderParams<F>> {
    if betas.betas.len() != pool.len() {
        return Err(Error::LengthMismatch {
            expected: pool.len(),
            got: betas.betas.len(),
        });
    }
    let first = pool.blocks().next().ok_or(Error::EmptyPool)?;
    let mut structural = first.zeros_like();
    for (block, &b) in pool.blocks().zip(&betas.betas) {
        structural.add_scaled(F::of(b), block);
    }
    Ok(EncoderParams {
        structural,
        semantic: local_semantic.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn pool_keeps_most_recent_window() {
        let mut pool = HistoryPool::<f32>::new(5);
        for t in 1..=12 {
            pool.push(t, Block::zeros(1, 1));
            let want: Vec<usize> = (t.saturating_sub(4).max(1)..=t).collect();
            assert_eq!(pool.rounds(), want);
            assert_eq!(pool.len(), t.min(5));
        }
    }

    #[test]
    fn fuse_examples() {
        let mut rng = stream(2, &[]);
        let a = Block::<f64>::random(3, 4, &mut rng);
        let b = Block::<f64>::random(3, 4, &mut rng);
        let sem = Block::<f64>::random(5, 4, &mut rng);

        let single = HistoryPool::from_blocks(5, vec![a.clone()]);
        let fused = fuse_history(&sem, &single, &HistoryWeights { betas: vec![1.0] }).unwrap();
        assert_eq!(fused.structural, a);
        assert_eq!(fused.semantic, sem);

        let twin = HistoryPool::from_blocks(5, vec![a.clone(), a.clone()]);
        let fused = fuse_history(
            &sem,
            &twin,
            &HistoryWeights {
                betas: vec![0.3, 0.7],
            },
        )
        .unwrap();
        assert!(fused.structural.max_abs_diff(&a) < 1e-15);

        let pair = HistoryPool::from_blocks(5, vec![a.clone(), b.clone()]);
        let fused = fuse_history(
            &sem,
            &pair,
            &HistoryWeights {
                betas: vec![0.5, 0.5],
            },
        )
        .unwrap();
        for (m, (x, y)) in fused.structural.values().zip(a.values().zip(b.values())) {
            assert!((m - (x + y) / 2.0).abs() < 1e-15);
        }

        assert!(matches!(
            fuse_history(&sem, &pair, &HistoryWeights { betas: vec![1.0] }),
            Err(Error::LengthMismatch { .. })
        ));
    }
}
