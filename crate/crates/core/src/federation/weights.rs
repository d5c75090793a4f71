use crate::encoders::Block;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Per-client aggregation weights, proportional to mean degree.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationWeights {
    pub alphas: Vec<f64>,
}

/// Softmax weights over history-pool entries.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryWeights {
    pub betas: Vec<f64>,
}

/// `alpha_k = d_k / sum_j d_j`.
pub fn aggregation_weights(avg_degrees: &[f64]) -> Result<AggregationWeights> {
    if avg_degrees.is_empty() {
        return Err(Error::DegenerateDegrees);
    }
    if avg_degrees.iter().any(|d| !d.is_finite() || *d < 0.0) {
        return Err(Error::Shape(
            "degrees must be finite and non-negative".into(),
        ));
    }
    let total: f64 = avg_degrees.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateDegrees);
    }
    let n = avg_degrees.len();
    // Equal degrees give exactly 1/K; the general path can drift by an ulp
    // when the running sum is inexact.
    if avg_degrees.iter().all(|&d| d == avg_degrees[0]) {
        return Ok(AggregationWeights {
            alphas: vec![1.0 / n as f64; n],
        });
    }
    Ok(AggregationWeights {
        alphas: avg_degrees.iter().map(|d| d / total).collect(),
    })
}

/// Max-shifted softmax over summed similarity scores.
pub fn history_weights(similarity_sums: &[f64]) -> Result<HistoryWeights> {
    if similarity_sums.is_empty() {
        return Err(Error::EmptyPool);
    }
    if similarity_sums.iter().any(|s| !s.is_finite()) {
        return Err(Error::Shape("similarity scores must be finite".into()));
    }
    let max = similarity_sums
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = similarity_sums.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(HistoryWeights {
        betas: exps.into_iter().map(|e| e / total).collect(),
    })
}

/// Weighted sum of client structural blocks, consumed in client order.
pub fn aggregate_structural<F: Scalar>(
    blocks: &[Block<F>],
    weights: &AggregationWeights,
) -> Result<Block<F>> {
    let first = blocks.first().ok_or(Error::DegenerateDegrees)?;
    if weights.alphas.len() != blocks.len() {
        return Err(Error::LengthMismatch {
            expected: blocks.len(),
            got: weights.alphas.len(),
        });
    }
    let mut out = first.zeros_like();
    for (b, &a) in blocks.iter().zip(&weights.alphas) {
        if !b.same_shape(first) {
            return Err(Error::Shape(
                "client structural blocks differ in shape".into(),
            ));
        }
        out.add_scaled(F::of(a), b);
    }
    Ok(out)
}
