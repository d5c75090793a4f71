use ndarray::{Array1, Array2, ArrayView2};
use rand_distr::{Distribution, StandardNormal};

use crate::checksum::checksum_values;
use crate::error::{Error, Result};
use crate::rng::{stream, tag};
use crate::scalar::Scalar;

/// Mean-pooled token embedding table. Rows `0..vocab` are content tokens,
/// row `vocab` is the summary separator. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoder<F> {
    table: Array2<F>,
}

impl<F: Scalar> TextEncoder<F> {
    pub fn new(vocab_size: u32, dim: usize, seed: u64) -> Self {
        let mut rng = stream(seed, &[tag::TEXT_TABLE]);
        let table = Array2::from_shape_simple_fn((vocab_size as usize + 1, dim), || {
            let x: f64 = StandardNormal.sample(&mut rng);
            F::of(x)
        });
        Self { table }
    }

    pub fn from_table(table: Array2<F>) -> Self {
        Self { table }
    }

    pub fn dim(&self) -> usize {
        self.table.ncols()
    }

    /// Largest valid token id (the separator).
    pub fn max_token(&self) -> u32 {
        (self.table.nrows() - 1) as u32
    }

    pub fn row(&self, token: u32) -> ndarray::ArrayView1<'_, F> {
        self.table.row(token as usize)
    }

    pub fn checksum(&self) -> u64 {
        checksum_values(self.table.iter())
    }

    pub fn encode(&self, tokens: &[u32]) -> Result<Array1<F>> {
        self.encode_with_prefix(None, tokens)
    }

    /// Mean over `prefix` rows followed by the token embeddings.
    pub fn encode_with_prefix(
        &self,
        prefix: Option<ArrayView2<'_, F>>,
        tokens: &[u32],
    ) -> Result<Array1<F>> {
        let prefix_rows = prefix.as_ref().map_or(0, |p| p.nrows());
        if tokens.is_empty() && prefix_rows == 0 {
            return Err(Error::Shape("empty token sequence".into()));
        }
        let mut acc = Array1::<F>::zeros(self.dim());
        if let Some(p) = prefix {
            if p.ncols() != self.dim() {
                return Err(Error::Shape(format!(
                    "prompt width {} != text dim {}",
                    p.ncols(),
                    self.dim()
                )));
            }
            for row in p.rows() {
                acc += &row;
            }
        }
        for &t in tokens {
            if t > self.max_token() {
                return Err(Error::TokenOutOfRange {
                    token: t,
                    max: self.max_token(),
                });
            }
            acc += &self.table.row(t as usize);
        }
        let count = F::of((prefix_rows + tokens.len()) as f64);
        Ok(acc.mapv(|x| x / count))
    }

    /// Encodes each sequence into one row.
    pub fn encode_many(&self, seqs: &[Vec<u32>]) -> Result<Array2<F>> {
        let mut out = Array2::zeros((seqs.len(), self.dim()));
        for (i, s) in seqs.iter().enumerate() {
            out.row_mut(i).assign(&self.encode(s)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_and_repeated_token() {
        let enc = TextEncoder::<f64>::new(10, 4, 1);
        let single = enc.encode(&[3]).unwrap();
        assert_eq!(single, enc.row(3).to_owned());
        assert_eq!(enc.encode(&[3, 3, 3]).unwrap(), single);
    }

    #[test]
    fn pair_is_row_mean() {
        let enc = TextEncoder::<f64>::new(10, 4, 1);
        let got = enc.encode(&[2, 7]).unwrap();
        for j in 0..4 {
            let want = (enc.row(2)[j] + enc.row(7)[j]) / 2.0;
            assert!((got[j] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn separator_is_valid_and_beyond_is_not() {
        let enc = TextEncoder::<f32>::new(10, 4, 1);
        assert!(enc.encode(&[10]).is_ok());
        assert!(matches!(
            enc.encode(&[11]),
            Err(Error::TokenOutOfRange { token: 11, max: 10 })
        ));
        assert!(enc.encode(&[]).is_err());
    }

    #[test]
    fn zero_prefix_rescales_mean() {
        let enc = TextEncoder::<f64>::new(10, 3, 4);
        let toks = [1, 4, 5];
        let plain = enc.encode(&toks).unwrap();
        let zeros = Array2::<f64>::zeros((2, 3));
        let prefixed = enc.encode_with_prefix(Some(zeros.view()), &toks).unwrap();
        for j in 0..3 {
            assert!((prefixed[j] - plain[j] * 3.0 / 5.0).abs() < 1e-15);
        }
    }
}
