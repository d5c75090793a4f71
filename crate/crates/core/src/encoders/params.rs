use std::io::{BufRead, Write};

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};

use crate::checksum::checksum_values;
use crate::error::{Error, Result};
use crate::rng::SimRng;
use crate::scalar::Scalar;

/// Two stacked layer weights of one encoder branch.
#[derive(Debug, Clone, PartialEq)]
pub struct Block<F> {
    /// Input -> hidden, `[d_input x d]`.
    pub w1: Array2<F>,
    /// Hidden -> output, `[d x d]`.
    pub w2: Array2<F>,
}

impl<F: Scalar> Block<F> {
    pub fn zeros(d_input: usize, d: usize) -> Self {
        Self {
            w1: Array2::zeros((d_input, d)),
            w2: Array2::zeros((d, d)),
        }
    }

    /// Gaussian init with std `1/sqrt(fan_in)`.
    pub fn random(d_input: usize, d: usize, rng: &mut SimRng) -> Self {
        let mut draw = |rows: usize, cols: usize| {
            let scale = 1.0 / (rows.max(1) as f64).sqrt();
            Array2::from_shape_simple_fn((rows, cols), || {
                let x: f64 = StandardNormal.sample(rng);
                F::of(x * scale)
            })
        };
        let w1 = draw(d_input, d);
        let w2 = draw(d, d);
        Self { w1, w2 }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w1: Array2::zeros(self.w1.raw_dim()),
            w2: Array2::zeros(self.w2.raw_dim()),
        }
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.w2.len()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.w1.dim() == other.w1.dim() && self.w2.dim() == other.w2.dim()
    }

    /// Row-major values of `w1` then `w2`.
    pub fn values(&self) -> impl Iterator<Item = &F> {
        self.w1.iter().chain(self.w2.iter())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut F> {
        self.w1.iter_mut().chain(self.w2.iter_mut())
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, scale: F, other: &Self) {
        self.w1.scaled_add(scale, &other.w1);
        self.w2.scaled_add(scale, &other.w2);
    }

    pub fn scaled(&self, scale: F) -> Self {
        Self {
            w1: self.w1.mapv(|x| x * scale),
            w2: self.w2.mapv(|x| x * scale),
        }
    }

    pub fn checksum(&self) -> u64 {
        checksum_values(self.values())
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values()
            .zip(other.values())
            .map(|(a, b)| (*a - *b).abs().as_f64())
            .fold(0.0, f64::max)
    }
}

/// Full graph encoder: structural branch over positional encodings and
/// semantic branch over node features.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<F> {
    pub structural: Block<F>,
    pub semantic: Block<F>,
}

const NAMES: [&str; 4] = ["W1_s", "W2_s", "W1_m", "W2_m"];

impl<F: Scalar> EncoderParams<F> {
    pub fn zeros(d_pe: usize, d_in: usize, d: usize) -> Self {
        Self {
            structural: Block::zeros(d_pe, d),
            semantic: Block::zeros(d_in, d),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            structural: self.structural.zeros_like(),
            semantic: self.semantic.zeros_like(),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.structural.w2.ncols()
    }

    pub fn num_params(&self) -> usize {
        self.structural.num_params() + self.semantic.num_params()
    }

    pub fn add_scaled(&mut self, scale: F, other: &Self) {
        self.structural.add_scaled(scale, &other.structural);
        self.semantic.add_scaled(scale, &other.semantic);
    }

    pub fn scaled(&self, scale: F) -> Self {
        Self {
            structural: self.structural.scaled(scale),
            semantic: self.semantic.scaled(scale),
        }
    }

    pub fn checksum(&self) -> u64 {
        checksum_values(self.structural.values().chain(self.semantic.values()))
    }

    pub fn is_finite(&self) -> bool {
        self.structural.is_finite() && self.semantic.is_finite()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.structural
            .max_abs_diff(&other.structural)
            .max(self.semantic.max_abs_diff(&other.semantic))
    }

    fn matrices(&self) -> [&Array2<F>; 4] {
        [
            &self.structural.w1,
            &self.structural.w2,
            &self.semantic.w1,
            &self.semantic.w2,
        ]
    }

    /// Writes the checkpoint: per matrix a `W <name> <rows> <cols>` line
    /// followed by the row-major little-endian `f32` payload.
    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        for (name, m) in NAMES.iter().zip(self.matrices()) {
            writeln!(out, "W {} {} {}", name, m.nrows(), m.ncols())?;
            let mut buf = Vec::with_capacity(m.len() * 4);
            for x in m.iter() {
                buf.extend_from_slice(&x.as_f32().to_le_bytes());
            }
            out.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(mut input: R) -> Result<Self> {
        let mut mats = Vec::with_capacity(4);
        for name in NAMES {
            let mut header = String::new();
            input.read_line(&mut header)?;
            let parts: Vec<&str> = header.split_whitespace().collect();
            let (rows, cols) = match parts.as_slice() {
                ["W", n, r, c] if *n == name => (
                    r.parse::<usize>()
                        .map_err(|e| Error::Parse(e.to_string()))?,
                    c.parse::<usize>()
                        .map_err(|e| Error::Parse(e.to_string()))?,
                ),
                _ => {
                    return Err(Error::Parse(format!(
                        "expected header for {name}, got `{}`",
                        header.trim_end()
                    )))
                }
            };
            let mut buf = vec![0u8; rows * cols * 4];
            input.read_exact(&mut buf)?;
            let values = buf
                .chunks_exact(4)
                .map(|c| F::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
                .collect();
            mats.push(
                Array2::from_shape_vec((rows, cols), values)
                    .map_err(|e| Error::Parse(e.to_string()))?,
            );
        }
        let mut it = mats.into_iter();
        let mut next = || it.next().expect("four matrices read");
        let params = Self {
            structural: Block {
                w1: next(),
                w2: next(),
            },
            semantic: Block {
                w1: next(),
                w2: next(),
            },
        };
        let d = params.hidden_dim();
        if params.structural.w1.ncols() != d
            || params.semantic.w1.ncols() != d
            || params.semantic.w2.dim() != (d, d)
            || params.structural.w2.nrows() != d
        {
            return Err(Error::Shape(
                "checkpoint matrices disagree on hidden width".into(),
            ));
        }
        Ok(params)
    }
}
