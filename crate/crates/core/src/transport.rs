//! In-process transport shim. Every payload crossing the client/server
//! boundary is serialized to bytes and decoded on the other side, so the
//! byte counters measure real payload sizes. Parameters travel as
//! little-endian `f32`; there are no headers, shapes are known to both ends.

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2};

use crate::encoders::Block;
use crate::error::{Error, Result};
use crate::prototypes::ClassPrototype;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Up,
    Down,
}

/// Counts every byte serialized in either direction.
#[derive(Debug, Default)]
pub struct Transport {
    up: AtomicU64,
    down: AtomicU64,
}

impl Transport {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a serialized payload and hands it to the receiver.
    pub fn send(&self, dir: Direction, bytes: Vec<u8>) -> Vec<u8> {
        let counter = match dir {
            Direction::Up => &self.up,
            Direction::Down => &self.down,
        };
        counter.fetch_add(bytes.len() as u64, Ordering::Relaxed);
        bytes
    }

    pub fn bytes_up(&self) -> u64 {
        self.up.load(Ordering::Relaxed)
    }

    pub fn bytes_down(&self) -> u64 {
        self.down.load(Ordering::Relaxed)
    }
}

fn put_f32s<'a, F: Scalar>(out: &mut Vec<u8>, values: impl Iterator<Item = &'a F>) {
    for v in values {
        out.extend_from_slice(&v.as_f32().to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Payload(format!(
                "needed {} bytes at offset {}, payload has {}",
                n,
                self.pos,
                self.bytes.len()
            )));
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn f32s<F: Scalar>(&mut self, n: usize) -> Result<Vec<F>> {
        Ok(self
            .take(n * 4)?
            .chunks_exact(4)
            .map(|c| F::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect())
    }

    fn matrix<F: Scalar>(&mut self, dim: (usize, usize)) -> Result<Array2<F>> {
        let values = self.f32s(dim.0 * dim.1)?;
        Array2::from_shape_vec(dim, values).map_err(|e| Error::Payload(e.to_string()))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Payload(format!(
                "{} trailing bytes",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// Shape of a structural block: `(d_pe, d)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockShape {
    pub d_input: usize,
    pub d: usize,
}

impl BlockShape {
    pub fn of<F: Scalar>(block: &Block<F>) -> Self {
        Self {
            d_input: block.w1.nrows(),
            d: block.w1.ncols(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.d_input * self.d + self.d * self.d
    }

    fn read<F: Scalar>(&self, r: &mut Reader<'_>) -> Result<Block<F>> {
        Ok(Block {
            w1: r.matrix((self.d_input, self.d))?,
            w2: r.matrix((self.d, self.d))?,
        })
    }
}

/// Phase I client upload: structural parameters and the mean degree.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralUpload<F> {
    pub block: Block<F>,
    pub avg_degree: f64,
}

impl<F: Scalar> StructuralUpload<F> {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.block.num_params() * 4 + 8);
        put_f32s(&mut out, self.block.values());
        out.extend_from_slice(&self.avg_degree.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8], shape: BlockShape) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let block = shape.read(&mut r)?;
        let avg_degree = r.f64()?;
        r.finish()?;
        Ok(Self { block, avg_degree })
    }
}

/// Phase I server broadcast: current global block and the history pool.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralBroadcast<F> {
    pub global: Block<F>,
    pub history: Vec<Block<F>>,
}

impl<F: Scalar> StructuralBroadcast<F> {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        put_f32s(&mut out, self.global.values());
        for b in &self.history {
            put_f32s(&mut out, b.values());
        }
        out
    }

    pub fn decode(bytes: &[u8], shape: BlockShape, history_len: usize) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let global = shape.read(&mut r)?;
        let history = (0..history_len)
            .map(|_| shape.read(&mut r))
            .collect::<Result<_>>()?;
        r.finish()?;
        Ok(Self { global, history })
    }
}

/// Phase II client upload: tuned prompts, their pool indices and `n_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptUpload<F> {
    pub text_index: u32,
    pub graph_index: u32,
    pub samples: u64,
    pub text_prompt: Array2<F>,
    pub graph_prompt: Array1<F>,
}

/// Byte size of the selection metadata in a [`PromptUpload`].
pub const PROMPT_METADATA_BYTES: usize = 4 + 4 + 8;

impl<F: Scalar> PromptUpload<F> {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(
            PROMPT_METADATA_BYTES + 4 * (self.text_prompt.len() + self.graph_prompt.len()),
        );
        out.extend_from_slice(&self.text_index.to_le_bytes());
        out.extend_from_slice(&self.graph_index.to_le_bytes());
        out.extend_from_slice(&self.samples.to_le_bytes());
        put_f32s(&mut out, self.text_prompt.iter());
        put_f32s(&mut out, self.graph_prompt.iter());
        out
    }

    pub fn decode(bytes: &[u8], prompt_len: usize, d: usize, d_in: usize) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let text_index = r.u32()?;
        let graph_index = r.u32()?;
        let samples = r.u64()?;
        let text_prompt = r.matrix((prompt_len, d))?;
        let graph_prompt = Array1::from(r.f32s(d_in)?);
        r.finish()?;
        Ok(Self {
            text_index,
            graph_index,
            samples,
            text_prompt,
            graph_prompt,
        })
    }
}

/// Phase II server broadcast: both prompt pools.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolBroadcast<F> {
    pub text: Vec<Array2<F>>,
    pub graph: Vec<Array1<F>>,
}

impl<F: Scalar> PoolBroadcast<F> {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for p in &self.text {
            put_f32s(&mut out, p.iter());
        }
        for p in &self.graph {
            put_f32s(&mut out, p.iter());
        }
        out
    }

    pub fn decode(
        bytes: &[u8],
        pool_size: usize,
        prompt_len: usize,
        d: usize,
        d_in: usize,
    ) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let text = (0..pool_size)
            .map(|_| r.matrix((prompt_len, d)))
            .collect::<Result<_>>()?;
        let graph = (0..pool_size)
            .map(|_| r.f32s(d_in).map(Array1::from))
            .collect::<Result<_>>()?;
        r.finish()?;
        Ok(Self { text, graph })
    }
}

/// Class prototypes uploaded by one client after Phase I: a count, then
/// per prototype its class id, total weight and vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypePayload<F> {
    pub prototypes: Vec<ClassPrototype<F>>,
}

impl<F: Scalar> PrototypePayload<F> {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.prototypes.len() as u32).to_le_bytes());
        for p in &self.prototypes {
            out.extend_from_slice(&(p.class_id as u32).to_le_bytes());
            out.extend_from_slice(&p.total_weight.to_le_bytes());
            put_f32s(&mut out, p.vector.iter());
        }
        out
    }

    pub fn decode(bytes: &[u8], d: usize) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let count = r.u32()? as usize;
        let mut prototypes = Vec::with_capacity(count.min(bytes.len()));
        for _ in 0..count {
            let class_id = r.u32()? as usize;
            let total_weight = r.f64()?;
            let vector = Array1::from(r.f32s(d)?);
            prototypes.push(ClassPrototype {
                class_id,
                vector,
                total_weight,
            });
        }
        r.finish()?;
        Ok(Self { prototypes })
    }
}
