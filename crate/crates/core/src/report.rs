//! Per-round metrics records, emitted as JSON lines.

use std::io::Write;

use serde::Serialize;

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PretrainReport {
    pub phase: &'static str,
    pub round: usize,
    pub client: usize,
    pub loss: f64,
    pub alpha: f64,
    pub beta: Vec<f64>,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[allow(non_snake_case)]
pub struct FinetuneReport {
    pub phase: &'static str,
    pub round: usize,
    pub client: usize,
    pub sel_T: usize,
    pub sel_G: usize,
    pub val: f64,
    pub bytes_up: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum RoundReport {
    Pretrain(PretrainReport),
    Finetune(FinetuneReport),
}

impl RoundReport {
    pub fn bytes_up(&self) -> u64 {
        match self {
            RoundReport::Pretrain(r) => r.bytes_up,
            RoundReport::Finetune(r) => r.bytes_up,
        }
    }

    pub fn bytes_down(&self) -> u64 {
        match self {
            RoundReport::Pretrain(r) => r.bytes_down,
            RoundReport::Finetune(_) => 0,
        }
    }
}

/// Uploaded class prototype, logged without its vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrototypeLog {
    pub client: usize,
    pub class: usize,
    pub weight: f64,
    pub vec_checksum: u64,
}

pub fn write_jsonl<W: Write, T: Serialize>(mut out: W, records: &[T]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
