//! Directory format: `meta`, `edges.tsv`, `features.f32`, `labels.u32`, `tokens.tsv`.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use super::Graph;
use crate::error::{Error, Result};

impl Graph {
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(
            dir.join("meta"),
            format!(
                "nodes {} classes {} dim_in {} vocab {} domain {}\n",
                self.num_nodes(),
                self.num_classes(),
                self.feature_dim(),
                self.vocab_size(),
                self.domain_id()
            ),
        )?;

        let mut edges = String::new();
        for &(u, v) in self.edges() {
            edges.push_str(&format!("{u}\t{v}\n"));
        }
        fs::write(dir.join("edges.tsv"), edges)?;

        let mut feats = Vec::with_capacity(self.features().len() * 4);
        for x in self.features().iter() {
            feats.extend_from_slice(&x.to_le_bytes());
        }
        fs::write(dir.join("features.f32"), feats)?;

        let mut labels = Vec::with_capacity(self.num_nodes() * 4);
        for l in self.labels() {
            labels.extend_from_slice(&l.to_le_bytes());
        }
        fs::write(dir.join("labels.u32"), labels)?;

        let mut tokens = fs::File::create(dir.join("tokens.tsv"))?;
        for v in 0..self.num_nodes() {
            let line: Vec<String> = self.tokens(v).iter().map(u32::to_string).collect();
            writeln!(tokens, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<Graph> {
        let meta = fs::read_to_string(dir.join("meta"))?;
        let fields: Vec<&str> = meta.split_whitespace().collect();
        let get = |key: &str| -> Result<u64> {
            let pos = fields
                .iter()
                .position(|&f| f == key)
                .ok_or_else(|| Error::Parse(format!("meta missing `{key}`")))?;
            fields
                .get(pos + 1)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Parse(format!("meta `{key}` has no integer value")))
        };
        let n = get("nodes")? as usize;
        let classes = get("classes")? as usize;
        let dim = get("dim_in")? as usize;
        let vocab = get("vocab")? as u32;
        let domain = get("domain")? as u32;

        let mut edges = Vec::new();
        for (i, line) in fs::read_to_string(dir.join("edges.tsv"))?
            .lines()
            .enumerate()
        {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split('\t').map(str::parse::<usize>);
            match (parts.next(), parts.next(), parts.next()) {
                (Some(Ok(u)), Some(Ok(v)), None) => edges.push((u, v)),
                _ => return Err(Error::Parse(format!("edges.tsv line {}: `{line}`", i + 1))),
            }
        }

        let raw = fs::read(dir.join("features.f32"))?;
        if raw.len() != n * dim * 4 {
            return Err(Error::Parse(format!(
                "features.f32 has {} bytes, expected {}",
                raw.len(),
                n * dim * 4
            )));
        }
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let features =
            Array2::from_shape_vec((n, dim), values).map_err(|e| Error::Parse(e.to_string()))?;

        let raw = fs::read(dir.join("labels.u32"))?;
        if raw.len() != n * 4 {
            return Err(Error::Parse(format!("labels.u32 has {} bytes", raw.len())));
        }
        let labels = raw
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();

        let tokens: Vec<Vec<u32>> = fs::read_to_string(dir.join("tokens.tsv"))?
            .lines()
            .map(|line| {
                line.split_whitespace()
                    .map(|t| {
                        t.parse()
                            .map_err(|_| Error::Parse(format!("bad token `{t}`")))
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;

        Graph::new(edges, features, labels, tokens, classes, vocab, domain)
    }
}
