use std::collections::VecDeque;

use rand::seq::SliceRandom;

use super::{average_degree, Graph};
use crate::error::{Error, Result};
use crate::rng::{stream, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Balanced BFS-grown regions; cross-region edges are dropped.
    EdgeCut,
    /// Per-class round-robin dealing; per-class counts differ by at most one.
    LabelStratified,
}

/// How a shard's nodes are divided into train/validation/test splits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    /// Few-shot mode: exactly this many labeled train nodes per class;
    /// `val_frac` then applies to the remaining nodes.
    pub shots: Option<usize>,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_frac: 0.6,
            val_frac: 0.2,
            shots: None,
        }
    }
}

/// One client's private shard: its induced subgraph plus node splits.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientShard {
    pub graph: Graph,
    /// Original id of every local node, ascending.
    pub global_ids: Vec<usize>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    avg_degree: f64,
}

impl ClientShard {
    pub fn new(graph: Graph, global_ids: Vec<usize>, split: &SplitSpec, seed: u64) -> Self {
        let avg_degree = average_degree(&graph);
        let mut shard = Self {
            graph,
            global_ids,
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
            avg_degree,
        };
        shard.resplit(split, seed);
        shard
    }

    pub fn avg_degree(&self) -> f64 {
        self.avg_degree
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    /// Redraws the train/val/test split, stratified by class.
    pub fn resplit(&mut self, split: &SplitSpec, seed: u64) {
        let mut rng = stream(seed, &[tag::SPLIT]);
        let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
        for c in 0..self.graph.num_classes() {
            let mut members: Vec<usize> = (0..self.num_nodes())
                .filter(|&v| self.graph.labels()[v] as usize == c)
                .collect();
            if members.is_empty() {
                continue;
            }
            members.shuffle(&mut rng);
            let m = members.len();
            let n_train = match split.shots {
                Some(s) => s.min(m),
                None => ((split.train_frac * m as f64).round() as usize).clamp(1, m),
            };
            let rest = m - n_train;
            let val_base = if split.shots.is_some() { rest } else { m };
            let n_val = ((split.val_frac * val_base as f64).round() as usize).min(rest);
            train.extend_from_slice(&members[..n_train]);
            val.extend_from_slice(&members[n_train..n_train + n_val]);
            test.extend_from_slice(&members[n_train + n_val..]);
        }
        train.sort_unstable();
        val.sort_unstable();
        test.sort_unstable();
        self.train = train;
        self.val = val;
        self.test = test;
    }
}

/// Splits `graph` into `k` disjoint, exhaustive client shards. Edges whose
/// endpoints land in different shards are dropped.
pub fn partition(
    graph: &Graph,
    k: usize,
    strategy: Strategy,
    seed: u64,
) -> Result<Vec<ClientShard>> {
    let n = graph.num_nodes();
    if k == 0 || k > n {
        return Err(Error::TooManyParts { nodes: n, parts: k });
    }
    let assignment = match strategy {
        Strategy::EdgeCut => grow_regions(graph, k, seed),
        Strategy::LabelStratified => deal_by_label(graph, k, seed),
    };
    shards_from_assignment(graph, &assignment, k, &SplitSpec::default(), seed)
}

/// Builds shards from an explicit node -> shard assignment.
pub fn shards_from_assignment(
    graph: &Graph,
    assignment: &[usize],
    k: usize,
    split: &SplitSpec,
    seed: u64,
) -> Result<Vec<ClientShard>> {
    if assignment.len() != graph.num_nodes() {
        return Err(Error::LengthMismatch {
            expected: graph.num_nodes(),
            got: assignment.len(),
        });
    }
    let mut members = vec![Vec::new(); k];
    for (v, &s) in assignment.iter().enumerate() {
        if s >= k {
            return Err(Error::TooManyParts {
                nodes: graph.num_nodes(),
                parts: s + 1,
            });
        }
        members[s].push(v);
    }
    members
        .into_iter()
        .enumerate()
        .map(|(i, ids)| {
            let sub = graph.induced(&ids)?;
            Ok(ClientShard::new(
                sub,
                ids,
                split,
                seed.wrapping_add(i as u64),
            ))
        })
        .collect()
}

fn target_sizes(n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|i| n / k + usize::from(i < n % k)).collect()
}

fn grow_regions(graph: &Graph, k: usize, seed: u64) -> Vec<usize> {
    let n = graph.num_nodes();
    let mut rng = stream(seed, &[tag::PARTITION]);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);

    let targets = target_sizes(n, k);
    let mut assignment = vec![usize::MAX; n];
    let mut sizes = vec![0usize; k];
    let mut frontiers: Vec<VecDeque<usize>> = vec![VecDeque::new(); k];
    for (region, &s) in order[..k].iter().enumerate() {
        assignment[s] = region;
        sizes[region] = 1;
        frontiers[region].extend(graph.neighbors(s));
    }
    let mut assigned = k;
    while assigned < n {
        for region in 0..k {
            if sizes[region] >= targets[region] || assigned == n {
                continue;
            }
            let mut claimed = None;
            while let Some(c) = frontiers[region].pop_front() {
                if assignment[c] == usize::MAX {
                    claimed = Some(c);
                    break;
                }
            }
            // Disconnected remainder: restart from the lowest free node.
            let node = claimed.unwrap_or_else(|| {
                (0..n)
                    .find(|&v| assignment[v] == usize::MAX)
                    .expect("free node exists")
            });
            assignment[node] = region;
            sizes[region] += 1;
            assigned += 1;
            frontiers[region].extend(
                graph
                    .neighbors(node)
                    .iter()
                    .filter(|&&w| assignment[w] == usize::MAX),
            );
        }
    }
    assignment
}

fn deal_by_label(graph: &Graph, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = stream(seed, &[tag::PARTITION]);
    let mut assignment = vec![0; graph.num_nodes()];
    let mut next = 0;
    for c in 0..graph.num_classes() {
        let mut members: Vec<usize> = (0..graph.num_nodes())
            .filter(|&v| graph.labels()[v] as usize == c)
            .collect();
        members.shuffle(&mut rng);
        for v in members {
            assignment[v] = next;
            next = (next + 1) % k;
        }
    }
    assignment
}
