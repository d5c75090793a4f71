//! Text-attributed graphs: representation, synthetic generation,
//! partitioning into client shards, positional encodings and
//! neighborhood text summaries.

mod io;
mod partition;
mod pe;
mod synth;

pub use partition::{partition, shards_from_assignment, ClientShard, SplitSpec, Strategy};
pub use pe::{random_walk_pe, PositionalEncoding};
pub use synth::{generate_synthetic, orthogonal_means, DomainSpec};

use ndarray::Array2;

use crate::error::{Error, Result};

/// One text-attributed graph: undirected edges, `f32` node features,
/// class labels and a token sequence per node.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    edges: Vec<(usize, usize)>,
    features: Array2<f32>,
    labels: Vec<u32>,
    tokens: Vec<Vec<u32>>,
    num_classes: usize,
    vocab_size: u32,
    domain_id: u32,
    adjacency: Vec<Vec<usize>>,
}

impl Graph {
    /// Builds a graph, normalizing edges to `(min, max)` and sorting them.
    pub fn new(
        mut edges: Vec<(usize, usize)>,
        features: Array2<f32>,
        labels: Vec<u32>,
        tokens: Vec<Vec<u32>>,
        num_classes: usize,
        vocab_size: u32,
        domain_id: u32,
    ) -> Result<Self> {
        let n = features.nrows();
        if labels.len() != n || tokens.len() != n {
            return Err(Error::InvalidGraph(format!(
                "{} feature rows, {} labels, {} token lists",
                n,
                labels.len(),
                tokens.len()
            )));
        }
        for e in edges.iter_mut() {
            if e.0 == e.1 {
                return Err(Error::InvalidGraph(format!("self-loop on node {}", e.0)));
            }
            if e.0 > e.1 {
                *e = (e.1, e.0);
            }
            if e.1 >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge endpoint {} >= {}",
                    e.1, n
                )));
            }
        }
        edges.sort_unstable();
        if edges.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidGraph("duplicate edge".into()));
        }
        if let Some(i) = tokens.iter().position(|t| t.is_empty()) {
            return Err(Error::InvalidGraph(format!("node {i} has no tokens")));
        }
        if let Some(&t) = tokens.iter().flatten().find(|&&t| t >= vocab_size) {
            return Err(Error::TokenOutOfRange {
                token: t,
                max: vocab_size.saturating_sub(1),
            });
        }
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(Error::InvalidGraph(format!(
                "label {l} outside 0..{num_classes}"
            )));
        }
        let mut adjacency = vec![Vec::new(); n];
        for &(u, v) in &edges {
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        for list in adjacency.iter_mut() {
            list.sort_unstable();
        }
        Ok(Self {
            edges,
            features,
            labels,
            tokens,
            num_classes,
            vocab_size,
            domain_id,
            adjacency,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.features.nrows()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &Array2<f32> {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn tokens(&self, node: usize) -> &[u32] {
        &self.tokens[node]
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    /// Token id reserved for the summary separator, one past the vocabulary.
    pub fn separator(&self) -> u32 {
        self.vocab_size
    }

    pub fn domain_id(&self) -> u32 {
        self.domain_id
    }

    /// Sorted neighbor ids of `node`.
    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.adjacency[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency[node].len()
    }

    /// Induced subgraph on `nodes` (sorted ascending); node `nodes[i]` becomes `i`.
    pub fn induced(&self, nodes: &[usize]) -> Result<Graph> {
        let mut local = vec![usize::MAX; self.num_nodes()];
        for (i, &v) in nodes.iter().enumerate() {
            local[v] = i;
        }
        let edges = self
            .edges
            .iter()
            .filter(|&&(u, v)| local[u] != usize::MAX && local[v] != usize::MAX)
            .map(|&(u, v)| (local[u], local[v]))
            .collect();
        let features = self.features.select(ndarray::Axis(0), nodes);
        Graph::new(
            edges,
            features,
            nodes.iter().map(|&v| self.labels[v]).collect(),
            nodes.iter().map(|&v| self.tokens[v].clone()).collect(),
            self.num_classes,
            self.vocab_size,
            self.domain_id,
        )
    }
}

/// Mean node degree, `2|E| / |V|`.
pub fn average_degree(graph: &Graph) -> f64 {
    let n = graph.num_nodes();
    if n == 0 {
        return 0.0;
    }
    let degree_sum: usize = (0..n).map(|v| graph.degree(v)).sum();
    degree_sum as f64 / n as f64
}

/// Node's own tokens, the separator, then each neighbor's tokens in
/// ascending neighbor id, truncated to `max_len`.
pub fn neighbor_summary(graph: &Graph, node: usize, max_len: usize) -> Vec<u32> {
    let mut out: Vec<u32> = graph.tokens(node).to_vec();
    out.push(graph.separator());
    for &nb in graph.neighbors(node) {
        if out.len() >= max_len {
            break;
        }
        out.extend_from_slice(graph.tokens(nb));
    }
    out.truncate(max_len);
    out
}
