//! Graph storage, bundle I/O, synthetic generators and motif census.

mod bundle;
mod census;
mod normalize;
mod synth;

use std::collections::VecDeque;

pub use bundle::{load_bundle, save_bundle, BundleStats, GraphBundle};
pub use census::{motif_census, MotifCensus};
pub use normalize::normalized_adjacency;
pub use synth::{
    benchmark_configs, generate_synthetic_bundle, generate_synthetic_pair, MotifBias, SynthConfig,
};

use crate::error::{Error, Result};
use crate::numerics::SparseMatrix;

/// Undirected, unweighted simple graph.
///
/// The adjacency is binary, symmetric and has an empty diagonal. Neighbor
/// lists are the CSR rows and are therefore sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    adjacency: SparseMatrix,
    degrees: Vec<usize>,
}

impl Graph {
    /// Builds a graph from undirected edges. Self-loops and duplicate edges
    /// (in either orientation) are rejected.
    pub fn from_edges(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut triplets = Vec::with_capacity(edges.len() * 2);
        for &(u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::Data(format!(
                    "edge ({u}, {v}) references a node outside 0..{num_nodes}"
                )));
            }
            if u == v {
                return Err(Error::Data(format!("self-loop on node {u}")));
            }
            triplets.push((u, v, 1.0));
            triplets.push((v, u, 1.0));
        }
        let adjacency = SparseMatrix::from_triplets(num_nodes, num_nodes, triplets)
            .map_err(|e| Error::Data(format!("duplicate edge: {e}")))?;
        Self::from_adjacency(adjacency)
    }

    /// Wraps an adjacency matrix after checking the simple-graph invariants.
    pub fn from_adjacency(adjacency: SparseMatrix) -> Result<Self> {
        if adjacency.rows() != adjacency.cols() {
            return Err(Error::Data("adjacency must be square".into()));
        }
        let n = adjacency.rows();
        if adjacency.vals().iter().any(|&v| v != 1.0) {
            return Err(Error::Data("adjacency must be binary".into()));
        }
        if (0..n).any(|i| adjacency.contains(i, i)) {
            return Err(Error::Data("adjacency has a self-loop".into()));
        }
        if !adjacency.is_symmetric() {
            return Err(Error::Data("adjacency is not symmetric".into()));
        }
        let degrees = (0..n).map(|i| adjacency.row_nnz(i)).collect();
        Ok(Self {
            num_nodes: n,
            adjacency,
            degrees,
        })
    }

    pub fn empty(num_nodes: usize) -> Self {
        Self {
            num_nodes,
            adjacency: SparseMatrix::empty(num_nodes, num_nodes),
            degrees: vec![0; num_nodes],
        }
    }

    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.adjacency.nnz() / 2
    }

    pub fn adjacency(&self) -> &SparseMatrix {
        &self.adjacency
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    #[inline]
    pub fn degree(&self, v: usize) -> usize {
        self.degrees[v]
    }

    #[inline]
    pub fn neighbors(&self, v: usize) -> &[usize] {
        self.adjacency.row_cols(v)
    }

    #[inline]
    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adjacency.contains(u, v)
    }

    /// Undirected edges as `(u, v)` with `u < v`, lexicographically sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.adjacency
            .iter()
            .filter(|&(u, v, _)| u < v)
            .map(|(u, v, _)| (u, v))
            .collect()
    }

    /// Breadth-first traversal from `source` up to `max_depth` hops.
    /// Returns `(node, distance)` for every reached node including `source`.
    pub fn bfs_within(&self, source: usize, max_depth: usize) -> Vec<(usize, usize)> {
        let mut dist = vec![usize::MAX; self.num_nodes];
        let mut out = vec![(source, 0)];
        let mut queue = VecDeque::from([source]);
        dist[source] = 0;
        while let Some(u) = queue.pop_front() {
            if dist[u] == max_depth {
                continue;
            }
            for &w in self.neighbors(u) {
                if dist[w] == usize::MAX {
                    dist[w] = dist[u] + 1;
                    out.push((w, dist[w]));
                    queue.push_back(w);
                }
            }
        }
        out
    }

    pub fn check_node(&self, v: usize) -> Result<()> {
        if v >= self.num_nodes {
            return Err(Error::InvalidArgument(format!(
                "node {v} out of range (graph has {} nodes)",
                self.num_nodes
            )));
        }
        Ok(())
    }
}
