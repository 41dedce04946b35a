//! Neighbor generation and the pruned adjacency used by the smoothing loss.
//!
//! For every node `i` a neighbor set `N(i)` is drawn (k-hop ball or the
//! union of random-walk visits). The sampled adjacency keeps `(i, j)` iff
//! `j ∈ N(i)` and `(i, j)` is an original edge, then symmetrises by union.
//! Random walks for node `i` draw from a stream seeded by `(seed, i)` only,
//! so the result does not depend on iteration order.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::numerics::SparseMatrix;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMode {
    Khop,
    Rw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub mode: SamplerMode,
    /// Hop radius for `khop`.
    pub k: usize,
    /// Steps per walk for `rw`.
    pub walk_length: usize,
    /// Walks per node for `rw`.
    pub num_walks: usize,
    /// Sampler seed; derived from the run seed when absent.
    pub seed: Option<u64>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            mode: SamplerMode::Rw,
            k: 1,
            walk_length: 2,
            num_walks: 3,
            seed: None,
        }
    }
}

impl SamplerConfig {
    pub fn khop(k: usize) -> Self {
        Self {
            mode: SamplerMode::Khop,
            k,
            ..Self::default()
        }
    }

    pub fn rw(walk_length: usize, num_walks: usize, seed: u64) -> Self {
        Self {
            mode: SamplerMode::Rw,
            walk_length,
            num_walks,
            seed: Some(seed),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            SamplerMode::Khop if self.k == 0 => {
                Err(Error::Config("k must be at least 1 in khop mode".into()))
            }
            SamplerMode::Rw if self.walk_length == 0 || self.num_walks == 0 => Err(
                Error::Config("walk_length and num_walks must be at least 1 in rw mode".into()),
            ),
            _ => Ok(()),
        }
    }
}

/// Pruned, symmetric adjacency with its degree statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledAdjacency {
    pub matrix: SparseMatrix,
    pub degrees: Vec<usize>,
    /// Average sampled neighbors per node, `nnz / num_nodes`.
    pub rho: f64,
}

impl SampledAdjacency {
    pub fn from_matrix(matrix: SparseMatrix) -> Self {
        let n = matrix.rows();
        let degrees: Vec<usize> = (0..n).map(|i| matrix.row_nnz(i)).collect();
        let rho = if n == 0 { 0.0 } else { matrix.nnz() as f64 / n as f64 };
        Self {
            matrix,
            degrees,
            rho,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.matrix.rows()
    }

    /// Undirected edges `(u, v)` with `u < v`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.matrix
            .iter()
            .filter(|&(u, v, _)| u < v)
            .map(|(u, v, _)| (u, v))
            .collect()
    }
}

/// Nodes at shortest-path distance `1..=k` from `v`, sorted. `v` is excluded.
pub fn khop_neighbors(g: &Graph, v: usize, k: usize) -> Result<Vec<usize>> {
    g.check_node(v)?;
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let mut out: Vec<usize> = g
        .bfs_within(v, k)
        .into_iter()
        .filter(|&(u, _)| u != v)
        .map(|(u, _)| u)
        .collect();
    out.sort_unstable();
    Ok(out)
}

/// One walk of up to `length` steps from `start`, appending visited nodes.
/// The walk stops early at a node with no neighbors.
/// Row access for walks; both layouts yield identical walks.
trait Rows {
    fn degree(&self, v: usize) -> usize;
    fn nth(&self, v: usize, k: usize) -> usize;
}

impl Rows for Graph {
    fn degree(&self, v: usize) -> usize {
        self.neighbors(v).len()
    }

    fn nth(&self, v: usize, k: usize) -> usize {
        self.neighbors(v)[k]
    }
}

/// 32-bit copy of the adjacency structure. Halving the index width keeps
/// the rows walks jump between cache-resident for much larger graphs.
struct CompactRows {
    offsets: Vec<u32>,
    cols: Vec<u32>,
}

impl CompactRows {
    fn new(g: &Graph) -> Option<Self> {
        let adj = g.adjacency();
        let offsets = adj.row_ptr().iter().map(|&p| u32::try_from(p).ok()).collect::<Option<_>>()?;
        let cols = adj.col_idx().iter().map(|&c| u32::try_from(c).ok()).collect::<Option<_>>()?;
        Some(Self { offsets, cols })
    }

    fn row(&self, v: usize) -> &[u32] {
        &self.cols[self.offsets[v] as usize..self.offsets[v + 1] as usize]
    }
}

impl Rows for CompactRows {
    fn degree(&self, v: usize) -> usize {
        (self.offsets[v + 1] - self.offsets[v]) as usize
    }

    fn nth(&self, v: usize, k: usize) -> usize {
        self.cols[self.offsets[v] as usize + k] as usize
    }
}

fn walk_into(g: &impl Rows, start: usize, length: usize, rng: &mut impl Rng, out: &mut Vec<usize>) {
    let mut cur = start;
    for _ in 0..length {
        let deg = g.degree(cur);
        if deg == 0 {
            break;
        }
        cur = g.nth(cur, rng.random_range(0..deg));
        out.push(cur);
    }
}

/// Union of nodes visited by `num_walks` simple random walks of
/// `walk_length` steps from `v`, excluding `v`, sorted. Deterministic in
/// `(seed, v, walk_length, num_walks)`.
pub fn rw_neighbors(
    g: &Graph,
    v: usize,
    walk_length: usize,
    num_walks: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    g.check_node(v)?;
    let mut out = Vec::new();
    rw_neighbors_into(g, v, walk_length, num_walks, seed, &mut out);
    Ok(out)
}

fn rw_neighbors_into(
    g: &impl Rows,
    v: usize,
    walk_length: usize,
    num_walks: usize,
    seed: u64,
    out: &mut Vec<usize>,
) {
    out.clear();
    let mut rng = seed::node_rng(seed, v);
    for _ in 0..num_walks {
        walk_into(g, v, walk_length, &mut rng, out);
    }
    out.retain(|&u| u != v);
    out.sort_unstable();
    out.dedup();
}

/// Builds the pruned adjacency on `g` for the configured sampler.
pub fn build_sampled_adjacency(g: &Graph, cfg: &SamplerConfig) -> Result<SampledAdjacency> {
    cfg.validate()?;
    let n = g.num_nodes();
    let seed = cfg.seed.unwrap_or(0);
    // Ã ⊆ A, so mark kept entries in place over A's CSR positions and read
    // them back in order; rows come out sorted without a scatter pass.
    let adj = g.adjacency();
    let (a_ptr, a_cols) = (adj.row_ptr(), adj.col_idx());
    let compact = CompactRows::new(g);
    let mut keep = vec![false; adj.nnz()];
    let mut sampled = Vec::new();
    for i in 0..n {
        match (cfg.mode, &compact) {
            (SamplerMode::Khop, _) => sampled = khop_neighbors(g, i, cfg.k)?,
            (SamplerMode::Rw, Some(c)) => rw_neighbors_into(c, i, cfg.walk_length, cfg.num_walks, seed, &mut sampled),
            (SamplerMode::Rw, None) => rw_neighbors_into(g, i, cfg.walk_length, cfg.num_walks, seed, &mut sampled),
        }
        for &j in &sampled {
            let (found, back) = match &compact {
                Some(c) => (
                    c.row(i).binary_search(&(j as u32)).ok(),
                    c.row(j).binary_search(&(i as u32)).ok(),
                ),
                None => (
                    a_cols[a_ptr[i]..a_ptr[i + 1]].binary_search(&j).ok(),
                    a_cols[a_ptr[j]..a_ptr[j + 1]].binary_search(&i).ok(),
                ),
            };
            if let (Some(pos), Some(back)) = (found, back) {
                keep[a_ptr[i] + pos] = true;
                keep[a_ptr[j] + back] = true;
            }
        }
    }
    let mut row_ptr = Vec::with_capacity(n + 1);
    row_ptr.push(0);
    let mut col_idx = Vec::new();
    for i in 0..n {
        col_idx.extend((a_ptr[i]..a_ptr[i + 1]).filter(|&e| keep[e]).map(|e| a_cols[e]));
        row_ptr.push(col_idx.len());
    }
    let vals = vec![1.0; col_idx.len()];
    let matrix = SparseMatrix::try_new(n, n, row_ptr, col_idx, vals)?;
    Ok(SampledAdjacency::from_matrix(matrix))
}
