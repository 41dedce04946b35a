//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tdss::graph::Graph;
use tdss::numerics::DenseMatrix;
use tdss::sampling::SampledAdjacency;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn erdos_renyi(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    Graph::from_edges(n, &edges).unwrap()
}

/// Random simple graph with about `n * avg_degree / 2` edges, built in
/// linear time.
pub fn sparse_random_graph(n: usize, avg_degree: usize, rng: &mut ChaCha8Rng) -> Graph {
    let target = n * avg_degree / 2;
    let mut edges = std::collections::HashSet::with_capacity(target);
    while edges.len() < target {
        let u = rng.random_range(0..n);
        let v = rng.random_range(0..n);
        if u != v {
            edges.insert((u.min(v), u.max(v)));
        }
    }
    let mut edges: Vec<_> = edges.into_iter().collect();
    edges.sort_unstable();
    Graph::from_edges(n, &edges).unwrap()
}

pub fn random_dense(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// All-pairs shortest-path hop counts (`usize::MAX` when unreachable),
/// one BFS per source over an adjacency-list copy of the graph.
pub fn all_pairs_hops(g: &Graph) -> Vec<Vec<usize>> {
    let n = g.num_nodes();
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|u| (0..n).filter(|&v| g.adjacency().get(u, v) != 0.0).collect())
        .collect();
    (0..n)
        .map(|s| {
            let mut dist = vec![usize::MAX; n];
            dist[s] = 0;
            let mut queue = VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                for &v in &adj[u] {
                    if dist[v] == usize::MAX {
                        dist[v] = dist[u] + 1;
                        queue.push_back(v);
                    }
                }
            }
            dist
        })
        .collect()
}

/// The smoothing loss as the literal double sum over ordered pairs.
pub fn smoothing_pair_loop(h: &DenseMatrix, sa: &SampledAdjacency) -> f64 {
    let n = h.rows();
    let deg: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| sa.matrix.get(i, j)).sum())
        .collect();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let a = sa.matrix.get(i, j);
            if a == 0.0 {
                continue;
            }
            let sq: f64 = (0..h.cols())
                .map(|c| {
                    let d = h.get(i, c) / deg[i].sqrt() - h.get(j, c) / deg[j].sqrt();
                    d * d
                })
                .sum();
            total += a * sq;
        }
    }
    0.5 * total
}

/// `tr(Hᵀ L̂ H)` with the normalised Laplacian restricted to nodes of
/// positive degree, evaluated densely.
pub fn smoothing_trace(h: &DenseMatrix, sa: &SampledAdjacency) -> f64 {
    let n = h.rows();
    let deg: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| sa.matrix.get(i, j)).sum())
        .collect();
    let mut total = 0.0;
    for c in 0..h.cols() {
        for i in 0..n {
            if deg[i] == 0.0 {
                continue;
            }
            let mut lh = h.get(i, c);
            for j in 0..n {
                let a = sa.matrix.get(i, j);
                if a != 0.0 {
                    lh -= a * h.get(j, c) / (deg[i] * deg[j]).sqrt();
                }
            }
            total += h.get(i, c) * lh;
        }
    }
    total
}

/// Biased squared MMD with a Gaussian kernel, by explicit double loops.
pub fn mmd_naive(x: &DenseMatrix, y: &DenseMatrix, sigma: f64) -> f64 {
    let k = |a: &[f64], b: &[f64]| {
        let d2: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
        (-d2 / (2.0 * sigma * sigma)).exp()
    };
    let mean = |p: &DenseMatrix, q: &DenseMatrix| {
        let mut s = 0.0;
        for i in 0..p.rows() {
            for j in 0..q.rows() {
                s += k(p.row(i), q.row(j));
            }
        }
        s / (p.rows() * q.rows()) as f64
    };
    mean(x, x) + mean(y, y) - 2.0 * mean(x, y)
}
