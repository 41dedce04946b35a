//! Planted-partition graphs with a tunable structural motif bias.
//!
//! Nodes get balanced class labels and edges are drawn independently with
//! an intra/inter class probability. On top of that base graph one of two
//! structural modes is applied:
//!
//! * `triangle`: after each base edge `(u, v)` is inserted, with probability
//!   `closure_prob` a wedge through it is closed, creating a triangle.
//! * `star`: `hub_fraction` of the nodes become hubs and every other node is
//!   wired to a hub of its own class, chosen preferentially by hub degree.
//!
//! Features are sparse Bernoulli–Gaussian: each class owns a block of topic
//! dimensions that fire more often. The class prototypes are shared by both
//! graphs of a pair so the class-conditional feature means are identical
//! across domains and only structure (and noise level) differs.

use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Graph, GraphBundle};
use crate::error::{Error, Result};
use crate::numerics::SparseMatrix;
use crate::seed;

/// Probability that a topic dimension of the node's own class is active.
const TOPIC_PROB: f64 = 0.3;
/// Probability that any other dimension is active.
const BACKGROUND_PROB: f64 = 0.08;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotifBias {
    Triangle,
    Star,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub num_nodes: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub motif_bias: MotifBias,
    pub closure_prob: f64,
    pub hub_fraction: f64,
    pub intra_class_edge_prob: f64,
    pub inter_class_edge_prob: f64,
    pub feature_noise: f64,
    /// Number of leading feature dimensions that receive extra zero-mean
    /// noise on every node; class-conditional means are unchanged.
    #[serde(default)]
    pub unstable_dims: usize,
    /// Standard deviation of that extra noise.
    #[serde(default)]
    pub unstable_noise: f64,
    pub seed: u64,
}

impl SynthConfig {
    /// Triangle-biased defaults at desk scale.
    pub fn triangle(num_nodes: usize, seed: u64) -> Self {
        Self {
            num_nodes,
            feature_dim: 32,
            num_classes: 4,
            motif_bias: MotifBias::Triangle,
            closure_prob: 0.8,
            hub_fraction: 0.0,
            intra_class_edge_prob: (12.0 / num_nodes as f64).min(1.0),
            inter_class_edge_prob: (1.0 / num_nodes as f64).min(1.0),
            feature_noise: 0.5,
            unstable_dims: 0,
            unstable_noise: 0.0,
            seed,
        }
    }

    /// Star-biased defaults at desk scale.
    pub fn star(num_nodes: usize, seed: u64) -> Self {
        Self {
            motif_bias: MotifBias::Star,
            closure_prob: 0.0,
            hub_fraction: 0.05,
            ..Self::triangle(num_nodes, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("closure_prob", self.closure_prob),
            ("hub_fraction", self.hub_fraction),
            ("intra_class_edge_prob", self.intra_class_edge_prob),
            ("inter_class_edge_prob", self.inter_class_edge_prob),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} is not in [0, 1]")));
            }
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be positive".into()));
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return Err(Error::Config("feature_noise must be a finite stddev".into()));
        }
        if self.unstable_dims > self.feature_dim {
            return Err(Error::Config("unstable_dims exceeds feature_dim".into()));
        }
        if !(self.unstable_noise >= 0.0 && self.unstable_noise.is_finite()) {
            return Err(Error::Config("unstable_noise must be a finite stddev".into()));
        }
        Ok(())
    }
}

/// Per-class topic assignment shared by both domains.
#[derive(Debug, Clone)]
struct Prototypes {
    /// `topic_of[d]` is the class owning feature dimension `d`.
    topic_of: Vec<usize>,
}

impl Prototypes {
    fn new(feature_dim: usize, num_classes: usize, seed: u64) -> Self {
        let mut topic_of: Vec<usize> = (0..feature_dim).map(|d| d % num_classes).collect();
        topic_of.shuffle(&mut seed::rng(seed));
        Self { topic_of }
    }
}

struct EdgeSet {
    adj: Vec<Vec<usize>>,
    set: HashSet<(usize, usize)>,
}

impl EdgeSet {
    fn new(n: usize) -> Self {
        Self {
            adj: vec![Vec::new(); n],
            set: HashSet::new(),
        }
    }

    fn contains(&self, u: usize, v: usize) -> bool {
        self.set.contains(&(u.min(v), u.max(v)))
    }

    fn insert(&mut self, u: usize, v: usize) -> bool {
        if u == v || !self.set.insert((u.min(v), u.max(v))) {
            return false;
        }
        self.adj[u].push(v);
        self.adj[v].push(u);
        true
    }
}

/// Pairs between (or within) two node groups, each included with probability `p`.
fn sample_block(
    a: &[usize],
    b: Option<&[usize]>,
    p: f64,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<(usize, usize)>,
) {
    if p <= 0.0 {
        return;
    }
    let total: u64 = match b {
        None => (a.len() as u64) * (a.len().saturating_sub(1) as u64) / 2,
        Some(b) => (a.len() * b.len()) as u64,
    };
    if total == 0 {
        return;
    }
    if total <= 200_000 {
        match b {
            None => {
                for (i, &u) in a.iter().enumerate() {
                    for &v in &a[i + 1..] {
                        if rng.random::<f64>() < p {
                            out.push((u, v));
                        }
                    }
                }
            }
            Some(b) => {
                for &u in a {
                    for &v in b {
                        if rng.random::<f64>() < p {
                            out.push((u, v));
                        }
                    }
                }
            }
        }
        return;
    }
    // Large sparse blocks: binomial count, then distinct uniform pairs.
    let count = Binomial::new(total, p).expect("valid binomial").sample(rng);
    let mut seen = HashSet::with_capacity(count as usize);
    while (seen.len() as u64) < count {
        let (u, v) = match b {
            None => {
                let i = rng.random_range(0..a.len());
                let j = rng.random_range(0..a.len());
                if i == j {
                    continue;
                }
                (a[i], a[j])
            }
            Some(b) => (a[rng.random_range(0..a.len())], b[rng.random_range(0..b.len())]),
        };
        let key = (u.min(v), u.max(v));
        if seen.insert(key) {
            out.push(key);
        }
    }
}

fn generate(cfg: &SynthConfig, protos: &Prototypes) -> Result<GraphBundle> {
    cfg.validate()?;
    let n = cfg.num_nodes;
    let c = cfg.num_classes;
    let mut rng = seed::rng(seed::derive(cfg.seed, "synth/structure"));

    let mut labels: Vec<usize> = (0..n).map(|i| i % c).collect();
    labels.shuffle(&mut rng);
    let mut by_class = vec![Vec::new(); c];
    for (v, &l) in labels.iter().enumerate() {
        by_class[l].push(v);
    }

    let mut base = Vec::new();
    for a in 0..c {
        sample_block(&by_class[a], None, cfg.intra_class_edge_prob, &mut rng, &mut base);
        for b in a + 1..c {
            sample_block(
                &by_class[a],
                Some(&by_class[b]),
                cfg.inter_class_edge_prob,
                &mut rng,
                &mut base,
            );
        }
    }
    base.shuffle(&mut rng);

    let mut edges = EdgeSet::new(n);
    match cfg.motif_bias {
        MotifBias::Triangle => {
            for (u, v) in base {
                if !edges.insert(u, v) {
                    continue;
                }
                if cfg.closure_prob > 0.0 && rng.random::<f64>() < cfg.closure_prob {
                    let (pivot, other) = if rng.random::<bool>() { (u, v) } else { (v, u) };
                    let candidates: Vec<usize> = edges.adj[pivot]
                        .iter()
                        .copied()
                        .filter(|&w| w != other && !edges.contains(other, w))
                        .collect();
                    if let Some(&w) = candidates.choose(&mut rng) {
                        edges.insert(other, w);
                    }
                }
            }
        }
        MotifBias::Star => {
            for (u, v) in base {
                edges.insert(u, v);
            }
            let num_hubs = (cfg.hub_fraction * n as f64).round() as usize;
            if num_hubs > 0 {
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(&mut rng);
                let hubs = &order[..num_hubs.min(n)];
                let is_hub: HashSet<usize> = hubs.iter().copied().collect();
                let mut spokes: Vec<usize> = order[num_hubs.min(n)..].to_vec();
                spokes.sort_unstable();
                spokes.shuffle(&mut rng);
                for v in spokes {
                    let own: Vec<usize> =
                        hubs.iter().copied().filter(|&h| labels[h] == labels[v]).collect();
                    let pool = if own.is_empty() { hubs.to_vec() } else { own };
                    let weights: Vec<f64> =
                        pool.iter().map(|&h| edges.adj[h].len() as f64 + 1.0).collect();
                    let total: f64 = weights.iter().sum();
                    let mut x = rng.random::<f64>() * total;
                    let mut pick = pool[pool.len() - 1];
                    for (&h, &w) in pool.iter().zip(&weights) {
                        if x < w {
                            pick = h;
                            break;
                        }
                        x -= w;
                    }
                    debug_assert!(is_hub.contains(&pick));
                    edges.insert(v, pick);
                }
            }
        }
    }

    let edge_list: Vec<(usize, usize)> = edges.set.into_iter().collect();
    let graph = Graph::from_edges(n, &edge_list)?;

    let mut frng = seed::rng(seed::derive(cfg.seed, "synth/features"));
    let mut urng = seed::rng(seed::derive(cfg.seed, "synth/unstable"));
    let mut triplets = Vec::new();
    for (v, &label) in labels.iter().enumerate() {
        for (d, &topic) in protos.topic_of.iter().enumerate() {
            let p = if topic == label { TOPIC_PROB } else { BACKGROUND_PROB };
            let mut value = 0.0;
            if frng.random::<f64>() < p {
                let eps: f64 = StandardNormal.sample(&mut frng);
                value = 1.0 + cfg.feature_noise * eps;
            }
            if d < cfg.unstable_dims && cfg.unstable_noise > 0.0 {
                let eps: f64 = StandardNormal.sample(&mut urng);
                value += cfg.unstable_noise * eps;
            }
            if value != 0.0 {
                triplets.push((v, d, value));
            }
        }
    }
    let features = SparseMatrix::from_triplets(n, cfg.feature_dim, triplets)?;
    let name = match cfg.motif_bias {
        MotifBias::Triangle => "synthetic-triangle",
        MotifBias::Star => "synthetic-star",
    };
    GraphBundle::new(graph, features, Some(labels), c, name)
}

/// Desk-scale transfer benchmark: a triangle-rich source and a hub-dominated
/// target whose first half of the feature dimensions is unreliable.
pub fn benchmark_configs(num_nodes: usize, seed: u64) -> (SynthConfig, SynthConfig) {
    let source = SynthConfig::triangle(num_nodes, seed::derive(seed, "synth/source"));
    let base = SynthConfig::star(num_nodes, seed::derive(seed, "synth/target"));
    let target = SynthConfig {
        unstable_dims: base.feature_dim / 2,
        unstable_noise: 1.0,
        ..base
    };
    (source, target)
}

/// Generates one bundle whose class prototypes come from `prototype_seed`.
pub fn generate_synthetic_bundle(cfg: &SynthConfig, prototype_seed: u64) -> Result<GraphBundle> {
    cfg.validate()?;
    let protos = Prototypes::new(cfg.feature_dim, cfg.num_classes, prototype_seed);
    generate(cfg, &protos)
}

/// Generates a (source, target) pair sharing class prototypes. The
/// prototypes are seeded from the source configuration.
pub fn generate_synthetic_pair(
    source_cfg: &SynthConfig,
    target_cfg: &SynthConfig,
) -> Result<(GraphBundle, GraphBundle)> {
    if source_cfg.feature_dim != target_cfg.feature_dim
        || source_cfg.num_classes != target_cfg.num_classes
    {
        return Err(Error::Config(format!(
            "source/target disagree on feature_dim or num_classes ({}/{} vs {}/{})",
            source_cfg.feature_dim,
            source_cfg.num_classes,
            target_cfg.feature_dim,
            target_cfg.num_classes
        )));
    }
    source_cfg.validate()?;
    target_cfg.validate()?;
    let protos = Prototypes::new(
        source_cfg.feature_dim,
        source_cfg.num_classes,
        seed::derive(source_cfg.seed, "synth/prototypes"),
    );
    Ok((generate(source_cfg, &protos)?, generate(target_cfg, &protos)?))
}
