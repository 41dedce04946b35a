//! Encoders, classifier head, losses and the joint forward/backward pass.
//!
//! The model is `g ∘ φ`: an encoder `φ` (SGC or two-layer GCN) maps node
//! features to a latent space and a linear head `g` produces logits.
//! Source and target graphs share parameters but may use different
//! propagation depths.
//!
//! * SGC: `H = Ŝ^L · drop(X) · W + b`
//! * GCN: `H = Ŝ^L · drop(relu(Ŝ · drop(X) · W₁ + b₁)) · W₂ + b₂`
//!
//! `Ŝ` is the self-looped symmetric normalised adjacency. All gradients are
//! derived by hand and checked against finite differences in the tests.

use std::fs;
use std::path::Path;

use rand::distr::Uniform;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::discrepancy::{mmd2, KernelConfig};
use crate::error::{Error, Result};
use crate::graph::{normalized_adjacency, GraphBundle};
use crate::numerics::{
    matmul, matmul_nt, matmul_tn, row_log_softmax, row_softmax, spmm, spmm_t, DenseMatrix,
    SparseMatrix,
};
use crate::sampling::SampledAdjacency;
use crate::seed;
use crate::smoothing::{l_sr, l_sr_value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Sgc,
    Gcn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub hidden_dim: usize,
    pub prop_layers_source: usize,
    pub prop_layers_target: usize,
    pub dropout: f64,
    /// Initialisation seed; derived from the run seed when absent.
    pub seed: Option<u64>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            kind: EncoderKind::Sgc,
            hidden_dim: 128,
            prop_layers_source: 1,
            prop_layers_target: 2,
            dropout: 0.5,
            seed: None,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 {
            return Err(Error::Config("hidden_dim must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} is not in [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Affine map `x W + b` with `b` stored as a `1 x out` row.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: DenseMatrix,
    pub bias: DenseMatrix,
}

impl Layer {
    fn glorot(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
        Self {
            weight: DenseMatrix::from_fn(fan_in, fan_out, |_, _| rng.sample(dist)),
            bias: DenseMatrix::zeros(1, fan_out),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            weight: DenseMatrix::zeros(self.weight.rows(), self.weight.cols()),
            bias: DenseMatrix::zeros(1, self.bias.cols()),
        }
    }
}

/// Encoder layers plus classifier head.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub kind: EncoderKind,
    pub encoder: Vec<Layer>,
    pub classifier: Layer,
}

impl Params {
    /// Glorot-uniform weights and zero biases.
    pub fn init(cfg: &EncoderConfig, feature_dim: usize, num_classes: usize, seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        let h = cfg.hidden_dim;
        let encoder = match cfg.kind {
            EncoderKind::Sgc => vec![Layer::glorot(feature_dim, h, &mut rng)],
            EncoderKind::Gcn => vec![
                Layer::glorot(feature_dim, h, &mut rng),
                Layer::glorot(h, h, &mut rng),
            ],
        };
        let classifier = Layer::glorot(h, num_classes, &mut rng);
        Self {
            kind: cfg.kind,
            encoder,
            classifier,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            kind: self.kind,
            encoder: self.encoder.iter().map(Layer::zeros_like).collect(),
            classifier: self.classifier.zeros_like(),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.classifier.weight.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.encoder[0].weight.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.weight.cols()
    }

    /// All tensors in storage order: encoder (weight, bias) pairs, then the head.
    pub fn tensors(&self) -> Vec<&DenseMatrix> {
        self.encoder
            .iter()
            .chain(std::iter::once(&self.classifier))
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut DenseMatrix> {
        self.encoder
            .iter_mut()
            .chain(std::iter::once(&mut self.classifier))
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// `self += s * other`, tensor by tensor.
    pub fn axpy(&mut self, s: f64, other: &Params) -> Result<()> {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.axpy(s, b)?;
        }
        Ok(())
    }

    /// Little-endian binary: tensor count, `(rows, cols)` per tensor as
    /// `u64`, then all values as `f64` in storage order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let tensors = self.tensors();
        let mut out = Vec::new();
        out.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
        for t in &tensors {
            out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
        }
        for t in &tensors {
            for v in t.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Data(format!("malformed params file: {msg}"));
        let mut pos = 0usize;
        let read_u64 = |pos: &mut usize| -> Result<u64> {
            let chunk = bytes.get(*pos..*pos + 8).ok_or_else(|| bad("truncated header"))?;
            *pos += 8;
            Ok(u64::from_le_bytes(chunk.try_into().expect("8 bytes")))
        };
        let count = read_u64(&mut pos)? as usize;
        let kind = match count {
            4 => EncoderKind::Sgc,
            6 => EncoderKind::Gcn,
            _ => return Err(bad("unexpected tensor count")),
        };
        let mut shapes = Vec::with_capacity(count);
        for _ in 0..count {
            let r = read_u64(&mut pos)? as usize;
            let c = read_u64(&mut pos)? as usize;
            shapes.push((r, c));
        }
        let mut tensors = Vec::with_capacity(count);
        for (r, c) in shapes {
            let len = r.checked_mul(c).ok_or_else(|| bad("shape overflow"))?;
            let end = pos + len * 8;
            let chunk = bytes.get(pos..end).ok_or_else(|| bad("truncated payload"))?;
            let vals = chunk
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect();
            tensors.push(DenseMatrix::from_vec(r, c, vals).map_err(|e| bad(&e.to_string()))?);
            pos = end;
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        let mut it = tensors.into_iter();
        let mut layers = Vec::new();
        while let (Some(weight), Some(bias)) = (it.next(), it.next()) {
            if bias.rows() != 1 || bias.cols() != weight.cols() {
                return Err(bad("bias shape does not match weight"));
            }
            layers.push(Layer { weight, bias });
        }
        let classifier = layers.pop().expect("count checked");
        for pair in layers.windows(2) {
            if pair[0].weight.cols() != pair[1].weight.rows() {
                return Err(bad("layer shapes do not chain"));
            }
        }
        if layers.last().expect("count checked").weight.cols() != classifier.weight.rows() {
            return Err(bad("classifier input does not match hidden dim"));
        }
        Ok(Self {
            kind,
            encoder: layers,
            classifier,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// A bundle with its propagation operator precomputed.
#[derive(Debug, Clone)]
pub struct PreparedGraph<'a> {
    pub bundle: &'a GraphBundle,
    pub propagation: SparseMatrix,
}

impl<'a> PreparedGraph<'a> {
    pub fn new(bundle: &'a GraphBundle) -> Self {
        Self {
            bundle,
            propagation: normalized_adjacency(&bundle.graph, true),
        }
    }
}

/// `Ŝ^layers · x`
pub fn propagate(s: &SparseMatrix, x: DenseMatrix, layers: usize) -> Result<DenseMatrix> {
    let mut out = x;
    for _ in 0..layers {
        out = spmm(s, &out)?;
    }
    Ok(out)
}

fn propagate_t(s: &SparseMatrix, x: DenseMatrix, layers: usize) -> Result<DenseMatrix> {
    let mut out = x;
    for _ in 0..layers {
        out = spmm_t(s, &out)?;
    }
    Ok(out)
}

fn dropout_sparse(x: &SparseMatrix, p: f64, rng: &mut impl RngCore) -> SparseMatrix {
    let scale = 1.0 / (1.0 - p);
    x.map_values(|_, _, v| if rng.random::<f64>() < p { 0.0 } else { v * scale })
}

/// Inverted dropout; returns the masked matrix and the per-entry multiplier.
fn dropout_dense(x: &DenseMatrix, p: f64, rng: &mut impl RngCore) -> (DenseMatrix, Vec<f64>) {
    let scale = 1.0 / (1.0 - p);
    let mask: Vec<f64> = (0..x.as_slice().len())
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { scale })
        .collect();
    let mut out = x.clone();
    out.as_mut_slice().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
    (out, mask)
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct EncodeCache {
    input: SparseMatrix,
    prop_layers: usize,
    /// GCN only: pre-activation of layer one, dropped activation and mask.
    hidden: Option<(DenseMatrix, DenseMatrix, Vec<f64>)>,
}

/// Forward pass of the encoder on a prepared graph.
pub fn encode_forward(
    graph: &PreparedGraph<'_>,
    params: &Params,
    cfg: &EncoderConfig,
    prop_layers: usize,
    training: bool,
    rng: &mut impl RngCore,
) -> Result<(DenseMatrix, EncodeCache)> {
    let x = &graph.bundle.features;
    let s = &graph.propagation;
    let drop = training && cfg.dropout > 0.0;
    let input = if drop {
        dropout_sparse(x, cfg.dropout, rng)
    } else {
        x.clone()
    };
    let first = &params.encoder[0];
    if input.cols() != first.weight.rows() {
        return Err(Error::shape("encode", input.shape(), first.weight.shape()));
    }
    match params.kind {
        EncoderKind::Sgc => {
            let mut h = propagate(s, spmm(&input, &first.weight)?, prop_layers)?;
            h.add_row_broadcast(&first.bias)?;
            Ok((
                h,
                EncodeCache {
                    input,
                    prop_layers,
                    hidden: None,
                },
            ))
        }
        EncoderKind::Gcn => {
            let second = &params.encoder[1];
            let mut z1 = spmm(s, &spmm(&input, &first.weight)?)?;
            z1.add_row_broadcast(&first.bias)?;
            let mut a1 = z1.clone();
            a1.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
            let (a1, mask) = if drop {
                dropout_dense(&a1, cfg.dropout, rng)
            } else {
                let len = a1.as_slice().len();
                (a1, vec![1.0; len])
            };
            let mut h = propagate(s, matmul(&a1, &second.weight)?, prop_layers)?;
            h.add_row_broadcast(&second.bias)?;
            Ok((
                h,
                EncodeCache {
                    input,
                    prop_layers,
                    hidden: Some((z1, a1, mask)),
                },
            ))
        }
    }
}

/// Accumulates encoder gradients for `grad_h = ∂L/∂H` into `grads`.
pub fn encode_backward(
    graph: &PreparedGraph<'_>,
    params: &Params,
    cache: &EncodeCache,
    grad_h: &DenseMatrix,
    grads: &mut Params,
) -> Result<()> {
    let s = &graph.propagation;
    match (params.kind, &cache.hidden) {
        (EncoderKind::Sgc, _) => {
            grads.encoder[0].bias.axpy(1.0, &grad_h.column_sums())?;
            let g_xw = propagate_t(s, grad_h.clone(), cache.prop_layers)?;
            grads.encoder[0].weight.axpy(1.0, &spmm_t(&cache.input, &g_xw)?)?;
        }
        (EncoderKind::Gcn, Some((z1, a1, mask))) => {
            grads.encoder[1].bias.axpy(1.0, &grad_h.column_sums())?;
            let g_p2 = propagate_t(s, grad_h.clone(), cache.prop_layers)?;
            grads.encoder[1].weight.axpy(1.0, &matmul_tn(a1, &g_p2)?)?;
            let mut g_z1 = matmul_nt(&g_p2, &params.encoder[1].weight)?;
            for ((g, m), z) in g_z1.as_mut_slice().iter_mut().zip(mask).zip(z1.as_slice()) {
                *g *= if *z > 0.0 { *m } else { 0.0 };
            }
            grads.encoder[0].bias.axpy(1.0, &g_z1.column_sums())?;
            let g_xw = spmm_t(s, &g_z1)?;
            grads.encoder[0].weight.axpy(1.0, &spmm_t(&cache.input, &g_xw)?)?;
        }
        (EncoderKind::Gcn, None) => {
            return Err(Error::InvalidArgument("GCN cache is missing hidden state".into()))
        }
    }
    Ok(())
}

/// Latent representations of every node of `bundle`.
pub fn encode(
    bundle: &GraphBundle,
    params: &Params,
    cfg: &EncoderConfig,
    prop_layers: usize,
    training: bool,
    rng: &mut impl RngCore,
) -> Result<DenseMatrix> {
    let prepared = PreparedGraph::new(bundle);
    Ok(encode_forward(&prepared, params, cfg, prop_layers, training, rng)?.0)
}

/// `logits = h W_c + b_c`
pub fn classify(h: &DenseMatrix, params: &Params) -> Result<DenseMatrix> {
    let mut logits = matmul(h, &params.classifier.weight)?;
    logits.add_row_broadcast(&params.classifier.bias)?;
    Ok(logits)
}

#[derive(Debug, Clone)]
pub struct CrossEntropy {
    pub value: f64,
    pub grad_logits: DenseMatrix,
}

/// Mean softmax cross-entropy over rows, with its gradient.
pub fn cross_entropy(logits: &DenseMatrix, labels: &[usize]) -> Result<CrossEntropy> {
    if labels.len() != logits.rows() {
        return Err(Error::InvalidArgument(format!(
            "{} labels for {} rows",
            labels.len(),
            logits.rows()
        )));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= logits.cols()) {
        return Err(Error::InvalidArgument(format!(
            "label {l} outside 0..{}",
            logits.cols()
        )));
    }
    let n = logits.rows();
    if n == 0 {
        return Ok(CrossEntropy {
            value: 0.0,
            grad_logits: logits.clone(),
        });
    }
    let logp = row_log_softmax(logits);
    let value = -labels.iter().enumerate().map(|(i, &l)| logp.get(i, l)).sum::<f64>() / n as f64;
    let mut grad_logits = row_softmax(logits);
    for (i, &l) in labels.iter().enumerate() {
        let v = grad_logits.get(i, l);
        grad_logits.set(i, l, v - 1.0);
    }
    grad_logits.scale(1.0 / n as f64);
    Ok(CrossEntropy { value, grad_logits })
}

/// Per-row cross-entropy losses.
pub fn per_node_cross_entropy(logits: &DenseMatrix, labels: &[usize]) -> Vec<f64> {
    let logp = row_log_softmax(logits);
    labels.iter().enumerate().map(|(i, &l)| -logp.get(i, l)).collect()
}

/// Components of `L = L_GC + α L_DA + β L_SR`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_gc: f64,
    pub l_da: f64,
    pub l_sr: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(l_gc: f64, l_da: f64, l_sr: f64, alpha: f64, beta: f64) -> Self {
        Self {
            l_gc,
            l_da,
            l_sr,
            total: l_gc + alpha * l_da + beta * l_sr,
        }
    }
}

/// Where the alignment term is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignSpace {
    #[default]
    Latent,
    Logits,
}

/// Weights and kernel of the joint objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub alpha: f64,
    pub beta: f64,
    pub kernel: KernelConfig,
    pub align_space: AlignSpace,
}

impl Objective {
    pub fn new(alpha: f64, beta: f64) -> Self {
        Self {
            alpha,
            beta,
            kernel: KernelConfig::default(),
            align_space: AlignSpace::Latent,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForwardBackward {
    pub breakdown: LossBreakdown,
    pub grads: Params,
}

/// Evaluates the joint objective and its exact gradient with respect to all
/// parameters. Target labels are never read.
#[allow(clippy::too_many_arguments)]
pub fn forward_backward(
    source: &PreparedGraph<'_>,
    target: &PreparedGraph<'_>,
    sa: &SampledAdjacency,
    params: &Params,
    cfg: &EncoderConfig,
    objective: &Objective,
    training: bool,
    rng: &mut impl RngCore,
) -> Result<ForwardBackward> {
    let labels = source
        .bundle
        .labels
        .as_deref()
        .ok_or_else(|| Error::Data(format!("source bundle {:?} has no labels", source.bundle.name)))?;
    if source.bundle.feature_dim() != target.bundle.feature_dim()
        || source.bundle.num_classes != target.bundle.num_classes
    {
        return Err(Error::Data("source and target disagree on feature_dim or num_classes".into()));
    }
    let (alpha, beta) = (objective.alpha, objective.beta);

    let (hs, cache_s) = encode_forward(source, params, cfg, cfg.prop_layers_source, training, rng)?;
    let (ht, cache_t) = encode_forward(target, params, cfg, cfg.prop_layers_target, training, rng)?;

    let logits_s = classify(&hs, params)?;
    let ce = cross_entropy(&logits_s, labels)?;

    let mut grads = params.zeros_like();
    let mut grad_hs = DenseMatrix::zeros(hs.rows(), hs.cols());
    let mut grad_ht = DenseMatrix::zeros(ht.rows(), ht.cols());
    let mut grad_logits_s = ce.grad_logits;

    let l_da = match objective.align_space {
        AlignSpace::Latent => {
            let mmd = mmd2(&hs, &ht, &objective.kernel)?;
            if alpha != 0.0 {
                grad_hs.axpy(alpha, &mmd.grad_hs)?;
                grad_ht.axpy(alpha, &mmd.grad_ht)?;
            }
            mmd.value
        }
        AlignSpace::Logits => {
            let logits_t = classify(&ht, params)?;
            let mmd = mmd2(&logits_s, &logits_t, &objective.kernel)?;
            if alpha != 0.0 {
                grad_logits_s.axpy(alpha, &mmd.grad_hs)?;
                let mut g_lt = mmd.grad_ht;
                g_lt.scale(alpha);
                grads.classifier.weight.axpy(1.0, &matmul_tn(&ht, &g_lt)?)?;
                grads.classifier.bias.axpy(1.0, &g_lt.column_sums())?;
                grad_ht.axpy(1.0, &matmul_nt(&g_lt, &params.classifier.weight)?)?;
            }
            mmd.value
        }
    };

    let l_sr_val = if beta != 0.0 {
        let sr = l_sr(&ht, sa)?;
        grad_ht.axpy(beta, &sr.grad_h)?;
        sr.value
    } else {
        l_sr_value(&ht, sa)?
    };

    grads.classifier.weight.axpy(1.0, &matmul_tn(&hs, &grad_logits_s)?)?;
    grads.classifier.bias.axpy(1.0, &grad_logits_s.column_sums())?;
    grad_hs.axpy(1.0, &matmul_nt(&grad_logits_s, &params.classifier.weight)?)?;

    encode_backward(source, params, &cache_s, &grad_hs, &mut grads)?;
    encode_backward(target, params, &cache_t, &grad_ht, &mut grads)?;

    Ok(ForwardBackward {
        breakdown: LossBreakdown::new(ce.value, l_da, l_sr_val, alpha, beta),
        grads,
    })
}

/// Argmax predictions for every node (dropout off).
pub fn predict(
    graph: &PreparedGraph<'_>,
    params: &Params,
    cfg: &EncoderConfig,
    prop_layers: usize,
) -> Result<Vec<usize>> {
    let mut unused = seed::rng(0);
    let (h, _) = encode_forward(graph, params, cfg, prop_layers, false, &mut unused)?;
    Ok(classify(&h, params)?.argmax_rows())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discrepancy::KernelConfig;
    use crate::graph::{generate_synthetic_pair, Graph, SynthConfig};
    use crate::numerics::{finite_difference, relative_error};
    use crate::sampling::{build_sampled_adjacency, SamplerConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_bundle(n_edges: &[(usize, usize)], n: usize, f: usize, seed: u64) -> GraphBundle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Graph::from_edges(n, n_edges).unwrap();
        let x = DenseMatrix::from_fn(n, f, |_, _| {
            if rng.random::<f64>() < 0.5 {
                rng.random_range(-1.0..1.0)
            } else {
                0.0
            }
        });
        let labels = (0..n).map(|i| i % 3).collect();
        GraphBundle::new(g, SparseMatrix::from_dense(&x), Some(labels), 3, "tiny").unwrap()
    }

    fn cfg(kind: EncoderKind, hidden: usize) -> EncoderConfig {
        EncoderConfig {
            kind,
            hidden_dim: hidden,
            prop_layers_source: 1,
            prop_layers_target: 2,
            dropout: 0.0,
            seed: None,
        }
    }

    #[test]
    fn sgc_without_propagation_is_linear_map() {
        let b = tiny_bundle(&[(0, 1), (1, 2)], 3, 4, 1);
        let c = cfg(EncoderKind::Sgc, 2);
        let p = Params::init(&c, 4, 3, 9);
        let h = encode(&b, &p, &c, 0, false, &mut seed::rng(0)).unwrap();
        let want = matmul(&b.features.to_dense(), &p.encoder[0].weight).unwrap();
        assert!(h.max_abs_diff(&want) < 1e-15);
    }

    #[test]
    fn single_node_self_loop() {
        let b = tiny_bundle(&[], 1, 3, 2);
        let c = cfg(EncoderKind::Sgc, 2);
        let p = Params::init(&c, 3, 3, 1);
        let h = encode(&b, &p, &c, 4, false, &mut seed::rng(0)).unwrap();
        let want = matmul(&b.features.to_dense(), &p.encoder[0].weight).unwrap();
        assert!(h.max_abs_diff(&want) < 1e-15);
    }

    #[test]
    fn sgc_on_path_matches_dense_chain() {
        let b = tiny_bundle(&[(0, 1), (1, 2)], 3, 2, 3);
        let c = cfg(EncoderKind::Sgc, 2);
        let mut p = Params::init(&c, 2, 3, 1);
        p.encoder[0].weight = DenseMatrix::from_rows(&[vec![1.0, -1.0], vec![0.5, 2.0]]).unwrap();
        p.encoder[0].bias = DenseMatrix::from_rows(&[vec![0.1, 0.2]]).unwrap();
        // dense Ŝ for P₃ with self-loops: degrees 2, 3, 2
        let d = [2.0f64, 3.0, 2.0];
        let s = DenseMatrix::from_fn(3, 3, |i, j| {
            if i.abs_diff(j) <= 1 {
                1.0 / (d[i] * d[j]).sqrt()
            } else {
                0.0
            }
        });
        let x = b.features.to_dense();
        let mut want = matmul(&matmul(&matmul(&s, &s).unwrap(), &x).unwrap(), &p.encoder[0].weight).unwrap();
        want.add_row_broadcast(&p.encoder[0].bias).unwrap();
        let h = encode(&b, &p, &c, 2, false, &mut seed::rng(0)).unwrap();
        assert!(h.max_abs_diff(&want) < 1e-14);
    }

    #[test]
    fn propagation_composes() {
        let (s, _) = generate_synthetic_pair(&SynthConfig::triangle(60, 1), &SynthConfig::star(60, 2)).unwrap();
        let op = normalized_adjacency(&s.graph, true);
        let x = s.features.to_dense();
        let two_step = propagate(&op, propagate(&op, x.clone(), 2).unwrap(), 3).unwrap();
        let one_step = propagate(&op, x, 5).unwrap();
        assert!(two_step.max_abs_diff(&one_step) < 1e-10);
    }

    #[test]
    fn classify_cases() {
        let c = cfg(EncoderKind::Sgc, 1);
        let mut p = Params::init(&c, 2, 1, 0);
        let logits = classify(&DenseMatrix::zeros(3, 1), &p).unwrap();
        assert_eq!(logits, DenseMatrix::zeros(3, 1));
        p.classifier.weight = DenseMatrix::from_rows(&[vec![1.0]]).unwrap();
        let h = DenseMatrix::from_rows(&[vec![0.25], vec![-4.0]]).unwrap();
        assert_eq!(classify(&h, &p).unwrap(), h);
        assert!(classify(&DenseMatrix::zeros(1, 3), &p).is_err());
    }

    #[test]
    fn cross_entropy_cases() {
        let ce = cross_entropy(&DenseMatrix::zeros(4, 5), &[0, 1, 2, 3]).unwrap();
        assert!((ce.value - 5f64.ln()).abs() < 1e-15);
        let big = DenseMatrix::from_rows(&[vec![500.0, 0.0], vec![0.0, 500.0]]).unwrap();
        assert!(cross_entropy(&big, &[0, 1]).unwrap().value < 1e-200);
        assert!(cross_entropy(&big, &[0, 2]).is_err());
        assert!(cross_entropy(&big, &[0]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let logits = DenseMatrix::from_fn(10, 5, |_, _| rng.random_range(-3.0..3.0));
        let labels: Vec<usize> = (0..10).map(|i| (i * 7) % 5).collect();
        let ce = cross_entropy(&logits, &labels).unwrap();
        let direct: f64 = (0..10)
            .map(|i| {
                let z: f64 = logits.row(i).iter().map(|v| v.exp()).sum();
                -(logits.get(i, labels[i]).exp() / z).ln()
            })
            .sum::<f64>()
            / 10.0;
        assert!((ce.value - direct).abs() < 1e-13);
        let fd = finite_difference(&logits, 1e-5, |x| cross_entropy(x, &labels).unwrap().value);
        assert!(relative_error(&ce.grad_logits, &fd, 1e-12) < 1e-4);
    }

    #[test]
    fn params_round_trip_bit_exact() {
        for kind in [EncoderKind::Sgc, EncoderKind::Gcn] {
            let p = Params::init(&cfg(kind, 5), 7, 3, 42);
            let back = Params::from_bytes(&p.to_bytes()).unwrap();
            assert_eq!(back, p);
            assert_eq!(back.to_bytes(), p.to_bytes());
        }
        let bytes = Params::init(&cfg(EncoderKind::Sgc, 5), 7, 3, 42).to_bytes();
        assert!(Params::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Params::from_bytes(&[0u8; 8]).is_err());
    }

    /// Loss as a function of one parameter tensor, used by finite differences.
    fn total_loss(
        s: &PreparedGraph<'_>,
        t: &PreparedGraph<'_>,
        sa: &SampledAdjacency,
        p: &Params,
        c: &EncoderConfig,
        obj: &Objective,
    ) -> f64 {
        forward_backward(s, t, sa, p, c, obj, false, &mut seed::rng(0))
            .unwrap()
            .breakdown
            .total
    }

    #[allow(clippy::needless_range_loop)]
    fn check_all_grads(kind: EncoderKind, obj: &Objective, seed_: u64) {
        let (sb, tb) = generate_synthetic_pair(
            &SynthConfig { num_nodes: 30, feature_dim: 6, ..SynthConfig::triangle(30, seed_) },
            &SynthConfig { num_nodes: 25, feature_dim: 6, ..SynthConfig::star(25, seed_ + 1) },
        )
        .unwrap();
        let (s, t) = (PreparedGraph::new(&sb), PreparedGraph::new(&tb));
        let sa = build_sampled_adjacency(&tb.graph, &SamplerConfig::rw(2, 3, seed_)).unwrap();
        let c = cfg(kind, 4);
        let mut p = Params::init(&c, 6, 4, seed_);
        // nonzero biases keep ReLU inputs away from the kink at 0
        let mut rng = ChaCha8Rng::seed_from_u64(seed_);
        for layer in p.encoder.iter_mut().chain(std::iter::once(&mut p.classifier)) {
            layer.bias.as_mut_slice().iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
        }
        let fb = forward_backward(&s, &t, &sa, &p, &c, obj, false, &mut seed::rng(0)).unwrap();
        let analytic = fb.grads.tensors();
        for idx in 0..analytic.len() {
            let base = p.tensors()[idx].clone();
            let fd = finite_difference(&base, 1e-5, |x| {
                let mut q = p.clone();
                *q.tensors_mut()[idx] = x.clone();
                total_loss(&s, &t, &sa, &q, &c, obj)
            });
            let err = relative_error(analytic[idx], &fd, 1e-10);
            assert!(err < 1e-4, "{kind:?} tensor {idx}: rel err {err}");
        }
    }

    #[test]
    fn composite_gradient_matches_finite_differences() {
        let mut obj = Objective::new(0.3, 0.2);
        obj.kernel = KernelConfig::fixed(1.5);
        check_all_grads(EncoderKind::Sgc, &obj, 3);
        check_all_grads(EncoderKind::Gcn, &obj, 4);
        // median bandwidth is held constant during differentiation, so use
        // fixed bandwidth for the logits variant as well
        obj.align_space = AlignSpace::Logits;
        check_all_grads(EncoderKind::Sgc, &obj, 5);
        check_all_grads(EncoderKind::Gcn, &obj, 6);
    }

    #[test]
    fn zero_weights_reduce_to_source_only() {
        let (sb, tb) = generate_synthetic_pair(&SynthConfig::triangle(40, 1), &SynthConfig::star(40, 2)).unwrap();
        let (s, t) = (PreparedGraph::new(&sb), PreparedGraph::new(&tb));
        let sa = build_sampled_adjacency(&tb.graph, &SamplerConfig::rw(2, 3, 1)).unwrap();
        let c = cfg(EncoderKind::Sgc, 8);
        let p = Params::init(&c, 32, 4, 3);
        let fb = forward_backward(&s, &t, &sa, &p, &c, &Objective::new(0.0, 0.0), false, &mut seed::rng(0)).unwrap();
        assert_eq!(fb.breakdown.total, fb.breakdown.l_gc);

        // source-only gradient computed directly
        let (hs, cache) = encode_forward(&s, &p, &c, 1, false, &mut seed::rng(0)).unwrap();
        let ce = cross_entropy(&classify(&hs, &p).unwrap(), sb.labels.as_ref().unwrap()).unwrap();
        let mut want = p.zeros_like();
        want.classifier.weight = matmul_tn(&hs, &ce.grad_logits).unwrap();
        want.classifier.bias = ce.grad_logits.column_sums();
        let gh = matmul_nt(&ce.grad_logits, &p.classifier.weight).unwrap();
        encode_backward(&s, &p, &cache, &gh, &mut want).unwrap();
        for (a, b) in fb.grads.tensors().iter().zip(want.tensors()) {
            assert!(a.max_abs_diff(b) < 1e-15);
        }

        // β = 0: identical to the α-only gradient regardless of Ã
        let alpha_only = forward_backward(&s, &t, &sa, &p, &c, &Objective::new(0.3, 0.0), false, &mut seed::rng(0)).unwrap();
        let empty = SampledAdjacency::from_matrix(SparseMatrix::empty(40, 40));
        let no_graph = forward_backward(&s, &t, &empty, &p, &c, &Objective::new(0.3, 0.0), false, &mut seed::rng(0)).unwrap();
        assert_eq!(alpha_only.grads, no_graph.grads);
    }

    #[test]
    fn breakdown_is_additive_and_deterministic() {
        let (sb, tb) = generate_synthetic_pair(&SynthConfig::triangle(40, 7), &SynthConfig::star(40, 8)).unwrap();
        let (s, t) = (PreparedGraph::new(&sb), PreparedGraph::new(&tb));
        let sa = build_sampled_adjacency(&tb.graph, &SamplerConfig::rw(2, 3, 1)).unwrap();
        let c = cfg(EncoderKind::Gcn, 8);
        let p = Params::init(&c, 32, 4, 3);
        let obj = Objective::new(0.3, 0.2);
        let a = forward_backward(&s, &t, &sa, &p, &c, &obj, false, &mut seed::rng(1)).unwrap();
        let b = forward_backward(&s, &t, &sa, &p, &c, &obj, false, &mut seed::rng(2)).unwrap();
        let bd = a.breakdown;
        assert!((bd.total - (bd.l_gc + 0.3 * bd.l_da + 0.2 * bd.l_sr)).abs() < 1e-12);
        assert_eq!(a.grads, b.grads);
        assert_eq!(a.breakdown, b.breakdown);
    }

    #[test]
    fn dropout_only_when_training() {
        let b = tiny_bundle(&[(0, 1), (1, 2)], 3, 4, 1);
        let mut c = cfg(EncoderKind::Gcn, 3);
        c.dropout = 0.5;
        let p = Params::init(&c, 4, 3, 2);
        let eval_a = encode(&b, &p, &c, 1, false, &mut seed::rng(1)).unwrap();
        let eval_b = encode(&b, &p, &c, 1, false, &mut seed::rng(2)).unwrap();
        assert_eq!(eval_a, eval_b);
        let tr_a = encode(&b, &p, &c, 1, true, &mut seed::rng(1)).unwrap();
        let tr_a2 = encode(&b, &p, &c, 1, true, &mut seed::rng(1)).unwrap();
        assert_eq!(tr_a, tr_a2);
    }
}
