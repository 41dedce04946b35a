//! Full-batch optimisation of the joint objective, evaluation metrics and
//! embedding export.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::discrepancy::KernelConfig;
use crate::error::{Error, Result};
use crate::graph::GraphBundle;
use crate::model::{
    encode, forward_backward, predict, AlignSpace, EncoderConfig, LossBreakdown, Objective, Params,
    PreparedGraph,
};
use crate::numerics::SparseMatrix;
use crate::sampling::{build_sampled_adjacency, SampledAdjacency, SamplerConfig};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub lr: f64,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Evaluate target metrics every this many epochs (and always at the end).
    pub eval_every: usize,
    pub sampler: SamplerConfig,
    pub encoder: EncoderConfig,
    pub kernel: KernelConfig,
    pub align_space: AlignSpace,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.3,
            beta: 0.2,
            lr: 0.01,
            epochs: 200,
            optimizer: OptimizerKind::Adam,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            eval_every: 10,
            sampler: SamplerConfig::default(),
            encoder: EncoderConfig::default(),
            kernel: KernelConfig::default(),
            align_space: AlignSpace::Latent,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return Err(Error::Config("adam_eps must be positive".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        self.sampler.validate()?;
        self.encoder.validate()?;
        self.kernel.validate()
    }

    pub fn sampler_seed(&self) -> u64 {
        self.sampler.seed.unwrap_or_else(|| seed::derive(self.seed, "sampler"))
    }

    pub fn encoder_seed(&self) -> u64 {
        self.encoder.seed.unwrap_or_else(|| seed::derive(self.seed, "encoder"))
    }

    pub fn dropout_seed(&self) -> u64 {
        seed::derive(self.seed, "dropout")
    }

    /// Sampler configuration with the seed resolved.
    pub fn resolved_sampler(&self) -> SamplerConfig {
        SamplerConfig {
            seed: Some(self.sampler_seed()),
            ..self.sampler.clone()
        }
    }

    fn objective(&self) -> Objective {
        Objective {
            alpha: self.alpha,
            beta: self.beta,
            kernel: self.kernel.clone(),
            align_space: self.align_space,
        }
    }
}

/// Adam with bias correction, applied to a fixed list of flat tensors.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64, sizes: &[usize]) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            first: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            second: sizes.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }

    pub fn update(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (t, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.first[t], &mut self.second[t]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

enum Optimizer {
    Adam(Adam),
    Sgd(f64),
}

impl Optimizer {
    fn new(cfg: &TrainConfig, params: &Params) -> Self {
        match cfg.optimizer {
            OptimizerKind::Adam => {
                let sizes: Vec<usize> = params.tensors().iter().map(|t| t.as_slice().len()).collect();
                Optimizer::Adam(Adam::new(cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, &sizes))
            }
            OptimizerKind::Sgd => Optimizer::Sgd(cfg.lr),
        }
    }

    fn step(&mut self, params: &mut Params, grads: &Params) -> Result<()> {
        match self {
            Optimizer::Adam(adam) => {
                let mut p: Vec<&mut [f64]> =
                    params.tensors_mut().into_iter().map(|t| t.as_mut_slice()).collect();
                let g: Vec<&[f64]> = grads.tensors().into_iter().map(|t| t.as_slice()).collect();
                adam.update(&mut p, &g);
                Ok(())
            }
            Optimizer::Sgd(lr) => params.axpy(-*lr, grads),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub nmi: f64,
}

/// One line of the training history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_gc: f64,
    pub l_da: f64,
    pub l_sr: f64,
    pub total: f64,
    pub micro_f1: Option<f64>,
    pub macro_f1: Option<f64>,
    pub nmi: Option<f64>,
}

impl EpochRecord {
    fn new(epoch: usize, loss: LossBreakdown, metrics: Option<Metrics>) -> Self {
        Self {
            epoch,
            l_gc: loss.l_gc,
            l_da: loss.l_da,
            l_sr: loss.l_sr,
            total: loss.total,
            micro_f1: metrics.map(|m| m.micro_f1),
            macro_f1: metrics.map(|m| m.macro_f1),
            nmi: metrics.map(|m| m.nmi),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: Params,
    pub history: Vec<EpochRecord>,
    /// Final target metrics, when the target carries labels.
    pub target_metrics: Option<Metrics>,
    pub sampled: SampledAdjacency,
}

/// Trains on a labelled source and an unlabelled target.
///
/// The sampled adjacency is built once on the target graph. Target labels,
/// when present, are read only for metrics.
pub fn train(source: &GraphBundle, target: &GraphBundle, cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let sampled = build_sampled_adjacency(&target.graph, &cfg.resolved_sampler())?;
    train_with_sampled(source, target, cfg, sampled)
}

/// Like [`train`] but with an explicit sampled adjacency; an empty one turns
/// the smoothing term off entirely.
pub fn train_with_sampled(
    source: &GraphBundle,
    target: &GraphBundle,
    cfg: &TrainConfig,
    sampled: SampledAdjacency,
) -> Result<TrainOutput> {
    cfg.validate()?;
    check_compatible(source, target)?;
    if sampled.num_nodes() != target.num_nodes() {
        return Err(Error::Data("sampled adjacency does not match the target graph".into()));
    }
    let src = PreparedGraph::new(source);
    let tgt = PreparedGraph::new(target);
    let mut params = Params::init(&cfg.encoder, source.feature_dim(), source.num_classes, cfg.encoder_seed());
    let mut optimizer = Optimizer::new(cfg, &params);
    let mut dropout_rng = seed::rng(cfg.dropout_seed());
    let objective = cfg.objective();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let fb = forward_backward(&src, &tgt, &sampled, &params, &cfg.encoder, &objective, true, &mut dropout_rng)?;
        let bd = fb.breakdown;
        if ![bd.l_gc, bd.l_da, bd.l_sr, bd.total].iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric {
                epoch,
                msg: format!("non-finite loss {bd:?}"),
            });
        }
        optimizer.step(&mut params, &fb.grads)?;
        if !params.is_finite() {
            return Err(Error::Numeric {
                epoch,
                msg: "parameters became non-finite".into(),
            });
        }
        let due = (epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs;
        let metrics = if due {
            evaluate_prepared(&tgt, &params, &cfg.encoder, cfg.encoder.prop_layers_target)?
        } else {
            None
        };
        history.push(EpochRecord::new(epoch, bd, metrics));
    }

    let target_metrics = evaluate_prepared(&tgt, &params, &cfg.encoder, cfg.encoder.prop_layers_target)?;
    Ok(TrainOutput {
        params,
        history,
        target_metrics,
        sampled,
    })
}

/// Sampled adjacency with no edges: the smoothing term vanishes.
pub fn no_smoothing(num_nodes: usize) -> SampledAdjacency {
    SampledAdjacency::from_matrix(SparseMatrix::empty(num_nodes, num_nodes))
}

fn check_compatible(source: &GraphBundle, target: &GraphBundle) -> Result<()> {
    if source.feature_dim() != target.feature_dim() {
        return Err(Error::Data(format!(
            "feature_dim differs: source {} vs target {}",
            source.feature_dim(),
            target.feature_dim()
        )));
    }
    if source.num_classes != target.num_classes {
        return Err(Error::Data(format!(
            "num_classes differs: source {} vs target {}",
            source.num_classes, target.num_classes
        )));
    }
    if source.labels.is_none() {
        return Err(Error::Data("source bundle must be labelled".into()));
    }
    Ok(())
}

fn evaluate_prepared(
    graph: &PreparedGraph<'_>,
    params: &Params,
    cfg: &EncoderConfig,
    prop_layers: usize,
) -> Result<Option<Metrics>> {
    let Some(truth) = graph.bundle.labels.as_deref() else {
        return Ok(None);
    };
    let pred = predict(graph, params, cfg, prop_layers)?;
    metrics(&pred, truth, graph.bundle.num_classes).map(Some)
}

/// Metrics of `params` on a labelled bundle; `None` when it has no labels.
pub fn evaluate(
    bundle: &GraphBundle,
    params: &Params,
    cfg: &EncoderConfig,
    prop_layers: usize,
) -> Result<Option<Metrics>> {
    evaluate_prepared(&PreparedGraph::new(bundle), params, cfg, prop_layers)
}

pub fn metrics(pred: &[usize], truth: &[usize], num_classes: usize) -> Result<Metrics> {
    Ok(Metrics {
        micro_f1: micro_f1(pred, truth, num_classes)?,
        macro_f1: macro_f1(pred, truth, num_classes)?,
        nmi: nmi(pred, truth)?,
    })
}

fn check_lengths(pred: &[usize], truth: &[usize]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::InvalidArgument(format!(
            "prediction length {} differs from truth length {}",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

/// Per-class (tp, fp, fn) counts.
fn class_counts(pred: &[usize], truth: &[usize], num_classes: usize) -> Result<Vec<[usize; 3]>> {
    check_lengths(pred, truth)?;
    let mut counts = vec![[0usize; 3]; num_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if p >= num_classes || t >= num_classes {
            return Err(Error::InvalidArgument(format!("label outside 0..{num_classes}")));
        }
        if p == t {
            counts[p][0] += 1;
        } else {
            counts[p][1] += 1;
            counts[t][2] += 1;
        }
    }
    Ok(counts)
}

fn f1(tp: usize, fp: usize, fneg: usize) -> f64 {
    let denom = 2 * tp + fp + fneg;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Globally pooled F1; equals accuracy for single-label prediction.
pub fn micro_f1(pred: &[usize], truth: &[usize], num_classes: usize) -> Result<f64> {
    let counts = class_counts(pred, truth, num_classes)?;
    let (tp, fp, fneg) = counts
        .iter()
        .fold((0, 0, 0), |acc, c| (acc.0 + c[0], acc.1 + c[1], acc.2 + c[2]));
    Ok(f1(tp, fp, fneg))
}

/// Unweighted mean of per-class F1; a class absent from both sides scores 0.
pub fn macro_f1(pred: &[usize], truth: &[usize], num_classes: usize) -> Result<f64> {
    let counts = class_counts(pred, truth, num_classes)?;
    if num_classes == 0 {
        return Ok(0.0);
    }
    Ok(counts.iter().map(|c| f1(c[0], c[1], c[2])).sum::<f64>() / num_classes as f64)
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// `I(A;B) / √(H(A)·H(B))` in nats.
///
/// When either entropy is zero the result is 1 if both partitions are
/// single clusters (hence equal) and 0 otherwise.
pub fn nmi(a: &[usize], b: &[usize]) -> Result<f64> {
    check_lengths(a, b)?;
    if a.is_empty() {
        return Err(Error::InvalidArgument("nmi of empty assignments".into()));
    }
    let n = a.len() as f64;
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut joint = vec![0usize; ka * kb];
    let mut ca = vec![0usize; ka];
    let mut cb = vec![0usize; kb];
    for (&x, &y) in a.iter().zip(b) {
        joint[x * kb + y] += 1;
        ca[x] += 1;
        cb[y] += 1;
    }
    let ha = entropy(ca.iter().copied(), n);
    let hb = entropy(cb.iter().copied(), n);
    if ha == 0.0 || hb == 0.0 {
        return Ok(if ha == 0.0 && hb == 0.0 { 1.0 } else { 0.0 });
    }
    let mut mi = 0.0;
    for x in 0..ka {
        for y in 0..kb {
            let c = joint[x * kb + y];
            if c > 0 {
                let pxy = c as f64 / n;
                mi += pxy * (pxy * n * n / (ca[x] as f64 * cb[y] as f64)).ln();
            }
        }
    }
    Ok((mi / (ha * hb).sqrt()).clamp(0.0, 1.0))
}

/// Writes the latent matrix as TSV, one row per node, values in
/// shortest round-trip form.
pub fn export_embeddings(
    params: &Params,
    bundle: &GraphBundle,
    cfg: &EncoderConfig,
    prop_layers: usize,
    out: impl AsRef<Path>,
) -> Result<()> {
    let h = encode(bundle, params, cfg, prop_layers, false, &mut seed::rng(0))?;
    let mut text = String::new();
    for i in 0..h.rows() {
        for (c, v) in h.row(i).iter().enumerate() {
            if c > 0 {
                text.push('\t');
            }
            write!(text, "{v:?}").expect("write to string");
        }
        text.push('\n');
    }
    let out = out.as_ref();
    fs::write(out, text).map_err(|e| Error::io(out, e))
}

/// Serialises the history as JSON lines.
pub fn history_jsonl(history: &[EpochRecord]) -> String {
    history
        .iter()
        .map(|r| serde_json::to_string(r).expect("history serialises") + "\n")
        .collect()
}
