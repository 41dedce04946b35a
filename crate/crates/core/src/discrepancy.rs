//! Domain discrepancy and smoothness diagnostics.
//!
//! * [`mmd2`]: biased squared MMD with a Gaussian kernel, used as the
//!   alignment loss, with gradients for both embedding matrices.
//! * [`tvd`]: total variation distance between discrete distributions.
//! * [`estimate_smoothness`]: empirical `(k, r)` model smoothness.
//! * [`bound_terms`]: the computable terms of the target-risk bound, in
//!   log domain where they overflow.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GraphBundle;
use crate::numerics::{DenseMatrix, SparseMatrix};
use crate::seed;

/// Bandwidth floor for the median heuristic.
pub const SIGMA_FLOOR: f64 = 1e-6;
/// Maximum pooled rows used by the median heuristic.
pub const MEDIAN_MAX_ROWS: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthMode {
    MedianHeuristic,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    pub bandwidth_mode: BandwidthMode,
    pub sigma: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            bandwidth_mode: BandwidthMode::MedianHeuristic,
            sigma: 1.0,
        }
    }
}

impl KernelConfig {
    pub fn fixed(sigma: f64) -> Self {
        Self {
            bandwidth_mode: BandwidthMode::Fixed,
            sigma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bandwidth_mode == BandwidthMode::Fixed && !(self.sigma > 0.0 && self.sigma.is_finite())
        {
            return Err(Error::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MmdResult {
    pub value: f64,
    pub sigma: f64,
    pub grad_hs: DenseMatrix,
    pub grad_ht: DenseMatrix,
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn median_of(values: &mut [f64]) -> f64 {
    let n = values.len();
    let mid = n / 2;
    let (_, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower = values[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Median pairwise Euclidean distance over the pooled rows of `hs` and
/// `ht`, floored at [`SIGMA_FLOOR`]. Pools larger than [`MEDIAN_MAX_ROWS`]
/// are subsampled with a stream derived from `seed`.
pub fn median_heuristic_seeded(hs: &DenseMatrix, ht: &DenseMatrix, seed: u64) -> Result<f64> {
    if hs.cols() != ht.cols() {
        return Err(Error::shape("median_heuristic", hs.shape(), ht.shape()));
    }
    let total = hs.rows() + ht.rows();
    if total < 2 {
        return Err(Error::InvalidArgument(
            "median heuristic needs at least two pooled rows".into(),
        ));
    }
    let row = |i: usize| if i < hs.rows() { hs.row(i) } else { ht.row(i - hs.rows()) };
    let mut picked: Vec<usize> = if total > MEDIAN_MAX_ROWS {
        let mut rng = seed::rng(seed::derive(seed, "median_heuristic"));
        sample(&mut rng, total, MEDIAN_MAX_ROWS).into_vec()
    } else {
        (0..total).collect()
    };
    picked.sort_unstable();
    let mut dists = Vec::with_capacity(picked.len() * (picked.len() - 1) / 2);
    for (a, &i) in picked.iter().enumerate() {
        for &j in &picked[a + 1..] {
            dists.push(sq_dist(row(i), row(j)).sqrt());
        }
    }
    Ok(median_of(&mut dists).max(SIGMA_FLOOR))
}

pub fn median_heuristic(hs: &DenseMatrix, ht: &DenseMatrix) -> Result<f64> {
    median_heuristic_seeded(hs, ht, 0)
}

fn check_mmd_inputs(hs: &DenseMatrix, ht: &DenseMatrix, cfg: &KernelConfig) -> Result<()> {
    if hs.cols() != ht.cols() {
        return Err(Error::shape("mmd2", hs.shape(), ht.shape()));
    }
    if hs.rows() == 0 || ht.rows() == 0 {
        return Err(Error::InvalidArgument("mmd2 needs nonempty inputs".into()));
    }
    cfg.validate()
}

/// Biased (V-statistic) squared MMD,
/// `mean K(s,s) + mean K(t,t) − 2 mean K(s,t)` with
/// `K(x, y) = exp(−‖x − y‖² / 2σ²)`, and its gradients. The bandwidth is
/// treated as a constant when differentiating.
pub fn mmd2(hs: &DenseMatrix, ht: &DenseMatrix, cfg: &KernelConfig) -> Result<MmdResult> {
    check_mmd_inputs(hs, ht, cfg)?;
    let (m, n) = (hs.rows(), ht.rows());
    let total = m + n;
    let dim = hs.cols();
    let pooled: Vec<f64> = hs.as_slice().iter().chain(ht.as_slice()).copied().collect();
    let row = |i: usize| &pooled[i * dim..(i + 1) * dim];

    // Pairwise squared distances over the pool, upper triangle row by row.
    let mut d2 = Vec::with_capacity(total * (total - 1) / 2);
    for i in 0..total {
        let zi = row(i);
        d2.extend((i + 1..total).map(|j| sq_dist(zi, row(j))));
    }

    let sigma = match cfg.bandwidth_mode {
        BandwidthMode::Fixed => cfg.sigma,
        BandwidthMode::MedianHeuristic if total <= MEDIAN_MAX_ROWS => {
            let mut dists: Vec<f64> = d2.iter().map(|v| v.sqrt()).collect();
            median_of(&mut dists).max(SIGMA_FLOOR)
        }
        BandwidthMode::MedianHeuristic => median_heuristic(hs, ht)?,
    };
    let inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);

    // ∂/∂z_a = −(2 w_a / σ²) Σ_b w_b K_ab (z_a − z_b). Accumulate
    // Σ_b w_b K_ab and Σ_b w_b K_ab z_b per row, using K's symmetry.
    let weights: Vec<f64> = (0..total)
        .map(|i| if i < m { 1.0 / m as f64 } else { -1.0 / n as f64 })
        .collect();
    let mut row_mass = vec![0.0; total];
    let mut weighted = vec![0.0; total * dim];
    // Diagonal kernel entries are 1.
    let mut k_ss = m as f64;
    let mut k_tt = n as f64;
    let mut k_st = 0.0;
    let mut offset = 0;
    for i in 0..total {
        let count = total - i - 1;
        let kernels: Vec<f64> = d2[offset..offset + count]
            .iter()
            .map(|v| (-v * inv_two_sigma2).exp())
            .collect();
        offset += count;
        let (wi, zi) = (weights[i], row(i));
        let mut acc = vec![0.0; dim];
        let mut mass = 0.0;
        for (step, &k) in kernels.iter().enumerate() {
            let j = i + 1 + step;
            if i < m && j < m {
                k_ss += 2.0 * k;
            } else if i >= m {
                k_tt += 2.0 * k;
            } else {
                k_st += k;
            }
            let wj = weights[j];
            mass += wj * k;
            row_mass[j] += wi * k;
            let zj = row(j);
            let wk = wj * k;
            let out_j = &mut weighted[j * dim..(j + 1) * dim];
            for d in 0..dim {
                acc[d] += wk * zj[d];
                out_j[d] += wi * k * zi[d];
            }
        }
        row_mass[i] += mass;
        for (w, a) in weighted[i * dim..(i + 1) * dim].iter_mut().zip(&acc) {
            *w += a;
        }
    }
    let value = k_ss / (m * m) as f64 + k_tt / (n * n) as f64 - 2.0 * k_st / (m * n) as f64;
    let inv_sigma2 = 1.0 / (sigma * sigma);
    let mut grad = DenseMatrix::zeros(total, dim);
    for a in 0..total {
        let scale = -2.0 * weights[a] * inv_sigma2;
        let za = row(a);
        let wz = &weighted[a * dim..(a + 1) * dim];
        for (d, g) in grad.row_mut(a).iter_mut().enumerate() {
            *g = scale * (row_mass[a] * za[d] - wz[d]);
        }
    }
    let grad_hs = grad.select_rows(&(0..m).collect::<Vec<_>>());
    let grad_ht = grad.select_rows(&(m..total).collect::<Vec<_>>());
    Ok(MmdResult {
        value,
        sigma,
        grad_hs,
        grad_ht,
    })
}

/// Probability vector summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    probs: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
            return Err(Error::InvalidArgument("probabilities must be finite and nonnegative".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(Self { probs })
    }

    /// Normalised histogram of `values` over `0..bins`.
    pub fn histogram(values: &[usize], bins: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("empty histogram".into()));
        }
        let mut counts = vec![0.0; bins];
        for &v in values {
            if v >= bins {
                return Err(Error::InvalidArgument(format!("value {v} outside 0..{bins}")));
            }
            counts[v] += 1.0;
        }
        let total = values.len() as f64;
        Self::new(counts.into_iter().map(|c| c / total).collect())
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// `½ Σ_v |p_v − q_v|`.
pub fn tvd(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<f64> {
    if p.probs.len() != q.probs.len() {
        return Err(Error::InvalidArgument(format!(
            "support sizes differ: {} vs {}",
            p.probs.len(),
            q.probs.len()
        )));
    }
    let s: f64 = p.probs.iter().zip(&q.probs).map(|(a, b)| (a - b).abs()).sum();
    Ok((0.5 * s).min(1.0))
}

/// `‖x_i − x_j‖_∞` for two sparse rows.
pub fn sparse_row_linf(x: &SparseMatrix, i: usize, j: usize) -> f64 {
    let (ci, vi) = (x.row_cols(i), x.row_vals(i));
    let (cj, vj) = (x.row_cols(j), x.row_vals(j));
    let (mut a, mut b, mut best) = (0, 0, 0.0f64);
    while a < ci.len() || b < cj.len() {
        let diff = if b >= cj.len() || (a < ci.len() && ci[a] < cj[b]) {
            a += 1;
            vi[a - 1]
        } else if a >= ci.len() || cj[b] < ci[a] {
            b += 1;
            vj[b - 1]
        } else {
            a += 1;
            b += 1;
            vi[a - 1] - vj[b - 1]
        };
        best = best.max(diff.abs());
    }
    best
}

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Empirical model smoothness: the mean over nodes `i` of
/// `sup ‖h_i − h_j‖_∞` over nodes `j` within `k` hops whose features satisfy
/// `‖x_i − x_j‖_∞ ≤ r`. An empty sup contributes zero.
pub fn estimate_smoothness(h: &DenseMatrix, bundle: &GraphBundle, k: usize, r: f64) -> Result<f64> {
    let n = bundle.num_nodes();
    if h.rows() != n {
        return Err(Error::shape("estimate_smoothness", h.shape(), (n, bundle.feature_dim())));
    }
    if k == 0 || r.is_nan() || r <= 0.0 {
        return Err(Error::InvalidArgument("need k >= 1 and r > 0".into()));
    }
    if n == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for i in 0..n {
        let mut sup = 0.0f64;
        for (j, _) in bundle.graph.bfs_within(i, k) {
            if j != i && sparse_row_linf(&bundle.features, i, j) <= r {
                sup = sup.max(linf(h.row(i), h.row(j)));
            }
        }
        total += sup;
    }
    Ok(total / n as f64)
}

/// Quantile of pairwise feature `ℓ∞` distances over (at most
/// [`MEDIAN_MAX_ROWS`]) rows; the default `r` for diagnostics uses `q = 0.5`.
pub fn feature_linf_quantile(features: &SparseMatrix, q: f64, seed: u64) -> Result<f64> {
    let n = features.rows();
    if n < 2 {
        return Err(Error::InvalidArgument("need at least two rows".into()));
    }
    let mut rows: Vec<usize> = if n > MEDIAN_MAX_ROWS {
        let mut rng = seed::rng(seed::derive(seed, "feature_quantile"));
        sample(&mut rng, n, MEDIAN_MAX_ROWS).into_vec()
    } else {
        (0..n).collect()
    };
    rows.sort_unstable();
    let mut d = Vec::new();
    for (a, &i) in rows.iter().enumerate() {
        for &j in &rows[a + 1..] {
            d.push(sparse_row_linf(features, i, j));
        }
    }
    d.sort_unstable_by(f64::total_cmp);
    let pos = ((d.len() - 1) as f64 * q.clamp(0.0, 1.0)).round() as usize;
    Ok(d[pos])
}

/// Constants feeding the bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    /// Feature-diameter bound Γ.
    pub gamma: f64,
    /// Loss bound Υ.
    pub upsilon: f64,
    pub phi_s: f64,
    pub phi_t: f64,
    /// Smoothness in the covering exponent; `max(phi_s, phi_t)` when absent.
    pub phi: Option<f64>,
    pub tvd: Option<f64>,
    pub mmd: Option<f64>,
    pub source_risk: Option<f64>,
    pub xi: f64,
    pub r: f64,
    pub k: usize,
    pub m: usize,
    pub n: usize,
    pub d: usize,
}

/// Every right-hand-side term of the bound. Terms that can overflow are kept
/// in natural-log form; `k_value`/`rhs` are `None` when they do not fit in
/// an `f64`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundDiagnostics {
    pub gamma: f64,
    pub upsilon: f64,
    pub phi_s: f64,
    pub phi_t: f64,
    pub phi: f64,
    pub tvd: Option<f64>,
    pub mmd: Option<f64>,
    pub source_risk: Option<f64>,
    pub xi: f64,
    pub r: f64,
    pub k: usize,
    pub m: usize,
    pub n: usize,
    pub d: usize,
    /// Exponent `2Φ²Γ/r² + 1` of the covering number.
    pub covering_exponent: f64,
    /// `log((2d)^e·log 2 + 2 log(1/ξ))`.
    pub log_radicand: f64,
    pub log_z: f64,
    /// Logs of `ΥZ/√m`, `ΥZ/√n` and `Υ√(log(1/ξ)/2m)`.
    pub log_k_terms: [f64; 3],
    pub log_k: f64,
    pub k_value: Option<f64>,
    pub rhs: Option<f64>,
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

pub fn bound_terms(inp: &BoundInputs) -> Result<BoundDiagnostics> {
    let positive = [("gamma", inp.gamma), ("upsilon", inp.upsilon), ("r", inp.r)];
    for (name, v) in positive {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
        }
    }
    if inp.m == 0 || inp.n == 0 || inp.d == 0 || inp.k == 0 {
        return Err(Error::InvalidArgument("m, n, d and k must be positive".into()));
    }
    if !(inp.xi > 0.0 && inp.xi < 1.0) {
        return Err(Error::InvalidArgument(format!("xi must lie in (0, 1), got {}", inp.xi)));
    }
    if inp.phi_s < 0.0 || inp.phi_t < 0.0 || inp.phi.is_some_and(|p| p < 0.0) {
        return Err(Error::InvalidArgument("smoothness values must be nonnegative".into()));
    }
    let phi = inp.phi.unwrap_or(inp.phi_s.max(inp.phi_t));
    let exponent = 2.0 * phi * phi * inp.gamma / (inp.r * inp.r) + 1.0;
    let log_inv_xi = -inp.xi.ln();
    let log_radicand = log_sum_exp(&[
        exponent * (2.0 * inp.d as f64).ln() + std::f64::consts::LN_2.ln(),
        (2.0 * log_inv_xi).ln(),
    ]);
    let log_z = 0.5 * log_radicand;
    let ln_u = inp.upsilon.ln();
    let (m, n) = (inp.m as f64, inp.n as f64);
    let log_k_terms = [
        ln_u + log_z - 0.5 * m.ln(),
        ln_u + log_z - 0.5 * n.ln(),
        ln_u + 0.5 * (log_inv_xi.ln() - (2.0 * m).ln()),
    ];
    let log_k = log_sum_exp(&log_k_terms);
    let k_value = Some(log_k.exp()).filter(|v| v.is_finite());
    let rhs = match (inp.source_risk, inp.tvd, k_value) {
        (Some(risk), Some(tvd), Some(k)) => Some(risk + 2.0 * tvd + inp.phi_s + inp.phi_t + k),
        _ => None,
    };
    Ok(BoundDiagnostics {
        gamma: inp.gamma,
        upsilon: inp.upsilon,
        phi_s: inp.phi_s,
        phi_t: inp.phi_t,
        phi,
        tvd: inp.tvd,
        mmd: inp.mmd,
        source_risk: inp.source_risk,
        xi: inp.xi,
        r: inp.r,
        k: inp.k,
        m: inp.m,
        n: inp.n,
        d: inp.d,
        covering_exponent: exponent,
        log_radicand,
        log_z,
        log_k_terms,
        log_k,
        k_value,
        rhs,
    })
}
