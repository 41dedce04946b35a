//! Laplacian smoothing regulariser on the target representations.
//!
//! ```text
//! L_SR = ½ Σ_i Σ_j Ã_ij ‖h_i/√d_i − h_j/√d_j‖²
//! ```
//!
//! with `d` the degrees of `Ã`. For symmetric `Ã` this equals
//! `tr(Hᵀ L̂ H)` with `L̂ = I − D^{-1/2} Ã D^{-1/2}` restricted to nodes of
//! positive degree, and the gradient is `2 L̂ H`.

use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;
use crate::sampling::SampledAdjacency;

#[derive(Debug, Clone)]
pub struct SmoothingResult {
    pub value: f64,
    pub grad_h: DenseMatrix,
}

fn inv_sqrt_degrees(sa: &SampledAdjacency) -> Vec<f64> {
    sa.degrees
        .iter()
        .map(|&d| if d == 0 { 0.0 } else { 1.0 / (d as f64).sqrt() })
        .collect()
}

/// Value only; skips gradient allocation.
pub fn l_sr_value(h: &DenseMatrix, sa: &SampledAdjacency) -> Result<f64> {
    check(h, sa)?;
    let inv = inv_sqrt_degrees(sa);
    let a = &sa.matrix;
    let mut value = 0.0;
    for i in 0..h.rows() {
        let hi = h.row(i);
        for &j in a.row_cols(i) {
            if j <= i {
                continue;
            }
            let hj = h.row(j);
            let sq: f64 = hi
                .iter()
                .zip(hj)
                .map(|(x, y)| {
                    let d = x * inv[i] - y * inv[j];
                    d * d
                })
                .sum();
            value += sq;
        }
    }
    Ok(value)
}

fn check(h: &DenseMatrix, sa: &SampledAdjacency) -> Result<()> {
    if h.rows() != sa.num_nodes() {
        return Err(Error::shape("l_sr", h.shape(), sa.matrix.shape()));
    }
    Ok(())
}

/// Smoothing loss and its exact gradient with respect to `h`.
///
/// Each unordered edge of `Ã` contributes its squared normalised difference
/// once. Rows of nodes with no sampled neighbors get a zero gradient.
pub fn l_sr(h: &DenseMatrix, sa: &SampledAdjacency) -> Result<SmoothingResult> {
    let value = l_sr_value(h, sa)?;
    let inv = inv_sqrt_degrees(sa);
    let a = &sa.matrix;
    let mut grad_h = DenseMatrix::zeros(h.rows(), h.cols());
    for i in 0..h.rows() {
        if sa.degrees[i] == 0 {
            continue;
        }
        let g = grad_h.row_mut(i);
        g.copy_from_slice(h.row(i));
        for &j in a.row_cols(i) {
            let w = inv[i] * inv[j];
            for (gv, hv) in g.iter_mut().zip(h.row(j)) {
                *gv -= w * hv;
            }
        }
        g.iter_mut().for_each(|v| *v *= 2.0);
    }
    Ok(SmoothingResult { value, grad_h })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::numerics::{finite_difference, matmul, matmul_tn, relative_error, SparseMatrix};
    use crate::sampling::{build_sampled_adjacency, SamplerConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn er(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Graph {
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

    fn random_h(n: usize, d: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
        DenseMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Ordered-pair loop, literally the defining double sum.
    fn pair_loop(h: &DenseMatrix, sa: &SampledAdjacency) -> f64 {
        let n = h.rows();
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let a = sa.matrix.get(i, j);
                if a == 0.0 || sa.degrees[i] == 0 || sa.degrees[j] == 0 {
                    continue;
                }
                let (di, dj) = (sa.degrees[i] as f64, sa.degrees[j] as f64);
                let mut sq = 0.0;
                for c in 0..h.cols() {
                    let d = h.get(i, c) / di.sqrt() - h.get(j, c) / dj.sqrt();
                    sq += d * d;
                }
                total += a * sq;
            }
        }
        0.5 * total
    }

    /// `tr(Hᵀ L̂ H)` with a dense normalised Laplacian.
    fn trace_identity(h: &DenseMatrix, sa: &SampledAdjacency) -> f64 {
        let n = h.rows();
        let lap = DenseMatrix::from_fn(n, n, |i, j| {
            let (di, dj) = (sa.degrees[i] as f64, sa.degrees[j] as f64);
            if di == 0.0 || dj == 0.0 {
                return 0.0;
            }
            let id = if i == j { 1.0 } else { 0.0 };
            id - sa.matrix.get(i, j) / (di * dj).sqrt()
        });
        let lh = matmul(&lap, h).unwrap();
        let m = matmul_tn(h, &lh).unwrap();
        (0..m.rows()).map(|i| m.get(i, i)).sum()
    }

    #[test]
    fn constant_rows_on_regular_graph_vanish() {
        // 6-cycle: every node has degree 2
        let edges: Vec<_> = (0..6).map(|i| (i, (i + 1) % 6)).collect();
        let g = Graph::from_edges(6, &edges).unwrap();
        let sa = build_sampled_adjacency(&g, &SamplerConfig::khop(1)).unwrap();
        let h = DenseMatrix::from_fn(6, 3, |_, c| c as f64 + 0.5);
        assert_eq!(l_sr(&h, &sa).unwrap().value, 0.0);
    }

    #[test]
    fn two_node_closed_form() {
        let g = Graph::from_edges(2, &[(0, 1)]).unwrap();
        let sa = build_sampled_adjacency(&g, &SamplerConfig::khop(1)).unwrap();
        let h = DenseMatrix::from_rows(&[vec![1.0], vec![0.0]]).unwrap();
        let r = l_sr(&h, &sa).unwrap();
        assert_eq!(r.value, 1.0);
        assert_eq!(r.grad_h.as_slice(), &[2.0, -2.0]);
    }

    #[test]
    fn shape_mismatch() {
        let sa = SampledAdjacency::from_matrix(SparseMatrix::empty(3, 3));
        assert!(l_sr(&DenseMatrix::zeros(2, 2), &sa).is_err());
    }

    #[test]
    fn matches_pair_loop_and_trace_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let g = er(50, 0.1, &mut rng);
        let sa = build_sampled_adjacency(&g, &SamplerConfig::rw(2, 3, 5)).unwrap();
        let h = random_h(50, 8, &mut rng);
        let v = l_sr(&h, &sa).unwrap().value;
        let a = pair_loop(&h, &sa);
        let b = trace_identity(&h, &sa);
        assert!((v - a).abs() <= 1e-12 * a.abs());
        assert!((v - b).abs() <= 1e-10 * b.abs());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = er(12, 0.3, &mut rng);
        let sa = build_sampled_adjacency(&g, &SamplerConfig::rw(2, 2, 1)).unwrap();
        let h = random_h(12, 4, &mut rng);
        let r = l_sr(&h, &sa).unwrap();
        let fd = finite_difference(&h, 1e-5, |x| l_sr_value(x, &sa).unwrap());
        assert!(relative_error(&r.grad_h, &fd, 1e-12) < 1e-4);
        for i in 0..12 {
            if sa.degrees[i] == 0 {
                assert!(r.grad_h.row(i).iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn zero_iff_normalized_rows_agree_per_component() {
        // two components: triangle {0,1,2} and edge {3,4}; node 5 isolated
        let g = Graph::from_edges(6, &[(0, 1), (1, 2), (0, 2), (3, 4)]).unwrap();
        let sa = build_sampled_adjacency(&g, &SamplerConfig::khop(1)).unwrap();
        let mut h = DenseMatrix::zeros(6, 2);
        for i in 0..6 {
            let d = (sa.degrees[i] as f64).sqrt();
            let base = if i < 3 { [1.0, -2.0] } else { [0.3, 4.0] };
            h.row_mut(i).copy_from_slice(&[base[0] * d, base[1] * d]);
        }
        h.set(5, 0, 123.0);
        assert!(l_sr(&h, &sa).unwrap().value.abs() < 1e-24);
        h.set(4, 1, 0.0);
        assert!(l_sr(&h, &sa).unwrap().value > 0.0);
    }

    #[test]
    fn gradient_step_decreases_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..10 {
            let g = er(40, 0.1, &mut rng);
            let sa = build_sampled_adjacency(&g, &SamplerConfig::rw(3, 3, 2)).unwrap();
            let h = random_h(40, 5, &mut rng);
            let r = l_sr(&h, &sa).unwrap();
            if r.value == 0.0 {
                continue;
            }
            let mut stepped = h.clone();
            stepped.axpy(-1e-3, &r.grad_h).unwrap();
            assert!(l_sr_value(&stepped, &sa).unwrap() < r.value);
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]
        #[test]
        fn nonnegative_and_matches_pair_loop(seed in 0u64..5000, n in 2usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = er(n, 0.15, &mut rng);
            let sa = build_sampled_adjacency(&g, &SamplerConfig::rw(2, 3, seed)).unwrap();
            let h = random_h(n, 3, &mut rng);
            let v = l_sr_value(&h, &sa).unwrap();
            proptest::prop_assert!(v >= 0.0);
            let oracle = pair_loop(&h, &sa);
            proptest::prop_assert!((v - oracle).abs() <= 1e-12 * oracle.abs().max(1e-300));
        }
    }
}
