//! Dense and sparse matrix kernels.
//!
//! Everything is `f64`. Gradients are hand-derived by the loss modules and
//! checked against central finite differences with [`finite_difference`].

mod dense;
mod sparse;

pub use dense::{matmul, matmul_nt, matmul_tn, row_log_softmax, row_softmax, DenseMatrix};
pub use sparse::{spmm, spmm_t, SparseMatrix};

/// Central finite-difference gradient of `f` at `x`.
pub fn finite_difference(
    x: &DenseMatrix,
    step: f64,
    mut f: impl FnMut(&DenseMatrix) -> f64,
) -> DenseMatrix {
    let mut probe = x.clone();
    let mut grad = DenseMatrix::zeros(x.rows(), x.cols());
    for i in 0..x.as_slice().len() {
        let orig = probe.as_slice()[i];
        probe.as_mut_slice()[i] = orig + step;
        let up = f(&probe);
        probe.as_mut_slice()[i] = orig - step;
        let down = f(&probe);
        probe.as_mut_slice()[i] = orig;
        grad.as_mut_slice()[i] = (up - down) / (2.0 * step);
    }
    grad
}

/// Relative error `‖a − b‖ / max(‖a‖, ‖b‖, floor)` in the Frobenius norm.
pub fn relative_error(a: &DenseMatrix, b: &DenseMatrix, floor: f64) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let diff: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale = a.frobenius_sq().sqrt().max(b.frobenius_sq().sqrt()).max(floor);
    diff / scale
}
