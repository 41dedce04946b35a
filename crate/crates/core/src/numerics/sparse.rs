use crate::error::{Error, Result};

use super::dense::DenseMatrix;

/// Compressed sparse row matrix. Column indices are strictly increasing
/// within each row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    /// Validates raw CSR arrays.
    pub fn try_new(
        rows: usize,
        cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        vals: Vec<f64>,
    ) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if row_ptr.len() != rows + 1 || row_ptr[0] != 0 {
            return bad(format!("row_ptr must have {} entries starting at 0", rows + 1));
        }
        if col_idx.len() != vals.len() || row_ptr[rows] != col_idx.len() {
            return bad("row_ptr[rows] must equal nnz".into());
        }
        for r in 0..rows {
            if row_ptr[r] > row_ptr[r + 1] {
                return bad(format!("row_ptr decreases at row {r}"));
            }
            let cols_r = &col_idx[row_ptr[r]..row_ptr[r + 1]];
            if cols_r.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("columns not strictly increasing in row {r}"));
            }
            if cols_r.last().is_some_and(|&c| c >= cols) {
                return bad(format!("column index out of bounds in row {r}"));
            }
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return bad("non-finite value".into());
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            vals,
        })
    }

    /// Builds from (row, col, value) triplets in any order. Duplicate
    /// coordinates are rejected.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        triplets.sort_unstable_by_key(|t| (t.0, t.1));
        if let Some(w) = triplets.windows(2).find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
            return Err(Error::InvalidArgument(format!(
                "duplicate entry at ({}, {})",
                w[0].0, w[0].1
            )));
        }
        if let Some(t) = triplets.iter().find(|t| t.0 >= rows || t.1 >= cols) {
            return Err(Error::InvalidArgument(format!(
                "entry ({}, {}) outside {rows}x{cols}",
                t.0, t.1
            )));
        }
        let mut row_ptr = vec![0usize; rows + 1];
        for t in &triplets {
            row_ptr[t.0 + 1] += 1;
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        let col_idx = triplets.iter().map(|t| t.1).collect();
        let vals = triplets.iter().map(|t| t.2).collect();
        Self::try_new(rows, cols, row_ptr, col_idx, vals)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            vals: vec![1.0; n],
        }
    }

    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            row_ptr: vec![0; rows + 1],
            col_idx: Vec::new(),
            vals: Vec::new(),
        }
    }

    pub fn from_dense(d: &DenseMatrix) -> Self {
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        for r in 0..d.rows() {
            for (c, &v) in d.row(r).iter().enumerate() {
                if v != 0.0 {
                    col_idx.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            rows: d.rows(),
            cols: d.cols(),
            row_ptr,
            col_idx,
            vals,
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn vals(&self) -> &[f64] {
        &self.vals
    }

    #[inline]
    pub fn row_cols(&self, r: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[r]..self.row_ptr[r + 1]]
    }

    #[inline]
    pub fn row_vals(&self, r: usize) -> &[f64] {
        &self.vals[self.row_ptr[r]..self.row_ptr[r + 1]]
    }

    #[inline]
    pub fn row_nnz(&self, r: usize) -> usize {
        self.row_ptr[r + 1] - self.row_ptr[r]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let cols = self.row_cols(r);
        match cols.binary_search(&c) {
            Ok(pos) => self.row_vals(r)[pos],
            Err(_) => 0.0,
        }
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        self.row_cols(r).binary_search(&c).is_ok()
    }

    /// Iterates `(row, col, value)` in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |r| {
            self.row_cols(r)
                .iter()
                .zip(self.row_vals(r))
                .map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.rows, self.cols);
        for (r, c, v) in self.iter() {
            d.set(r, c, v);
        }
        d
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.cols + 1];
        for &c in &self.col_idx {
            counts[c + 1] += 1;
        }
        for c in 0..self.cols {
            counts[c + 1] += counts[c];
        }
        let row_ptr = counts.clone();
        let mut next = counts;
        let mut col_idx = vec![0; self.nnz()];
        let mut vals = vec![0.0; self.nnz()];
        for (r, c, v) in self.iter() {
            let slot = next[c];
            col_idx[slot] = r;
            vals[slot] = v;
            next[c] += 1;
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            row_ptr,
            col_idx,
            vals,
        }
    }

    /// Exact structural and numerical symmetry.
    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols && *self == self.transpose()
    }

    /// Returns a copy with entry `(r, c)` multiplied by `f(r, c)`.
    pub fn map_values(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> Self {
        let mut out = self.clone();
        for r in 0..self.rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                out.vals[k] = f(r, self.col_idx[k], self.vals[k]);
            }
        }
        out
    }
}

/// `s * d` for sparse `s` and dense `d`.
pub fn spmm(s: &SparseMatrix, d: &DenseMatrix) -> Result<DenseMatrix> {
    if s.cols != d.rows() {
        return Err(Error::shape("spmm", s.shape(), d.shape()));
    }
    let mut out = DenseMatrix::zeros(s.rows, d.cols());
    for r in 0..s.rows {
        let out_row = out.row_mut(r);
        for (&c, &v) in s.row_cols(r).iter().zip(s.row_vals(r)) {
            for (o, &x) in out_row.iter_mut().zip(d.row(c)) {
                *o += v * x;
            }
        }
    }
    Ok(out)
}

/// `sᵀ * d` without materialising the transpose.
pub fn spmm_t(s: &SparseMatrix, d: &DenseMatrix) -> Result<DenseMatrix> {
    if s.rows != d.rows() {
        return Err(Error::shape("spmm_t", s.shape(), d.shape()));
    }
    let mut out = DenseMatrix::zeros(s.cols, d.cols());
    for r in 0..s.rows {
        let d_row = d.row(r);
        for (&c, &v) in s.row_cols(r).iter().zip(s.row_vals(r)) {
            for (o, &x) in out.row_mut(c).iter_mut().zip(d_row) {
                *o += v * x;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::matmul;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sparse(n: usize, m: usize, density: f64, rng: &mut ChaCha8Rng) -> SparseMatrix {
        let mut t = Vec::new();
        for r in 0..n {
            for c in 0..m {
                if rng.random::<f64>() < density {
                    t.push((r, c, rng.random_range(-2.0..2.0)));
                }
            }
        }
        SparseMatrix::from_triplets(n, m, t).unwrap()
    }

    #[test]
    fn identity_and_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = DenseMatrix::from_fn(5, 2, |_, _| rng.random());
        assert_eq!(spmm(&SparseMatrix::identity(5), &m).unwrap(), m);
        let z = spmm(&SparseMatrix::empty(4, 5), &m).unwrap();
        assert_eq!(z, DenseMatrix::zeros(4, 2));
    }

    #[test]
    fn spmm_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = random_sparse(20, 20, 0.1, &mut rng);
        let d = DenseMatrix::from_fn(20, 4, |_, _| rng.random_range(-1.0..1.0));
        let want = matmul(&s.to_dense(), &d).unwrap();
        assert!(spmm(&s, &d).unwrap().max_abs_diff(&want) < 1e-12);
        let want_t = matmul(&s.to_dense().transpose(), &d).unwrap();
        assert!(spmm_t(&s, &d).unwrap().max_abs_diff(&want_t) < 1e-12);
    }

    #[test]
    fn spmm_rejects_mismatch() {
        assert!(spmm(&SparseMatrix::identity(3), &DenseMatrix::zeros(4, 1)).is_err());
    }

    #[test]
    fn try_new_validates() {
        assert!(SparseMatrix::try_new(2, 2, vec![0, 1, 2], vec![1, 0], vec![1.0, 1.0]).is_ok());
        // unsorted columns
        assert!(SparseMatrix::try_new(1, 3, vec![0, 2], vec![2, 0], vec![1.0, 1.0]).is_err());
        // out of bounds
        assert!(SparseMatrix::try_new(1, 2, vec![0, 1], vec![2], vec![1.0]).is_err());
        // bad nnz
        assert!(SparseMatrix::try_new(1, 2, vec![0, 2], vec![1], vec![1.0]).is_err());
        assert!(SparseMatrix::from_triplets(2, 2, vec![(0, 1, 1.0), (0, 1, 2.0)]).is_err());
    }

    #[test]
    fn transpose_twice_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = random_sparse(9, 6, 0.3, &mut rng);
        assert_eq!(s.transpose().transpose(), s);
        assert_eq!(s.transpose().to_dense(), s.to_dense().transpose());
    }

    proptest::proptest! {
        #[test]
        fn spmm_equals_densify_then_matmul(seed in 0u64..1000, n in 1usize..50, k in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_sparse(n, n, 0.15, &mut rng);
            let d = DenseMatrix::from_fn(n, k, |_, _| rng.random_range(-1.0..1.0));
            let want = matmul(&s.to_dense(), &d).unwrap();
            proptest::prop_assert!(spmm(&s, &d).unwrap().max_abs_diff(&want) < 1e-12);
        }
    }
}
