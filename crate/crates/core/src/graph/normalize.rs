use super::Graph;
use crate::numerics::SparseMatrix;

/// Symmetric normalisation `D̂^{-1/2} (A + I·self_loops) D̂^{-1/2}`.
///
/// `D̂` is the degree matrix of the (possibly self-looped) graph, so an
/// isolated node gives a zero row without self-loops and a unit diagonal
/// entry with them.
pub fn normalized_adjacency(g: &Graph, add_self_loops: bool) -> SparseMatrix {
    let n = g.num_nodes();
    let a = g.adjacency();
    let mut triplets = Vec::with_capacity(a.nnz() + n);
    for i in 0..n {
        for &j in g.neighbors(i) {
            triplets.push((i, j, 1.0));
        }
        if add_self_loops {
            triplets.push((i, i, 1.0));
        }
    }
    let m = SparseMatrix::from_triplets(n, n, triplets).expect("simple graph has unique entries");
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let d = m.row_nnz(i);
            if d == 0 {
                0.0
            } else {
                1.0 / (d as f64).sqrt()
            }
        })
        .collect();
    m.map_values(|r, c, v| v * inv_sqrt[r] * inv_sqrt[c])
}
