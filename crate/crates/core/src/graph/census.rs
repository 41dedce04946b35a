use serde::Serialize;

use super::Graph;

/// Exact triangle and k-star counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MotifCensus {
    pub triangles: u64,
    /// `stars[k - 3]` is the number of k-stars, k = 3..=6.
    pub stars: [u128; 4],
}

impl MotifCensus {
    pub fn stars_k(&self, k: usize) -> u128 {
        self.stars[k - 3]
    }
}

fn binomial(n: u128, k: u128) -> u128 {
    if k > n {
        return 0;
    }
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

fn count_common_above(a: &[usize], b: &[usize], floor: usize) -> u64 {
    let (mut i, mut j, mut count) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                if a[i] > floor {
                    count += 1;
                }
                i += 1;
                j += 1;
            }
        }
    }
    count
}

/// Counts triangles by sorted-neighbor intersection (each counted once as
/// u < v < w) and k-stars as `Σ_v C(deg v, k)`.
pub fn motif_census(g: &Graph) -> MotifCensus {
    let mut triangles = 0;
    for u in 0..g.num_nodes() {
        let nu = g.neighbors(u);
        for &v in nu.iter().filter(|&&v| v > u) {
            triangles += count_common_above(nu, g.neighbors(v), v);
        }
    }
    let mut stars = [0u128; 4];
    for &d in g.degrees() {
        for (slot, k) in stars.iter_mut().zip(3..=6) {
            *slot += binomial(d as u128, k);
        }
    }
    MotifCensus { triangles, stars }
}
