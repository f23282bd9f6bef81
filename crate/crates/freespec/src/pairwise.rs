//! Parity-code sample spaces of ±1 vectors with pairwise independent coordinates.

use alloc::vec::Vec;

/// All vectors a ∈ GF(2)^m, coordinate i carrying (−1)^{⟨a, bᵢ⟩} where bᵢ is
/// the binary expansion of i + 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairwiseSpace {
    n: usize,
    vectors: Vec<Vec<i8>>,
}

impl PairwiseSpace {
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn size(&self) -> usize {
        self.vectors.len()
    }
    pub fn vectors(&self) -> &[Vec<i8>] {
        &self.vectors
    }
    pub fn vector(&self, k: usize) -> &[i8] {
        &self.vectors[k]
    }
    pub fn vector_f64(&self, k: usize) -> Vec<f64> {
        self.vectors[k].iter().map(|&s| s as f64).collect()
    }
    /// Number of occurrences of each (sᵢ, sⱼ) pattern, ordered (++, +−, −+, −−).
    pub fn pattern_counts(&self, i: usize, j: usize) -> [usize; 4] {
        let mut c = [0; 4];
        for v in &self.vectors {
            c[((v[i] < 0) as usize) * 2 + (v[j] < 0) as usize] += 1;
        }
        c
    }
}

pub fn build_pairwise_signs(n: usize) -> PairwiseSpace {
    let n = n.max(1);
    let mut m = 0;
    while (1usize << m) < n + 1 {
        m += 1;
    }
    let vectors = (0..1usize << m)
        .map(|a| (0..n).map(|i| if (a & (i + 1)).count_ones() % 2 == 0 { 1 } else { -1 }).collect())
        .collect();
    PairwiseSpace { n, vectors }
}
