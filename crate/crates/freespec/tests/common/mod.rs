#![allow(dead_code)]

use freespec::{CovTerm, FreeModel, SymMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_sym(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> SymMatrix {
    SymMatrix::from_upper(d, |_, _| scale * (rng.gen::<f64>() * 2.0 - 1.0))
}

/// Centered discrete term: outcomes ±Z_j with equal mass, plus an optional
/// asymmetric three-point law when `skew` is set.
pub fn random_discrete(rng: &mut ChaCha8Rng, d: usize, skew: bool) -> CovTerm {
    if skew {
        let z1 = random_sym(rng, d, 1.0);
        let z2 = random_sym(rng, d, 1.0);
        // 0.5 z1 + 0.25 z2 + 0.25 z3 = 0
        let z3 = z1.scaled(-2.0).plus_scaled(-1.0, &z2);
        CovTerm::discrete(vec![(0.5, z1), (0.25, z2), (0.25, z3)])
    } else {
        let k = rng.gen_range(1..=2);
        let mut support = Vec::new();
        for _ in 0..k {
            let z = random_sym(rng, d, 1.0);
            let p = 0.5 / k as f64;
            support.push((p, z.clone()));
            support.push((p, z.scaled(-1.0)));
        }
        CovTerm::discrete(support)
    }
}

pub fn random_model(rng: &mut ChaCha8Rng, d: usize, n_terms: usize) -> FreeModel {
    let a0 = random_sym(rng, d, 1.0);
    let terms = (0..n_terms)
        .map(|_| match rng.gen_range(0..3) {
            0 => CovTerm::gaussian(random_sym(rng, d, 1.0)),
            1 => random_discrete(rng, d, false),
            _ => random_discrete(rng, d, true),
        })
        .collect();
    let scale = 0.5 + rng.gen::<f64>();
    FreeModel::new(a0, terms, scale).unwrap()
}

pub fn unit_semicircle() -> FreeModel {
    FreeModel::gaussian(SymMatrix::zeros(1), &[SymMatrix::identity(1)], 1.0).unwrap()
}

pub fn catalan(k: usize) -> f64 {
    let mut c = 1u128;
    for i in 0..k as u128 {
        c = c * 2 * (2 * i + 1) / (i + 2);
    }
    c as f64
}

/// ∫ f dμ_sc on [−2, 2] via x = 2cos θ and the midpoint rule.
pub fn semicircle_integral(f: impl Fn(f64) -> f64, nodes: usize) -> f64 {
    let h = std::f64::consts::PI / nodes as f64;
    let mut s = 0.0;
    for i in 0..nodes {
        let th = (i as f64 + 0.5) * h;
        let sin = th.sin();
        s += f(2.0 * th.cos()) * 2.0 * sin * sin;
    }
    s * h / std::f64::consts::PI
}

pub fn max_diff(a: &freespec::Mat, b: &freespec::Mat) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Σ_{j<r} ±vⱼvⱼᵀ for r random orthonormal vectors: norm 1, Frobenius² r.
pub fn random_low_rank_sign(rng: &mut ChaCha8Rng, d: usize, r: usize) -> SymMatrix {
    let raw: Vec<Vec<f64>> = (0..r).map(|_| (0..d).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect()).collect();
    let q = freespec::matrix::orthonormalize(&raw, d);
    let mut m = freespec::Mat::zeros(d);
    for v in &q {
        let s = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        for i in 0..d {
            for j in 0..d {
                m.set(i, j, m.get(i, j) + s * v[i] * v[j]);
            }
        }
    }
    SymMatrix::symmetrize(&m)
}

/// Orthonormal basis of a random subspace of R^n of dimension k.
pub fn random_subspace(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<Vec<f64>> {
    let raw: Vec<Vec<f64>> = (0..k).map(|_| (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect()).collect();
    freespec::matrix::orthonormalize(&raw, n)
}

/// Random k-regular simple graph.
pub fn random_regular(rng: &mut ChaCha8Rng, d: usize, k: usize) -> freespec::expanders::GraphSpec {
    use std::collections::HashSet;
    assert!(k < d && (d * k) % 2 == 0);
    // circulant start, then degree-preserving double-edge switches
    let mut edges: Vec<(usize, usize)> = Vec::new();
    for i in 0..d {
        for j in 1..=k / 2 {
            edges.push((i, (i + j) % d));
        }
        if k % 2 == 1 && i < d / 2 {
            edges.push((i, i + d / 2));
        }
    }
    let key = |a: usize, b: usize| (a.min(b), a.max(b));
    let mut set: HashSet<(usize, usize)> = edges.iter().map(|&(a, b)| key(a, b)).collect();
    for _ in 0..20 * edges.len() {
        let (i, j) = (rng.gen_range(0..edges.len()), rng.gen_range(0..edges.len()));
        let ((a, b), (c, e)) = (edges[i], edges[j]);
        let (x, y) = if rng.gen::<bool>() { ((a, c), (b, e)) } else { ((a, e), (b, c)) };
        if x.0 == x.1 || y.0 == y.1 || set.contains(&key(x.0, x.1)) || set.contains(&key(y.0, y.1)) || key(x.0, x.1) == key(y.0, y.1) {
            continue;
        }
        set.remove(&key(a, b));
        set.remove(&key(c, e));
        set.insert(key(x.0, x.1));
        set.insert(key(y.0, y.1));
        edges[i] = x;
        edges[j] = y;
    }
    freespec::expanders::GraphSpec::new(d, edges).unwrap()
}

/// Random simple graph with each pair present independently.
pub fn random_graph(rng: &mut ChaCha8Rng, d: usize, density: f64) -> freespec::expanders::GraphSpec {
    let mut edges = Vec::new();
    for u in 0..d {
        for v in u + 1..d {
            if rng.gen::<f64>() < density {
                edges.push((u, v));
            }
        }
    }
    freespec::expanders::GraphSpec::new(d, edges).unwrap()
}
