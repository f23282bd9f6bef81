mod common;

use common::{random_graph, random_regular, rng};
use freespec::expanders::{
    cyclic_lift_model, deterministic_lift, deterministic_signing, edge_coloring, lifted_adjacency, signed_adjacency,
    signing_model, GraphSpec,
};
use freespec::free::{covariance_norm, free_sigma, support_norm};
use freespec::matrix::{op_norm, sym_eig};
use freespec::pairwise::build_pairwise_signs;
use freespec::universality::BarrierConfig;
use freespec::{CovTerm, FreeModel, SymMatrix};

fn cycle(n: usize) -> GraphSpec {
    GraphSpec::new(n, (0..n).map(|i| (i, (i + 1) % n)).collect()).unwrap()
}

fn complete(n: usize) -> GraphSpec {
    GraphSpec::new(n, (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect()).unwrap()
}

fn check_coloring(g: &GraphSpec) -> usize {
    let ms = edge_coloring(g);
    let mut all: Vec<(usize, usize)> = ms.iter().flatten().copied().collect();
    all.sort();
    let mut want = g.edges().to_vec();
    want.sort();
    assert_eq!(all, want);
    for m in &ms {
        let mut used = vec![false; g.vertex_count()];
        for &(u, v) in m {
            assert!(!used[u] && !used[v], "matching shares a vertex");
            used[u] = true;
            used[v] = true;
        }
    }
    assert!(ms.len() <= g.max_degree() + 1);
    ms.len()
}

#[test]
fn coloring_examples() {
    assert_eq!(check_coloring(&cycle(4)), 2);
    assert_eq!(check_coloring(&GraphSpec::new(3, vec![(0, 1), (1, 2)]).unwrap()), 2);
    let k4 = check_coloring(&complete(4));
    assert!(k4 == 3 || k4 == 4);
    check_coloring(&complete(7));
    check_coloring(&cycle(5));
}

#[test]
fn coloring_random_graphs() {
    let mut r = rng(31);
    for t in 0..30 {
        check_coloring(&random_graph(&mut r, 6 + t % 10, 0.2 + 0.02 * t as f64));
    }
    for k in [3, 4, 8] {
        check_coloring(&random_regular(&mut r, 16, k));
    }
}

fn support(t: &CovTerm) -> &[(f64, SymMatrix)] {
    match t {
        CovTerm::Discrete { support } => support,
        CovTerm::Gaussian { .. } => panic!("expected a discrete term"),
    }
}

#[test]
fn signing_model_terms() {
    let g = GraphSpec::new(2, vec![(0, 1)]).unwrap();
    let (_, terms, _) = signing_model(&g).unwrap();
    let s = support(&terms[0]);
    assert_eq!(s.len(), 2);
    assert_eq!(s[0].0, 0.5);
    assert_eq!(s[0].1.get(0, 1), 1.0);
    assert_eq!(s[1].1.get(0, 1), -1.0);

    let two = GraphSpec::new(4, vec![(0, 1), (2, 3)]).unwrap();
    let (_, terms, ms) = signing_model(&two).unwrap();
    assert_eq!(ms.len(), 1);
    let s = support(&terms[0]);
    assert_eq!(s.len(), 4);
    let space = build_pairwise_signs(2);
    for (k, (_, z)) in s.iter().enumerate() {
        assert_eq!(*z, signed_adjacency(4, &ms[0], space.vector(k)));
    }
    assert!(signing_model(&GraphSpec::new(3, vec![(0, 1)]).unwrap()).is_err());
}

#[test]
fn signing_model_parameters() {
    let mut r = rng(32);
    for k in [2, 3, 4] {
        let g = random_regular(&mut r, 10, k);
        let (a0, terms, _) = signing_model(&g).unwrap();
        for t in &terms {
            let mut mean = SymMatrix::zeros(10);
            for (w, z) in support(t) {
                mean = mean.plus_scaled(*w, z);
            }
            assert_eq!(mean.max_abs(), 0.0);
        }
        let m = FreeModel::new(a0, terms, 1.0).unwrap();
        assert!((free_sigma(&m).unwrap().powi(2) - k as f64).abs() < 1e-9);
        assert!((covariance_norm(&m).unwrap().powi(2) - 2.0).abs() < 1e-9);
        assert!((support_norm(&m).unwrap() - 1.0).abs() < 1e-12);
    }
}

fn radius(m: &SymMatrix) -> f64 {
    let e = sym_eig(m).unwrap();
    e.max().max(-e.min())
}

#[test]
fn signing_small_graphs() {
    let c4 = cycle(4);
    let (signs, lambda, cert) = deterministic_signing(&c4, &BarrierConfig::default()).unwrap();
    let out = radius(&signed_adjacency(4, c4.edges(), &signs));
    assert!((out - cert.spectral_radius).abs() < 1e-12);
    assert!(out <= lambda && lambda.is_finite());
    // exhaustive optimum over the 16 signings
    let best = (0..16u32)
        .map(|mask| {
            let s: Vec<i8> = (0..4).map(|i| if mask >> i & 1 == 1 { -1 } else { 1 }).collect();
            radius(&signed_adjacency(4, c4.edges(), &s))
        })
        .fold(f64::INFINITY, f64::min);
    assert!((best - 2f64.sqrt()).abs() < 1e-12);
    assert!(out >= best - 1e-12);

    let two = GraphSpec::new(4, vec![(0, 1), (2, 3)]).unwrap();
    let (_, lambda, cert) = deterministic_signing(&two, &BarrierConfig::default()).unwrap();
    assert!((cert.spectral_radius - 1.0).abs() < 1e-12);
    assert!(lambda >= 1.0);
}

#[test]
fn signing_random_regular_is_certified() {
    let mut r = rng(33);
    let g = random_regular(&mut r, 12, 4);
    let (signs, lambda, cert) = deterministic_signing(&g, &BarrierConfig::default()).unwrap();
    assert_eq!(signs.len(), g.edges().len());
    let out = radius(&signed_adjacency(12, g.edges(), &signs));
    assert!(out <= lambda);
    assert!((cert.ratio - out / 4.0).abs() < 1e-12);
    for v in &cert.barrier.potentials {
        assert!(*v <= cert.barrier.potential_cap * (1.0 + 1e-9) + 1e-12);
    }
}

#[test]
fn lift_model_terms() {
    let g = GraphSpec::new(2, vec![(0, 1)]).unwrap();
    let (a0, terms) = cyclic_lift_model(&g, 2).unwrap();
    assert_eq!(a0.dim(), 4);
    let s = support(&terms[0]);
    assert_eq!(s.len(), 2);
    let mean = s[0].1.scaled(s[0].0).plus_scaled(s[1].0, &s[1].1);
    assert!(mean.max_abs() < 1e-15);
    assert!(cyclic_lift_model(&g, 1).is_err());
    assert!(cyclic_lift_model(&GraphSpec::new(300, vec![(0, 1)]).unwrap(), 2).is_err());

    let tri = cycle(3);
    let (a0, terms) = cyclic_lift_model(&tri, 3).unwrap();
    let m = FreeModel::new(a0, terms, 1.0).unwrap();
    assert!((free_sigma(&m).unwrap().powi(2) - 2.0).abs() < 1e-9);
    assert!(support_norm(&m).unwrap() <= 2.0 + 1e-12);
    assert!(covariance_norm(&m).unwrap() <= 2.0);
}

#[test]
fn lift_trivial_eigenvectors() {
    let mut r = rng(34);
    let g = random_graph(&mut r, 6, 0.5);
    let m = 3;
    let shifts: Vec<usize> = (0..g.edges().len()).map(|i| (i * 7 + 1) % m).collect();
    let ah = lifted_adjacency(&g, m, &shifts);
    let ag = g.adjacency();
    let e = sym_eig(&ag).unwrap();
    for j in 0..6 {
        let v = e.vector(j);
        let lifted: Vec<f64> = (0..6 * m).map(|i| v[i / m]).collect();
        let lhs = ah.mul_vec(&lifted);
        let av = ag.mul_vec(&v);
        for i in 0..6 * m {
            assert!((lhs[i] - av[i / m]).abs() < 1e-10);
        }
    }
}

fn new_norm(g: &GraphSpec, m: usize, shifts: &[usize]) -> f64 {
    let ah = lifted_adjacency(g, m, shifts);
    let d = g.vertex_count();
    let ag = g.adjacency();
    let centered = SymMatrix::from_upper(d * m, |i, j| ah.get(i, j) - ag.get(i / m, j / m) / m as f64);
    op_norm(&centered).unwrap()
}

#[test]
fn lift_examples() {
    let edge = GraphSpec::new(2, vec![(0, 1)]).unwrap();
    for m in [2, 3, 5] {
        for h in 0..m {
            assert!((new_norm(&edge, m, &[h]) - 1.0).abs() < 1e-12);
        }
        let (shifts, lambda, cert) = deterministic_lift(&edge, m, &BarrierConfig::default()).unwrap();
        assert!((cert.new_norm - 1.0).abs() < 1e-12);
        assert!(lambda >= 1.0 && shifts.len() == 1);
    }

    // 4-cycle, m = 2: an odd number of crossed edges gives the 8-cycle
    let c4 = cycle(4);
    let (shifts, lambda, cert) = deterministic_lift(&c4, 2, &BarrierConfig::default()).unwrap();
    let odd = shifts.iter().sum::<usize>() % 2 == 1;
    let want = if odd { 2f64.sqrt() } else { 2.0 };
    assert!((cert.new_norm - want).abs() < 1e-10);
    assert!((new_norm(&c4, 2, &shifts) - cert.new_norm).abs() < 1e-10);
    assert!(cert.new_norm <= lambda);

    let tri = cycle(3);
    let (shifts, lambda, cert) = deterministic_lift(&tri, 3, &BarrierConfig::default()).unwrap();
    assert!((new_norm(&tri, 3, &shifts) - cert.new_norm).abs() < 1e-10);
    assert!(cert.new_norm <= lambda);
}
