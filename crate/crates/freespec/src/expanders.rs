//! Edge signings and cyclic lifts of graphs, fixed by the barrier swap.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::invalid;
use crate::free::CovTerm;
use crate::matrix::{sym_eig, Mat, SymMatrix};
use crate::num;
use crate::pairwise::build_pairwise_signs;
use crate::universality::{swap_norm_barrier, BarrierCertificate, BarrierConfig};
use crate::Result;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GraphSpec {
    vertex_count: usize,
    edges: Vec<(usize, usize)>,
}

impl GraphSpec {
    /// Simple graph on 0..vertex_count; each edge is stored as (min, max).
    pub fn new(vertex_count: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        let mut seen = vec![false; vertex_count * vertex_count];
        let mut norm = Vec::with_capacity(edges.len());
        for (u, v) in edges {
            if u >= vertex_count || v >= vertex_count {
                return Err(invalid!("edge ({u}, {v}) out of range for {vertex_count} vertices"));
            }
            if u == v {
                return Err(invalid!("self-loop at {u}"));
            }
            let (a, b) = (u.min(v), u.max(v));
            if seen[a * vertex_count + b] {
                return Err(invalid!("duplicate edge ({a}, {b})"));
            }
            seen[a * vertex_count + b] = true;
            norm.push((a, b));
        }
        Ok(GraphSpec { vertex_count, edges: norm })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.vertex_count];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    pub fn max_degree(&self) -> usize {
        self.degrees().into_iter().max().unwrap_or(0)
    }

    /// Some(k) when every vertex has degree k.
    pub fn regular_degree(&self) -> Option<usize> {
        let deg = self.degrees();
        let k = *deg.first()?;
        deg.iter().all(|&x| x == k).then_some(k)
    }

    pub fn adjacency(&self) -> SymMatrix {
        signed_adjacency(self.vertex_count, &self.edges, &vec![1; self.edges.len()])
    }
}

/// Σ s_e (e_u e_vᵀ + e_v e_uᵀ).
pub fn signed_adjacency(d: usize, edges: &[(usize, usize)], signs: &[i8]) -> SymMatrix {
    let mut m = Mat::zeros(d);
    for (&(u, v), &s) in edges.iter().zip(signs) {
        m.set(u, v, m.get(u, v) + s as f64);
        m.set(v, u, m.get(v, u) + s as f64);
    }
    SymMatrix::symmetrize(&m)
}

/// A set of vertex-disjoint edges.
pub type Matching = Vec<(usize, usize)>;

struct Coloring {
    d: usize,
    color: Vec<Option<usize>>,
    adj: Vec<Vec<usize>>,
}

impl Coloring {
    fn get(&self, u: usize, v: usize) -> Option<usize> {
        self.color[u * self.d + v]
    }

    fn set(&mut self, u: usize, v: usize, c: Option<usize>) {
        self.color[u * self.d + v] = c;
        self.color[v * self.d + u] = c;
    }

    fn is_free(&self, v: usize, c: usize) -> bool {
        self.adj[v].iter().all(|&w| self.get(v, w) != Some(c))
    }

    fn free_color(&self, v: usize, palette: usize) -> usize {
        (0..palette).find(|&c| self.is_free(v, c)).expect("Δ+1 colors leave one free")
    }

    /// Swaps colors a and b along the alternating path leaving `start` by its a-edge.
    fn invert_path(&mut self, start: usize, a: usize, b: usize) {
        let mut path = Vec::new();
        let (mut cur, mut prev, mut want) = (start, usize::MAX, a);
        while let Some(y) = self.adj[cur].iter().copied().find(|&y| y != prev && self.get(cur, y) == Some(want)) {
            path.push((cur, y, want));
            if y == start {
                break;
            }
            prev = cur;
            cur = y;
            want = if want == a { b } else { a };
        }
        for &(u, v, w) in &path {
            self.set(u, v, Some(if w == a { b } else { a }));
        }
    }

    /// Moves every edge of color `gone` into the other classes by path swaps;
    /// false (with the coloring restored) when some edge cannot be moved.
    fn drop_color(&mut self, edges: &[(usize, usize)], gone: usize, palette: usize) -> bool {
        let saved = self.color.clone();
        for &(u, v) in edges {
            if self.get(u, v) != Some(gone) {
                continue;
            }
            let free = |s: &Self, x: usize| (0..palette).filter(|&c| c != gone && s.is_free(x, c)).collect::<Vec<_>>();
            let moved = 'search: {
                for a in free(self, u) {
                    if self.is_free(v, a) {
                        self.set(u, v, Some(a));
                        break 'search true;
                    }
                    for b in free(self, v) {
                        let before = self.color.clone();
                        self.invert_path(v, a, b);
                        if self.is_free(u, a) && self.is_free(v, a) {
                            self.set(u, v, Some(a));
                            break 'search true;
                        }
                        self.color = before;
                    }
                }
                false
            };
            if !moved {
                self.color = saved;
                return false;
            }
        }
        true
    }

    fn is_fan(&self, x: usize, fan: &[usize]) -> bool {
        fan.windows(2).all(|w| matches!(self.get(x, w[1]), Some(c) if self.is_free(w[0], c)))
    }
}

/// Proper edge coloring with at most Δ+1 colors by fan rotation and path
/// inversion, returned as matchings. A final pass tries to empty one class
/// when all Δ+1 are in use.
pub fn edge_coloring(g: &GraphSpec) -> Vec<Matching> {
    let d = g.vertex_count;
    let mut adj = vec![Vec::new(); d];
    for &(u, v) in &g.edges {
        adj[u].push(v);
        adj[v].push(u);
    }
    let palette = g.max_degree() + 1;
    let mut col = Coloring { d, color: vec![None; d * d], adj };
    for &(x, f) in &g.edges {
        let mut fan = vec![f];
        loop {
            let last = *fan.last().unwrap();
            let next = col.adj[x].iter().copied().find(|&u| {
                !fan.contains(&u) && matches!(col.get(x, u), Some(c) if col.is_free(last, c))
            });
            match next {
                Some(u) => fan.push(u),
                None => break,
            }
        }
        let c = col.free_color(x, palette);
        let dc = col.free_color(*fan.last().unwrap(), palette);
        if c != dc {
            col.invert_path(x, dc, c);
        }
        let w = (0..fan.len())
            .find(|&i| col.is_free(fan[i], dc) && col.is_fan(x, &fan[..=i]))
            .expect("a fan prefix ends at a vertex missing d");
        for j in 0..w {
            let next = col.get(x, fan[j + 1]);
            col.set(x, fan[j], next);
        }
        col.set(x, fan[w], Some(dc));
    }
    let mut used: Vec<usize> = vec![0; palette];
    for &(u, v) in &g.edges {
        used[col.get(u, v).expect("every edge colored")] += 1;
    }
    if used.iter().all(|&k| k > 0) {
        let gone = (0..palette).min_by_key(|&c| used[c]).unwrap_or(0);
        col.drop_color(&g.edges, gone, palette);
    }
    let mut out: Vec<Matching> = vec![Vec::new(); palette];
    for &(u, v) in &g.edges {
        out[col.get(u, v).expect("every edge colored")].push((u, v));
    }
    out.retain(|m| !m.is_empty());
    out
}

/// One discrete term per matching: the pairwise sign space over its edges,
/// each outcome a signed adjacency matrix.
pub fn signing_model(g: &GraphSpec) -> Result<(SymMatrix, Vec<CovTerm>, Vec<Matching>)> {
    if g.regular_degree().is_none() {
        return Err(invalid!("signing needs a regular graph"));
    }
    let d = g.vertex_count;
    let matchings = edge_coloring(g);
    let terms = matchings
        .iter()
        .map(|m| {
            let space = build_pairwise_signs(m.len());
            let w = 1.0 / space.size() as f64;
            CovTerm::discrete(space.vectors().iter().map(|s| (w, signed_adjacency(d, m, s))).collect())
        })
        .collect();
    Ok((SymMatrix::zeros(d), terms, matchings))
}

#[cfg_attr(feature = "serde", derive(serde::Serialize))]
#[derive(Clone, Debug, PartialEq)]
pub struct SigningCertificate {
    pub barrier: BarrierCertificate,
    pub degree: usize,
    pub spectral_radius: f64,
    /// spectral radius / 2√k
    pub ratio: f64,
}

/// Signs per edge (in the graph's edge order), λ_n and the certificate.
pub fn deterministic_signing(g: &GraphSpec, cfg: &BarrierConfig) -> Result<(Vec<i8>, f64, SigningCertificate)> {
    let (a0, terms, matchings) = signing_model(g)?;
    let (choices, out, lambda, barrier) = swap_norm_barrier(&a0, &terms, cfg)?;
    let d = g.vertex_count;
    let mut sign_of = vec![0i8; d * d];
    for (m, &k) in matchings.iter().zip(&choices) {
        let s = build_pairwise_signs(m.len());
        for (&(u, v), &sv) in m.iter().zip(s.vector(k)) {
            sign_of[u * d + v] = sv;
        }
    }
    let signs: Vec<i8> = g.edges.iter().map(|&(u, v)| sign_of[u * d + v]).collect();
    let eig = sym_eig(&out)?;
    let radius = f64::max(eig.max(), -eig.min());
    let k = g.regular_degree().unwrap_or(0);
    Ok((
        signs,
        lambda,
        SigningCertificate { spectral_radius: radius, ratio: radius / (2.0 * num::sqrt(k as f64)), degree: k, barrier },
    ))
}

/// Largest lifted dimension d·m accepted by the lift model.
pub const LIFT_DIM_MAX: usize = 512;

fn lift_block(d: usize, m: usize, u: usize, v: usize, h: usize, centered: bool) -> SymMatrix {
    let n = d * m;
    let mut z = Mat::zeros(n);
    let j = if centered { 1.0 / m as f64 } else { 0.0 };
    for a in 0..m {
        for b in 0..m {
            let val = if b == (a + h) % m { 1.0 } else { 0.0 } - j;
            z.set(u * m + a, v * m + b, val);
            z.set(v * m + b, u * m + a, val);
        }
    }
    SymMatrix::symmetrize(&z)
}

/// One discrete term per edge uv with outcomes χ_uχ_vᵀ⊗(Π_h − J/m) + transpose,
/// h uniform in Z/mZ, on dimension d·m.
pub fn cyclic_lift_model(g: &GraphSpec, m: usize) -> Result<(SymMatrix, Vec<CovTerm>)> {
    if m < 2 {
        return Err(invalid!("lift order must be at least 2"));
    }
    let d = g.vertex_count;
    if d * m > LIFT_DIM_MAX {
        return Err(invalid!("lifted dimension {} exceeds {LIFT_DIM_MAX}", d * m));
    }
    let w = 1.0 / m as f64;
    let terms = g
        .edges
        .iter()
        .map(|&(u, v)| CovTerm::discrete((0..m).map(|h| (w, lift_block(d, m, u, v, h, true))).collect()))
        .collect();
    Ok((SymMatrix::zeros(d * m), terms))
}

/// Adjacency of the lift with shift h_e on each edge.
pub fn lifted_adjacency(g: &GraphSpec, m: usize, shifts: &[usize]) -> SymMatrix {
    let d = g.vertex_count;
    let mut acc = Mat::zeros(d * m);
    for (&(u, v), &h) in g.edges.iter().zip(shifts) {
        acc.axpy(1.0, &lift_block(d, m, u, v, h, false));
    }
    SymMatrix::symmetrize(&acc)
}

#[cfg_attr(feature = "serde", derive(serde::Serialize))]
#[derive(Clone, Debug, PartialEq)]
pub struct LiftCertificate {
    pub barrier: BarrierCertificate,
    pub degree: usize,
    /// ‖A_H − A_G⊗J/m‖
    pub new_norm: f64,
    /// new_norm / 2√k with k the maximum degree
    pub ratio: f64,
}

pub fn deterministic_lift(g: &GraphSpec, m: usize, cfg: &BarrierConfig) -> Result<(Vec<usize>, f64, LiftCertificate)> {
    let (a0, terms) = cyclic_lift_model(g, m)?;
    let (shifts, out, lambda, barrier) = swap_norm_barrier(&a0, &terms, cfg)?;
    let eig = sym_eig(&out)?;
    let new_norm = f64::max(eig.max(), -eig.min());
    let k = g.max_degree();
    Ok((
        shifts,
        lambda,
        LiftCertificate { barrier, degree: k, new_norm, ratio: new_norm / (2.0 * num::sqrt(k as f64)) },
    ))
}
