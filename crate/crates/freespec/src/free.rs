//! Free semicircular matrix models X = A0⊗1 + √c·Σ Xᵢ.
//!
//! Everything here is computed through the covariance map
//! η(M) = φ[X̄(M⊗1)X̄] = c·Σᵢ E[Zᵢ M Zᵢ]; the semicircular elements themselves
//! never appear.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::invalid;
use crate::matrix::{self, gemm, sym_eig, Mat, SymMatrix};
use crate::num;
use crate::{Error, Result};

/// Hard cap on power-series terms.
pub const SERIES_CAP: usize = 1_000_000;

/// Covariance of one centered semicircular summand.
#[derive(Clone, Debug, PartialEq)]
pub enum CovTerm {
    /// Φ(M) = A M A.
    Gaussian { a: SymMatrix },
    /// Φ(M) = Σⱼ pⱼ Zⱼ M Zⱼ for a centered finite distribution.
    Discrete { support: Vec<(f64, SymMatrix)> },
}

impl CovTerm {
    pub fn gaussian(a: SymMatrix) -> Self {
        CovTerm::Gaussian { a }
    }

    pub fn discrete(support: Vec<(f64, SymMatrix)>) -> Self {
        CovTerm::Discrete { support }
    }

    pub fn dim(&self) -> Option<usize> {
        match self {
            CovTerm::Gaussian { a } => Some(a.dim()),
            CovTerm::Discrete { support } => support.first().map(|(_, z)| z.dim()),
        }
    }

    fn validate(&self, d: usize) -> Result<()> {
        match self {
            CovTerm::Gaussian { a } => {
                if a.dim() != d {
                    return Err(Error::Dimension { expected: d, found: a.dim() });
                }
            }
            CovTerm::Discrete { support } => {
                if support.is_empty() {
                    return Err(invalid!("discrete term has empty support"));
                }
                let mut total = 0.0;
                let mut mean = Mat::zeros(d);
                for (p, z) in support {
                    if z.dim() != d {
                        return Err(Error::Dimension { expected: d, found: z.dim() });
                    }
                    if !(*p > 0.0 && *p <= 1.0) {
                        return Err(invalid!("support probability {p} outside (0, 1]"));
                    }
                    total += p;
                    mean.axpy(*p, z);
                }
                if num::abs(total - 1.0) > 1e-12 {
                    return Err(invalid!("support probabilities sum to {total}, not 1"));
                }
                if mean.max_abs() > 1e-10 {
                    return Err(invalid!("discrete term is not centered (mean entry {:e})", mean.max_abs()));
                }
            }
        }
        Ok(())
    }

    /// Φ_t(M) evaluated densely, without any kernel preprocessing.
    pub fn apply_dense(&self, m: &Mat) -> Mat {
        let n = m.dim();
        let mut out = Mat::zeros(n);
        let mut tmp = Mat::zeros(n);
        let mut add = |w: f64, z: &Mat| {
            gemm(1.0, z, m, 0.0, &mut tmp);
            gemm(w, &tmp, z, 1.0, &mut out);
        };
        match self {
            CovTerm::Gaussian { a } => add(1.0, a),
            CovTerm::Discrete { support } => {
                for (p, z) in support {
                    add(*p, z);
                }
            }
        }
        out
    }

    /// Weighted outcome list (w, Z) with Φ_t(M) = Σ w Z M Z.
    pub fn weighted(&self) -> Vec<(f64, &SymMatrix)> {
        match self {
            CovTerm::Gaussian { a } => vec![(1.0, a)],
            CovTerm::Discrete { support } => support.iter().map(|(p, z)| (*p, z)).collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.weighted().iter().all(|(_, z)| z.max_abs() == 0.0)
    }
}

#[derive(Debug)]
enum Kernel {
    Dense(Mat),
    /// (row, col, value) triples sorted by row; the matrix is symmetric.
    Sparse(Vec<(usize, usize, f64)>),
}

/// Preprocessed covariance map Σ w·K M K (without the free scale).
#[derive(Debug)]
pub(crate) struct CovOp {
    d: usize,
    kernels: Vec<(f64, Kernel)>,
}

impl CovOp {
    fn build(d: usize, terms: &[CovTerm]) -> Result<Self> {
        let mut gaussian: Vec<&SymMatrix> = Vec::new();
        let mut kernels = Vec::new();
        for t in terms {
            match t {
                CovTerm::Gaussian { a } => gaussian.push(a),
                CovTerm::Discrete { support } => {
                    for (p, z) in support {
                        if let Some(k) = Kernel::new(z) {
                            kernels.push((*p, k));
                        }
                    }
                }
            }
        }
        for a in compress_gaussian(d, &gaussian)? {
            if let Some(k) = Kernel::new(&a) {
                kernels.push((1.0, k));
            }
        }
        Ok(CovOp { d, kernels })
    }

    fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    /// out = scale·Σ w K m K
    pub(crate) fn apply(&self, scale: f64, m: &Mat) -> Mat {
        let n = self.d;
        let mut out = Mat::zeros(n);
        if scale == 0.0 {
            return out;
        }
        let mut tmp = Mat::zeros(n);
        for (w, k) in &self.kernels {
            let w = w * scale;
            match k {
                Kernel::Dense(z) => {
                    gemm(1.0, z, m, 0.0, &mut tmp);
                    gemm(w, &tmp, z, 1.0, &mut out);
                }
                Kernel::Sparse(entries) => {
                    let t = tmp.as_mut_slice();
                    t.iter_mut().for_each(|v| *v = 0.0);
                    let ms = m.as_slice();
                    for &(i, k, v) in entries {
                        let src = &ms[k * n..(k + 1) * n];
                        let dst = &mut t[i * n..(i + 1) * n];
                        for (a, b) in dst.iter_mut().zip(src) {
                            *a += v * b;
                        }
                    }
                    let o = out.as_mut_slice();
                    for r in 0..n {
                        let trow = &t[r * n..(r + 1) * n];
                        let orow = &mut o[r * n..(r + 1) * n];
                        for &(j, k, v) in entries {
                            orow[j] += w * v * trow[k];
                        }
                    }
                }
            }
        }
        out
    }
}

impl Kernel {
    fn new(z: &SymMatrix) -> Option<Kernel> {
        let n = z.dim();
        let nnz = z.as_slice().iter().filter(|v| **v != 0.0).count();
        if nnz == 0 {
            return None;
        }
        if n >= 8 && nnz * 4 <= n * n {
            let mut e = Vec::with_capacity(nnz);
            for i in 0..n {
                for j in 0..n {
                    let v = z.get(i, j);
                    if v != 0.0 {
                        e.push((i, j, v));
                    }
                }
            }
            Some(Kernel::Sparse(e))
        } else {
            Some(Kernel::Dense(z.as_mat().clone()))
        }
    }
}

/// Rotates a Gaussian family by the eigenvectors of its Gram matrix and drops
/// null directions. Σ AᵢMAᵢ is invariant under orthogonal mixing of the Aᵢ.
fn compress_gaussian(d: usize, a: &[&SymMatrix]) -> Result<Vec<SymMatrix>> {
    let n = a.len();
    if n < 2 {
        return Ok(a.iter().map(|m| (*m).clone()).collect());
    }
    let gram = SymMatrix::from_upper(n, |i, j| a[i].frob_dot(a[j]));
    let s = sym_eig(&gram)?;
    let top = s.max();
    let keep: Vec<usize> = (0..n).filter(|&q| s.values[q] > 1e-13 * top).collect();
    if keep.len() == n {
        return Ok(a.iter().map(|m| (*m).clone()).collect());
    }
    Ok(keep
        .iter()
        .map(|&q| {
            let mut m = Mat::zeros(d);
            for i in 0..n {
                m.axpy(s.vectors.get(i, q), a[i]);
            }
            SymMatrix::symmetrize(&m)
        })
        .collect())
}

/// X = A0⊗1 + √c·Σ Xᵢ with each Xᵢ centered semicircular of the given covariance.
#[derive(Clone, Debug)]
pub struct FreeModel {
    a0: SymMatrix,
    terms: Arc<Vec<CovTerm>>,
    free_scale: f64,
    cov: Arc<CovOp>,
}

impl PartialEq for FreeModel {
    fn eq(&self, other: &Self) -> bool {
        self.a0 == other.a0 && self.terms == other.terms && self.free_scale == other.free_scale
    }
}

impl FreeModel {
    pub fn new(a0: SymMatrix, terms: Vec<CovTerm>, free_scale: f64) -> Result<Self> {
        let d = a0.dim();
        if !(free_scale >= 0.0 && free_scale.is_finite()) {
            return Err(invalid!("free_scale must be finite and nonnegative, got {free_scale}"));
        }
        for t in &terms {
            t.validate(d)?;
        }
        let cov = CovOp::build(d, &terms)?;
        Ok(FreeModel { a0, terms: Arc::new(terms), free_scale, cov: Arc::new(cov) })
    }

    pub fn deterministic(a0: SymMatrix) -> Self {
        let d = a0.dim();
        FreeModel { a0, terms: Arc::new(Vec::new()), free_scale: 1.0, cov: Arc::new(CovOp { d, kernels: Vec::new() }) }
    }

    /// Gaussian model Σ Aᵢ⊗sᵢ plus A0.
    pub fn gaussian(a0: SymMatrix, a: &[SymMatrix], free_scale: f64) -> Result<Self> {
        FreeModel::new(a0, a.iter().cloned().map(CovTerm::gaussian).collect(), free_scale)
    }

    pub fn dim(&self) -> usize {
        self.a0.dim()
    }
    pub fn a0(&self) -> &SymMatrix {
        &self.a0
    }
    pub fn terms(&self) -> &[CovTerm] {
        &self.terms
    }
    pub fn free_scale(&self) -> f64 {
        self.free_scale
    }

    /// Same free part, new deterministic part.
    pub fn with_a0(&self, a0: SymMatrix) -> Self {
        assert_eq!(a0.dim(), self.dim());
        FreeModel { a0, terms: self.terms.clone(), free_scale: self.free_scale, cov: self.cov.clone() }
    }

    pub fn with_scale(&self, free_scale: f64) -> Self {
        FreeModel { a0: self.a0.clone(), terms: self.terms.clone(), free_scale, cov: self.cov.clone() }
    }

    /// The model of −X (the free part is symmetric in law).
    pub fn negated(&self) -> Self {
        self.with_a0(self.a0.scaled(-1.0))
    }

    pub fn has_free_part(&self) -> bool {
        self.free_scale > 0.0 && !self.cov.is_empty()
    }

    pub(crate) fn cov_op(&self) -> &CovOp {
        &self.cov
    }
}

/// η(M) = c·Σ_t Φ_t(M).
pub fn cov_apply(model: &FreeModel, m: &Mat) -> Result<Mat> {
    if m.dim() != model.dim() {
        return Err(Error::Dimension { expected: model.dim(), found: m.dim() });
    }
    Ok(model.cov.apply(model.free_scale, m))
}

/// φ[X^k] for k = 0..=K.
#[derive(Clone, Debug)]
pub struct MomentTable {
    moments: Vec<SymMatrix>,
}

impl MomentTable {
    pub fn get(&self, k: usize) -> &SymMatrix {
        &self.moments[k]
    }
    pub fn len(&self) -> usize {
        self.moments.len()
    }
    pub fn is_empty(&self) -> bool {
        self.moments.is_empty()
    }
    /// Normalized trace (1/d) Tr φ[X^k].
    pub fn trace(&self, k: usize) -> f64 {
        let m = &self.moments[k];
        m.trace() / m.dim() as f64
    }
}

/// Moments of the periodic word Y_s Y_{s+1} ⋯ with Y_j = D_{j mod r} + S,
/// S the centered free part. Returns table[s][L] = φ[Y_s ⋯ Y_{s+L−1}].
pub(crate) fn word_table(cov: &CovOp, scale: f64, shifts: &[Mat], len: usize) -> Vec<Vec<Mat>> {
    let r = shifts.len();
    let d = shifts[0].dim();
    let mut f: Vec<Vec<Mat>> = (0..r).map(|_| vec![Mat::identity(d)]).collect();
    let mut e: Vec<Vec<Mat>> = (0..r).map(|_| Vec::new()).collect();
    let free = scale > 0.0 && !cov.is_empty();
    for l in 1..=len {
        if free && l >= 2 {
            for t in 0..r {
                let prev = cov.apply(scale, &f[t][l - 2]);
                e[t].push(prev);
            }
        }
        for s in 0..r {
            let mut out = Mat::zeros(d);
            gemm(1.0, &f[s][l - 1], &shifts[(s + l - 1) % r], 0.0, &mut out);
            if free && l >= 2 {
                for m in 0..=l - 2 {
                    let inner = &e[(s + m + 1) % r][l - 2 - m];
                    if m == 0 {
                        out.axpy(1.0, inner);
                    } else {
                        gemm(1.0, &f[s][m], inner, 1.0, &mut out);
                    }
                }
            }
            f[s].push(out);
        }
    }
    f
}

pub fn moment_table(model: &FreeModel, k_max: usize) -> MomentTable {
    let t = word_table(&model.cov, model.free_scale, core::slice::from_ref(model.a0.as_mat()), k_max);
    let moments = t.into_iter().next().unwrap().iter().map(SymMatrix::symmetrize).collect();
    MomentTable { moments }
}

/// table[p][q] = φ[X^p (B⊗1) X^q] for p ≤ P, q ≤ Q.
pub fn sandwich_table(model: &FreeModel, b: &Mat, pp: usize, qq: usize) -> Result<Vec<Vec<Mat>>> {
    let d = model.dim();
    if b.dim() != d {
        return Err(Error::Dimension { expected: d, found: b.dim() });
    }
    let mt = moment_table(model, pp.max(qq));
    let m: Vec<&Mat> = (0..mt.len()).map(|k| mt.get(k).as_mat()).collect();
    let em: Vec<Mat> = (0..qq.saturating_sub(1)).map(|k| model.cov.apply(model.free_scale, m[k])).collect();
    let mut s: Vec<Vec<Mat>> = Vec::with_capacity(pp + 1);
    // η of already computed entries, filled lazily per row
    let mut es: Vec<Vec<Mat>> = Vec::with_capacity(pp + 1);
    for p in 0..=pp {
        let mut row: Vec<Mat> = Vec::with_capacity(qq + 1);
        row.push(m[p].matmul(b));
        for q in 1..=qq {
            if p == 0 {
                row.push(b.matmul(m[q]));
                continue;
            }
            let mut out = row[q - 1].matmul(model.a0.as_mat());
            for k in 0..p {
                let inner = &es[p - 1 - k][q - 1];
                gemm(1.0, m[k], inner, 1.0, &mut out);
            }
            for k in 0..q.saturating_sub(1) {
                gemm(1.0, &row[k], &em[q - 2 - k], 1.0, &mut out);
            }
            row.push(out);
        }
        es.push(row.iter().map(|x| model.cov.apply(model.free_scale, x)).collect());
        s.push(row);
    }
    Ok(s)
}

/// Directional derivatives M'_k = d/dt φ[(X + tB)^k] at t = 0, k = 0..=K,
/// given the moment table of X up to K.
pub(crate) fn moment_derivatives(model: &FreeModel, mt: &MomentTable, etab: &[Mat], b: &Mat, k_max: usize) -> Vec<Mat> {
    let d = model.dim();
    let mut dm: Vec<Mat> = Vec::with_capacity(k_max + 1);
    let mut edm: Vec<Mat> = Vec::new();
    dm.push(Mat::zeros(d));
    if k_max >= 1 {
        dm.push(b.clone());
    }
    let free = model.has_free_part();
    for p in 2..=k_max {
        if free {
            let next = model.cov.apply(model.free_scale, &dm[p - 2]);
            edm.push(next);
        }
        let mut out = dm[p - 1].matmul(model.a0.as_mat());
        gemm(1.0, mt.get(p - 1), b, 1.0, &mut out);
        if free {
            for k in 0..=p - 2 {
                if k >= 1 {
                    gemm(1.0, &dm[k], &etab[p - 2 - k], 1.0, &mut out);
                }
                let inner = &edm[p - 2 - k];
                if k == 0 {
                    out.axpy(1.0, inner);
                } else {
                    gemm(1.0, mt.get(k), inner, 1.0, &mut out);
                }
            }
        }
        dm.push(out);
    }
    dm
}

/// η(φ[X^k]) for k < count.
pub(crate) fn cov_of_moments(model: &FreeModel, mt: &MomentTable, count: usize) -> Vec<Mat> {
    (0..count).map(|k| model.cov.apply(model.free_scale, mt.get(k))).collect()
}

/// Normalized trace (1/d)·Tr φ[X^p].
pub fn trace_moment(model: &FreeModel, p: usize) -> f64 {
    moment_table(model, p).trace(p)
}

/// (tr⊗τ X^{2p})^{1/2p}, the normalized Schatten 2p-norm.
pub fn schatten_2p(model: &FreeModel, two_p: usize) -> f64 {
    let v = trace_moment(model, two_p).max(0.0);
    num::powf(v, 1.0 / two_p as f64)
}

/// One position of a word for the brute-force oracle.
#[derive(Clone, Debug)]
pub enum Slot {
    /// The full operator X (expanded into A0 and each free summand).
    X,
    /// The centered free summand √c·Xᵢ of term i.
    Free(usize),
    /// A deterministic matrix B⊗1.
    Det(SymMatrix),
}

pub const BRUTE_FORCE_MAX_LEN: usize = 12;

/// φ of a word by enumerating every non-crossing pair partition of its free
/// positions whose blocks pair equal term indices. Test oracle.
pub fn nc2_bruteforce_moment(model: &FreeModel, word: &[Slot]) -> Result<Mat> {
    if word.len() > BRUTE_FORCE_MAX_LEN {
        return Err(invalid!("word length {} exceeds {}", word.len(), BRUTE_FORCE_MAX_LEN));
    }
    let d = model.dim();
    let n_terms = model.terms.len();
    for s in word {
        match s {
            Slot::Free(i) if *i >= n_terms => return Err(invalid!("term index {i} out of range")),
            Slot::Det(b) if b.dim() != d => return Err(Error::Dimension { expected: d, found: b.dim() }),
            _ => {}
        }
    }
    let x_positions: Vec<usize> = (0..word.len()).filter(|&i| matches!(word[i], Slot::X)).collect();
    // each X becomes A0 (choice 0) or the free summand of term i (choice i+1)
    let choices = n_terms + 1;
    let total = choices.checked_pow(x_positions.len() as u32).ok_or_else(|| invalid!("word too long"))?;
    let mut acc = Mat::zeros(d);
    let mut expanded: Vec<Option<usize>> = vec![None; word.len()];
    let mut dets: Vec<Option<&Mat>> = vec![None; word.len()];
    for (i, s) in word.iter().enumerate() {
        match s {
            Slot::Free(t) => expanded[i] = Some(*t),
            Slot::Det(b) => dets[i] = Some(b.as_mat()),
            Slot::X => {}
        }
    }
    for code in 0..total {
        let mut c = code;
        for &pos in &x_positions {
            let ch = c % choices;
            c /= choices;
            if ch == 0 {
                expanded[pos] = None;
                dets[pos] = Some(model.a0.as_mat());
            } else {
                expanded[pos] = Some(ch - 1);
                dets[pos] = None;
            }
        }
        let free: Vec<usize> = (0..word.len()).filter(|&i| expanded[i].is_some()).collect();
        if free.len() % 2 == 1 {
            continue;
        }
        let labels: Vec<usize> = free.iter().map(|&i| expanded[i].unwrap()).collect();
        let mut counts = vec![0usize; n_terms];
        for &l in &labels {
            counts[l] += 1;
        }
        if counts.iter().any(|c| c % 2 == 1) {
            continue;
        }
        for pairing in nc_pairings(&labels) {
            let mut partner = vec![usize::MAX; word.len()];
            for &(a, b) in &pairing {
                partner[free[a]] = free[b];
            }
            let v = eval_pairing(model, &expanded, &dets, &partner, 0, word.len());
            acc.axpy(1.0, &v);
        }
    }
    Ok(acc)
}

/// All non-crossing perfect matchings of 0..len whose pairs carry equal labels.
fn nc_pairings(labels: &[usize]) -> Vec<Vec<(usize, usize)>> {
    fn rec(labels: &[usize], lo: usize, hi: usize) -> Vec<Vec<(usize, usize)>> {
        if lo == hi {
            return vec![Vec::new()];
        }
        let mut out = Vec::new();
        let mut j = lo + 1;
        while j < hi {
            if labels[j] == labels[lo] {
                let inner = rec(labels, lo + 1, j);
                if !inner.is_empty() {
                    let outer = rec(labels, j + 1, hi);
                    for a in &inner {
                        for b in &outer {
                            let mut p = Vec::with_capacity(a.len() + b.len() + 1);
                            p.push((lo, j));
                            p.extend_from_slice(a);
                            p.extend_from_slice(b);
                            out.push(p);
                        }
                    }
                }
            }
            j += 2;
        }
        out
    }
    rec(labels, 0, labels.len())
}

fn eval_pairing(
    model: &FreeModel,
    expanded: &[Option<usize>],
    dets: &[Option<&Mat>],
    partner: &[usize],
    lo: usize,
    hi: usize,
) -> Mat {
    let d = model.dim();
    let mut acc = Mat::identity(d);
    let mut i = lo;
    while i < hi {
        if let Some(t) = expanded[i] {
            let j = partner[i];
            let inner = eval_pairing(model, expanded, dets, partner, i + 1, j);
            let mut cov = model.terms[t].apply_dense(&inner);
            cov.scale(model.free_scale);
            acc = acc.matmul(&cov);
            i = j + 1;
        } else {
            acc = acc.matmul(dets[i].unwrap());
            i += 1;
        }
    }
    acc
}

/// Outcome of a resolvent power-series evaluation.
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesReport {
    pub value: f64,
    /// Number of series terms summed.
    pub terms: usize,
    /// Contraction ratio of the series.
    pub ratio: f64,
    /// Set when some even moment of the recentred operator exceeded the
    /// enclosing radius, i.e. the supplied margin was not honoured.
    pub enclosure_violated: bool,
}

/// ‖η(I)‖^{1/2}, the σ of the free part including the free scale.
pub fn free_sigma(model: &FreeModel) -> Result<f64> {
    if !model.has_free_part() {
        return Ok(0.0);
    }
    let e = model.cov.apply(model.free_scale, &Mat::identity(model.dim()));
    Ok(num::sqrt(matrix::op_norm(&SymMatrix::symmetrize(&e))?))
}

/// ‖A0‖ + 2σ√c, an upper bound on ‖X‖.
pub fn pisier_upper(model: &FreeModel) -> Result<f64> {
    Ok(matrix::op_norm(&model.a0)? + 2.0 * free_sigma(model)?)
}

/// λ_max(A0) + 2σ√c ≥ λ_max(X).
pub fn lambda_max_upper(model: &FreeModel) -> Result<f64> {
    Ok(sym_eig(&model.a0)?.max() + 2.0 * free_sigma(model)?)
}

/// λ_min(A0) − 2σ√c ≤ λ_min(X).
pub fn lambda_min_lower(model: &FreeModel) -> Result<f64> {
    Ok(sym_eig(&model.a0)?.min() - 2.0 * free_sigma(model)?)
}

/// Smallest K with Σ_{k≥K} C(p+k−1,k)ρ^k ≤ target.
fn truncation_terms(p: f64, rho: f64, target: f64, cap: usize) -> Result<usize> {
    if rho <= 0.0 {
        return Ok(1);
    }
    let tail_ok = |k: f64| -> bool {
        let q = rho * (p + k) / (k + 1.0);
        if q >= 1.0 {
            return false;
        }
        let ln_t = num::ln_multiset(p, k) + k * num::ln(rho);
        ln_t - num::ln(1.0 - q) <= num::ln(target)
    };
    let mut ln_t = 0.0;
    for k in 0..=cap {
        let kf = k as f64;
        let q = rho * (p + kf) / (kf + 1.0);
        if q < 1.0 && ln_t - num::ln(1.0 - q) <= num::ln(target) {
            return Ok(k.max(1));
        }
        ln_t += num::ln(q);
    }
    // beyond the cap: locate the required index for the error message
    let mut hi = (cap as f64) * 2.0;
    while !tail_ok(hi) && hi < 1e18 {
        hi *= 2.0;
    }
    let mut lo = cap as f64;
    while hi - lo > 1.0 {
        let mid = num::floor(0.5 * (lo + hi));
        if tail_ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Err(Error::TruncationCap { required: hi as u64, cap })
}

/// Σ_k C(p+k−1,k) ρ^k s^k m_k where m_k are moments of the operator scaled to
/// the unit ball and s = ±1 selects the sign pattern.
fn sum_series(p: f64, rho: f64, sign: f64, moments: &[f64]) -> (f64, bool) {
    let mut acc = num::Compensated::default();
    let mut coef = 1.0;
    let mut violated = false;
    for (k, m) in moments.iter().enumerate() {
        if k % 2 == 0 && *m > 1.0 + 1e-8 {
            violated = true;
        }
        let s = if k % 2 == 1 { sign } else { 1.0 };
        acc.add(coef * s * m);
        coef *= rho * (p + k as f64) / (k as f64 + 1.0);
    }
    (acc.value(), violated)
}

/// tr⊗τ((λ1 − X)^{−p}) for λ above the spectrum.
pub fn resolvent_moment_real(model: &FreeModel, lambda: f64, p: usize, margin: f64, delta: f64) -> Result<f64> {
    Ok(resolvent_real_report(model, lambda, p, margin, delta, SERIES_CAP)?.value)
}

/// As [`resolvent_moment_real`], with diagnostics and an explicit term cap.
///
/// The spectrum of λ − X lies in [lo, hi] with lo = max(margin, λ − λ_max⁺)
/// and hi = λ − λ_min⁻; the series is expanded around the midpoint c of that
/// interval: (λ − X)^{−p} = c^{−p} Σ_k C(p+k−1,k) (W/c)^k with W = X − (λ − c).
/// The truncation error is at most delta·min(1, hi^{−p}), so it is both an
/// additive and a relative error bound.
pub fn resolvent_real_report(
    model: &FreeModel,
    lambda: f64,
    p: usize,
    margin: f64,
    delta: f64,
    cap: usize,
) -> Result<SeriesReport> {
    check_series_args(p, delta)?;
    if !(margin > 0.0) {
        return Err(invalid!("margin must be positive, got {margin}"));
    }
    let lo = f64::max(margin, lambda - lambda_max_upper(model)?);
    let hi = lambda - lambda_min_lower(model)?;
    if !(lo > 0.0) || hi < lo {
        return Err(invalid!("lambda = {lambda} is not above the spectrum"));
    }
    let pf = p as f64;
    let c = 0.5 * (lo + hi);
    let h = 0.5 * (hi - lo);
    let rho = h / c;
    let target = delta * f64::min(num::powf(c, pf), num::powf(c / hi, pf));
    let k = truncation_terms(pf, rho, target, cap)?;
    let moments: Vec<f64> = if h <= 1e-300 || k == 1 {
        vec![1.0]
    } else {
        let a0 = model.a0().shifted(c - lambda).scaled(1.0 / h);
        let scaled = model.with_a0(a0).with_scale(model.free_scale / (h * h));
        let mt = moment_table(&scaled, k - 1);
        (0..k).map(|j| mt.trace(j)).collect()
    };
    let (s, violated) = sum_series(pf, rho, 1.0, &moments);
    Ok(SeriesReport { value: num::exp(-pf * num::ln(c)) * s, terms: k, ratio: rho, enclosure_violated: violated })
}

/// tr⊗τ(|z1 − X|^{−2p}) = tr⊗τ((ε² + (λ − X)²)^{−p}) for z = λ + iε.
pub fn resolvent_moment_complex(model: &FreeModel, lambda: f64, eps: f64, p: usize, delta: f64) -> Result<f64> {
    Ok(resolvent_complex_report(model, lambda, eps, p, delta, SERIES_CAP)?.value)
}

/// As [`resolvent_moment_complex`], with diagnostics and an explicit term cap.
///
/// Y = (λ − X)² has spectrum in [lo, hi]; with m the midpoint the series runs
/// over powers of Y − m = ((λ − √m) − X)((λ + √m) − X), whose moments come
/// from the two-periodic word recursion directly rather than from a monomial
/// expansion in X.
pub fn resolvent_complex_report(
    model: &FreeModel,
    lambda: f64,
    eps: f64,
    p: usize,
    delta: f64,
    cap: usize,
) -> Result<SeriesReport> {
    check_series_args(p, delta)?;
    if !(eps > 0.0) {
        return Err(invalid!("imaginary part must be positive, got {eps}"));
    }
    let xl = lambda_min_lower(model)?;
    let xu = lambda_max_upper(model)?;
    let (a, b) = ((lambda - xl) * (lambda - xl), (lambda - xu) * (lambda - xu));
    let lo_y = if xl <= lambda && lambda <= xu { 0.0 } else { f64::min(a, b) };
    let hi_y = f64::max(a, b);
    let pf = p as f64;
    let e2 = eps * eps;
    let m = 0.5 * (lo_y + hi_y);
    let c = e2 + m;
    let h = 0.5 * (hi_y - lo_y);
    let rho = h / c;
    let target = delta * f64::min(num::powf(c, pf), num::powf(c / (e2 + hi_y), pf));
    let k = truncation_terms(pf, rho, target, cap)?;
    let moments: Vec<f64> = if h <= 1e-300 || k == 1 {
        vec![1.0]
    } else {
        let sm = num::sqrt(m);
        let inv = 1.0 / num::sqrt(h);
        let mut d0 = model.a0().scaled(-inv).into_mat();
        d0.add_diag((lambda - sm) * inv);
        let mut d1 = model.a0().scaled(-inv).into_mat();
        d1.add_diag((lambda + sm) * inv);
        let table = word_table(model.cov_op(), model.free_scale / h, &[d0, d1], 2 * (k - 1));
        let dim = model.dim() as f64;
        (0..k).map(|j| table[0][2 * j].trace() / dim).collect()
    };
    let (s, violated) = sum_series(pf, rho, -1.0, &moments);
    Ok(SeriesReport { value: num::exp(-pf * num::ln(c)) * s, terms: k, ratio: rho, enclosure_violated: violated })
}

fn check_series_args(p: usize, delta: f64) -> Result<()> {
    if p == 0 {
        return Err(invalid!("resolvent power must be at least 1"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid!("delta must lie in (0, 1), got {delta}"));
    }
    Ok(())
}

/// σ, ν, σ*, ρ of a model.
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatrixParams {
    pub sigma: f64,
    pub nu: f64,
    pub sigma_star: f64,
    pub rho: f64,
}

/// Scaled outcome list (weight, matrix): the covariance is Σ w vec(Z)vec(Z)ᵀ.
fn outcomes(model: &FreeModel) -> Vec<(f64, &SymMatrix)> {
    let c = model.free_scale;
    model.terms.iter().flat_map(|t| t.weighted()).map(|(w, z)| (w * c, z)).filter(|(w, _)| *w > 0.0).collect()
}

/// ν² = ‖Σ E[vec Z vec Zᵀ]‖, computed on whichever side of the Gram identity is smaller.
pub fn covariance_norm(model: &FreeModel) -> Result<f64> {
    let out = outcomes(model);
    let d = model.dim();
    if out.is_empty() {
        return Ok(0.0);
    }
    let big = if out.len() <= d * d {
        SymMatrix::from_upper(out.len(), |i, j| num::sqrt(out[i].0 * out[j].0) * out[i].1.frob_dot(out[j].1))
    } else {
        let dd = d * d;
        let mut m = Mat::zeros(dd);
        for (w, z) in &out {
            let v = z.as_slice();
            for i in 0..dd {
                if v[i] == 0.0 {
                    continue;
                }
                for j in 0..dd {
                    let cur = m.get(i, j);
                    m.set(i, j, cur + w * v[i] * v[j]);
                }
            }
        }
        SymMatrix::symmetrize(&m)
    };
    Ok(num::sqrt(sym_eig(&big)?.max().max(0.0)))
}

/// sup over unit y, z of Σ E⟨y, Z z⟩², by alternating top-eigenvector updates
/// from 8 fixed-seed starts.
pub fn sigma_star(model: &FreeModel) -> Result<f64> {
    let out = outcomes(model);
    let d = model.dim();
    if out.is_empty() {
        return Ok(0.0);
    }
    let gram_of = |v: &[f64]| -> Result<(f64, Vec<f64>)> {
        let mut s = Mat::zeros(d);
        for (w, z) in &out {
            let zv = z.mul_vec(v);
            for i in 0..d {
                if zv[i] == 0.0 {
                    continue;
                }
                for j in 0..d {
                    let cur = s.get(i, j);
                    s.set(i, j, cur + w * zv[i] * zv[j]);
                }
            }
        }
        let e = sym_eig(&SymMatrix::symmetrize(&s))?;
        Ok((e.max(), e.vector(d - 1)))
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    let mut best: f64 = 0.0;
    for _ in 0..8 {
        let mut z: Vec<f64> = (0..d).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let nz = matrix::norm(&z);
        if nz == 0.0 {
            continue;
        }
        z.iter_mut().for_each(|v| *v /= nz);
        let mut value = 0.0;
        for _ in 0..1000 {
            let (_, y) = gram_of(&z)?;
            let (v, z_new) = gram_of(&y)?;
            z = z_new;
            let done = v - value <= 1e-9 * v.max(1e-300);
            value = v;
            if done {
                break;
            }
        }
        best = best.max(value);
    }
    Ok(num::sqrt(best))
}

/// Largest support norm over discrete terms (scaled by √c); 0 without discrete terms.
pub fn support_norm(model: &FreeModel) -> Result<f64> {
    let mut rho: f64 = 0.0;
    for t in model.terms.iter() {
        if let CovTerm::Discrete { support } = t {
            for (_, z) in support {
                rho = rho.max(matrix::op_norm(z)?);
            }
        }
    }
    Ok(rho * num::sqrt(model.free_scale))
}

pub fn matrix_params(model: &FreeModel) -> Result<MatrixParams> {
    Ok(MatrixParams {
        sigma: free_sigma(model)?,
        nu: covariance_norm(model)?,
        sigma_star: sigma_star(model)?,
        rho: support_norm(model)?,
    })
}
