//! Dense real matrices, the symmetric eigensolver and subspace helpers.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Deref;

use crate::error::invalid;
use crate::num;
use crate::{Error, Result};

/// Square dense matrix stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    n: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(n: usize) -> Self {
        Mat { n, data: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_row_major(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Dimension { expected: n * n, found: data.len() });
        }
        Ok(Mat { n, data })
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Mat { n, data }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }
    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, j)).collect()
    }

    /// self += alpha * other
    pub fn axpy(&mut self, alpha: f64, other: &Mat) {
        debug_assert_eq!(self.n, other.n);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for a in &mut self.data {
            *a *= alpha;
        }
    }

    pub fn scaled(&self, alpha: f64) -> Mat {
        let mut m = self.clone();
        m.scale(alpha);
        m
    }

    pub fn add_diag(&mut self, alpha: f64) {
        for i in 0..self.n {
            self.data[i * self.n + i] += alpha;
        }
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        let mut c = Mat::zeros(self.n);
        gemm(1.0, self, other, 0.0, &mut c);
        c
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.n, |i, j| self.get(j, i))
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    /// Frobenius inner product Σ a_ij b_ij.
    pub fn frob_dot(&self, other: &Mat) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// Tr(self · other) without forming the product.
    pub fn trace_mul(&self, other: &Mat) -> f64 {
        let n = self.n;
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += self.data[i * n + j] * other.data[j * n + i];
            }
        }
        s
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, &v| f64::max(m, num::abs(v)))
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| dot(self.row(i), v)).collect()
    }

    pub fn symmetry_defect(&self) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..self.n {
            for j in 0..i {
                d = d.max(num::abs(self.get(i, j) - self.get(j, i)));
            }
        }
        d
    }
}

/// c = alpha·a·b + beta·c
pub fn gemm(alpha: f64, a: &Mat, b: &Mat, beta: f64, c: &mut Mat) {
    let n = a.n;
    debug_assert!(b.n == n && c.n == n);
    if n == 0 {
        return;
    }
    let s = n as isize;
    // SAFETY: all three buffers hold n*n elements laid out row-major with the
    // strides passed here, and `c` does not alias `a` or `b` (borrow rules).
    unsafe {
        matrixmultiply::dgemm(
            n,
            n,
            n,
            alpha,
            a.data.as_ptr(),
            s,
            1,
            b.data.as_ptr(),
            s,
            1,
            beta,
            c.data.as_mut_ptr(),
            s,
            1,
        );
    }
}

/// Dense symmetric matrix; symmetry holds exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix(Mat);

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        SymMatrix(Mat::zeros(n))
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(Mat::identity(n))
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        SymMatrix(Mat::from_fn(n, |i, j| if i == j { values[i] } else { 0.0 }))
    }

    /// Builds from a row-major array. Entries must be symmetric within
    /// `1e-9·(1 + max|entry|)`; the result is the exact average (M + Mᵀ)/2.
    pub fn from_row_major(n: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(invalid!("matrix dimension must be at least 1"));
        }
        let m = Mat::from_row_major(n, data)?;
        if m.data.iter().any(|v| !v.is_finite()) {
            return Err(invalid!("matrix has non-finite entries"));
        }
        let defect = m.symmetry_defect();
        if defect > 1e-9 * (1.0 + m.max_abs()) {
            return Err(invalid!("matrix is not symmetric (defect {defect:e})"));
        }
        Ok(SymMatrix::symmetrize(&m))
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for r in rows {
            if r.len() != n {
                return Err(Error::Dimension { expected: n, found: r.len() });
            }
            data.extend_from_slice(r);
        }
        SymMatrix::from_row_major(n, data)
    }

    /// Uses f(i, j) for i ≤ j and mirrors it.
    pub fn from_upper(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Mat::zeros(n);
        for i in 0..n {
            for j in i..n {
                let v = f(i, j);
                m.set(i, j, v);
                m.set(j, i, v);
            }
        }
        SymMatrix(m)
    }

    /// (M + Mᵀ)/2, bit-identical on both triangles.
    pub fn symmetrize(m: &Mat) -> Self {
        let n = m.n;
        SymMatrix::from_upper(n, |i, j| {
            if i == j {
                m.get(i, i)
            } else {
                0.5 * (m.get(i, j) + m.get(j, i))
            }
        })
    }

    pub fn as_mat(&self) -> &Mat {
        &self.0
    }

    pub fn into_mat(self) -> Mat {
        self.0
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        let mut m = self.0.clone();
        m.axpy(1.0, &other.0);
        SymMatrix(m)
    }

    pub fn scaled(&self, alpha: f64) -> SymMatrix {
        SymMatrix(self.0.scaled(alpha))
    }

    /// self + alpha·other (stays symmetric).
    pub fn plus_scaled(&self, alpha: f64, other: &SymMatrix) -> SymMatrix {
        let mut m = self.0.clone();
        m.axpy(alpha, &other.0);
        SymMatrix(m)
    }

    pub fn shifted(&self, alpha: f64) -> SymMatrix {
        let mut m = self.0.clone();
        m.add_diag(alpha);
        SymMatrix(m)
    }

    /// Σ cᵢ Mᵢ over a family of equally sized matrices.
    pub fn combination(coeffs: &[f64], mats: &[SymMatrix], n: usize) -> SymMatrix {
        let mut m = Mat::zeros(n);
        for (c, a) in coeffs.iter().zip(mats) {
            if *c != 0.0 {
                m.axpy(*c, &a.0);
            }
        }
        SymMatrix(m)
    }
}

impl Deref for SymMatrix {
    type Target = Mat;
    fn deref(&self) -> &Mat {
        &self.0
    }
}

/// Eigen-decomposition of a symmetric matrix: ascending eigenvalues, and
/// eigenvector j stored in column j of `vectors`.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub values: Vec<f64>,
    pub vectors: Mat,
}

impl Spectrum {
    pub fn vector(&self, j: usize) -> Vec<f64> {
        self.vectors.column(j)
    }
    pub fn max(&self) -> f64 {
        *self.values.last().unwrap_or(&0.0)
    }
    pub fn min(&self) -> f64 {
        *self.values.first().unwrap_or(&0.0)
    }
}

const JACOBI_LIMIT: usize = 64;
const MAX_SWEEPS: usize = 100;

pub fn sym_eig(m: &SymMatrix) -> Result<Spectrum> {
    let n = m.dim();
    let (mut values, vectors) = if n <= JACOBI_LIMIT {
        jacobi(m.as_mat())?
    } else {
        tridiagonal_ql(m.as_mat())?
    };
    // sort ascending, carrying columns along
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let sorted = Mat::from_fn(n, |i, j| vectors.get(i, order[j]));
    values = order.iter().map(|&k| values[k]).collect();
    Ok(Spectrum { values, vectors: sorted })
}

fn jacobi(m: &Mat) -> Result<(Vec<f64>, Mat)> {
    let n = m.dim();
    let mut a = m.clone();
    let mut v = Mat::identity(n);
    let mut d: Vec<f64> = (0..n).map(|i| a.get(i, i)).collect();
    let mut b = d.clone();
    let mut z = vec![0.0; n];
    for sweep in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += num::abs(a.get(p, q));
            }
        }
        if off == 0.0 {
            return Ok((d, v));
        }
        let thresh = if sweep < 3 { 0.2 * off / (n * n) as f64 } else { 0.0 };
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.get(p, q);
                let g = 100.0 * num::abs(apq);
                if sweep > 3
                    && num::abs(d[p]) + g == num::abs(d[p])
                    && num::abs(d[q]) + g == num::abs(d[q])
                {
                    a.set(p, q, 0.0);
                    continue;
                }
                if num::abs(apq) <= thresh {
                    continue;
                }
                let h = d[q] - d[p];
                let t = if num::abs(h) + g == num::abs(h) {
                    apq / h
                } else {
                    let theta = 0.5 * h / apq;
                    let t = 1.0 / (num::abs(theta) + num::sqrt(1.0 + theta * theta));
                    if theta < 0.0 {
                        -t
                    } else {
                        t
                    }
                };
                let c = 1.0 / num::sqrt(1.0 + t * t);
                let s = t * c;
                let tau = s / (1.0 + c);
                let h = t * apq;
                z[p] -= h;
                z[q] += h;
                d[p] -= h;
                d[q] += h;
                a.set(p, q, 0.0);
                for j in 0..p {
                    rotate(&mut a, j, p, j, q, s, tau);
                }
                for j in p + 1..q {
                    rotate(&mut a, p, j, j, q, s, tau);
                }
                for j in q + 1..n {
                    rotate(&mut a, p, j, q, j, s, tau);
                }
                for j in 0..n {
                    rotate(&mut v, j, p, j, q, s, tau);
                }
            }
        }
        for p in 0..n {
            b[p] += z[p];
            d[p] = b[p];
            z[p] = 0.0;
        }
    }
    Err(Error::NoConvergence(MAX_SWEEPS))
}

#[inline]
fn rotate(a: &mut Mat, i: usize, j: usize, k: usize, l: usize, s: f64, tau: f64) {
    let g = a.get(i, j);
    let h = a.get(k, l);
    a.set(i, j, g - s * (h + g * tau));
    a.set(k, l, h + s * (g - h * tau));
}

/// Householder tridiagonalization followed by implicit-shift QL.
fn tridiagonal_ql(m: &Mat) -> Result<(Vec<f64>, Mat)> {
    let n = m.dim();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| m.row(i).to_vec()).collect();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];

    for j in 0..n {
        d[j] = v[n - 1][j];
    }
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for k in 0..i {
            scale += num::abs(d[k]);
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[i - 1][j];
                v[i][j] = 0.0;
                v[j][i] = 0.0;
            }
        } else {
            for k in 0..i {
                d[k] /= scale;
                h += d[k] * d[k];
            }
            let mut f = d[i - 1];
            let mut g = num::sqrt(h);
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = 0.0;
            }
            for j in 0..i {
                f = d[j];
                v[j][i] = f;
                g = e[j] + v[j][j] * f;
                for k in j + 1..i {
                    g += v[k][j] * d[k];
                    e[k] += v[k][j] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v[k][j] -= f * e[k] + g * d[k];
                }
                d[j] = v[i - 1][j];
                v[i][j] = 0.0;
            }
        }
        d[i] = h;
    }
    for i in 0..n - 1 {
        v[n - 1][i] = v[i][i];
        v[i][i] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[k][i + 1] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[k][i + 1] * v[k][j];
                }
                for k in 0..=i {
                    v[k][j] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[k][i + 1] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[n - 1][j];
        v[n - 1][j] = 0.0;
    }
    v[n - 1][n - 1] = 1.0;
    e[0] = 0.0;

    // QL iterations on the tridiagonal (d, e)
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    let eps = f64::EPSILON;
    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    for l in 0..n {
        tst1 = tst1.max(num::abs(d[l]) + num::abs(e[l]));
        let mut m = l;
        while m < n - 1 && num::abs(e[m]) > eps * tst1 {
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > 60 {
                    return Err(Error::NoConvergence(60));
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = num::hypot(p, 1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().take(n).skip(l + 2) {
                    *di -= h;
                }
                f += h;
                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = num::hypot(p, e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for row in v.iter_mut() {
                        h = row[i + 1];
                        row[i + 1] = s * row[i] + c * h;
                        row[i] = c * row[i] - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if num::abs(e[l]) <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    let vm = Mat::from_fn(n, |i, j| v[i][j]);
    Ok((d, vm))
}

pub fn op_norm(m: &SymMatrix) -> Result<f64> {
    let s = sym_eig(m)?;
    Ok(f64::max(num::abs(s.min()), num::abs(s.max())))
}

/// Orthonormal basis of the complement of the top-k eigenspace.
pub fn top_eigenspace_complement(m: &SymMatrix, k: usize) -> Result<Vec<Vec<f64>>> {
    let n = m.dim();
    if k > n {
        return Err(invalid!("k = {k} exceeds dimension {n}"));
    }
    let s = sym_eig(m)?;
    Ok((0..n - k).map(|j| s.vector(j)).collect())
}

/// Orthonormal basis of the intersection of the given subspaces, each given
/// by an orthonormal basis of vectors in the same ambient dimension `n`.
pub fn subspace_intersect(n: usize, bases: &[Vec<Vec<f64>>]) -> Result<Vec<Vec<f64>>> {
    for b in bases {
        for v in b {
            if v.len() != n {
                return Err(Error::Dimension { expected: n, found: v.len() });
            }
        }
    }
    let Some((first, rest)) = bases.split_first() else {
        return Ok(standard_basis(n));
    };
    let mut constraints = Vec::new();
    for b in rest {
        constraints.extend(complement_basis(n, b)?);
    }
    Ok(restrict_orthogonal(n, first, &constraints))
}

pub fn standard_basis(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            e
        })
        .collect()
}

/// Orthonormal basis of span(basis)^⊥.
pub fn complement_basis(n: usize, basis: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let q = orthonormalize(basis, n);
    if q.is_empty() {
        return Ok(standard_basis(n));
    }
    let p = projector(n, &q);
    let mut c = Mat::identity(n);
    c.axpy(-1.0, &p);
    let s = sym_eig(&SymMatrix::symmetrize(&c))?;
    Ok((0..n).filter(|&j| s.values[j] > 0.5).map(|j| s.vector(j)).collect())
}

/// P = Σ v vᵀ for an orthonormal family.
pub fn projector(n: usize, basis: &[Vec<f64>]) -> Mat {
    let mut p = Mat::zeros(n);
    for v in basis {
        for i in 0..n {
            if v[i] == 0.0 {
                continue;
            }
            for j in 0..n {
                p.data[i * n + j] += v[i] * v[j];
            }
        }
    }
    p
}

/// Orthonormal basis of the span of `vectors`, by modified Gram–Schmidt with
/// one re-orthogonalization pass; vectors whose residual falls below
/// 1e-9·(largest input norm) count as dependent.
pub fn orthonormalize(vectors: &[Vec<f64>], n: usize) -> Vec<Vec<f64>> {
    let scale = vectors.iter().map(|v| norm(v)).fold(0.0, f64::max);
    if scale == 0.0 {
        return Vec::new();
    }
    let tol = 1e-9 * scale;
    let mut q: Vec<Vec<f64>> = Vec::new();
    for v in vectors {
        let mut w = v.clone();
        for _ in 0..2 {
            for b in &q {
                let c = dot(&w, b);
                for i in 0..n {
                    w[i] -= c * b[i];
                }
            }
        }
        let r = norm(&w);
        if r > tol {
            for x in &mut w {
                *x /= r;
            }
            q.push(w);
        }
    }
    q
}

/// Orthonormal basis of { B w : (B w) ⟂ every constraint }, where B is an
/// orthonormal basis. Outputs lie in span(B) up to rounding only.
pub fn restrict_orthogonal(n: usize, basis: &[Vec<f64>], constraints: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = basis.len();
    if k == 0 {
        return Vec::new();
    }
    let rows: Vec<Vec<f64>> = constraints
        .iter()
        .map(|c| basis.iter().map(|b| dot(b, c)).collect())
        .collect();
    let q = orthonormalize(&rows, k);
    if q.is_empty() {
        return basis.to_vec();
    }
    if q.len() == k {
        return Vec::new();
    }
    // complement of span(q) inside R^k, again by Gram–Schmidt against q
    let mut w_basis: Vec<Vec<f64>> = q.clone();
    let mut out_w = Vec::new();
    for e in standard_basis(k) {
        let mut w = e;
        for _ in 0..2 {
            for b in &w_basis {
                let c = dot(&w, b);
                for i in 0..k {
                    w[i] -= c * b[i];
                }
            }
        }
        let r = norm(&w);
        if r > 1e-6 {
            for x in &mut w {
                *x /= r;
            }
            w_basis.push(w.clone());
            out_w.push(w);
        }
        if out_w.len() + q.len() == k {
            break;
        }
    }
    out_w
        .iter()
        .map(|w| {
            let mut y = vec![0.0; n];
            for (wi, b) in w.iter().zip(basis) {
                for i in 0..n {
                    y[i] += wi * b[i];
                }
            }
            y
        })
        .collect()
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    num::sqrt(dot(a, a))
}

/// Normalized Schatten 2p-norm (tr M^{2p})^{1/2p} of a symmetric matrix, with
/// tr the normalized trace.
pub fn schatten_norm(m: &SymMatrix, two_p: usize) -> Result<f64> {
    let s = sym_eig(m)?;
    let scale = s.values.iter().fold(0.0, |a: f64, v| a.max(num::abs(*v)));
    if scale == 0.0 {
        return Ok(0.0);
    }
    let d = s.values.len() as f64;
    let mean: f64 = s.values.iter().map(|v| num::powi(v / scale, two_p as i32)).sum::<f64>() / d;
    Ok(scale * num::powf(mean, 1.0 / two_p as f64))
}

/// Σ xᵢ Aᵢ.
pub fn linear_combination(x: &[f64], a: &[SymMatrix], n: usize) -> SymMatrix {
    SymMatrix::combination(x, a, n)
}
