//! Operator-valued Cauchy transform G(z) = id⊗τ[(z − X)^{−1}] of a free model,
//! obtained from the fixed point G = (z − A0 − η(G))^{−1}, and the resolvent
//! moments tr⊗τ |z − X|^{−2p} recovered from the z-derivatives of G.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64 as C;

use crate::error::{invalid, numeric};
use crate::free::{CovOp, FreeModel};
use crate::matrix::{gemm, Mat};
use crate::{Result, SymMatrix};

const FIXED_POINT_ITERS: usize = 200_000;
const NEWTON_ITERS: usize = 60;

#[derive(Clone, Debug)]
struct CMat {
    re: Mat,
    im: Mat,
}

impl CMat {
    fn zeros(n: usize) -> Self {
        CMat { re: Mat::zeros(n), im: Mat::zeros(n) }
    }

    fn real(re: Mat) -> Self {
        let n = re.dim();
        CMat { re, im: Mat::zeros(n) }
    }

    fn dim(&self) -> usize {
        self.re.dim()
    }

    fn mul(&self, o: &CMat) -> CMat {
        let n = self.dim();
        let mut re = Mat::zeros(n);
        let mut im = Mat::zeros(n);
        gemm(1.0, &self.re, &o.re, 0.0, &mut re);
        gemm(-1.0, &self.im, &o.im, 1.0, &mut re);
        gemm(1.0, &self.re, &o.im, 0.0, &mut im);
        gemm(1.0, &self.im, &o.re, 1.0, &mut im);
        CMat { re, im }
    }

    /// self += a·o
    fn axpy(&mut self, a: C, o: &CMat) {
        self.re.axpy(a.re, &o.re);
        self.re.axpy(-a.im, &o.im);
        self.im.axpy(a.re, &o.im);
        self.im.axpy(a.im, &o.re);
    }

    fn sub(&self, o: &CMat) -> CMat {
        let mut out = self.clone();
        out.axpy(C::new(-1.0, 0.0), o);
        out
    }

    fn max_abs(&self) -> f64 {
        f64::max(self.re.max_abs(), self.im.max_abs())
    }

    fn trace(&self) -> C {
        C::new(self.re.trace(), self.im.trace())
    }

    fn eta(&self, cov: &CovOp, scale: f64) -> CMat {
        CMat { re: cov.apply(scale, &self.re), im: cov.apply(scale, &self.im) }
    }

    fn to_vec(&self) -> Vec<C> {
        self.re.as_slice().iter().zip(self.im.as_slice()).map(|(a, b)| C::new(*a, *b)).collect()
    }

    fn from_vec(n: usize, v: &[C]) -> CMat {
        let mut out = CMat::zeros(n);
        for (k, c) in v.iter().enumerate() {
            out.re.as_mut_slice()[k] = c.re;
            out.im.as_mut_slice()[k] = c.im;
        }
        out
    }

    fn inverse(&self) -> Result<CMat> {
        let n = self.dim();
        let lu = Lu::factor(n, self.to_vec())?;
        let mut out = vec![C::new(0.0, 0.0); n * n];
        let mut col = vec![C::new(0.0, 0.0); n];
        for j in 0..n {
            col.iter_mut().enumerate().for_each(|(i, c)| *c = C::new((i == j) as u8 as f64, 0.0));
            lu.solve(&mut col);
            for i in 0..n {
                out[i * n + j] = col[i];
            }
        }
        Ok(CMat::from_vec(n, &out))
    }
}

/// LU factorization with partial pivoting of a dense complex matrix.
struct Lu {
    n: usize,
    a: Vec<C>,
    piv: Vec<usize>,
}

impl Lu {
    fn factor(n: usize, mut a: Vec<C>) -> Result<Self> {
        let mut piv: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (mut best, mut arg) = (0.0, k);
            for i in k..n {
                let v = a[i * n + k].norm();
                if v > best {
                    best = v;
                    arg = i;
                }
            }
            if !(best > 1e-300) {
                return Err(numeric!("singular matrix in complex solve"));
            }
            if arg != k {
                for j in 0..n {
                    a.swap(k * n + j, arg * n + j);
                }
                piv.swap(k, arg);
            }
            let inv = C::new(1.0, 0.0) / a[k * n + k];
            for i in k + 1..n {
                let f = a[i * n + k] * inv;
                a[i * n + k] = f;
                if f != C::new(0.0, 0.0) {
                    for j in k + 1..n {
                        let u = a[k * n + j];
                        a[i * n + j] -= f * u;
                    }
                }
            }
        }
        Ok(Lu { n, a, piv })
    }

    fn solve(&self, b: &mut [C]) {
        let n = self.n;
        let mut x: Vec<C> = self.piv.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for j in 0..i {
                let l = self.a[i * n + j];
                let xj = x[j];
                x[i] -= l * xj;
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                let u = self.a[i * n + j];
                let xj = x[j];
                x[i] -= u * xj;
            }
            x[i] /= self.a[i * n + i];
        }
        b.copy_from_slice(&x);
    }
}

/// Factorization of Y ↦ Y − G η(Y) G on d×d complex matrices.
fn stability(cov: &CovOp, scale: f64, g: &CMat) -> Result<Lu> {
    let n = g.dim();
    let nn = n * n;
    let mut m = vec![C::new(0.0, 0.0); nn * nn];
    let mut e = Mat::zeros(n);
    for col in 0..nn {
        e.as_mut_slice()[col] = 1.0;
        let img = g.mul(&CMat::real(cov.apply(scale, &e))).mul(g).to_vec();
        e.as_mut_slice()[col] = 0.0;
        for (row, v) in img.iter().enumerate() {
            m[row * nn + col] = -*v;
        }
        m[col * nn + col] += C::new(1.0, 0.0);
    }
    Lu::factor(nn, m)
}

fn solve_stability(lu: &Lu, rhs: &CMat) -> CMat {
    let mut v = rhs.to_vec();
    lu.solve(&mut v);
    CMat::from_vec(rhs.dim(), &v)
}

/// G(z) for Im z > 0, by damped fixed-point iteration polished with Newton steps.
fn cauchy_transform(model: &FreeModel, lambda: f64, eps: f64) -> Result<CMat> {
    let mut w0 = CMat::real(model.a0().as_mat().scaled(-1.0));
    w0.re.add_diag(lambda);
    w0.im.add_diag(eps);
    let mut g = w0.inverse()?;
    if !model.has_free_part() {
        return Ok(g);
    }
    let (cov, scale) = (model.cov_op(), model.free_scale());
    let phi = |g: &CMat| w0.sub(&g.eta(cov, scale)).inverse();
    for _ in 0..FIXED_POINT_ITERS {
        let next = phi(&g)?;
        let diff = next.sub(&g).max_abs();
        g.axpy(C::new(0.5, 0.0), &next.sub(&g));
        if diff <= 1e-5 * f64::max(1.0, g.max_abs()) {
            break;
        }
    }
    for _ in 0..NEWTON_ITERS {
        let next = phi(&g)?;
        let r = next.sub(&g);
        if r.max_abs() <= 1e-14 * f64::max(1.0, g.max_abs()) {
            g = next;
            if g.trace().im >= 0.0 {
                return Err(numeric!("Cauchy transform left the lower half plane"));
            }
            return Ok(g);
        }
        let lu = stability(cov, scale, &next)?;
        g.axpy(C::new(1.0, 0.0), &solve_stability(&lu, &r));
    }
    Err(numeric!("Cauchy transform fixed point did not converge at λ = {lambda}, ε = {eps}"))
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// tr⊗τ(R(z)^j) for j = 1..=p, R(z) = (z − X)^{−1}, z = λ + iε.
pub fn resolvent_powers(model: &FreeModel, lambda: f64, eps: f64, p: usize) -> Result<Vec<C>> {
    if !(eps > 0.0) || p == 0 {
        return Err(invalid!("need ε > 0 and p ≥ 1"));
    }
    let n = model.dim();
    let g = cauchy_transform(model, lambda, eps)?;
    let (cov, scale) = (model.cov_op(), model.free_scale());
    let lu = if p > 1 { Some(stability(cov, scale, &g)?) } else { None };
    // derivatives G^(k) and W^(k) of W = z − A0 − η(G), with W G = 1
    let mut gd = vec![g.clone()];
    let mut wd = vec![CMat::zeros(n)];
    for k in 1..p {
        let mut inner = CMat::zeros(n);
        if k == 1 {
            inner.re.add_diag(1.0);
        }
        for i in 1..k {
            inner.axpy(C::new(binomial(k, i), 0.0), &wd[i].mul(&gd[k - i]));
        }
        let mut rhs = g.mul(&inner);
        if k == 1 {
            rhs = rhs.mul(&g);
        }
        let mut neg = CMat::zeros(n);
        neg.axpy(C::new(-1.0, 0.0), &rhs);
        let gk = solve_stability(lu.as_ref().unwrap(), &neg);
        let mut wk = gk.eta(cov, scale);
        wk = CMat::zeros(n).sub(&wk);
        if k == 1 {
            wk.re.add_diag(1.0);
        }
        gd.push(gk);
        wd.push(wk);
    }
    let d = n as f64;
    let mut fact = 1.0;
    Ok((1..=p)
        .map(|j| {
            if j > 1 {
                fact *= (j - 1) as f64;
            }
            let sign = if (j - 1) % 2 == 0 { 1.0 } else { -1.0 };
            gd[j - 1].trace() * (sign / (fact * d))
        })
        .collect())
}

/// tr⊗τ(|z − X|^{−2p}) through the partial fraction expansion in R(z) and R(z̄).
pub fn resolvent_moment_cauchy(model: &FreeModel, lambda: f64, eps: f64, p: usize) -> Result<f64> {
    let t = resolvent_powers(model, lambda, eps, p)?;
    let two_ie = C::new(0.0, 2.0 * eps);
    let lead = (-two_ie).powi(-(p as i32));
    let mut s = C::new(0.0, 0.0);
    for j in 1..=p {
        let a = lead * binomial(2 * p - j - 1, p - j) * two_ie.powi(-((p - j) as i32));
        s += a * t[j - 1];
    }
    Ok(2.0 * s.re)
}

/// Dense real LU with partial pivoting.
struct RealLu {
    n: usize,
    a: Vec<f64>,
    piv: Vec<usize>,
}

impl RealLu {
    fn factor(n: usize, mut a: Vec<f64>) -> Result<Self> {
        let mut piv: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (mut best, mut arg) = (0.0, k);
            for i in k..n {
                let v = a[i * n + k].abs();
                if v > best {
                    best = v;
                    arg = i;
                }
            }
            if !(best > 1e-300) {
                return Err(numeric!("singular matrix in real solve"));
            }
            if arg != k {
                for j in 0..n {
                    a.swap(k * n + j, arg * n + j);
                }
                piv.swap(k, arg);
            }
            let inv = 1.0 / a[k * n + k];
            for i in k + 1..n {
                let f = a[i * n + k] * inv;
                a[i * n + k] = f;
                if f != 0.0 {
                    let (top, bottom) = a.split_at_mut(i * n);
                    let src = &top[k * n + k + 1..k * n + n];
                    for (dst, u) in bottom[k + 1..n].iter_mut().zip(src) {
                        *dst -= f * u;
                    }
                }
            }
        }
        Ok(RealLu { n, a, piv })
    }

    fn solve(&self, b: &mut [f64]) {
        let n = self.n;
        let mut x: Vec<f64> = self.piv.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let s: f64 = (0..i).map(|j| self.a[i * n + j] * x[j]).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| self.a[i * n + j] * x[j]).sum();
            x[i] = (x[i] - s) / self.a[i * n + i];
        }
        b.copy_from_slice(&x);
    }

    fn solve_mat(&self, rhs: &Mat) -> Mat {
        let mut v = rhs.as_slice().to_vec();
        self.solve(&mut v);
        Mat::from_row_major(rhs.dim(), v).expect("square")
    }
}

/// Inverse of a symmetric positive definite matrix, or None when it is not.
fn spd_inverse(m: &Mat) -> Option<Mat> {
    let n = m.dim();
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = m.get(j, j);
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > 0.0) {
            return None;
        }
        let d = libm::sqrt(d);
        l[j * n + j] = d;
        for i in j + 1..n {
            let mut v = m.get(i, j);
            for k in 0..j {
                v -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = v / d;
        }
    }
    // L⁻¹ column by column, then (L⁻¹)ᵀL⁻¹
    let mut li = vec![0.0; n * n];
    for c in 0..n {
        for i in c..n {
            let mut v = if i == c { 1.0 } else { 0.0 };
            for k in c..i {
                v -= l[i * n + k] * li[k * n + c];
            }
            li[i * n + c] = v / l[i * n + i];
        }
    }
    let li = Mat::from_row_major(n, li).ok()?;
    let mut out = Mat::zeros(n);
    gemm(1.0, &li.transpose(), &li, 0.0, &mut out);
    Some(out)
}

fn real_stability(cov: &CovOp, scale: f64, g: &Mat) -> Result<RealLu> {
    let n = g.dim();
    let nn = n * n;
    let mut m = vec![0.0; nn * nn];
    let mut e = Mat::zeros(n);
    let mut tmp = Mat::zeros(n);
    let mut img = Mat::zeros(n);
    for col in 0..nn {
        e.as_mut_slice()[col] = 1.0;
        gemm(1.0, g, &cov.apply(scale, &e), 0.0, &mut tmp);
        gemm(1.0, &tmp, g, 0.0, &mut img);
        e.as_mut_slice()[col] = 0.0;
        for (row, v) in img.as_slice().iter().enumerate() {
            m[row * nn + col] = -v;
        }
        m[col * nn + col] += 1.0;
    }
    RealLu::factor(nn, m)
}

/// G(λ) for real λ above the spectrum: the minimal positive definite solution,
/// reached monotonically from G = 0 and polished by Newton steps. Fails when
/// λ − A0 − η(G) stops being positive definite, i.e. λ is not above spec(X).
fn cauchy_transform_real(model: &FreeModel, lambda: f64) -> Result<Mat> {
    let n = model.dim();
    let mut w0 = model.a0().as_mat().scaled(-1.0);
    w0.add_diag(lambda);
    let above = || numeric!("λ = {lambda} is not above the spectrum");
    let (cov, scale) = (model.cov_op(), model.free_scale());
    let phi = |g: &Mat| -> Option<Mat> {
        let mut w = w0.clone();
        w.axpy(-1.0, &cov.apply(scale, g));
        spd_inverse(&SymMatrix::symmetrize(&w))
    };
    let mut g = Mat::zeros(n);
    for _ in 0..FIXED_POINT_ITERS {
        let next = phi(&g).ok_or_else(above)?;
        let mut diff = next.clone();
        diff.axpy(-1.0, &g);
        g = next;
        if !model.has_free_part() || diff.max_abs() <= 1e-7 * g.max_abs() {
            break;
        }
    }
    if !model.has_free_part() {
        return Ok(g);
    }
    for _ in 0..NEWTON_ITERS {
        let next = phi(&g).ok_or_else(above)?;
        let mut r = next.clone();
        r.axpy(-1.0, &g);
        if r.max_abs() <= 1e-14 * g.max_abs() {
            return Ok(next);
        }
        let lu = real_stability(cov, scale, &next)?;
        g.axpy(1.0, &lu.solve_mat(&r));
    }
    Err(numeric!("real Cauchy transform did not converge at λ = {lambda}"))
}

/// tr⊗τ((λ − X)^{−j}) for j = 1..=k_max, λ real above the spectrum.
pub fn real_resolvent_powers(model: &FreeModel, lambda: f64, k_max: usize) -> Result<Vec<f64>> {
    if k_max == 0 {
        return Err(invalid!("need at least one power"));
    }
    let n = model.dim();
    let g = cauchy_transform_real(model, lambda)?;
    let (cov, scale) = (model.cov_op(), model.free_scale());
    let lu = if k_max > 1 && model.has_free_part() { Some(real_stability(cov, scale, &g)?) } else { None };
    let mut gd = vec![g.clone()];
    let mut wd = vec![Mat::zeros(n)];
    let mut tmp = Mat::zeros(n);
    for k in 1..k_max {
        let mut inner = Mat::zeros(n);
        if k == 1 {
            inner.add_diag(1.0);
        }
        for i in 1..k {
            gemm(binomial(k, i), &wd[i], &gd[k - i], 1.0, &mut inner);
        }
        gemm(-1.0, &g, &inner, 0.0, &mut tmp);
        let rhs = if k == 1 { tmp.matmul(&g) } else { tmp.clone() };
        let gk = match &lu {
            Some(lu) => lu.solve_mat(&rhs),
            None => rhs,
        };
        let mut wk = cov.apply(scale, &gk).scaled(-1.0);
        if k == 1 {
            wk.add_diag(1.0);
        }
        gd.push(gk);
        wd.push(wk);
    }
    let d = n as f64;
    let mut fact = 1.0;
    Ok((1..=k_max)
        .map(|j| {
            if j > 1 {
                fact *= (j - 1) as f64;
            }
            let sign = if (j - 1) % 2 == 0 { 1.0 } else { -1.0 };
            sign * gd[j - 1].trace() / (fact * d)
        })
        .collect())
}

/// tr⊗τ((λ − X)^{−p}) for λ above the spectrum.
pub fn resolvent_moment_real_cauchy(model: &FreeModel, lambda: f64, p: usize) -> Result<f64> {
    Ok(*real_resolvent_powers(model, lambda, p)?.last().unwrap())
}
