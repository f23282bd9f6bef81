//! Sticky-walk partial coloring driven by the free 2p-norm potential, and the
//! matrix Spencer driver built on it.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, numeric};
use crate::free::{self, moment_table, sandwich_table, FreeModel};
use crate::matrix::{self, gemm, sym_eig, Mat, SymMatrix};
use crate::num;
use crate::{Error, Result};

/// max(8, ⌈log₂ d⌉ rounded up to even).
pub fn default_p(d: usize) -> usize {
    let mut l = 0;
    while (1usize << l) < d {
        l += 1;
    }
    (l + l % 2).max(8)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ColoringConfig {
    /// The potential uses moments of order 2p.
    pub p: usize,
    pub delta: f64,
    pub epsilon: f64,
    /// K = 1/(1 − ε − δ − 3/n).
    pub k_mult: f64,
    pub eta0: f64,
    pub eta_min: f64,
    pub slack_const: f64,
}

impl ColoringConfig {
    pub fn new(n: usize, p: usize, delta: f64, epsilon: f64) -> Result<Self> {
        if n == 0 {
            return Err(invalid!("coloring needs at least one coordinate"));
        }
        let nf = n as f64;
        let gap = 1.0 - epsilon - delta - 3.0 / nf;
        if !(gap > 0.0) {
            return Err(invalid!("1 − ε − δ − 3/n = {gap} must be positive"));
        }
        let cfg = ColoringConfig {
            p,
            delta,
            epsilon,
            k_mult: 1.0 / gap,
            eta0: f64::max(1.0, nf / 8.0),
            eta_min: 1.0 / (4.0 * nf * nf),
            slack_const: 1.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(invalid!("moment order p must be positive"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) || !(self.epsilon >= 0.0 && self.epsilon < 1.0) {
            return Err(invalid!("need δ ∈ (0,1) and ε ∈ [0,1)"));
        }
        if self.epsilon + self.delta >= 1.0 {
            return Err(invalid!("ε + δ must be below 1"));
        }
        if !(self.k_mult >= 1.0) {
            return Err(invalid!("K must be at least 1"));
        }
        if !(self.eta_min > 0.0 && self.eta_min < self.eta0) {
            return Err(invalid!("need 0 < eta_min < eta0"));
        }
        if !(self.slack_const >= 0.0) {
            return Err(invalid!("slack constant must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ColoringState {
    pub x: Vec<f64>,
    pub alive: Vec<bool>,
    pub t: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub eta_log: Vec<f64>,
    pub potential_log: Vec<f64>,
}

impl ColoringState {
    /// x = 0 at t = 0, with coordinates already within 1/n of the box frozen.
    pub fn start(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension { expected: lower.len(), found: upper.len() });
        }
        for (b, c) in lower.iter().zip(&upper) {
            if !(*b <= 0.0 && 0.0 <= *c) {
                return Err(invalid!("box must contain the origin, got [{b}, {c}]"));
            }
        }
        let n = lower.len();
        let mut st = ColoringState {
            x: vec![0.0; n],
            alive: vec![true; n],
            t: 0.0,
            lower,
            upper,
            eta_log: Vec::new(),
            potential_log: Vec::new(),
        };
        st.refresh_alive();
        Ok(st)
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn alive_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.alive[i]).collect()
    }

    pub fn frozen_count(&self) -> usize {
        self.alive.iter().filter(|a| !**a).count()
    }

    fn refresh_alive(&mut self) {
        let tol = 1.0 / self.n() as f64;
        for i in 0..self.n() {
            if self.alive[i] && (self.x[i] <= self.lower[i] + tol || self.x[i] >= self.upper[i] - tol) {
                self.alive[i] = false;
            }
        }
    }
}

#[cfg_attr(feature = "serde", derive(serde::Serialize))]
#[derive(Clone, Debug, PartialEq)]
pub struct ColoringCertificate {
    pub p: usize,
    /// ‖A0 + A(x)‖_{2p} of the returned (rounded) point, computed exactly.
    pub final_2p_norm: f64,
    /// ‖A0⊗1 + √K·X̄‖_{2p}, i.e. Φ(0, 0)^{1/4}.
    pub free_2p_norm_start: f64,
    pub per_step_increase: Vec<f64>,
    pub eta_log: Vec<f64>,
    pub potential_log: Vec<f64>,
    /// Allowed increase per unit of η: slack·p³σ²ν²/n.
    pub budget_rate: f64,
    pub frozen_count: usize,
    /// The last walk iterate x_T, before frozen coordinates are rounded.
    pub walk_point: Vec<f64>,
    /// Φ(t_T, x_T)^{1/4} at the last iterate before rounding.
    pub telescoped: f64,
    /// ‖A(x − x_T)‖_{2p} for the rounding move.
    pub rounding_correction: f64,
    /// telescoped + rounding_correction ≥ final_2p_norm.
    pub certified_bound: f64,
}

fn combine(a0: &SymMatrix, a: &[SymMatrix], x: &[f64]) -> SymMatrix {
    let d = a0.dim();
    a0.add(&SymMatrix::combination(x, a, d))
}

fn check_family(a0: &SymMatrix, a: &[SymMatrix], x: &[f64]) -> Result<()> {
    if x.len() != a.len() {
        return Err(Error::Dimension { expected: a.len(), found: x.len() });
    }
    for m in a {
        if m.dim() != a0.dim() {
            return Err(Error::Dimension { expected: a0.dim(), found: m.dim() });
        }
    }
    Ok(())
}

fn induced_model(a0: &SymMatrix, a: &[SymMatrix], x: &[f64], t: f64, k: f64) -> Result<FreeModel> {
    check_family(a0, a, x)?;
    if !(0.0..=1.0).contains(&t) {
        return Err(invalid!("time t = {t} outside [0, 1]"));
    }
    FreeModel::gaussian(combine(a0, a, x), a, k * (1.0 - t))
}

fn potential_of(model: &FreeModel, p: usize) -> f64 {
    let m = free::trace_moment(model, 2 * p).max(0.0);
    num::powf(m, 2.0 / p as f64)
}

/// Φ(t, x) = ‖A0 + A(x) + √(K(1−t))·X̄‖_{2p}^4.
pub fn coloring_potential(a0: &SymMatrix, a: &[SymMatrix], x: &[f64], t: f64, k: f64, p: usize) -> Result<f64> {
    Ok(potential_of(&induced_model(a0, a, x, t, k)?, p))
}

/// Gradient and Hessian of y ↦ tr⊗τ (X + Σ yᵢAᵢ)^{2p} at y = 0, restricted to
/// `coords`, by forward differentiation of the moment recursion along the
/// Gram eigenbasis of the directions.
fn grad_hess_on(model: &FreeModel, a: &[SymMatrix], coords: &[usize], p: usize) -> Result<(Vec<f64>, SymMatrix)> {
    let m = coords.len();
    let d = model.dim();
    let two_p = 2 * p;
    let df = d as f64;
    let mt = moment_table(model, two_p - 1);
    let top = mt.get(two_p - 1);
    let grad: Vec<f64> = coords.iter().map(|&i| two_p as f64 * top.trace_mul(&a[i]) / df).collect();
    if m == 0 {
        return Ok((grad, SymMatrix::zeros(1)));
    }
    let gram = SymMatrix::from_upper(m, |i, j| a[coords[i]].frob_dot(&a[coords[j]]));
    let g = sym_eig(&gram)?;
    let gmax = g.max();
    if gmax <= 0.0 {
        return Ok((grad, SymMatrix::zeros(m)));
    }
    let keep: Vec<usize> = (0..m).filter(|&q| g.values[q] > 1e-12 * gmax).collect();
    let dirs: Vec<Mat> = keep
        .iter()
        .map(|&q| {
            let mut dq = Mat::zeros(d);
            for (i, &ci) in coords.iter().enumerate() {
                let v = g.vectors.get(i, q);
                if v != 0.0 {
                    dq.axpy(v, &a[ci]);
                }
            }
            dq
        })
        .collect();
    let etab = free::cov_of_moments(model, &mt, two_p.saturating_sub(2));
    let r = dirs.len();
    let mut hd = Mat::zeros(r);
    for (q, dq) in dirs.iter().enumerate() {
        let der = free::moment_derivatives(model, &mt, &etab, dq, two_p - 1);
        let last = &der[two_p - 1];
        for (s, ds) in dirs.iter().enumerate() {
            hd.set(q, s, two_p as f64 * last.trace_mul(ds) / df);
        }
    }
    let hd = SymMatrix::symmetrize(&hd);
    // H = V_keep H_D V_keepᵀ
    let v = Mat::from_fn(m, |i, j| if j < r { g.vectors.get(i, keep[j]) } else { 0.0 });
    let hd_full = Mat::from_fn(m, |i, j| if i < r && j < r { hd.get(i, j) } else { 0.0 });
    let mut tmp = Mat::zeros(m);
    gemm(1.0, &v, &hd_full, 0.0, &mut tmp);
    let mut h = Mat::zeros(m);
    gemm(1.0, &tmp, &v.transpose(), 0.0, &mut h);
    Ok((grad, SymMatrix::symmetrize(&h)))
}

/// ∇ and ∇² of y ↦ tr⊗τ (A0 + A(x+y) + √(K(1−t))X̄)^{2p} at y = 0.
pub fn gradient_hessian(
    a0: &SymMatrix,
    a: &[SymMatrix],
    x: &[f64],
    t: f64,
    k: f64,
    p: usize,
) -> Result<(Vec<f64>, SymMatrix)> {
    let model = induced_model(a0, a, x, t, k)?;
    let all: Vec<usize> = (0..a.len()).collect();
    let (g, h) = grad_hess_on(&model, a, &all, p)?;
    Ok((g, if a.is_empty() { SymMatrix::zeros(1) } else { h }))
}

/// Same quantities assembled term by term from sandwich tables:
/// ∂ᵢ∂ⱼ = 2p·Σ_k tr(φ[X^k Aᵢ X^{2p−2−k}]·Aⱼ).
pub fn gradient_hessian_sandwich(
    a0: &SymMatrix,
    a: &[SymMatrix],
    x: &[f64],
    t: f64,
    k: f64,
    p: usize,
) -> Result<(Vec<f64>, SymMatrix)> {
    let model = induced_model(a0, a, x, t, k)?;
    let n = a.len();
    let d = model.dim() as f64;
    let two_p = 2 * p;
    let mt = moment_table(&model, two_p - 1);
    let grad = a.iter().map(|ai| two_p as f64 * mt.get(two_p - 1).trace_mul(ai) / d).collect();
    if n == 0 {
        return Ok((grad, SymMatrix::zeros(1)));
    }
    let mut h = Mat::zeros(n);
    for i in 0..n {
        let s = sandwich_table(&model, &a[i], two_p - 2, two_p - 2)?;
        for j in 0..n {
            let mut acc = 0.0;
            for kk in 0..=two_p - 2 {
                acc += s[kk][two_p - 2 - kk].trace_mul(&a[j]);
            }
            h.set(i, j, two_p as f64 * acc / d);
        }
    }
    Ok((grad, SymMatrix::symmetrize(&h)))
}

/// {y ⟂ g} ∩ (top-`drop` eigenspace of `hess`)^⊥ in the coordinates of `hess`.
pub fn descent_subspace(grad: &[f64], hess: &SymMatrix, drop: usize) -> Result<Vec<Vec<f64>>> {
    let m = hess.dim();
    if grad.len() != m {
        return Err(Error::Dimension { expected: m, found: grad.len() });
    }
    let base = matrix::top_eigenspace_complement(hess, drop.min(m))?;
    Ok(matrix::restrict_orthogonal(m, &base, &[grad.to_vec()]))
}

fn unit(v: &[f64]) -> Option<Vec<f64>> {
    let n = matrix::norm(v);
    if n > 0.0 {
        Some(v.iter().map(|x| x / n).collect())
    } else {
        None
    }
}

/// Shared data for the steps of one walk.
struct Walk<'a> {
    a0: &'a SymMatrix,
    a: &'a [SymMatrix],
    base: FreeModel,
    h_user: Vec<Vec<f64>>,
    cfg: &'a ColoringConfig,
    budget_rate: f64,
}

impl<'a> Walk<'a> {
    fn new(a0: &'a SymMatrix, a: &'a [SymMatrix], h_user: &[Vec<f64>], cfg: &'a ColoringConfig) -> Result<Self> {
        cfg.validate()?;
        let n = a.len();
        check_family(a0, a, &vec![0.0; n])?;
        for v in h_user {
            if v.len() != n {
                return Err(Error::Dimension { expected: n, found: v.len() });
            }
        }
        let base = FreeModel::gaussian(a0.clone(), a, 1.0)?;
        let bare = base.with_a0(SymMatrix::zeros(a0.dim()));
        let sigma = free::free_sigma(&bare)?;
        let nu = free::covariance_norm(&bare)?;
        let pf = cfg.p as f64;
        let budget_rate = cfg.slack_const * pf * pf * pf * sigma * sigma * nu * nu / n.max(1) as f64;
        Ok(Walk { a0, a, base, h_user: matrix::orthonormalize(h_user, n), cfg, budget_rate })
    }

    fn model_at(&self, x: &[f64], t: f64) -> FreeModel {
        self.base.with_a0(combine(self.a0, self.a, x)).with_scale(self.cfg.k_mult * (1.0 - t).max(0.0))
    }

    fn potential(&self, x: &[f64], t: f64) -> f64 {
        potential_of(&self.model_at(x, t), self.cfg.p)
    }

    fn finished(&self, st: &ColoringState) -> bool {
        let n = st.n() as f64;
        st.frozen_count() as f64 >= self.cfg.delta * n || st.t >= 1.0 - 1e-12 || st.alive.iter().all(|a| !a)
    }

    fn step(&self, st: &mut ColoringState) -> Result<()> {
        let n = st.n();
        let nf = n as f64;
        if st.potential_log.is_empty() {
            st.potential_log.push(self.potential(&st.x, st.t));
        }
        let phi = *st.potential_log.last().unwrap();
        let coords = st.alive_indices();
        let model = self.model_at(&st.x, st.t);
        let (g, h) = grad_hess_on(&model, self.a, &coords, self.cfg.p)?;

        let mut constraints: Vec<Vec<f64>> = Vec::new();
        constraints.extend(unit(&st.x));
        for i in 0..n {
            if !st.alive[i] {
                let mut e = vec![0.0; n];
                e[i] = 1.0;
                constraints.push(e);
            }
        }
        let embed = |v: &[f64]| {
            let mut y = vec![0.0; n];
            for (k, &i) in coords.iter().enumerate() {
                y[i] = v[k];
            }
            y
        };
        constraints.extend(unit(&embed(&g)));
        let drop = ((nf / self.cfg.k_mult) as usize).min(coords.len());
        if drop > 0 {
            let s = sym_eig(&h)?;
            for j in coords.len() - drop..coords.len() {
                constraints.push(embed(&s.vector(j)));
            }
        }
        let space = matrix::restrict_orthogonal(n, &self.h_user, &constraints);
        if space.is_empty() {
            return Err(numeric!(
                "no admissible direction: dim H_user = {}, alive = {}, dropped = {}",
                self.h_user.len(),
                coords.len(),
                drop
            ));
        }

        let mut candidates: Vec<Vec<f64>> = space.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0xd15c_0000 + st.eta_log.len() as u64);
        for _ in 0..16 {
            let w: Vec<f64> = (0..space.len()).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            let mut y = vec![0.0; n];
            for (c, b) in w.iter().zip(&space) {
                for i in 0..n {
                    y[i] += c * b[i];
                }
            }
            candidates.extend(unit(&y));
        }

        let eta_prev = st.eta_log.last().copied().unwrap_or(self.cfg.eta0);
        for mut y in candidates {
            for i in 0..n {
                if !st.alive[i] || num::abs(y[i]) < 1e-14 {
                    y[i] = 0.0;
                }
            }
            let Some(y) = unit(&y) else { continue };
            let mut s_box = f64::INFINITY;
            for i in 0..n {
                if y[i] > 0.0 {
                    s_box = s_box.min((st.upper[i] - st.x[i]) / y[i]);
                } else if y[i] < 0.0 {
                    s_box = s_box.min((st.lower[i] - st.x[i]) / y[i]);
                }
            }
            let s_box = s_box.max(0.0);
            let mut eta = self.cfg.eta0.min(2.0 * eta_prev).min(nf * (1.0 - st.t)).min(s_box * s_box);
            if !(eta > 0.0) {
                continue;
            }
            loop {
                let s = num::sqrt(eta);
                let x_new: Vec<f64> =
                    (0..n).map(|i| (st.x[i] + s * y[i]).clamp(st.lower[i], st.upper[i])).collect();
                let t_new = (st.t + eta / nf).min(1.0);
                let phi_new = self.potential(&x_new, t_new);
                if phi_new <= phi + self.budget_rate * eta + 1e-12 * (1.0 + phi) {
                    st.x = x_new;
                    st.t = t_new;
                    st.eta_log.push(eta);
                    st.potential_log.push(phi_new);
                    st.refresh_alive();
                    return Ok(());
                }
                if eta < 2.0 * self.cfg.eta_min {
                    break;
                }
                eta *= 0.5;
            }
        }
        Err(numeric!("step size fell below eta_min = {:e} at t = {}", self.cfg.eta_min, st.t))
    }
}

/// One step of the walk: direction in H_user ∩ {x}⊥ ∩ {yᵢ = 0 on frozen}
/// ∩ {∇}⊥ ∩ (top ⌊n/K⌋ Hessian eigenspace)⊥, with backtracking on η.
pub fn sticky_step(
    state: &ColoringState,
    a0: &SymMatrix,
    a: &[SymMatrix],
    h_user: &[Vec<f64>],
    cfg: &ColoringConfig,
) -> Result<ColoringState> {
    if !(state.t < 1.0) {
        return Err(invalid!("walk already reached t = 1"));
    }
    let walk = Walk::new(a0, a, h_user, cfg)?;
    let mut st = state.clone();
    walk.step(&mut st)?;
    Ok(st)
}

/// Runs the walk from 0 until δn coordinates are frozen or t = 1, then rounds
/// frozen coordinates to the nearer box face (ties to the upper face).
pub fn partial_coloring(
    a0: &SymMatrix,
    a: &[SymMatrix],
    h_user: &[Vec<f64>],
    lower: &[f64],
    upper: &[f64],
    cfg: &ColoringConfig,
) -> Result<(Vec<f64>, ColoringCertificate)> {
    let n = a.len();
    if lower.len() != n || upper.len() != n {
        return Err(Error::Dimension { expected: n, found: lower.len().min(upper.len()) });
    }
    let walk = Walk::new(a0, a, h_user, cfg)?;
    if (walk.h_user.len() as f64) < (1.0 - cfg.epsilon) * n as f64 - 1e-9 {
        return Err(invalid!("H_user has dimension {} < (1 − ε)n = {}", walk.h_user.len(), (1.0 - cfg.epsilon) * n as f64));
    }
    let mut st = ColoringState::start(lower.to_vec(), upper.to_vec())?;
    st.potential_log.push(walk.potential(&st.x, 0.0));
    let phi0 = st.potential_log[0];
    while !walk.finished(&st) {
        walk.step(&mut st)?;
    }
    let x_t = st.x.clone();
    let mut x = x_t.clone();
    for i in 0..n {
        if !st.alive[i] {
            x[i] = if x[i] - lower[i] < upper[i] - x[i] { lower[i] } else { upper[i] };
        }
    }
    let two_p = 2 * cfg.p;
    let d = a0.dim();
    let diff: Vec<f64> = (0..n).map(|i| x[i] - x_t[i]).collect();
    let rounding_correction = matrix::schatten_norm(&SymMatrix::combination(&diff, a, d), two_p)?;
    let final_2p_norm = matrix::schatten_norm(&combine(a0, a, &x), two_p)?;
    let telescoped = num::powf(*st.potential_log.last().unwrap(), 0.25);
    let per_step_increase = st.potential_log.windows(2).map(|w| w[1] - w[0]).collect();
    let frozen_count = st.frozen_count();
    Ok((
        x,
        ColoringCertificate {
            p: cfg.p,
            final_2p_norm,
            free_2p_norm_start: num::powf(phi0, 0.25),
            per_step_increase,
            eta_log: st.eta_log,
            potential_log: st.potential_log,
            budget_rate: walk.budget_rate,
            frozen_count,
            walk_point: x_t,
            telescoped,
            rounding_correction,
            certified_bound: telescoped + rounding_correction,
        },
    ))
}

/// Result of projecting a family off the top third of its Gram spectrum.
#[derive(Clone, Debug)]
pub struct SpencerProjection {
    pub projected: Vec<SymMatrix>,
    pub projector: Mat,
    /// Orthonormal basis of range(P).
    pub range: Vec<Vec<f64>>,
    /// ‖Σ Aᵢ²‖ and ‖Σ Ãᵢ²‖.
    pub square_norm_before: f64,
    pub square_norm_after: f64,
    /// ‖P M P‖ and Tr M.
    pub projected_gram_norm: f64,
    pub gram_trace: f64,
}

/// M(i,j) = ⟨Aᵢ, Aⱼ⟩; P projects off the top ⌈n/3⌉ eigenvectors of M and
/// Ãᵢ = Σⱼ P(i,j) Aⱼ.
pub fn spencer_project(a: &[SymMatrix]) -> Result<SpencerProjection> {
    let n = a.len();
    if n < 3 {
        return Err(invalid!("projection needs n ≥ 3, got {n}"));
    }
    let d = a[0].dim();
    let gram = SymMatrix::from_upper(n, |i, j| a[i].frob_dot(&a[j]));
    let drop = n.div_ceil(3);
    let range = matrix::top_eigenspace_complement(&gram, drop)?;
    let projector = matrix::projector(n, &range);
    let projected: Vec<SymMatrix> = (0..n).map(|i| SymMatrix::combination(projector.row(i), a, d)).collect();
    let sq = |fam: &[SymMatrix]| -> Result<f64> {
        let mut s = Mat::zeros(d);
        for m in fam {
            gemm(1.0, m, m, 1.0, &mut s);
        }
        matrix::op_norm(&SymMatrix::symmetrize(&s))
    };
    let pg = SymMatrix::from_upper(n, |i, j| projected[i].frob_dot(&projected[j]));
    Ok(SpencerProjection {
        square_norm_before: sq(a)?,
        square_norm_after: sq(&projected)?,
        projected_gram_norm: matrix::op_norm(&pg)?,
        gram_trace: gram.trace(),
        projected,
        projector,
        range,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpencerConfig {
    pub p: usize,
    pub delta: f64,
    pub slack_const: f64,
    /// Overrides the per-round default η₀ when set.
    pub eta0: Option<f64>,
    /// Alive sets of at most this size are finished by exhaustive search.
    pub exhaustive_max: usize,
}

impl SpencerConfig {
    pub fn for_dim(d: usize) -> Self {
        SpencerConfig { p: default_p(d), delta: 0.25, slack_const: 1.0, eta0: None, exhaustive_max: 12 }
    }
}

#[cfg_attr(feature = "serde", derive(serde::Serialize))]
#[derive(Clone, Debug, PartialEq)]
pub struct SpencerRound {
    pub alive_before: usize,
    pub newly_frozen: usize,
    pub epsilon: f64,
    pub k_mult: f64,
    pub partial: ColoringCertificate,
    /// ‖A(x_new) − A0 − Ã(y)‖_{2p}: the gap between the projected and the
    /// original family on the rounded step.
    pub projection_correction: f64,
    /// Certified ‖A(x)‖_{2p} after this round.
    pub bound: f64,
}

#[cfg_attr(feature = "serde", derive(serde::Serialize))]
#[derive(Clone, Debug, PartialEq)]
pub struct SpencerCertificate {
    pub p: usize,
    pub rounds: Vec<SpencerRound>,
    /// Per-round growth of the certified bound, ending with the completion step.
    pub increments: Vec<f64>,
    pub completion_size: usize,
    pub completion_increment: f64,
    /// Certified normalized ‖A(x)‖_{2p}.
    pub bound_2p: f64,
    /// d^{1/2p}·bound_2p ≥ ‖A(x)‖.
    pub op_norm_bound: f64,
    pub final_2p_norm: f64,
    pub final_op_norm: f64,
}

/// tr(M^{2p}) with M^p formed by repeated squaring.
fn trace_power(m: &Mat, p: usize) -> f64 {
    let n = m.dim();
    let mut result: Option<Mat> = None;
    let mut base = m.clone();
    let mut e = p;
    let mut tmp = Mat::zeros(n);
    loop {
        if e & 1 == 1 {
            result = Some(match result {
                None => base.clone(),
                Some(r) => {
                    gemm(1.0, &r, &base, 0.0, &mut tmp);
                    tmp.clone()
                }
            });
        }
        e >>= 1;
        if e == 0 {
            break;
        }
        gemm(1.0, &base, &base, 0.0, &mut tmp);
        core::mem::swap(&mut base, &mut tmp);
    }
    let r = result.unwrap_or_else(|| Mat::identity(n));
    r.frob_dot(&r)
}

/// Minimizes ‖A(x)‖_{2p} over sign choices on `idx` (Gray-code order).
fn complete_exhaustively(a: &[SymMatrix], x: &mut [f64], idx: &[usize], p: usize) {
    if idx.is_empty() {
        return;
    }
    let d = a[0].dim();
    for &i in idx {
        x[i] = 1.0;
    }
    let mut cur = SymMatrix::combination(x, a, d).into_mat();
    let mut signs = vec![1.0; idx.len()];
    let mut best = trace_power(&cur, p);
    let mut best_signs = signs.clone();
    for g in 1u64..(1u64 << idx.len()) {
        let bit = g.trailing_zeros() as usize;
        signs[bit] = -signs[bit];
        cur.axpy(2.0 * signs[bit], &a[idx[bit]]);
        let v = trace_power(&cur, p);
        if v < best {
            best = v;
            best_signs.clone_from(&signs);
        }
    }
    for (k, &i) in idx.iter().enumerate() {
        x[i] = best_signs[k];
    }
}

/// Full ±1 coloring by repeated projected partial colorings on the alive
/// coordinates; small remainders are completed exhaustively.
pub fn matrix_spencer(a: &[SymMatrix], cfg: &SpencerConfig) -> Result<(Vec<f64>, SpencerCertificate)> {
    let n = a.len();
    if n == 0 {
        return Err(invalid!("matrix Spencer needs at least one matrix"));
    }
    let d = a[0].dim();
    for m in a {
        if m.dim() != d {
            return Err(Error::Dimension { expected: d, found: m.dim() });
        }
        if matrix::op_norm(m)? > 1.0 + 1e-9 {
            return Err(invalid!("every matrix must have operator norm at most 1"));
        }
    }
    let two_p = 2 * cfg.p;
    let mut x = vec![0.0; n];
    let mut alive: Vec<usize> = (0..n).collect();
    let mut rounds = Vec::new();
    let mut increments = Vec::new();
    let mut bound = 0.0;

    while alive.len() > cfg.exhaustive_max.max(2) {
        let na = alive.len();
        let fam: Vec<SymMatrix> = alive.iter().map(|&i| a[i].clone()).collect();
        let x0: Vec<f64> = alive.iter().map(|&i| x[i]).collect();
        let proj = spencer_project(&fam)?;
        let h_user = match unit(&x0) {
            Some(u) => matrix::restrict_orthogonal(na, &proj.range, &[u]),
            None => proj.range.clone(),
        };
        let epsilon = 1.0 - h_user.len() as f64 / na as f64;
        let Ok(mut ccfg) = ColoringConfig::new(na, cfg.p, cfg.delta, epsilon) else { break };
        ccfg.slack_const = cfg.slack_const;
        if let Some(e) = cfg.eta0 {
            ccfg.eta0 = e;
        }
        let a0 = SymMatrix::combination(&x, a, d);
        let lower: Vec<f64> = x0.iter().map(|v| -1.0 - v).collect();
        let upper: Vec<f64> = x0.iter().map(|v| 1.0 - v).collect();
        let (y, pc) = partial_coloring(&a0, &proj.projected, &h_user, &lower, &upper, &ccfg)?;

        let mut next_alive = Vec::new();
        let mut newly_frozen = 0;
        for (k, &i) in alive.iter().enumerate() {
            if y[k] == lower[k] || y[k] == upper[k] {
                x[i] = if y[k] == upper[k] { 1.0 } else { -1.0 };
                newly_frozen += 1;
            } else {
                x[i] = x0[k] + y[k];
                next_alive.push(i);
            }
        }
        // gap between the step on the original family and the certified step
        let mut gap = SymMatrix::combination(&x, a, d).into_mat();
        gap.axpy(-1.0, &a0);
        gap.axpy(-1.0, &SymMatrix::combination(&y, &proj.projected, d));
        let projection_correction = matrix::schatten_norm(&SymMatrix::symmetrize(&gap), two_p)?;
        let round_bound = pc.certified_bound + projection_correction;
        increments.push(round_bound - bound);
        bound = round_bound;
        let done = newly_frozen as f64 >= na as f64 / 4.0;
        rounds.push(SpencerRound {
            alive_before: na,
            newly_frozen,
            epsilon,
            k_mult: ccfg.k_mult,
            partial: pc,
            projection_correction,
            bound: round_bound,
        });
        if !done {
            return Err(numeric!("round {} froze {newly_frozen} of {na} coordinates (< n/4)", rounds.len()));
        }
        alive = next_alive;
    }

    let before = x.clone();
    complete_exhaustively(a, &mut x, &alive, cfg.p);
    let delta: Vec<f64> = (0..n).map(|i| x[i] - before[i]).collect();
    let completion_increment = matrix::schatten_norm(&SymMatrix::combination(&delta, a, d), two_p)?;
    increments.push(completion_increment);
    bound += completion_increment;
    let final_matrix = SymMatrix::combination(&x, a, d);
    let final_2p_norm = matrix::schatten_norm(&final_matrix, two_p)?;
    let final_op_norm = matrix::op_norm(&final_matrix)?;
    let op_norm_bound = num::powf(d as f64, 1.0 / two_p as f64) * bound;
    Ok((
        x,
        SpencerCertificate {
            p: cfg.p,
            rounds,
            increments,
            completion_size: alive.len(),
            completion_increment,
            bound_2p: bound,
            op_norm_bound,
            final_2p_norm,
            final_op_norm,
        },
    ))
}
