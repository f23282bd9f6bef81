//! Full-spectrum control: resolvent potentials on a finite net of spectral
//! points, aggregated by a softmax and driven by pairwise independent updates.

use alloc::vec;
use alloc::vec::Vec;

use crate::cauchy;
use crate::error::invalid;
use crate::free::{self, FreeModel, MatrixParams};
use crate::matrix::{self, sym_eig, SymMatrix};
use crate::num;
use crate::pairwise::build_pairwise_signs;
use crate::{Error, Result};

#[cfg_attr(feature = "serde", derive(serde::Serialize))]
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumNet {
    pub points: Vec<f64>,
    pub eps: f64,
    pub half_width: f64,
    pub spacing: f64,
}

impl SpectrumNet {
    /// Points −b + tδ for t = 0..⌈2b/δ⌉.
    pub fn new(half_width: f64, spacing: f64, eps: f64) -> Result<Self> {
        if !(spacing > 0.0) || !(half_width >= 0.0) || !(eps > 0.0) {
            return Err(invalid!("net needs b ≥ 0, δ > 0 and ε > 0"));
        }
        let count = num::ceil(2.0 * half_width / spacing - 1e-12) as usize;
        let points = (0..=count).map(|t| -half_width + t as f64 * spacing).collect();
        Ok(SpectrumNet { points, eps, half_width, spacing })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// b = ‖A0‖ + max(2σ, σ*√n), spacing σ*.
pub fn build_net(model: &FreeModel, params: &MatrixParams, n: usize, eps: f64) -> Result<SpectrumNet> {
    if !(params.sigma_star > 0.0) {
        return Err(invalid!("σ* = 0: the net spacing is degenerate"));
    }
    let b = matrix::op_norm(model.a0())? + f64::max(2.0 * params.sigma, params.sigma_star * num::sqrt(n as f64));
    SpectrumNet::new(b, params.sigma_star, eps)
}

/// Φ_z(t, x) = (tr⊗τ |z − A0 − A(x) − √(1−t)X̄|^{−2p})^{1/2p}.
pub fn resolvent_potential(
    a0: &SymMatrix,
    a: &[SymMatrix],
    x: &[f64],
    t: f64,
    lambda: f64,
    eps: f64,
    p: usize,
) -> Result<f64> {
    if x.len() != a.len() {
        return Err(Error::Dimension { expected: a.len(), found: x.len() });
    }
    let d = a0.dim();
    let model = FreeModel::gaussian(a0.add(&SymMatrix::combination(x, a, d)), a, (1.0 - t).max(0.0))?;
    potential_at(&model, lambda, eps, p, 1e-10)
}

/// Largest series length evaluated directly; longer series go through the
/// Cauchy transform instead.
pub const SERIES_TERMS_MAX: usize = 64;

/// tr⊗τ|z − X|^{−2p}: the truncated series when it is short, the Cauchy
/// transform route otherwise.
pub fn resolvent_moment_hybrid(model: &FreeModel, lambda: f64, eps: f64, p: usize, delta: f64) -> Result<f64> {
    match free::resolvent_complex_report(model, lambda, eps, p, delta, SERIES_TERMS_MAX) {
        Ok(r) => Ok(r.value),
        Err(Error::TruncationCap { .. }) => cauchy::resolvent_moment_cauchy(model, lambda, eps, p),
        Err(e) => Err(e),
    }
}

fn potential_at(model: &FreeModel, lambda: f64, eps: f64, p: usize, delta: f64) -> Result<f64> {
    let v = resolvent_moment_hybrid(model, lambda, eps, p, delta)?;
    Ok(num::powf(v.max(0.0), 1.0 / (2 * p) as f64))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MwuConfig {
    pub p: usize,
    /// Imaginary offset ε of the net points.
    pub eps: f64,
    /// Softmax weight; measured from the initial state when unset.
    pub alpha: Option<f64>,
    /// Step size; chosen from the measured bounds when unset.
    pub eta: Option<f64>,
    /// Step used to measure L, B, Q before the run.
    pub trial_eta: f64,
    pub max_rounds: usize,
    /// Far net points are re-evaluated only every this many rounds.
    pub refresh_every: usize,
    pub full_refresh: bool,
    pub delta_trunc: f64,
}

impl MwuConfig {
    pub fn new(p: usize, eps: f64) -> Self {
        MwuConfig {
            p,
            eps,
            alpha: None,
            eta: None,
            trial_eta: 1.0 / 16.0,
            max_rounds: 64,
            refresh_every: 8,
            full_refresh: false,
            delta_trunc: 1e-10,
        }
    }
}

#[cfg_attr(feature = "serde", derive(serde::Serialize))]
#[derive(Clone, Debug, PartialEq)]
pub struct MwuReport {
    pub net: SpectrumNet,
    pub alpha: f64,
    pub eta: f64,
    pub rounds: usize,
    /// Measured E[Δ²]/η, E[Δ]/η and max|Δ|/√η at the start, maximized over potentials.
    pub l_hat: f64,
    pub b_hat: f64,
    pub q_hat: f64,
    /// Number of potentials (two per net point).
    pub potential_count: usize,
    pub log_n: f64,
    /// Φ_z(0, 0) per net point.
    pub start_values: Vec<f64>,
    /// Φ_z(1, x) per net point.
    pub final_values: Vec<f64>,
    pub max_deviation: f64,
    /// Changes of the aggregate, one per round plus one per lazy refresh.
    pub increments: Vec<f64>,
    /// Lazy refreshes of far net points, each contributing one increment.
    pub refreshes: usize,
    /// Aggregate of every candidate in every round.
    pub candidate_aggregates: Vec<Vec<f64>>,
    pub chosen: Vec<usize>,
    /// (log N + Σ increments)/α, which bounds every |Φ_z(1,x) − Φ_z(0,0)|.
    pub telescoped_bound: f64,
    /// B + 2√(L log N) with the measured L and B.
    pub proposition_bound: f64,
}

/// log Σ (e^{αv} + e^{−αv}) without overflow.
fn aggregate(alpha: f64, dev: &[f64]) -> f64 {
    let m = dev.iter().fold(0.0f64, |a, v| a.max(num::abs(alpha * v)));
    let s: f64 = dev.iter().map(|v| num::exp(alpha * v - m) + num::exp(-alpha * v - m)).sum();
    m + num::ln(s)
}

struct NetEval<'a> {
    a0: &'a SymMatrix,
    a: &'a [SymMatrix],
    base: FreeModel,
    net: &'a SpectrumNet,
    p: usize,
    delta: f64,
}

impl NetEval<'_> {
    fn model(&self, x: &[f64], t: f64) -> FreeModel {
        let d = self.a0.dim();
        self.base.with_a0(self.a0.add(&SymMatrix::combination(x, self.a, d))).with_scale((1.0 - t).max(0.0))
    }

    fn values(&self, x: &[f64], t: f64, which: &[bool], cached: &[f64]) -> Result<Vec<f64>> {
        let m = self.model(x, t);
        self.net
            .points
            .iter()
            .enumerate()
            .map(|(j, &l)| if which[j] { potential_at(&m, l, self.net.eps, self.p, self.delta) } else { Ok(cached[j]) })
            .collect()
    }

    /// Net points farther than 10ε from both the finite spectrum and the free support.
    fn far_points(&self, x: &[f64], t: f64) -> Result<Vec<bool>> {
        let m = self.model(x, t);
        let det = m.a0();
        let eig = sym_eig(det)?;
        let (lo, hi) = (free::lambda_min_lower(&m)?, free::lambda_max_upper(&m)?);
        let tol = 10.0 * self.net.eps;
        Ok(self
            .net
            .points
            .iter()
            .map(|&l| {
                let to_free = if l < lo { lo - l } else if l > hi { l - hi } else { 0.0 };
                let to_finite = eig.values.iter().fold(f64::INFINITY, |a, e| a.min(num::abs(l - e)));
                to_free > tol && to_finite > tol
            })
            .collect())
    }
}

/// Multiplicative-weights walk over the projected pairwise space.
pub fn mwu_spectrum(
    a0: &SymMatrix,
    a: &[SymMatrix],
    u_user: &[Vec<f64>],
    cfg: &MwuConfig,
) -> Result<(Vec<f64>, MwuReport)> {
    let n = a.len();
    let d = a0.dim();
    if n == 0 {
        return Err(invalid!("need at least one matrix"));
    }
    for m in a {
        if m.dim() != d {
            return Err(Error::Dimension { expected: d, found: m.dim() });
        }
    }
    for u in u_user {
        if u.len() != n {
            return Err(Error::Dimension { expected: n, found: u.len() });
        }
    }
    if cfg.p == 0 || !(cfg.eps > 0.0) || cfg.max_rounds == 0 || !(cfg.trial_eta > 0.0 && cfg.trial_eta <= 1.0) {
        return Err(invalid!("MWU needs p ≥ 1, ε > 0, max_rounds ≥ 1 and trial η in (0, 1]"));
    }
    let u = matrix::orthonormalize(u_user, n);
    let base = FreeModel::gaussian(a0.clone(), a, 1.0)?;
    let bare = base.with_a0(SymMatrix::zeros(d));
    let params = free::matrix_params(&bare)?;
    let spacing = if params.sigma_star > 0.0 { params.sigma_star } else { cfg.eps };
    let half = matrix::op_norm(a0)? + f64::max(2.0 * params.sigma, params.sigma_star * num::sqrt(n as f64));
    let net = SpectrumNet::new(half, spacing, cfg.eps)?;
    let ev = NetEval { a0, a, base, net: &net, p: cfg.p, delta: cfg.delta_trunc };
    let npts = net.len();
    let all = vec![true; npts];
    let x0 = vec![0.0; n];
    let start = ev.values(&x0, 0.0, &all, &[])?;
    let log_n = num::ln((2 * npts) as f64);
    let space = build_pairwise_signs(n);
    let dev = |vals: &[f64]| -> Vec<f64> { vals.iter().zip(&start).map(|(v, s)| v - s).collect() };

    let directions = |x: &[f64]| -> Vec<Vec<f64>> {
        let basis = match unit(x) {
            Some(ux) => matrix::restrict_orthogonal(n, &u, &[ux]),
            None => u.clone(),
        };
        let p = matrix::projector(n, &basis);
        (0..space.size()).map(|k| p.mul_vec(&space.vector_f64(k))).collect()
    };

    // measured per-step statistics at the start
    let te = cfg.trial_eta;
    let mut sum_d = vec![0.0; npts];
    let mut sum_d2 = vec![0.0; npts];
    let mut max_abs: f64 = 0.0;
    let dirs0 = directions(&x0);
    for y in &dirs0 {
        let xs: Vec<f64> = y.iter().map(|v| num::sqrt(te) * v).collect();
        let vals = ev.values(&xs, te, &all, &[])?;
        for j in 0..npts {
            let dlt = vals[j] - start[j];
            sum_d[j] += dlt;
            sum_d2[j] += dlt * dlt;
            max_abs = max_abs.max(num::abs(dlt));
        }
    }
    let s = dirs0.len() as f64;
    let l_hat = sum_d2.iter().fold(0.0f64, |a, v| a.max(v / s)) / te;
    let b_hat = sum_d.iter().fold(0.0f64, |a, v| a.max(num::abs(*v) / s)) / te;
    let q_hat = max_abs / num::sqrt(te);

    let mut alpha = cfg.alpha.unwrap_or(if l_hat > 1e-300 { num::sqrt(log_n / l_hat) } else { 1.0 });
    let eta_raw = match cfg.eta {
        Some(e) => e,
        None if alpha * q_hat > 0.0 => 1.0 / ((alpha * q_hat) * (alpha * q_hat)),
        None => 1.0,
    };
    let rounds = (num::ceil(1.0 / eta_raw.min(1.0)) as usize).clamp(1, cfg.max_rounds);
    let eta = 1.0 / rounds as f64;
    if alpha * q_hat * num::sqrt(eta) > 1.0 {
        alpha = 1.0 / (q_hat * num::sqrt(eta));
    }

    let mut x = x0;
    let mut cur = start.clone();
    let mut agg = aggregate(alpha, &dev(&cur));
    let mut increments = Vec::new();
    let mut candidate_aggregates = Vec::new();
    let mut chosen = Vec::new();
    let mut active = all.clone();
    let mut refreshes = 0;
    for m in 0..rounds {
        if !cfg.full_refresh && m % cfg.refresh_every.max(1) == 0 {
            active = ev.far_points(&x, m as f64 * eta)?.iter().map(|f| !f).collect();
        }
        let t_next = (m + 1) as f64 * eta;
        let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
        let mut aggs = Vec::with_capacity(space.size());
        let mut best_k = 0;
        for (k, y) in directions(&x).iter().enumerate() {
            let xk: Vec<f64> = x.iter().zip(y).map(|(a, b)| a + num::sqrt(eta) * b).collect();
            let vals = ev.values(&xk, t_next, &active, &cur)?;
            let ak = aggregate(alpha, &dev(&vals));
            aggs.push(ak);
            if best.as_ref().map_or(true, |b| ak < b.0) {
                best_k = k;
                best = Some((ak, xk, vals));
            }
        }
        let (ak, xk, vals) = best.unwrap();
        increments.push(ak - agg);
        agg = ak;
        x = xk;
        cur = vals;
        candidate_aggregates.push(aggs);
        chosen.push(best_k);
        let last = m + 1 == rounds;
        if active.iter().any(|a| !a) && (last || (m + 1) % cfg.refresh_every.max(1) == 0) {
            let stale: Vec<bool> = active.iter().map(|a| !a).collect();
            cur = ev.values(&x, t_next, &stale, &cur)?;
            let refreshed = aggregate(alpha, &dev(&cur));
            increments.push(refreshed - agg);
            agg = refreshed;
            refreshes += 1;
        }
    }
    let final_values = ev.values(&x, 1.0, &all, &[])?;
    let devs = dev(&final_values);
    let max_deviation = devs.iter().fold(0.0f64, |a, v| a.max(num::abs(*v)));
    let total: f64 = increments.iter().sum();
    let telescoped_bound = (log_n + total) / alpha;
    Ok((
        x,
        MwuReport {
            net: net.clone(),
            alpha,
            eta,
            rounds,
            l_hat,
            b_hat,
            q_hat,
            potential_count: 2 * npts,
            log_n,
            start_values: start,
            final_values,
            max_deviation,
            increments,
            refreshes,
            candidate_aggregates,
            chosen,
            telescoped_bound,
            proposition_bound: b_hat + 2.0 * num::sqrt(l_hat * log_n),
        },
    ))
}

fn unit(v: &[f64]) -> Option<Vec<f64>> {
    let n = matrix::norm(v);
    if n > 0.0 {
        Some(v.iter().map(|x| x / n).collect())
    } else {
        None
    }
}

#[cfg_attr(feature = "serde", derive(serde::Serialize))]
#[derive(Clone, Debug, PartialEq)]
pub struct ComparePoint {
    pub lambda: f64,
    /// ‖(z − M)^{−1}‖ for the finite matrix.
    pub finite: f64,
    /// Φ_z of the free model, which is at most ‖(z − X)^{−1}‖.
    pub free_lower: f64,
    /// d^{1/2p}·Φ_z.
    pub free_upper: f64,
    /// finite − free_upper when positive: finite spectrum where the free proxy has none.
    pub forward_margin: f64,
    /// free_lower − finite when positive: free spectrum the finite matrix misses.
    pub backward_margin: f64,
}

/// Diagnostic comparison of a finite matrix against a free model at
/// z = λ + iε for λ in spec(M) and on a grid over the free support bounds.
pub fn spectrum_compare(mfinal: &SymMatrix, model: &FreeModel, eps: f64, p: usize) -> Result<Vec<ComparePoint>> {
    if mfinal.dim() != model.dim() {
        return Err(Error::Dimension { expected: model.dim(), found: mfinal.dim() });
    }
    if !(eps > 0.0) || p == 0 {
        return Err(invalid!("need ε > 0 and p ≥ 1"));
    }
    let eig = sym_eig(mfinal)?;
    let (lo, hi) = (free::lambda_min_lower(model)?, free::lambda_max_upper(model)?);
    let mut lambdas = eig.values.clone();
    let grid = 16;
    for k in 0..=grid {
        lambdas.push(lo + (hi - lo) * k as f64 / grid as f64);
    }
    let d = model.dim() as f64;
    lambdas
        .into_iter()
        .map(|l| {
            let dist2 = eig.values.iter().fold(f64::INFINITY, |a, e| a.min((l - e) * (l - e)));
            let finite = 1.0 / num::sqrt(eps * eps + dist2);
            let phi = potential_at(model, l, eps, p, 1e-10)?;
            let upper = num::powf(d, 1.0 / (2 * p) as f64) * phi;
            Ok(ComparePoint {
                lambda: l,
                finite,
                free_lower: phi,
                free_upper: upper,
                forward_margin: (finite - upper).max(0.0),
                backward_margin: (phi - finite).max(0.0),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn net_arithmetic() {
        let net = SpectrumNet::new(2.0, 0.5, 0.1).unwrap();
        assert_eq!(net.len(), 9);
        assert_eq!(net.points[0], -2.0);
        assert_eq!(net.points[8], 2.0);
    }

    #[test]
    fn aggregate_is_stable() {
        let v = aggregate(1000.0, &[1.0, -2.0]);
        assert!((v - 2000.0).abs() < 1e-9);
        assert!((aggregate(1.0, &[0.0, 0.0]) - (4.0f64).ln()).abs() < 1e-15);
    }
}
