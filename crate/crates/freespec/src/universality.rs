//! Deterministic swapping: each random term of Z = A0 + ΣZᵢ is replaced, one at
//! a time, by a fixed outcome while the others stay free.

use alloc::vec;
use alloc::vec::Vec;

use crate::cauchy;
use crate::error::{invalid, numeric};
use crate::free::{self, CovTerm, FreeModel};
use crate::matrix::{self, sym_eig, SymMatrix};
use crate::num;
use crate::{Error, Result};

/// 2·max‖Z‖ over the support, or 2‖A‖ for a Gaussian term.
pub fn semicircular_norm_bound(term: &CovTerm) -> Result<f64> {
    let mut m: f64 = 0.0;
    for (_, z) in term.weighted() {
        m = m.max(matrix::op_norm(z)?);
    }
    Ok(2.0 * m)
}

fn supports(terms: &[CovTerm], d: usize) -> Result<Vec<&[(f64, SymMatrix)]>> {
    terms
        .iter()
        .enumerate()
        .map(|(i, t)| match t {
            CovTerm::Discrete { support } if support.is_empty() => Err(invalid!("term {i} has an empty support")),
            CovTerm::Discrete { support } => {
                if let Some(z) = support.iter().find(|(_, z)| z.dim() != d) {
                    return Err(Error::Dimension { expected: d, found: z.1.dim() });
                }
                Ok(support.as_slice())
            }
            CovTerm::Gaussian { .. } => Err(invalid!("term {i} is Gaussian; swapping needs finite supports")),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SwapState {
    active: Vec<usize>,
    accumulated: SymMatrix,
    chosen: Vec<Option<usize>>,
}

impl SwapState {
    pub fn new(a0: SymMatrix, n: usize) -> Self {
        SwapState { active: (0..n).collect(), accumulated: a0, chosen: vec![None; n] }
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn accumulated(&self) -> &SymMatrix {
        &self.accumulated
    }

    /// Support index chosen for each term, None while the term is active.
    pub fn chosen(&self) -> &[Option<usize>] {
        &self.chosen
    }

    pub fn is_done(&self) -> bool {
        self.active.is_empty()
    }

    fn commit(&mut self, i: usize, k: usize, z: &SymMatrix) {
        self.active.retain(|&j| j != i);
        self.accumulated = self.accumulated.add(z);
        self.chosen[i] = Some(k);
    }

    /// The model with `extra` added to the accumulated matrix and every active
    /// term except `skip` kept free.
    fn model(&self, terms: &[CovTerm], extra: Option<&SymMatrix>, skip: Option<usize>) -> Result<FreeModel> {
        let det = match extra {
            Some(z) => self.accumulated.add(z),
            None => self.accumulated.clone(),
        };
        let rest: Vec<CovTerm> = self.active.iter().filter(|&&j| Some(j) != skip).map(|&j| terms[j].clone()).collect();
        FreeModel::new(det, rest, 1.0)
    }
}

#[cfg_attr(feature = "serde", derive(serde::Serialize))]
#[derive(Clone, Debug, PartialEq)]
pub struct MomentCertificate {
    pub p: usize,
    /// ‖X_free‖_{2p} before any swap.
    pub start_norm: f64,
    /// Committed ‖X_{f,t}‖_{2p} after each swap.
    pub trajectory: Vec<f64>,
    /// Mean candidate value under uniform i and Zᵢ-distributed outcomes.
    pub candidate_means: Vec<f64>,
}

/// Greedy swap minimizing the normalized 2p-norm of the partially fixed model.
pub fn swap_moment(a0: &SymMatrix, terms: &[CovTerm], p: usize) -> Result<(Vec<usize>, SymMatrix, MomentCertificate)> {
    if p == 0 {
        return Err(invalid!("p must be at least 1"));
    }
    let sup = supports(terms, a0.dim())?;
    let mut state = SwapState::new(a0.clone(), terms.len());
    let start_norm = free::schatten_2p(&state.model(terms, None, None)?, 2 * p);
    let mut trajectory = Vec::with_capacity(terms.len());
    let mut candidate_means = Vec::with_capacity(terms.len());
    while !state.is_done() {
        let mut best: Option<(f64, usize, usize)> = None;
        let mut mean = 0.0;
        let share = 1.0 / state.active.len() as f64;
        for &i in &state.active {
            for (k, (w, z)) in sup[i].iter().enumerate() {
                let v = free::schatten_2p(&state.model(terms, Some(z), Some(i))?, 2 * p);
                mean += share * w * v;
                if best.map_or(true, |b| v < b.0) {
                    best = Some((v, i, k));
                }
            }
        }
        let (v, i, k) = best.expect("nonempty active set");
        state.commit(i, k, &sup[i][k].1);
        trajectory.push(v);
        candidate_means.push(mean);
    }
    let choices = state.chosen.iter().map(|c| c.expect("all committed")).collect();
    Ok((choices, state.accumulated, MomentCertificate { p, start_norm, trajectory, candidate_means }))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BarrierConfig {
    /// Constant C in ε.
    pub c: f64,
    /// Constant C′ in the shift δ_t.
    pub c_prime: f64,
    /// Moment order; chosen from d, ‖X‖ and ε when unset.
    pub p: Option<usize>,
    pub delta_trunc: f64,
}

impl Default for BarrierConfig {
    fn default() -> Self {
        BarrierConfig { c: 1.0, c_prime: 1.0, p: None, delta_trunc: 1e-10 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BarrierState {
    pub lambda: f64,
    pub eps: f64,
    pub p: usize,
    pub c_prime: f64,
    pub swap: SwapState,
    pub sigma_t: f64,
    pub nu_t: f64,
    pub rho: f64,
    pub delta_log: Vec<f64>,
}

/// δ_t = C′/(n−t)·(p^{3/4}σ_t^{1/2}ν_t^{1/2} + p^{2/3}σ_t^{2/3}ρ^{1/3}).
pub fn barrier_delta(state: &BarrierState, p: usize) -> f64 {
    let left = state.swap.active.len();
    if left == 0 {
        return 0.0;
    }
    let pf = p as f64;
    let a = num::powf(pf, 0.75) * num::sqrt(state.sigma_t * state.nu_t);
    let b = num::powf(pf, 2.0 / 3.0) * num::powf(state.sigma_t, 2.0 / 3.0) * num::powf(state.rho, 1.0 / 3.0);
    state.c_prime / left as f64 * (a + b)
}

/// tr⊗τ((λ − X)^{−p}) through the real resolvent series, with ε the
/// caller's margin below λ.
pub fn barrier_shift_check(model_next: &FreeModel, lambda_next: f64, p: usize, eps: f64) -> Result<f64> {
    free::resolvent_moment_real(model_next, lambda_next, p, eps, 1e-12)
}

/// Largest real series evaluated directly inside the barrier scan.
const BARRIER_SERIES_MAX: usize = 256;

/// Which evaluation produced a potential.
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct EvalCounts {
    pub series: usize,
    pub cauchy: usize,
    pub rejected: usize,
}

/// tr⊗τ((λ − X)^{−2p}), or None when λ is not provably above the spectrum.
fn one_sided(model: &FreeModel, lambda: f64, two_p: usize, delta: f64, counts: &mut EvalCounts) -> Result<Option<f64>> {
    let margin = lambda - free::lambda_max_upper(model)?;
    if margin > 0.0 {
        match free::resolvent_real_report(model, lambda, two_p, margin, delta, BARRIER_SERIES_MAX) {
            Ok(r) if !r.enclosure_violated => {
                counts.series += 1;
                return Ok(Some(r.value));
            }
            Ok(_) | Err(Error::TruncationCap { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    match cauchy::resolvent_moment_real_cauchy(model, lambda, two_p) {
        Ok(v) => {
            counts.cauchy += 1;
            Ok(Some(v))
        }
        Err(Error::Numeric(_)) => {
            counts.rejected += 1;
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// ½[tr⊗τ(λ − X)^{−2p} + tr⊗τ(λ + X)^{−2p}].
fn two_sided(model: &FreeModel, lambda: f64, p: usize, delta: f64, counts: &mut EvalCounts) -> Result<Option<f64>> {
    let Some(up) = one_sided(model, lambda, 2 * p, delta, counts)? else {
        return Ok(None);
    };
    let Some(down) = one_sided(&model.negated(), lambda, 2 * p, delta, counts)? else {
        return Ok(None);
    };
    Ok(Some(0.5 * (up + down)))
}

#[cfg_attr(feature = "serde", derive(serde::Serialize))]
#[derive(Clone, Debug, PartialEq)]
pub struct BarrierCertificate {
    pub p: usize,
    pub eps: f64,
    pub c: f64,
    pub c_prime: f64,
    pub sigma: f64,
    pub nu: f64,
    pub rho: f64,
    pub lambda0: f64,
    /// Term committed at each step.
    pub order: Vec<usize>,
    /// λ_t for t = 0..=n.
    pub lambdas: Vec<f64>,
    /// Potential after each commit, starting with the initial one.
    pub potentials: Vec<f64>,
    pub deltas: Vec<f64>,
    /// (2ε)^{−2p}.
    pub potential_cap: f64,
    pub lambda_final: f64,
    pub final_lambda_max: f64,
    pub final_norm: f64,
    pub evaluations: EvalCounts,
}

fn moment_order(d: usize, u: f64, eps: f64) -> usize {
    let ld = num::ln(d.max(2) as f64);
    let lu = if eps > 0.0 && u > 0.0 { num::ln(d as f64 * u / eps) } else { 0.0 };
    usize::max(8, 2 * num::ceil(f64::max(ld, lu)) as usize)
}

fn barrier_eps(c: f64, p: usize, sigma: f64, nu: f64, rho: f64) -> f64 {
    let pf = p as f64;
    let a = num::powf(pf, 0.75) * num::sqrt(sigma * nu);
    let b = num::powf(pf, 2.0 / 3.0) * num::powf(sigma, 2.0 / 3.0) * num::powf(rho, 1.0 / 3.0);
    c * f64::max(f64::max(a, b), pf * rho)
}

/// Barrier-method swap controlling both ends of the spectrum. Returns the
/// chosen support indices, the fixed matrix A0 + ΣZ'ᵢ, λ_n ≥ ‖A0 + ΣZ'ᵢ‖ and
/// the certificate.
pub fn swap_norm_barrier(
    a0: &SymMatrix,
    terms: &[CovTerm],
    cfg: &BarrierConfig,
) -> Result<(Vec<usize>, SymMatrix, f64, BarrierCertificate)> {
    if !(cfg.c > 0.0 && cfg.c_prime >= 0.0 && cfg.delta_trunc > 0.0 && cfg.delta_trunc < 1.0) {
        return Err(invalid!("barrier needs C > 0, C′ ≥ 0 and δ in (0, 1)"));
    }
    let d = a0.dim();
    let sup = supports(terms, d)?;
    let n = terms.len();
    let initial = FreeModel::new(a0.clone(), terms.to_vec(), 1.0)?;
    let sigma = free::free_sigma(&initial)?;
    let nu = free::covariance_norm(&initial)?;
    let rho = free::support_norm(&initial)?;
    let u = free::pisier_upper(&initial)?;
    let mut p = cfg.p.unwrap_or(8);
    let mut eps = barrier_eps(cfg.c, p, sigma, nu, rho);
    if cfg.p.is_none() {
        for _ in 0..16 {
            let next = moment_order(d, u, eps);
            if next == p {
                break;
            }
            p = next;
            eps = barrier_eps(cfg.c, p, sigma, nu, rho);
        }
    }
    if p == 0 {
        return Err(invalid!("p must be at least 1"));
    }
    let top = f64::max(free::lambda_max_upper(&initial)?, -free::lambda_min_lower(&initial)?);
    let lambda0 = top + 2.0 * eps;
    let mut counts = EvalCounts::default();
    let mut state = BarrierState {
        lambda: lambda0,
        eps,
        p,
        c_prime: cfg.c_prime,
        swap: SwapState::new(a0.clone(), n),
        sigma_t: sigma,
        nu_t: nu,
        rho,
        delta_log: Vec::with_capacity(n),
    };
    let free_part = sigma > 0.0;
    let cap = if free_part { num::powf(2.0 * eps, -2.0 * p as f64) } else { f64::INFINITY };
    let mut current = if free_part {
        two_sided(&initial, lambda0, p, cfg.delta_trunc, &mut counts)?
            .ok_or_else(|| numeric!("initial barrier λ0 = {lambda0} is not above the spectrum"))?
    } else {
        0.0
    };
    let mut lambdas = vec![lambda0];
    let mut potentials = vec![current];
    let mut order = Vec::with_capacity(n);
    while !state.swap.is_done() {
        let remaining = state.swap.model(terms, None, None)?;
        state.sigma_t = free::free_sigma(&remaining)?;
        state.nu_t = free::covariance_norm(&remaining)?;
        let delta = barrier_delta(&state, p);
        let lambda_next = state.lambda + delta;
        let mut best: Option<(f64, usize, usize)> = None;
        if free_part {
            for &i in &state.swap.active {
                for (k, (_, z)) in sup[i].iter().enumerate() {
                    let m = state.swap.model(terms, Some(z), Some(i))?;
                    if let Some(v) = two_sided(&m, lambda_next, p, cfg.delta_trunc, &mut counts)? {
                        if best.map_or(true, |b| v < b.0) {
                            best = Some((v, i, k));
                        }
                    }
                }
            }
        } else {
            best = Some((0.0, state.swap.active[0], 0));
        }
        let Some((v, i, k)) = best else {
            return Err(numeric!(
                "no candidate keeps λ = {lambda_next} above the spectrum at step {} ({} terms left)",
                n - state.swap.active.len(),
                state.swap.active.len()
            ));
        };
        if v > current * (1.0 + 1e-10) + 1e-300 {
            return Err(numeric!(
                "no swap lowers the potential at step {}: best {v:e} (term {i}, outcome {k}) against current {current:e}, λ {} → {lambda_next}, δ {delta:e}, ε {eps:e}, p {p}",
                n - state.swap.active.len(),
                state.lambda
            ));
        }
        if v > cap * (1.0 + 1e-9) {
            return Err(numeric!("potential {v:e} exceeds the invariant cap {cap:e}"));
        }
        state.swap.commit(i, k, &sup[i][k].1);
        order.push(i);
        state.lambda = lambda_next;
        state.delta_log.push(delta);
        current = v;
        lambdas.push(lambda_next);
        potentials.push(v);
    }
    let out = state.swap.accumulated.clone();
    let eig = sym_eig(&out)?;
    let final_norm = f64::max(eig.max(), -eig.min());
    if final_norm > state.lambda {
        return Err(numeric!("final norm {final_norm} exceeds the barrier {}", state.lambda));
    }
    let choices = state.swap.chosen.iter().map(|c| c.expect("all committed")).collect();
    let cert = BarrierCertificate {
        p,
        eps,
        c: cfg.c,
        c_prime: cfg.c_prime,
        sigma,
        nu,
        rho,
        lambda0,
        order,
        lambdas,
        potentials,
        deltas: state.delta_log.clone(),
        potential_cap: cap,
        lambda_final: state.lambda,
        final_lambda_max: eig.max(),
        final_norm,
        evaluations: counts,
    };
    Ok((choices, out, state.lambda, cert))
}
