//! Monte Carlo estimate of free-model moments from GOE matrices.
//!
//! Each free summand is replaced by B⊗G with G an independent N×N GOE matrix
//! (diagonal variance 2/N, off-diagonal 1/N). A discrete term with covariance
//! Σ p vec(Z)vec(Z)ᵀ = Σⱼ λⱼ vec(Vⱼ)vec(Vⱼ)ᵀ contributes Σⱼ √λⱼ Vⱼ⊗Gⱼ.

use freespec::matrix::{gemm, sym_eig};
use freespec::{CovTerm, FreeModel, Mat, SymMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{input, CliResult};

/// Largest sampled dimension N·d.
pub const ORACLE_DIM_MAX: usize = 2048;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub power: usize,
    pub estimate: f64,
    pub stderr: f64,
}

/// The matrices B with X_N = A0⊗1 + Σ B⊗G_B in law.
pub fn goe_components(model: &FreeModel) -> CliResult<Vec<SymMatrix>> {
    let d = model.dim();
    let c = model.free_scale();
    let mut out = Vec::new();
    if c == 0.0 {
        return Ok(out);
    }
    for t in model.terms() {
        match t {
            CovTerm::Gaussian { a } => out.push(a.scaled(c.sqrt())),
            CovTerm::Discrete { support } => {
                let cov = SymMatrix::from_upper(d * d, |i, j| {
                    support.iter().map(|(p, z)| p * z.as_mat().as_slice()[i] * z.as_mat().as_slice()[j]).sum()
                });
                let eig = sym_eig(&cov)?;
                let top = eig.max().abs();
                for (j, &l) in eig.values.iter().enumerate() {
                    if l > 1e-13 * top {
                        let v = Mat::from_row_major(d, eig.vector(j))?;
                        out.push(SymMatrix::symmetrize(&v).scaled((c * l).sqrt()));
                    }
                }
            }
        }
    }
    Ok(out)
}

fn sample_goe(rng: &mut ChaCha8Rng, n: usize) -> Mat {
    let off = (1.0 / n as f64).sqrt();
    let diag = (2.0 / n as f64).sqrt();
    let mut g = Mat::zeros(n);
    for i in 0..n {
        let z: f64 = StandardNormal.sample(rng);
        g.set(i, i, diag * z);
        for j in i + 1..n {
            let z: f64 = StandardNormal.sample(rng);
            g.set(i, j, off * z);
            g.set(j, i, off * z);
        }
    }
    g
}

/// Adds B⊗G (blocks indexed by B's entries) into x.
fn add_kron(x: &mut Mat, b: &SymMatrix, g: &Mat) {
    let n = g.dim();
    let d = b.dim();
    for i in 0..d {
        for j in 0..d {
            let w = b.get(i, j);
            if w == 0.0 {
                continue;
            }
            for a in 0..n {
                for c in 0..n {
                    let (r, s) = (i * n + a, j * n + c);
                    x.set(r, s, x.get(r, s) + w * g.get(a, c));
                }
            }
        }
    }
}

/// tr(X^k)/dim for each requested k, from X^⌊k/2⌋ and X^⌈k/2⌉.
fn normalized_traces(x: &Mat, powers: &[usize]) -> Vec<f64> {
    let dim = x.dim();
    let top = powers.iter().map(|k| k.div_ceil(2)).max().unwrap_or(0);
    let mut pw = vec![Mat::identity(dim), x.clone()];
    while pw.len() <= top {
        let mut next = Mat::zeros(dim);
        gemm(1.0, pw.last().unwrap(), x, 0.0, &mut next);
        pw.push(next);
    }
    powers.iter().map(|&k| pw[k / 2].frob_dot(&pw[k.div_ceil(2)]) / dim as f64).collect()
}

/// Mean and standard error of tr(X_N^k) over `trials` samples, for each k.
pub fn monte_carlo_moments(
    model: &FreeModel,
    n: usize,
    trials: usize,
    powers: &[usize],
    seed: u64,
) -> CliResult<Vec<Estimate>> {
    let d = model.dim();
    if n == 0 || trials == 0 {
        return Err(input("oracle needs N ≥ 1 and at least one trial"));
    }
    if n.saturating_mul(d) > ORACLE_DIM_MAX {
        return Err(input(format!("N·d = {} exceeds the oracle cap {ORACLE_DIM_MAX}", n * d)));
    }
    let comps = goe_components(model)?;
    let mut base = Mat::zeros(n * d);
    add_kron(&mut base, model.a0(), &Mat::identity(n));
    if comps.is_empty() {
        let v = normalized_traces(&base, powers);
        return Ok(powers.iter().zip(v).map(|(&k, e)| Estimate { power: k, estimate: e, stderr: 0.0 }).collect());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = vec![Vec::with_capacity(trials); powers.len()];
    for _ in 0..trials {
        let mut x = base.clone();
        for b in &comps {
            add_kron(&mut x, b, &sample_goe(&mut rng, n));
        }
        for (s, v) in samples.iter_mut().zip(normalized_traces(&x, powers)) {
            s.push(v);
        }
    }
    Ok(powers
        .iter()
        .zip(&samples)
        .map(|(&k, s)| {
            let m = s.iter().sum::<f64>() / trials as f64;
            let var = if trials > 1 { s.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (trials - 1) as f64 } else { 0.0 };
            Estimate { power: k, estimate: m, stderr: (var / trials as f64).sqrt() }
        })
        .collect())
}

/// Estimate of tr⊗τ(X^p) with its standard error.
pub fn monte_carlo_oracle(model: &FreeModel, n: usize, trials: usize, p: usize, seed: u64) -> CliResult<(f64, f64)> {
    let e = monte_carlo_moments(model, n, trials, &[p], seed)?[0];
    Ok((e.estimate, e.stderr))
}
