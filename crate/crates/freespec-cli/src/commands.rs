//! Subcommands. Each returns a human-readable summary and a certificate.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use freespec::discrepancy::{default_p, matrix_spencer, SpencerConfig};
use freespec::expanders::{deterministic_lift, deterministic_signing};
use freespec::free::{self, matrix_params, moment_table, nc2_bruteforce_moment, Slot};
use freespec::matrix::standard_basis;
use freespec::spectrum::{mwu_spectrum, resolvent_moment_hybrid, spectrum_compare, MwuConfig};
use freespec::universality::{swap_moment, swap_norm_barrier, BarrierConfig};
use freespec::{cauchy, CovTerm, FreeModel, SymMatrix};
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{input, CliError, CliResult};
use crate::format::{parse_graph, parse_matrices, parse_model, CertificateFile, Versions};
use crate::oracle::monte_carlo_moments;

#[derive(Debug, Parser)]
#[command(name = "freespec", version, about = "Free semicircular matrix models and deterministic discrepancy algorithms")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct Flags {
    /// Moment order or resolvent power (meaning depends on the subcommand).
    #[arg(long, global = true)]
    pub p: Option<usize>,
    /// Imaginary offset of the resolvent.
    #[arg(long, global = true)]
    pub eps: Option<f64>,
    /// Initial step size of the partial-coloring walk.
    #[arg(long, global = true)]
    pub eta0: Option<f64>,
    /// Constant C in the barrier margin ε.
    #[arg(long = "C", global = true)]
    pub c: Option<f64>,
    /// Constant C′ in the barrier shift δ_t.
    #[arg(long = "Cprime", global = true)]
    pub c_prime: Option<f64>,
    /// Truncation tolerance of resolvent series.
    #[arg(long = "delta-trunc", global = true)]
    pub delta_trunc: Option<f64>,
    /// Seed of the Monte Carlo oracle.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Write the JSON certificate here.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Normalized trace moments tr⊗τ(X^k) for k = 0..=p.
    Moments { model: PathBuf },
    /// Resolvent moment at λ: tr⊗τ((λ − X)^{−p}), or tr⊗τ(|λ + iε − X|^{−2p}) with --eps.
    Resolvent {
        model: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        lambda: f64,
    },
    /// σ, ν, σ*, ρ of the free part.
    Params { model: PathBuf },
    /// Full ±1 coloring of a matrix family with a norm certificate.
    Spencer { matrices: PathBuf },
    /// Deterministic full-spectrum walk on the Gaussian terms of a model.
    Spectrum { model: PathBuf },
    /// Greedy swap of discrete terms minimizing the 2p-norm.
    SwapMoment { model: PathBuf },
    /// Barrier-method swap of discrete terms controlling the operator norm.
    SwapNorm { model: PathBuf },
    /// Deterministic signing of a regular graph.
    SignGraph { graph: PathBuf },
    /// Deterministic cyclic m-lift of a graph.
    Lift {
        graph: PathBuf,
        /// Order of the cyclic group.
        #[arg(long)]
        m: usize,
    },
    /// Monte Carlo estimate of tr⊗τ(X^p) from GOE matrices.
    OracleGoe {
        model: PathBuf,
        /// GOE dimension N.
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 100)]
        trials: usize,
    },
    /// φ of a word by non-crossing pair enumeration. Tokens: X, s<i>, a0, I.
    OracleNc2 {
        model: PathBuf,
        /// Whitespace-separated tokens, e.g. "X s0 X a0".
        #[arg(long, allow_hyphen_values = true)]
        word: String,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Moments { .. } => "moments",
            Command::Resolvent { .. } => "resolvent",
            Command::Params { .. } => "params",
            Command::Spencer { .. } => "spencer",
            Command::Spectrum { .. } => "spectrum",
            Command::SwapMoment { .. } => "swap-moment",
            Command::SwapNorm { .. } => "swap-norm",
            Command::SignGraph { .. } => "sign-graph",
            Command::Lift { .. } => "lift",
            Command::OracleGoe { .. } => "oracle-goe",
            Command::OracleNc2 { .. } => "oracle-nc2",
        }
    }
}

/// Output of one run.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub text: String,
    pub certificate: CertificateFile,
}

const DELTA_TRUNC: f64 = 1e-10;

fn read(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| input(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> CliResult<FreeModel> {
    parse_model(&read(path)?).map_err(|e| e.context(&path.display().to_string()))
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("certificate types serialize")
}

/// Splits a model into A0 and its discrete terms, scaled by √c.
fn discrete_terms(model: &FreeModel) -> CliResult<(SymMatrix, Vec<CovTerm>)> {
    let s = model.free_scale().sqrt();
    let mut out = Vec::new();
    for (i, t) in model.terms().iter().enumerate() {
        match t {
            CovTerm::Discrete { support } => {
                out.push(CovTerm::discrete(support.iter().map(|(p, z)| (*p, z.scaled(s))).collect()))
            }
            CovTerm::Gaussian { .. } => return Err(input(format!("terms[{i}]: this subcommand needs discrete terms"))),
        }
    }
    Ok((model.a0().clone(), out))
}

fn gaussian_terms(model: &FreeModel) -> CliResult<Vec<SymMatrix>> {
    let s = model.free_scale().sqrt();
    model
        .terms()
        .iter()
        .enumerate()
        .map(|(i, t)| match t {
            CovTerm::Gaussian { a } => Ok(a.scaled(s)),
            CovTerm::Discrete { .. } => Err(input(format!("terms[{i}]: this subcommand needs gaussian terms"))),
        })
        .collect()
}

fn barrier_config(f: &Flags) -> BarrierConfig {
    let mut cfg = BarrierConfig::default();
    if let Some(c) = f.c {
        cfg.c = c;
    }
    if let Some(c) = f.c_prime {
        cfg.c_prime = c;
    }
    cfg.p = f.p;
    cfg.delta_trunc = f.delta_trunc.unwrap_or(DELTA_TRUNC);
    cfg
}

fn parse_word(word: &str, model: &FreeModel) -> CliResult<Vec<Slot>> {
    word.split_whitespace()
        .map(|tok| match tok {
            "X" => Ok(Slot::X),
            "a0" => Ok(Slot::Det(model.a0().clone())),
            "I" => Ok(Slot::Det(SymMatrix::identity(model.dim()))),
            _ => match tok.strip_prefix('s').and_then(|i| i.parse::<usize>().ok()) {
                Some(i) if i < model.terms().len() => Ok(Slot::Free(i)),
                _ => Err(input(format!("word token `{tok}`: expected X, s<i> with i < {}, a0 or I", model.terms().len()))),
            },
        })
        .collect()
}

fn fmt_matrix(m: &freespec::Mat) -> String {
    let mut s = String::new();
    for i in 0..m.dim() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:.12e}")).collect();
        let _ = writeln!(s, "  {}", row.join(" "));
    }
    s
}

fn fmt_signs(x: &[f64]) -> String {
    x.iter().map(|v| if *v > 0.0 { "+" } else { "-" }).collect()
}

pub fn run(command: &Command, flags: &Flags) -> CliResult<Outcome> {
    let mut text = String::new();
    let mut params = None;
    let mut config = to_value(flags);
    let result: Value = match command {
        Command::Moments { model } => {
            let m = load_model(model)?;
            let p = flags.p.unwrap_or(6);
            let t = moment_table(&m, p);
            let vals: Vec<f64> = (0..=p).map(|k| t.trace(k)).collect();
            for (k, v) in vals.iter().enumerate() {
                let _ = writeln!(text, "{k}\t{v}");
            }
            json!({ "moments": vals })
        }
        Command::Resolvent { model, lambda } => {
            let m = load_model(model)?;
            let p = flags.p.unwrap_or(1);
            let delta = flags.delta_trunc.unwrap_or(DELTA_TRUNC);
            let (value, kind) = match flags.eps {
                Some(eps) => (resolvent_moment_hybrid(&m, *lambda, eps, p, delta)?, "complex"),
                None => (real_resolvent(&m, *lambda, p, delta)?, "real"),
            };
            let _ = writeln!(text, "{value}");
            json!({ "lambda": lambda, "eps": flags.eps, "p": p, "kind": kind, "value": value })
        }
        Command::Params { model } => {
            let m = load_model(model)?;
            let mp = matrix_params(&m)?;
            let _ = writeln!(text, "sigma\t{}\nnu\t{}\nsigma_star\t{}\nrho\t{}", mp.sigma, mp.nu, mp.sigma_star, mp.rho);
            params = Some(mp);
            json!({ "pisier_upper": free::pisier_upper(&m)? })
        }
        Command::Spencer { matrices } => {
            let a = parse_matrices(&read(matrices)?).map_err(|e| e.context(&matrices.display().to_string()))?;
            let d = a.first().map_or(1, |m| m.dim());
            let mut cfg = SpencerConfig::for_dim(d);
            if let Some(p) = flags.p {
                cfg.p = p;
            }
            cfg.eta0 = flags.eta0;
            let (x, cert) = matrix_spencer(&a, &cfg)?;
            let _ = writeln!(text, "coloring\t{}", fmt_signs(&x));
            let _ = writeln!(text, "op_norm\t{}\nop_norm_bound\t{}", cert.final_op_norm, cert.op_norm_bound);
            config = json!({ "flags": config, "p": cfg.p, "delta": cfg.delta, "eta0": cfg.eta0, "exhaustive_max": cfg.exhaustive_max });
            json!({ "coloring": x, "certificate": to_value(&cert) })
        }
        Command::Spectrum { model } => {
            let m = load_model(model)?;
            let a = gaussian_terms(&m)?;
            if a.is_empty() {
                return Err(input("spectrum needs at least one gaussian term"));
            }
            let bare = FreeModel::gaussian(SymMatrix::zeros(m.dim()), &a, 1.0)?;
            let mp = matrix_params(&bare)?;
            let eps = flags.eps.unwrap_or(if mp.sigma > 0.0 { mp.sigma } else { 1.0 });
            let mut cfg = MwuConfig::new(flags.p.unwrap_or(2), eps);
            if let Some(dt) = flags.delta_trunc {
                cfg.delta_trunc = dt;
            }
            let (x, rep) = mwu_spectrum(m.a0(), &a, &standard_basis(a.len()), &cfg)?;
            let mfinal = m.a0().add(&SymMatrix::combination(&x, &a, m.dim()));
            let cmp = spectrum_compare(&mfinal, &m, eps, cfg.p)?;
            let _ = writeln!(text, "x\t{:?}", x);
            let _ = writeln!(text, "max_deviation\t{}\ntelescoped_bound\t{}", rep.max_deviation, rep.telescoped_bound);
            params = Some(mp);
            config = json!({ "flags": config, "p": cfg.p, "eps": eps, "max_rounds": cfg.max_rounds, "refresh_every": cfg.refresh_every, "delta_trunc": cfg.delta_trunc });
            json!({ "x": x, "report": to_value(&rep), "compare": to_value(&cmp) })
        }
        Command::SwapMoment { model } => {
            let m = load_model(model)?;
            let (a0, terms) = discrete_terms(&m)?;
            let p = flags.p.unwrap_or_else(|| default_p(m.dim()));
            let (choices, out, cert) = swap_moment(&a0, &terms, p)?;
            let _ = writeln!(text, "choices\t{:?}\nnorm_2p\t{}\nstart_norm\t{}", choices, cert.trajectory.last().unwrap_or(&cert.start_norm), cert.start_norm);
            json!({ "p": p, "choices": choices, "output": out.as_mat().as_slice(), "certificate": to_value(&cert) })
        }
        Command::SwapNorm { model } => {
            let m = load_model(model)?;
            let (a0, terms) = discrete_terms(&m)?;
            let cfg = barrier_config(flags);
            let (choices, out, lambda, cert) = swap_norm_barrier(&a0, &terms, &cfg)?;
            let _ = writeln!(text, "choices\t{:?}\nlambda_final\t{lambda}\nfinal_norm\t{}", choices, cert.final_norm);
            config = json!({ "flags": config, "c": cfg.c, "c_prime": cfg.c_prime, "p": cert.p, "delta_trunc": cfg.delta_trunc });
            json!({ "choices": choices, "output": out.as_mat().as_slice(), "lambda_final": lambda, "certificate": to_value(&cert) })
        }
        Command::SignGraph { graph } => {
            let g = parse_graph(&read(graph)?).map_err(|e| e.context(&graph.display().to_string()))?;
            let cfg = barrier_config(flags);
            let (signs, lambda, cert) = deterministic_signing(&g, &cfg)?;
            let s: String = signs.iter().map(|v| if *v > 0 { '+' } else { '-' }).collect();
            let _ = writeln!(text, "signs\t{s}\nlambda_final\t{lambda}\nspectral_radius\t{}\nratio\t{}", cert.spectral_radius, cert.ratio);
            config = json!({ "flags": config, "c": cfg.c, "c_prime": cfg.c_prime, "p": cert.barrier.p, "delta_trunc": cfg.delta_trunc });
            json!({ "edges": g.edges(), "signs": signs, "lambda_final": lambda, "certificate": to_value(&cert) })
        }
        Command::Lift { graph, m } => {
            let g = parse_graph(&read(graph)?).map_err(|e| e.context(&graph.display().to_string()))?;
            let cfg = barrier_config(flags);
            let (shifts, lambda, cert) = deterministic_lift(&g, *m, &cfg)?;
            let _ = writeln!(text, "shifts\t{:?}\nlambda_final\t{lambda}\nnew_norm\t{}\nratio\t{}", shifts, cert.new_norm, cert.ratio);
            config = json!({ "flags": config, "m": m, "c": cfg.c, "c_prime": cfg.c_prime, "p": cert.barrier.p, "delta_trunc": cfg.delta_trunc });
            json!({ "edges": g.edges(), "shifts": shifts, "lambda_final": lambda, "certificate": to_value(&cert) })
        }
        Command::OracleGoe { model, n, trials } => {
            let m = load_model(model)?;
            let p = flags.p.unwrap_or(4);
            let seed = flags.seed.unwrap_or(0);
            let est = monte_carlo_moments(&m, *n, *trials, &[p], seed)?[0];
            let exact = free::trace_moment(&m, p);
            let _ = writeln!(text, "estimate\t{}\nstderr\t{}\nfree_moment\t{exact}", est.estimate, est.stderr);
            config = json!({ "flags": config, "n": n, "trials": trials, "p": p, "seed": seed });
            json!({ "estimate": est.estimate, "stderr": est.stderr, "free_moment": exact })
        }
        Command::OracleNc2 { model, word } => {
            let m = load_model(model)?;
            let w = parse_word(word, &m)?;
            let phi = nc2_bruteforce_moment(&m, &w)?;
            let tr = phi.trace() / m.dim() as f64;
            let _ = write!(text, "phi\n{}trace\t{tr}\n", fmt_matrix(&phi));
            json!({ "word": word, "phi": phi.as_slice(), "trace": tr })
        }
    };
    Ok(Outcome {
        text,
        certificate: CertificateFile {
            subcommand: command.name().to_string(),
            config,
            versions: Versions::current(),
            params,
            result,
        },
    })
}

/// Series when λ is provably outside the spectrum and the series is short
/// enough, otherwise the Cauchy-transform route. Below the spectrum,
/// tr(λ − X)^{−p} = (−1)^p tr((−λ) − (−X))^{−p}.
fn real_resolvent(m: &FreeModel, lambda: f64, p: usize, delta: f64) -> CliResult<f64> {
    if lambda < free::lambda_min_lower(m)? {
        let v = above_spectrum(&m.negated(), -lambda, p, delta)?;
        return Ok(if p % 2 == 1 { -v } else { v });
    }
    above_spectrum(m, lambda, p, delta)
}

fn above_spectrum(m: &FreeModel, lambda: f64, p: usize, delta: f64) -> CliResult<f64> {
    let margin = lambda - free::lambda_max_upper(m)?;
    if margin > 0.0 {
        match free::resolvent_real_report(m, lambda, p, margin, delta, free::SERIES_CAP) {
            Ok(r) if !r.enclosure_violated => return Ok(r.value),
            Ok(_) | Err(freespec::Error::TruncationCap { .. }) => {}
            Err(e) => return Err(e.into()),
        }
    }
    cauchy::resolvent_moment_real_cauchy(m, lambda, p).map_err(|e| match e {
        freespec::Error::Numeric(msg) => CliError::Numeric(format!("lambda is inside the spectrum ({msg})")),
        e => e.into(),
    })
}
