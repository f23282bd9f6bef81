//! Model files (TOML), matrix lists, graph edge lists and JSON certificates.

use std::fmt::Write as _;

use freespec::expanders::GraphSpec;
use freespec::{CovTerm, FreeModel, SymMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{input, CliError, CliResult};

/// On-disk form of a [`FreeModel`]: matrices are row-major arrays of length d².
///
/// ```toml
/// d = 2
/// a0 = [1.0, 0.0, 0.0, -1.0]
/// free_scale = 1.0
///
/// [[terms]]
/// gaussian = [0.0, 1.0, 1.0, 0.0]
///
/// [[terms]]
/// discrete = [{ prob = 0.5, z = [1.0, 0.0, 0.0, 0.0] },
///             { prob = 0.5, z = [-1.0, 0.0, 0.0, 0.0] }]
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub d: usize,
    pub a0: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub free_scale: Option<f64>,
    #[serde(default)]
    pub terms: Vec<TermFile>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TermFile {
    Gaussian(Vec<f64>),
    Discrete(Vec<OutcomeFile>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeFile {
    pub prob: f64,
    pub z: Vec<f64>,
}

fn sym(d: usize, data: &[f64], field: &str) -> CliResult<SymMatrix> {
    if data.len() != d * d {
        return Err(input(format!("{field}: expected {} entries for d = {d}, found {}", d * d, data.len())));
    }
    SymMatrix::from_row_major(d, data.to_vec()).map_err(|e| CliError::from(e).context(field))
}

fn flat(m: &SymMatrix) -> Vec<f64> {
    m.as_mat().as_slice().to_vec()
}

impl ModelFile {
    pub fn to_model(&self) -> CliResult<FreeModel> {
        if self.d == 0 {
            return Err(input("d: must be at least 1"));
        }
        let a0 = sym(self.d, &self.a0, "a0")?;
        let mut terms = Vec::with_capacity(self.terms.len());
        for (i, t) in self.terms.iter().enumerate() {
            terms.push(match t {
                TermFile::Gaussian(a) => CovTerm::gaussian(sym(self.d, a, &format!("terms[{i}].gaussian"))?),
                TermFile::Discrete(outs) => {
                    let mut support = Vec::with_capacity(outs.len());
                    for (j, o) in outs.iter().enumerate() {
                        support.push((o.prob, sym(self.d, &o.z, &format!("terms[{i}].discrete[{j}].z"))?));
                    }
                    CovTerm::discrete(support)
                }
            });
        }
        FreeModel::new(a0, terms, self.free_scale.unwrap_or(1.0)).map_err(|e| CliError::from(e).context("model"))
    }

    pub fn from_model(m: &FreeModel) -> Self {
        let terms = m
            .terms()
            .iter()
            .map(|t| match t {
                CovTerm::Gaussian { a } => TermFile::Gaussian(flat(a)),
                CovTerm::Discrete { support } => TermFile::Discrete(
                    support.iter().map(|(p, z)| OutcomeFile { prob: *p, z: flat(z) }).collect(),
                ),
            })
            .collect();
        ModelFile { d: m.dim(), a0: flat(m.a0()), free_scale: Some(m.free_scale()), terms }
    }
}

pub fn parse_model(text: &str) -> CliResult<FreeModel> {
    let f: ModelFile = toml::from_str(text).map_err(|e| input(format!("model file: {e}")))?;
    f.to_model()
}

pub fn print_model(m: &FreeModel) -> String {
    toml::to_string(&ModelFile::from_model(m)).expect("model files always serialize")
}

/// A family A₁..Aₙ of symmetric d×d matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixListFile {
    pub d: usize,
    pub matrices: Vec<Vec<f64>>,
}

pub fn parse_matrices(text: &str) -> CliResult<Vec<SymMatrix>> {
    let f: MatrixListFile = toml::from_str(text).map_err(|e| input(format!("matrix file: {e}")))?;
    if f.d == 0 {
        return Err(input("d: must be at least 1"));
    }
    f.matrices.iter().enumerate().map(|(i, m)| sym(f.d, m, &format!("matrices[{i}]"))).collect()
}

pub fn print_matrices(a: &[SymMatrix]) -> String {
    let f = MatrixListFile { d: a.first().map_or(1, |m| m.dim()), matrices: a.iter().map(flat).collect() };
    toml::to_string(&f).expect("matrix files always serialize")
}

/// First non-blank line: vertex count d. Then one `u v` pair per line,
/// 0-indexed. `#` starts a comment.
pub fn parse_graph(text: &str) -> CliResult<GraphSpec> {
    let mut d: Option<usize> = None;
    let mut edges = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let no = k + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        let num = |s: &str| s.parse::<usize>().map_err(|_| input(format!("line {no}: `{s}` is not a vertex index")));
        match (d, fields.as_slice()) {
            (None, [n]) => d = Some(num(n)?),
            (None, _) => return Err(input(format!("line {no}: expected the vertex count"))),
            (Some(_), [u, v]) => edges.push((num(u)?, num(v)?)),
            (Some(_), _) => return Err(input(format!("line {no}: expected `u v`"))),
        }
    }
    let d = d.ok_or_else(|| input("graph file is empty"))?;
    GraphSpec::new(d, edges).map_err(|e| CliError::from(e).context("graph"))
}

pub fn print_graph(g: &GraphSpec) -> String {
    let mut s = format!("{}\n", g.vertex_count());
    for (u, v) in g.edges() {
        let _ = writeln!(s, "{u} {v}");
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Versions {
    pub freespec: &'static str,
    pub cli: &'static str,
}

impl Versions {
    pub fn current() -> Self {
        Versions { freespec: freespec::VERSION, cli: env!("CARGO_PKG_VERSION") }
    }
}

/// Machine-readable record of a run. Wall time is left out so that equal
/// inputs give equal bytes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CertificateFile {
    pub subcommand: String,
    pub config: serde_json::Value,
    pub versions: Versions,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub params: Option<freespec::MatrixParams>,
    pub result: serde_json::Value,
}

impl CertificateFile {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("certificates always serialize");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn graph_errors_name_the_line() {
        let e = parse_graph("3\n0 1\n1 x\n").unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
        let e = parse_graph("# header\n\n3\n0 1 2\n").unwrap_err();
        assert!(e.to_string().contains("line 4"), "{e}");
        assert!(parse_graph("3\n0 0\n").is_err());
        assert!(parse_graph("").is_err());
    }

    #[test]
    fn model_errors_name_the_field() {
        let e = parse_model("d = 2\na0 = [0.0, 1.0, 0.0, 0.0]\n").unwrap_err();
        assert!(e.to_string().contains("a0"), "{e}");
        let e = parse_model("d = 1\na0 = [0.0]\n[[terms]]\ndiscrete = [{ prob = 1.0, z = [1.0, 2.0] }]\n").unwrap_err();
        assert!(e.to_string().contains("terms[0].discrete[0].z"), "{e}");
        let e = parse_model("d = 1\na0 = [0.0]\nbogus = 1\n").unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
        // uncentered discrete term
        assert!(parse_model("d = 1\na0 = [0.0]\n[[terms]]\ndiscrete = [{ prob = 1.0, z = [1.0] }]\n").is_err());
    }
}
