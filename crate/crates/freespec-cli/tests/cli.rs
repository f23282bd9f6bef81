use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use freespec::expanders::GraphSpec;
use freespec::{CovTerm, FreeModel, SymMatrix};
use freespec_cli::format::{parse_graph, parse_matrices, parse_model, print_graph, print_matrices, print_model};
use freespec_cli::oracle::{monte_carlo_moments, monte_carlo_oracle};
use proptest::prelude::*;

const UNIT: &str = "d = 1\na0 = [0.0]\n\n[[terms]]\ngaussian = [1.0]\n";
const TWO: &str = "d = 2\na0 = [0.0, 0.0, 0.0, 0.0]\n\n[[terms]]\ngaussian = [0.0, 1.0, 1.0, 0.0]\n\n[[terms]]\ngaussian = [1.0, 0.0, 0.0, -1.0]\n";

fn bin(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_freespec")).args(args).current_dir(dir).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn field(out: &str, key: &str) -> f64 {
    out.lines().find_map(|l| l.strip_prefix(&format!("{key}\t"))).unwrap().parse().unwrap()
}

#[test]
fn moments_print_catalan_numbers() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "unit.toml", UNIT);
    let out = stdout(&bin(&["moments", "unit.toml", "--p", "6"], dir.path()));
    let vals: Vec<f64> = out.lines().map(|l| l.split('\t').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(vals, vec![1.0, 0.0, 1.0, 0.0, 2.0, 0.0, 5.0]);
}

#[test]
fn oracle_goe_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "unit.toml", UNIT);
    let out = stdout(&bin(&["oracle-goe", "unit.toml", "--n", "500", "--trials", "100", "--p", "4", "--seed", "3"], dir.path()));
    let (est, se) = (field(&out, "estimate"), field(&out, "stderr"));
    assert!(se > 0.0);
    assert!((est - 2.0).abs() <= 4.0 * se + 10.0 / 500.0, "{est} ± {se}");
}

#[test]
fn params_two_matrix_example() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "two.toml", TWO);
    let out = stdout(&bin(&["params", "two.toml"], dir.path()));
    assert!((field(&out, "sigma") - 2f64.sqrt()).abs() < 1e-12);
    assert!((field(&out, "nu") - 2f64.sqrt()).abs() < 1e-12);
    assert!((field(&out, "sigma_star") - 1.0).abs() < 1e-8);
    assert_eq!(field(&out, "rho"), 0.0);
}

#[test]
fn resolvent_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "unit.toml", UNIT);
    let out = stdout(&bin(&["resolvent", "unit.toml", "--lambda", "3", "--p", "2"], dir.path()));
    assert!((out.trim().parse::<f64>().unwrap() - 0.1708204).abs() < 1e-6);
    let out = stdout(&bin(&["resolvent", "unit.toml", "--lambda", "-3", "--p", "1"], dir.path()));
    assert!((out.trim().parse::<f64>().unwrap() + 0.3819660).abs() < 1e-6);
    // inside the support the real resolvent is a numeric failure
    let o = bin(&["resolvent", "unit.toml", "--lambda", "1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());
}

#[test]
fn exit_codes_for_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(bin(&["moments", "missing.toml"], dir.path()).status.code(), Some(1));
    write(dir.path(), "bad.toml", "d = 2\na0 = [0.0, 1.0, 2.0, 0.0]\n");
    let o = bin(&["moments", "bad.toml"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("a0"));
    write(dir.path(), "g.txt", "3\n0 1\n1 2\n");
    let o = bin(&["sign-graph", "g.txt"], dir.path());
    assert_eq!(o.status.code(), Some(1), "irregular graph");
    write(dir.path(), "unit.toml", UNIT);
    assert_eq!(bin(&["oracle-nc2", "unit.toml", "--word", "X s4"], dir.path()).status.code(), Some(1));
    assert_eq!(bin(&["swap-norm", "unit.toml"], dir.path()).status.code(), Some(1), "gaussian term");
}

#[test]
fn certificates_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let disc = "d = 2\na0 = [0.5, 0.0, 0.0, -0.5]\n\n[[terms]]\ndiscrete = [{ prob = 0.5, z = [0.0, 1.0, 1.0, 0.0] }, { prob = 0.5, z = [0.0, -1.0, -1.0, 0.0] }]\n\n[[terms]]\ndiscrete = [{ prob = 0.5, z = [1.0, 0.0, 0.0, 0.0] }, { prob = 0.5, z = [-1.0, 0.0, 0.0, 0.0] }]\n";
    write(dir.path(), "disc.toml", disc);
    write(dir.path(), "c4.txt", "4\n0 1\n1 2\n2 3\n3 0\n");
    write(dir.path(), "unit.toml", UNIT);
    let runs: [&[&str]; 5] = [
        &["swap-norm", "disc.toml"],
        &["swap-moment", "disc.toml", "--p", "2"],
        &["sign-graph", "c4.txt"],
        &["lift", "c4.txt", "--m", "2"],
        &["oracle-goe", "unit.toml", "--n", "50", "--trials", "10", "--seed", "7"],
    ];
    for args in runs {
        let mut bytes = Vec::new();
        for k in 0..2 {
            let name = format!("cert{k}.json");
            let mut a = args.to_vec();
            a.extend(["--out", &name]);
            stdout(&bin(&a, dir.path()));
            bytes.push(std::fs::read(dir.path().join(&name)).unwrap());
        }
        assert_eq!(bytes[0], bytes[1], "{args:?}");
        let v: serde_json::Value = serde_json::from_slice(&bytes[0]).unwrap();
        assert_eq!(v["subcommand"], args[0]);
        assert!(v["versions"]["freespec"].is_string());
    }
}

#[test]
fn spencer_and_spectrum_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let a: Vec<SymMatrix> = (0..6)
        .map(|i| SymMatrix::from_upper(3, |r, c| (((i * 7 + r * 3 + c * 5) % 11) as f64 / 11.0 - 0.5) / 2.0))
        .collect();
    write(dir.path(), "fam.toml", &print_matrices(&a));
    let out = stdout(&bin(&["spencer", "fam.toml", "--out", "s.json"], dir.path()));
    assert!(field(&out, "op_norm") <= field(&out, "op_norm_bound") + 1e-9);
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("s.json")).unwrap()).unwrap();
    assert!(v["result"]["coloring"].as_array().unwrap().iter().all(|x| x.as_f64().unwrap().abs() == 1.0));

    let model = FreeModel::gaussian(SymMatrix::zeros(3), &a[..3], 1.0).unwrap();
    write(dir.path(), "g.toml", &print_model(&model));
    let out = stdout(&bin(&["spectrum", "g.toml", "--p", "1", "--eps", "1.0", "--out", "sp.json"], dir.path()));
    assert!(field(&out, "max_deviation") <= field(&out, "telescoped_bound") + 1e-9);
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("sp.json")).unwrap()).unwrap();
    assert!(v["params"]["sigma"].as_f64().unwrap() > 0.0);
    assert!(!v["result"]["compare"].as_array().unwrap().is_empty());
}

#[test]
fn oracle_nc2_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "two.toml", TWO);
    let out = stdout(&bin(&["oracle-nc2", "two.toml", "--word", "X X X X"], dir.path()));
    let m = parse_model(TWO).unwrap();
    assert!((field(&out, "trace") - freespec::free::trace_moment(&m, 4)).abs() < 1e-12);
}

#[test]
fn oracle_examples() {
    let det = FreeModel::deterministic(SymMatrix::diag(&[1.0, -2.0]));
    for n in [3, 40] {
        let (e, s) = monte_carlo_oracle(&det, n, 5, 3, 1).unwrap();
        assert_eq!(s, 0.0);
        assert!((e - (1.0 - 8.0) / 2.0).abs() < 1e-12);
    }
    let unit = parse_model(UNIT).unwrap();
    // GOE moments exceed the semicircle ones by about 1/N, 5/N and 22/N
    let est = monte_carlo_moments(&unit, 200, 100, &[2, 4, 6], 11).unwrap();
    for (e, (want, bias)) in est.iter().zip([(1.0, 1.0), (2.0, 5.0), (5.0, 22.0)]) {
        assert!((e.estimate - want).abs() <= 4.0 * e.stderr + 1.5 * bias / 200.0, "{e:?}");
    }
    assert!(monte_carlo_oracle(&unit, 5000, 1, 2, 0).is_err());
    assert!(monte_carlo_oracle(&unit, 10, 0, 2, 0).is_err());
}

#[test]
fn graph_files_round_trip() {
    let g = GraphSpec::new(5, vec![(0, 4), (1, 2), (3, 1)]).unwrap();
    assert_eq!(parse_graph(&print_graph(&g)).unwrap(), g);
    let with_comments = "# pentagon\n5\n0 1 # first\n\n1 2\n2 3\n3 4\n4 0\n";
    assert_eq!(parse_graph(with_comments).unwrap().edges().len(), 5);
}

fn sym_strategy(d: usize) -> impl Strategy<Value = SymMatrix> {
    prop::collection::vec(-1e3..1e3f64, d * d).prop_map(move |v| SymMatrix::from_upper(d, |i, j| v[i * d + j]))
}

fn term_strategy(d: usize) -> impl Strategy<Value = CovTerm> {
    prop_oneof![
        sym_strategy(d).prop_map(CovTerm::gaussian),
        (sym_strategy(d), sym_strategy(d)).prop_map(|(a, b)| CovTerm::discrete(vec![
            (0.25, a.clone()),
            (0.25, a.scaled(-1.0)),
            (0.25, b.clone()),
            (0.25, b.scaled(-1.0)),
        ])),
    ]
}

fn model_strategy() -> impl Strategy<Value = FreeModel> {
    (1usize..4).prop_flat_map(|d| {
        (sym_strategy(d), prop::collection::vec(term_strategy(d), 0..4), 0.0..10.0f64)
            .prop_map(|(a0, terms, c)| FreeModel::new(a0, terms, c).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn model_files_round_trip_bit_exactly(m in model_strategy()) {
        let text = print_model(&m);
        let back = parse_model(&text).unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(print_model(&back), text);
    }

    #[test]
    fn matrix_files_round_trip(a in prop::collection::vec(sym_strategy(3), 1..5)) {
        prop_assert_eq!(parse_matrices(&print_matrices(&a)).unwrap(), a);
    }
}

#[test]
fn goe_normalization() {
    // normalized E tr(G²) = (2 + (N − 1))/N = 1 + 1/N
    let unit = parse_model(UNIT).unwrap();
    for n in [10, 100] {
        let e = monte_carlo_moments(&unit, n, 400, &[2], 5).unwrap()[0];
        assert!((e.estimate - 1.0 - 1.0 / n as f64).abs() <= 4.0 * e.stderr, "{e:?}");
        assert!((e.estimate - 1.0).abs() <= 4.0 * e.stderr + 1.0 / n as f64);
    }
}
