mod common;

use common::*;
use freespec::free::{
    self, cov_apply, lambda_max_upper, matrix_params, moment_table, nc2_bruteforce_moment, pisier_upper,
    resolvent_complex_report, resolvent_moment_complex, resolvent_moment_real, resolvent_real_report,
    sandwich_table, trace_moment, Slot,
};
use freespec::{CovTerm, Error, FreeModel, Mat, SymMatrix};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn catalan_even_moments_and_zero_odd() {
    let mt = moment_table(&unit_semicircle(), 20);
    for k in 0..=10 {
        assert!((mt.trace(2 * k) - catalan(k)).abs() <= 1e-9, "k = {k}");
        if k < 10 {
            assert!(mt.trace(2 * k + 1).abs() <= 1e-12);
        }
    }
    assert_eq!(mt.get(0).as_mat(), &Mat::identity(1));
}

#[test]
fn single_coordinate_mass() {
    let e11 = SymMatrix::diag(&[1.0, 0.0]);
    let m = FreeModel::gaussian(SymMatrix::zeros(2), &[e11], 1.0).unwrap();
    for k in 1..=5 {
        assert!((trace_moment(&m, 2 * k) - catalan(k) / 2.0).abs() < 1e-12);
    }
    let det = FreeModel::deterministic(SymMatrix::diag(&[1.0, -1.0]));
    assert!((trace_moment(&det, 4) - 1.0).abs() < 1e-15);
}

#[test]
fn moments_match_noncrossing_enumeration() {
    let mut r = rng(11);
    for _ in 0..8 {
        let d = r.gen_range(1..=3);
        let n_terms = r.gen_range(1..=3);
        let m = random_model(&mut r, d, n_terms);
        let mt = moment_table(&m, 8);
        for k in 0..=8 {
            let word = vec![Slot::X; k];
            let brute = nc2_bruteforce_moment(&m, &word).unwrap();
            let err = max_diff(mt.get(k), &brute);
            assert!(err <= 1e-8 * (1.0 + brute.max_abs()), "k = {k}, err = {err}");
        }
    }
}

#[test]
fn sandwich_matches_noncrossing_enumeration() {
    let mut r = rng(12);
    for _ in 0..6 {
        let d = r.gen_range(1..=3);
        let n_terms = r.gen_range(1..=3);
        let m = random_model(&mut r, d, n_terms);
        let b = random_sym(&mut r, d, 1.0);
        let table = sandwich_table(&m, &b, 4, 3).unwrap();
        for p in 0..=4 {
            for q in 0..=3 {
                let mut word = vec![Slot::X; p];
                word.push(Slot::Det(b.clone()));
                word.extend(std::iter::repeat_n(Slot::X, q));
                let brute = nc2_bruteforce_moment(&m, &word).unwrap();
                let err = max_diff(&table[p][q], &brute);
                assert!(err <= 1e-8 * (1.0 + brute.max_abs()), "p = {p}, q = {q}, err = {err}");
            }
        }
        let mt = moment_table(&m, 3);
        for q in 0..=3 {
            assert!(max_diff(&table[0][q], &b.matmul(mt.get(q))) < 1e-12);
        }
    }
}

#[test]
fn bruteforce_small_words() {
    let a = SymMatrix::from_rows(&[&[1.0, 2.0], &[2.0, 0.5]]).unwrap();
    let m = FreeModel::gaussian(SymMatrix::zeros(2), &[a.clone()], 1.0).unwrap();
    let two = nc2_bruteforce_moment(&m, &[Slot::Free(0), Slot::Free(0)]).unwrap();
    assert!(max_diff(&two, &a.matmul(&a)) < 1e-14);
    let odd = nc2_bruteforce_moment(&m, &[Slot::X, Slot::X, Slot::X]).unwrap();
    assert_eq!(odd.max_abs(), 0.0);
    assert!(nc2_bruteforce_moment(&m, &vec![Slot::X; 13]).is_err());
    // the two pairings of a four-letter word: a(a·a)a and aa·aa
    let four = nc2_bruteforce_moment(&m, &vec![Slot::X; 4]).unwrap();
    let a2 = a.matmul(&a);
    let mut want = a.matmul(&a2).matmul(&a);
    want.axpy(1.0, &a2.matmul(&a2));
    assert!(max_diff(&four, &want) < 1e-12);
    assert!(max_diff(&four, moment_table(&m, 4).get(4)) < 1e-12);
}

#[test]
fn covariance_linear_in_terms() {
    let mut r = rng(3);
    let a1 = random_sym(&mut r, 3, 1.0);
    let a2 = random_sym(&mut r, 3, 1.0);
    let x = random_sym(&mut r, 3, 1.0);
    let both = FreeModel::gaussian(SymMatrix::zeros(3), &[a1.clone(), a2.clone()], 1.0).unwrap();
    let one = FreeModel::gaussian(SymMatrix::zeros(3), &[a1], 1.0).unwrap();
    let other = FreeModel::gaussian(SymMatrix::zeros(3), &[a2], 1.0).unwrap();
    let mut sum = cov_apply(&one, &x).unwrap();
    sum.axpy(1.0, &cov_apply(&other, &x).unwrap());
    assert!(max_diff(&sum, &cov_apply(&both, &x).unwrap()) < 1e-12);
    assert!(matches!(cov_apply(&both, &Mat::identity(2)), Err(Error::Dimension { .. })));
}

#[test]
fn sparse_kernels_agree_with_dense_application() {
    let mut r = rng(5);
    let d = 16;
    let mut support = Vec::new();
    for _ in 0..2 {
        let mut z = Mat::zeros(d);
        for _ in 0..6 {
            let (i, j) = (r.gen_range(0..d), r.gen_range(0..d));
            let v = r.gen::<f64>() - 0.5;
            z.set(i, j, v);
            z.set(j, i, v);
        }
        let z = SymMatrix::symmetrize(&z);
        support.push((0.25, z.clone()));
        support.push((0.25, z.scaled(-1.0)));
    }
    let term = CovTerm::discrete(support);
    let m = FreeModel::new(SymMatrix::zeros(d), vec![term.clone()], 1.7).unwrap();
    let x = Mat::from_fn(d, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0);
    let mut want = term.apply_dense(&x);
    want.scale(1.7);
    assert!(max_diff(&cov_apply(&m, &x).unwrap(), &want) < 1e-12);
}

#[test]
fn resolvent_real_unit_semicircle() {
    // independent series: Σ C_k λ^{-(2k+1)} and its λ-derivative
    let lam: f64 = 3.0;
    let (mut s1, mut s2) = (0.0, 0.0);
    for k in 0..60 {
        let c = catalan(k);
        s1 += c * lam.powi(-(2 * k as i32 + 1));
        s2 += (2 * k + 1) as f64 * c * lam.powi(-(2 * k as i32 + 2));
    }
    let m = unit_semicircle();
    let v1 = resolvent_moment_real(&m, lam, 1, 0.5, 1e-10).unwrap();
    let v2 = resolvent_moment_real(&m, lam, 2, 0.5, 1e-10).unwrap();
    assert!((v1 - s1).abs() < 1e-9 && (v1 - 0.3819660).abs() < 1e-6);
    assert!((v2 - s2).abs() < 1e-9 && (v2 - 0.1708204).abs() < 1e-6);
}

#[test]
fn resolvent_real_deterministic_is_eigen_sum() {
    let det = FreeModel::deterministic(SymMatrix::diag(&[1.0, -1.0]));
    let v = resolvent_moment_real(&det, 2.0, 2, 1.0, 1e-13).unwrap();
    assert!((v - 0.5 * (1.0 + 1.0 / 9.0)).abs() < 1e-10);
    let mut r = rng(9);
    let a = random_sym(&mut r, 5, 1.0);
    let s = freespec::matrix::sym_eig(&a).unwrap();
    let lam = s.max() + 0.7;
    let want: f64 = s.values.iter().map(|e| (lam - e).powi(-3)).sum::<f64>() / 5.0;
    let got = resolvent_moment_real(&FreeModel::deterministic(a), lam, 3, 0.7, 1e-13).unwrap();
    assert!((got - want).abs() <= 1e-10 * want.max(1.0));
    let zero = FreeModel::deterministic(SymMatrix::zeros(1));
    assert!((resolvent_moment_real(&zero, 2.0, 3, 1.0, 1e-12).unwrap() - 0.125).abs() < 1e-14);
}

#[test]
fn resolvent_real_matches_expansion_at_origin() {
    let mut r = rng(21);
    for _ in 0..5 {
        let m = random_model(&mut r, 3, 2);
        let lam = 1.6 * pisier_upper(&m).unwrap();
        let p = 3;
        let mt = moment_table(&m, 120);
        let mut coef = 1.0;
        let mut s = 0.0;
        for k in 0..=120 {
            s += coef * mt.trace(k) * lam.powi(-(k as i32));
            coef *= (p + k) as f64 / (k + 1) as f64;
        }
        let want = s / lam.powi(p as i32);
        let margin = lam - lambda_max_upper(&m).unwrap();
        let got = resolvent_moment_real(&m, lam, p, margin, 1e-12).unwrap();
        assert!((got - want).abs() <= 1e-9 * want, "{got} vs {want}");
    }
}

#[test]
fn resolvent_complex_against_quadrature() {
    let m = unit_semicircle();
    for &(lam, eps, p) in &[(3.0, 0.1, 1usize), (3.0, 0.1, 4), (0.5, 0.3, 2), (2.0, 0.5, 1)] {
        let want = semicircle_integral(|x| (eps * eps + (lam - x) * (lam - x)).powi(-(p as i32)), 200_000);
        let got = resolvent_moment_complex(&m, lam, eps, p, 1e-10).unwrap();
        assert!((got - want).abs() <= 1e-7 * want, "({lam}, {eps}, {p}): {got} vs {want}");
    }
}

#[test]
fn resolvent_complex_deterministic() {
    let zero = FreeModel::deterministic(SymMatrix::zeros(1));
    assert!((resolvent_moment_complex(&zero, 0.0, 1.0, 1, 1e-12).unwrap() - 1.0).abs() < 1e-14);
    let a = FreeModel::deterministic(SymMatrix::diag(&[0.7, 0.7]));
    let v = resolvent_moment_complex(&a, 0.7, 0.2, 3, 1e-12).unwrap();
    assert!((v - 0.2f64.powi(-6)).abs() <= 1e-10 * v);
    let b = FreeModel::deterministic(SymMatrix::diag(&[1.0, -2.0, 0.5]));
    let (lam, eps) = (0.1, 0.3);
    let want: f64 = [1.0f64, -2.0, 0.5].iter().map(|e| (eps * eps + (lam - e) * (lam - e)).powi(-2)).sum::<f64>() / 3.0;
    let got = resolvent_moment_complex(&b, lam, eps, 2, 1e-12).unwrap();
    assert!((got - want).abs() <= 1e-9 * want);
}

#[test]
fn series_cap_is_an_error() {
    let m = unit_semicircle();
    match resolvent_complex_report(&m, 0.0, 1e-3, 4, 1e-6, 1000) {
        Err(Error::TruncationCap { required, cap }) => assert!(required > cap as u64),
        other => panic!("expected cap error, got {other:?}"),
    }
}

#[test]
fn violated_margin_is_flagged() {
    // λ inside the spectrum with a margin claim that is false
    let m = unit_semicircle();
    let rep = resolvent_real_report(&m, 1.0, 2, 0.5, 1e-6, 1_000_000).unwrap();
    assert!(rep.enclosure_violated);
    let ok = resolvent_real_report(&m, 3.0, 2, 0.5, 1e-6, 1_000_000).unwrap();
    assert!(!ok.enclosure_violated);
}

#[test]
fn params_two_matrix_example() {
    let a1 = SymMatrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap();
    let a2 = SymMatrix::diag(&[1.0, -1.0]);
    let m = FreeModel::gaussian(SymMatrix::zeros(2), &[a1.clone(), a2.clone()], 1.0).unwrap();
    let p = matrix_params(&m).unwrap();
    assert!((p.sigma - 2f64.sqrt()).abs() < 1e-12);
    assert!((p.nu - 2f64.sqrt()).abs() < 1e-12);
    // grid oracle for σ* over pairs of unit vectors in the plane
    let steps = 6284;
    let mut best: f64 = 0.0;
    for i in 0..steps {
        let a = i as f64 * 1e-3;
        let y = [a.cos(), a.sin()];
        for j in 0..steps / 2 {
            let b = j as f64 * 1e-3;
            let z = [b.cos(), b.sin()];
            let f = |m: &SymMatrix| {
                let v = m.mul_vec(&z);
                y[0] * v[0] + y[1] * v[1]
            };
            best = best.max(f(&a1).powi(2) + f(&a2).powi(2));
        }
    }
    assert!((p.sigma_star - best.sqrt()).abs() < 1e-5);
    assert!((p.sigma_star - 1.0).abs() < 1e-8);
    assert_eq!(p.rho, 0.0);

    let e = a1.clone();
    let disc = FreeModel::new(SymMatrix::zeros(2), vec![CovTerm::discrete(vec![(0.5, e.clone()), (0.5, e.scaled(-1.0))])], 1.0).unwrap();
    let q = matrix_params(&disc).unwrap();
    assert!((q.sigma - 1.0).abs() < 1e-12 && (q.rho - 1.0).abs() < 1e-12);
}

#[test]
fn nu_big_side_agrees_with_gram_side() {
    // more outcomes than d² forces the d²×d² assembly
    let mut r = rng(4);
    let d = 2;
    let mut support = Vec::new();
    for _ in 0..3 {
        let z = random_sym(&mut r, d, 1.0);
        support.push((1.0 / 6.0, z.clone()));
        support.push((1.0 / 6.0, z.scaled(-1.0)));
    }
    let m = FreeModel::new(SymMatrix::zeros(d), vec![CovTerm::discrete(support.clone())], 1.0).unwrap();
    let nu = free::covariance_norm(&m).unwrap();
    let gram = SymMatrix::from_upper(6, |i, j| support[i].0.sqrt() * support[j].0.sqrt() * support[i].1.frob_dot(&support[j].1));
    let want = freespec::matrix::sym_eig(&gram).unwrap().max().sqrt();
    assert!((nu - want).abs() < 1e-10);
}

#[test]
fn pisier_examples() {
    assert!((pisier_upper(&unit_semicircle()).unwrap() - 2.0).abs() < 1e-15);
    let two = FreeModel::gaussian(SymMatrix::zeros(1), &[SymMatrix::identity(1), SymMatrix::identity(1)], 1.0).unwrap();
    assert!((pisier_upper(&two).unwrap() - 2.0 * 2f64.sqrt()).abs() < 1e-14);
    let a0 = SymMatrix::diag(&[5.0, 0.0]);
    let m = FreeModel::gaussian(a0.clone(), &[SymMatrix::identity(2)], 1.0).unwrap();
    assert!((lambda_max_upper(&m).unwrap() - 7.0).abs() < 1e-14);
    assert_eq!(pisier_upper(&FreeModel::deterministic(a0)).unwrap(), 5.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn schatten_monotone_and_positive(seed in 0u64..10_000, d in 1usize..4, n in 0usize..4) {
        let mut r = rng(seed);
        let m = random_model(&mut r, d, n);
        let mt = moment_table(&m, 16);
        let mut prev = 0.0;
        for k in 1..=8 {
            let t = mt.trace(2 * k);
            prop_assert!(t >= 0.0);
            let norm = t.powf(1.0 / (2 * k) as f64);
            prop_assert!(norm + 1e-9 * (1.0 + norm) >= prev);
            prev = norm;
        }
    }

    #[test]
    fn quadrupled_scale_doubles_norm(seed in 0u64..10_000, d in 1usize..4, n in 1usize..4) {
        let mut r = rng(seed);
        let m = random_model(&mut r, d, n).with_a0(SymMatrix::zeros(d));
        let m4 = m.with_scale(4.0 * m.free_scale());
        for two_p in [2usize, 4, 8] {
            let a = free::schatten_2p(&m, two_p);
            let b = free::schatten_2p(&m4, two_p);
            prop_assert!((b - 2.0 * a).abs() <= 1e-8 * b.max(1e-300));
        }
    }

    #[test]
    fn sigma_star_bounded_by_sigma_and_nu(seed in 0u64..10_000, d in 1usize..4, n in 1usize..4) {
        let mut r = rng(seed);
        let m = random_model(&mut r, d, n);
        let p = matrix_params(&m).unwrap();
        prop_assert!(p.sigma_star <= p.sigma.min(p.nu) + 1e-9);
        prop_assert!(p.rho >= 0.0);
    }

    #[test]
    fn moment_invariants(seed in 0u64..10_000, d in 1usize..4, n in 0usize..4) {
        let mut r = rng(seed);
        let m = random_model(&mut r, d, n);
        let mt = moment_table(&m, 2);
        prop_assert_eq!(mt.get(0).as_mat(), &Mat::identity(d));
        prop_assert!(max_diff(mt.get(1), m.a0()) == 0.0);
    }
}
