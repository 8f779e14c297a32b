use spiralflow::spectral_field::C64;
use spiralflow::verification::*;

// mpmath: β^{λ₁}·₂F₂(λ₁−κ₁+1, λ₁−κ₂+1; λ₁−λ₂+1, λ₁−λ₃+1; −inβ) at μ = 1.5.
const TOP_SOLUTION: [(i64, f64, f64, f64); 7] = [
    (1, 0.5, 0.087_280_947_019_907_489, -0.011_970_829_530_300_346),
    (1, 2.0, 9.198_125_609_030_998_3, -5.532_309_523_149_419_1),
    (2, 0.5, 0.030_452_874_444_385_778, -0.005_644_414_866_793_639_3),
    (2, 2.0, 21.113_885_057_690_169, -18.096_834_637_537_935),
    (3, 0.5, 0.010_653_651_721_272_673, -0.002_279_924_312_924_165_2),
    (3, 2.0, 51.643_684_375_378_211, -51.908_771_958_699_337),
    (3, 10.0, -53_885.601_883_446_210, -570_290.722_074_869_63),
];

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[test]
fn mode_ode_roots_and_growth() {
    let ode = ModeODE::new(2, 1.5).unwrap();
    assert_eq!(ode.roots, [5.0, -1.0, -1.0]);
    assert!((ode.growth_exponent - (7f64.sqrt() + 1.0)).abs() < 1e-15);
    let ode = ModeODE::new(1, 1.5).unwrap();
    assert_eq!(ode.roots, [3.5, 0.5, -1.0]);
    assert!(ModeODE::new(1, 1.0).is_err());
}

#[test]
fn mode_zero_fundamental_solutions() {
    let ode = ModeODE::new(0, 1.5).unwrap();
    let s1 = frobenius_solve(&ode, 1, 60).unwrap();
    let s2 = frobenius_solve(&ode, 2, 60).unwrap();
    let s3 = frobenius_solve(&ode, 3, 60).unwrap();
    assert_eq!(s2.log_power, 1);
    for b in [0.1, 0.5, 2.0, 7.0] {
        let p = b * b;
        assert!((s1.eval(b) - c(p, 0.0)).norm() < 1e-13 * p);
        assert!((s2.eval(b) - c(p * f64::ln(b), 0.0)).norm() < 1e-13 * p * (1.0 + f64::ln(b).abs()));
        assert!((s3.eval(b) - c(1.0 / b, 0.0)).norm() < 1e-13 / b);
    }
}

#[test]
fn second_branch_of_unit_mode_is_pure_power() {
    let ode = ModeODE::new(1, 1.5).unwrap();
    let s = frobenius_solve(&ode, 2, 60).unwrap();
    assert_eq!(s.lambda_star, c(0.5, 0.0));
    assert_eq!(s.coefficients[0], c(1.0, 0.0));
    assert!(s.coefficients[1..].iter().all(|a| a.norm() == 0.0));
    for b in [0.1, 1.0, 3.0] {
        assert!((s.eval(b) - c(f64::sqrt(b), 0.0)).norm() < 1e-15 * (1.0 + b));
    }
}

#[test]
fn series_residual_small_at_tenth() {
    for n in 0..=4i64 {
        let ode = ModeODE::new(n, 1.5).unwrap();
        for w in 1..=3 {
            let s = frobenius_solve(&ode, w, 60).unwrap();
            assert!(s.relative_residual(&ode, 0.1) < 1e-13, "n {n} branch {w}");
        }
    }
}

#[test]
fn recursion_holds_to_rounding() {
    for mu in [1.25, 1.5, 2.0, 3.7] {
        for n in 1..=6i64 {
            let ode = ModeODE::new(n, mu).unwrap();
            for w in 1..=3 {
                let s = frobenius_solve(&ode, w, 60).unwrap();
                if s.log_power == 0 {
                    assert_eq!(s.coefficients[0], c(1.0, 0.0));
                }
                assert!(s.recursion_defect(&ode) <= 1e-13, "mu {mu} n {n} branch {w}");
            }
        }
    }
}

#[test]
fn frobenius_rejects_bad_requests() {
    let ode = ModeODE::new(2, 1.5).unwrap();
    assert!(frobenius_solve(&ode, 1, 7).is_err());
    assert!(frobenius_solve(&ode, 0, 60).is_err());
    assert!(frobenius_solve(&ode, 4, 60).is_err());
}

#[test]
fn hypergeometric_trivial_cases() {
    assert_eq!(hypergeometric_2f2(0.3, 1.7, 2.5, 0.5, c(0.0, 0.0)).unwrap(), c(1.0, 0.0));
    for z in [c(1.0, 0.0), c(-2.0, 3.0), c(0.0, -5.0)] {
        let v = hypergeometric_2f2(0.7, 2.2, 0.7, 2.2, z).unwrap();
        assert!((v - z.exp()).norm() < 1e-14 * z.exp().norm().max(1.0));
    }
    let v = hypergeometric_2f2(0.5, 1.5, 2.5, 3.25, c(3.0, -4.0)).unwrap();
    assert!((v - c(0.967_825_999_391_115_12, -0.593_514_422_746_555_27)).norm() < 1e-14);
    assert!(hypergeometric_2f2(1.0, 1.0, -2.0, 1.0, c(0.5, 0.0)).is_err());
    assert!(hypergeometric_2f2(1.0, 1.0, 1.0, 0.0, c(0.5, 0.0)).is_err());
}

#[test]
fn top_branch_matches_hypergeometric() {
    let ode = ModeODE::new(2, 1.5).unwrap();
    let s = frobenius_solve(&ode, 1, 60).unwrap();
    for b in [0.1, 0.5, 1.0] {
        let h = top_solution_2f2(&ode, b).unwrap();
        assert!((s.eval(b) - h).norm() <= 1e-10 * h.norm(), "beta {b}");
    }
}

#[test]
fn top_branch_matches_mpmath() {
    for &(n, b, re, im) in &TOP_SOLUTION {
        let ode = ModeODE::new(n, 1.5).unwrap();
        let want = c(re, im);
        let h = top_solution_2f2(&ode, b).unwrap();
        assert!((h - want).norm() <= 1e-9 * want.norm(), "n {n} beta {b}");
        if b <= 2.0 {
            let s = frobenius_solve(&ode, 1, 60).unwrap();
            assert!((s.eval(b) - want).norm() <= 1e-13 * want.norm(), "n {n} beta {b}");
        }
    }
}

#[test]
fn kernel_exponents() {
    let r = kernel_exponent_check(1, 1.5).unwrap();
    assert_eq!(r.case3_pair, Some((1.5, 0.5)));
    assert!(r.pass);
    let r = kernel_exponent_check(2, 1.5).unwrap();
    assert!((r.growth_exponent - (7f64.sqrt() + 1.0)).abs() < 1e-15);
    assert!(r.case3_pair.is_none() && r.pass);
    let r = kernel_exponent_check(1, 1.01).unwrap();
    let (a, b) = r.case3_pair.unwrap();
    assert!((a - 0.03).abs() < 1e-14 && (b - 0.01).abs() < 1e-14);
    assert!(r.pass);
    assert!(kernel_exponent_check(0, 1.5).is_err());
}

#[test]
fn pure_power_slope() {
    for p in [-2.5, 0.0, 0.5, 3.0] {
        let s = loglog_slope(&sample_window(|b: f64| b.powf(p), 200.0, 2000.0, 40)).unwrap();
        assert!((s - p).abs() < 1e-12);
    }
    assert!(loglog_slope(&sample_window(|b: f64| b, 1.0, 2.0, 7)).is_err());
}

#[test]
fn baseline_stream_slope() {
    for mu in [1.25, 1.5, 2.0] {
        let f0 = 1.0 / (2.0 * mu - 1.0);
        let s = loglog_slope(&sample_window(|b: f64| b.powf(1.0 - 2.0 * mu) * f0, 200.0, 2000.0, 40)).unwrap();
        assert!((s - (1.0 - 2.0 * mu)).abs() < 1e-12);
    }
}

#[test]
fn unit_mode_second_branch_slope() {
    let ode = ModeODE::new(1, 1.5).unwrap();
    let s = frobenius_solve(&ode, 2, 60).unwrap();
    let slope = loglog_slope(&sample_window(|b| s.eval(b).norm(), 1.0, 100.0, 20)).unwrap();
    assert!((slope - 0.5).abs() < 1e-12);
}

#[test]
fn growth_exponent_matches_measured_slope() {
    for n in 1..=3i64 {
        let ode = ModeODE::new(n, 1.5).unwrap();
        let slope = asymptotic_slope_check(&ode, 200.0, 2000.0, 40).unwrap();
        assert!((slope / ode.growth_exponent - 1.0).abs() < 0.05, "n {n}: {slope}");
    }
}
