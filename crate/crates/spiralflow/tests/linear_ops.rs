use spiralflow::linear_ops::*;
use spiralflow::params_grids::*;
use spiralflow::spectral_field::*;

// scipy adaptive quadrature of the explicit L⁻¹₁,₋ integral for f = 1/(1+β), μ = 1.5.
const ORACLE_L1_MINUS: [(f64, f64, f64); 10] = [
    (0.01, 1.643_606_963_611_405_0e0, -1.412_006_955_775_560_2e-1),
    (0.1, 1.033_691_788_794_697_9e0, -2.659_910_885_977_616_0e-1),
    (0.5, 4.182_564_094_094_469_7e-1, -2.173_677_806_078_337_7e-1),
    (1.0, 2.049_347_427_561_219_7e-1, -1.313_245_009_261_524_7e-1),
    (1.3, 1.388_012_725_224_913_6e-1, -9.543_981_419_825_353_6e-2),
    (1.7, 8.878_909_665_875_571_5e-2, -7.026_017_208_045_111_4e-2),
    (2.0, 7.046_203_513_450_052_8e-2, -6.242_212_671_750_539_0e-2),
    (3.0, 3.666_571_216_370_016_8e-2, -4.341_749_684_434_261_0e-2),
    (5.0, 1.345_778_256_449_660_9e-2, -2.349_675_419_976_610_1e-2),
    (10.0, 2.576_027_051_189_012_9e-3, -8.037_655_291_570_682_0e-3),
];

fn setup(mu: f64, n_max: usize) -> (Params, BetaGrid) {
    let p = Params::new(mu).unwrap().with_n_max(n_max);
    let g = make_grid(&p, DEFAULT_N_NODES).unwrap();
    (p, g)
}

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[test]
fn dbeta_of_constant_is_zero() {
    let (_, g) = setup(1.5, 4);
    let d = DbetaRows::new(&g).apply_real(&vec![1.0; g.len()]);
    assert!(d.iter().all(|x| x.abs() < 1e-10));
}

#[test]
fn dbeta_of_rational() {
    let (_, g) = setup(1.5, 4);
    let f: Vec<f64> = g.nodes.iter().map(|b| b / (b + 1.0)).collect();
    let d = DbetaRows::new(&g).apply_real(&f);
    for (b, x) in g.nodes.iter().zip(&d) {
        assert!((x - b / ((b + 1.0) * (b + 1.0))).abs() < 1e-10, "beta {b}");
    }
}

#[test]
fn dbeta_of_power() {
    for mu in [1.25, 1.5, 2.0] {
        let (_, g) = setup(mu, 4);
        let e = 2.0 * mu - 1.0;
        let f: Vec<f64> = g.nodes.iter().map(|b| b.powf(e)).collect();
        let d = DbetaRows::new(&g).apply_real(&f);
        for (b, x) in g.nodes.iter().zip(&d) {
            if *b <= 2.0 {
                assert!((x - e * b.powf(e)).abs() < 1e-9 * (1.0 + b.powf(e)), "mu {mu} beta {b}");
            }
        }
    }
}

#[test]
fn dbeta_plus_one_inv_examples() {
    let (_, g) = setup(1.5, 4);
    let k = ModeFunction::from_real_fn(0, &g, |_| 2.5, 2.5);
    let out = dbeta_plus_one_inv(&g, &k);
    assert!(out.values.iter().all(|v| (v - c(2.5, 0.0)).norm() < 1e-12));
    assert!((out.value_at_infinity - c(2.5, 0.0)).norm() < 1e-14);

    let lin = ModeFunction::from_real_fn(0, &g, |b| b, 0.0);
    let out = dbeta_plus_one_inv(&g, &lin);
    for (b, v) in g.nodes.iter().zip(&out.values) {
        assert!((v - c(b / 2.0, 0.0)).norm() < 1e-11 * (1.0 + b), "beta {b}");
    }

    let r = ModeFunction::from_real_fn(0, &g, |b| 1.0 / (1.0 + b), 0.0);
    let out = dbeta_plus_one_inv(&g, &r);
    for (b, v) in g.nodes.iter().zip(&out.values) {
        assert!((v - c(b.ln_1p() / b, 0.0)).norm() < 1e-10, "beta {b}");
    }
}

#[test]
fn dbeta_plus_one_inv_commutes_with_mode_multiplication() {
    let (_, g) = setup(1.5, 4);
    let f = ModeFunction::from_fn(3, &g, |b| c((-b).exp(), b / (1.0 + b * b)), c(0.0, 0.0));
    let k = c(0.0, 3.0);
    let a = dbeta_plus_one_inv(&g, &f.scale(k));
    let b = dbeta_plus_one_inv(&g, &f).scale(k);
    for (x, y) in a.values.iter().zip(&b.values) {
        assert!((x - y).norm() <= 1e-14 * (1.0 + y.norm()));
    }
}

#[test]
fn l_inv_mode_zero_constant() {
    let (p, g) = setup(1.5, 4);
    let one = ModeFunction::from_real_fn(0, &g, |_| 1.0, 1.0);
    for s in [Sign::Plus, Sign::Minus] {
        let out = l_inv(&g, &p, 0, s, &one).unwrap();
        assert!(out.values.iter().all(|v| (v - c(0.5, 0.0)).norm() < 1e-10));
        assert!((out.value_at_infinity - c(0.5, 0.0)).norm() < 1e-14);
    }
}

#[test]
fn l_inv_endpoint_plus_two() {
    let (p, g) = setup(1.5, 4);
    let one = ModeFunction::from_real_fn(2, &g, |_| 1.0, 1.0);
    let out = l_inv(&g, &p, 2, Sign::Plus, &one).unwrap();
    assert!((out.value_at_zero() - c(0.2, 0.0)).norm() < 1e-9);
    assert_eq!(out.value_at_infinity, c(0.0, 0.0));
}

#[test]
fn l_inv_matches_adaptive_oracle() {
    let (p, g) = setup(1.5, 4);
    let prof = Profile::real(|b| 1.0 / (1.0 + b), 0.0);
    let out = l_inv(&g, &p, 1, Sign::Minus, &prof.sample(1, &g)).unwrap();
    let direct = l_inv_profile(&g, &p, 1, Sign::Minus, &prof).unwrap();
    for &(b, re, im) in &ORACLE_L1_MINUS {
        let want = c(re, im);
        let e = (out.eval(&g, b, p.delta) - want).norm();
        assert!(e < 1e-8, "beta {b}: {e:e}");
        if let Some(i) = g.nodes.iter().position(|x| (x - b).abs() < 1e-14) {
            assert!((direct.values[i] - want).norm() < 1e-8);
        }
    }
}

#[test]
fn l_inv_endpoint_law_all_branches() {
    let (p, g) = setup(1.5, 6);
    let cc = 2.0 * p.mu - 1.0;
    for n in -6i64..=6 {
        for s in [Sign::Plus, Sign::Minus] {
            let f = ModeFunction::from_real_fn(n, &g, |b| 2.0 / (1.0 + b), 0.0);
            let out = l_inv(&g, &p, n, s, &f).unwrap();
            let want = 2.0 / (s.value() * n.unsigned_abs() as f64 * p.mu + cc);
            assert!((out.value_at_zero() - c(want, 0.0)).norm() < 1e-9, "n {n} {s:?}");
            if n != 0 {
                assert_eq!(out.value_at_infinity, c(0.0, 0.0));
            }
        }
    }
    let one = ModeFunction::from_real_fn(0, &g, |_| 3.0, 3.0);
    let out = l_inv(&g, &p, 0, Sign::Minus, &one).unwrap();
    assert!((out.value_at_infinity - c(3.0 / cc, 0.0)).norm() < 1e-14);
}

#[test]
fn l_inv_rejects_non_finite_input() {
    let (p, g) = setup(1.5, 4);
    let mut f = ModeFunction::from_real_fn(1, &g, |_| 1.0, 0.0);
    f.values[3] = c(f64::NAN, 0.0);
    assert!(l_inv(&g, &p, 1, Sign::Plus, &f).is_err());
}

#[test]
fn inverse_consistency_on_smoke_family() {
    let (p, g) = setup(1.5, 8);
    for n in [-5i64, -1, 0, 1, 2, 8] {
        for s in [Sign::Plus, Sign::Minus] {
            for (name, prof) in smoke_family(p.delta) {
                let u = l_inv_profile(&g, &p, n, s, &prof).unwrap();
                let back = l_forward(&g, p.mu, n, s, &u);
                let f = prof.sample(n, &g);
                for (x, y) in back.values.iter().zip(&f.values) {
                    assert!((x - y).norm() < 1e-7, "n {n} {s:?} {name}");
                }
            }
        }
    }
}

#[test]
fn l_inv_norm_decays_with_mode() {
    let (p, g) = setup(1.5, 16);
    let norms: Vec<f64> = [2i64, 4, 8, 16].iter().map(|&n| linv_matrix(&g, &p, n, Sign::Plus).unwrap().sup_norm()).collect();
    for w in norms.windows(2) {
        assert!(w[1] < w[0], "{norms:?}");
    }
}

#[test]
fn k1_vanishes_below_one_and_k3_above_two() {
    let (p, g) = setup(1.5, 4);
    for n in [1i64, 3] {
        let k = k_n_matrices(&g, &p, n).unwrap();
        for (i, &b) in g.nodes.iter().enumerate() {
            if b <= 1.0 {
                assert!(k.k1.matrix.row(i).iter().all(|z| z.norm() == 0.0));
            }
            if b >= 2.0 {
                assert!(k.k3.matrix.row(i).iter().all(|z| z.norm() == 0.0));
            }
        }
    }
    assert!(k_n_matrices(&g, &p, 0).is_err());
}

#[test]
fn k_norm_decays_like_inverse_mode() {
    let (p, g) = setup(1.5, 16);
    let jinv = jinv_matrix(&g);
    let scaled: Vec<f64> = [2i64, 4, 8, 16]
        .iter()
        .map(|&n| n as f64 * ModeSolver::new(&g, &p, n, &jinv).unwrap().k_norm_estimate)
        .collect();
    let top = scaled.iter().cloned().fold(0.0, f64::max);
    assert!(scaled.iter().all(|s| s.is_finite() && *s <= top));
    assert!(scaled[3] <= 2.0 * scaled[0], "{scaled:?}");
}

#[test]
fn solve_mode_zero_gives_zero() {
    let (p, g) = setup(1.5, 4);
    let v = ModeFunction::zeros(2, g.len());
    let u = solve_mode(&g, &p, 2, &v).unwrap();
    assert!(u.values.iter().all(|z| z.norm() == 0.0));
}

#[test]
fn solve_mode_lu_matches_neumann() {
    let (p, g) = setup(1.5, 16);
    let jinv = jinv_matrix(&g);
    let mut checked = 0;
    for n in [2i64, 4, 8, 16] {
        let s = ModeSolver::new(&g, &p, n, &jinv).unwrap();
        if s.k_norm_estimate >= 0.5 {
            continue;
        }
        let v = ModeFunction::from_fn(n, &g, |b| c(1.0 / (1.0 + b), (-b).exp()), c(0.0, 0.0)).to_vec();
        let a = s.solve_lu(&v).unwrap();
        let b = s.solve_neumann(&v, 1e-14, 500).unwrap();
        let scale = v.iter().map(|z| z.norm()).fold(0.0, f64::max);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).norm() < 1e-9 * scale, "n {n}");
        }
        checked += 1;
    }
    assert!(checked > 0);
}

#[test]
fn solve_mode_residual() {
    let (p, g) = setup(1.5, 4);
    let jinv = jinv_matrix(&g);
    for n in [1i64, 2, 3] {
        let s = ModeSolver::new(&g, &p, n, &jinv).unwrap();
        let v = ModeFunction::from_fn(n, &g, |b| c(b / (1.0 + b * b), 0.5 / (1.0 + b)), c(0.0, 0.0)).to_vec();
        let u = s.solve_lu(&v).unwrap();
        assert!(s.residual(&u, &v) <= 1e-9, "n {n}");
    }
}

fn smooth_rhs(g: &BetaGrid, n_max: usize) -> SpectralField {
    let mut w = SpectralField::zeros(&ModeSet::new(n_max, true), g.len(), RoleTag::Generic);
    for n in -(n_max as i64)..=n_max as i64 {
        let a = 1.0 / (1.0 + (n * n) as f64);
        let ph = 0.7 * n as f64;
        let m = ModeFunction::from_fn(
            n,
            g,
            |b| C64::from_polar(a, ph) * b / ((1.0 + b) * (1.0 + b) * (1.0 + b)),
            c(0.0, 0.0),
        );
        w.set_mode(m);
    }
    w.enforce_hermitian();
    w
}

#[test]
fn linearized_inverse_zero() {
    let (p, g) = setup(1.5, 3);
    let w = SpectralField::zeros(&ModeSet::new(3, true), g.len(), RoleTag::Generic);
    let f = linearized_inverse(&g, &p, &w).unwrap();
    assert!(f.modes.iter().all(|m| m.max_abs() == 0.0));
}

#[test]
fn linearized_inverse_round_trip() {
    let (p, g) = setup(1.5, 4);
    let w = smooth_rhs(&g, 4);
    let op = LinearizedInverse::new(&g, &p).unwrap();
    let (f, report) = op.apply(&w).unwrap();
    assert!(report.modes.iter().all(|r| r.residual_norm <= 1e-9));
    let defect = script_l(&g, p.mu, &f).sub(&w);
    let num = weighted_sum_norm(&op.apply_lplus(&defect), &g, 0.5, p.delta).norm_A_half_Cdelta;
    let den = weighted_sum_norm(&op.apply_lplus(&w), &g, 0.5, p.delta).norm_A_half_Cdelta;
    assert!(num <= 1e-6 * den, "relative defect {:e}", num / den);
}

#[test]
fn linearized_inverse_mode_zero_constant() {
    let (p, g) = setup(1.5, 2);
    let cst = 1.7;
    let mut w = SpectralField::zeros(&ModeSet::new(2, true), g.len(), RoleTag::Generic);
    w.set_mode(ModeFunction::from_real_fn(0, &g, |_| cst, cst));
    let f = linearized_inverse(&g, &p, &w).unwrap();
    let f0 = f.mode(0).clone();
    let rows = DbetaRows::new(&g);
    let df = rows.apply(&f0.values);
    let g1 = ModeFunction { n: 0, values: df.iter().zip(&f0.values).map(|(d, v)| d + v).collect(), value_at_infinity: f0.value_at_infinity };
    let back = l_forward(&g, p.mu, 0, Sign::Plus, &l_forward(&g, p.mu, 0, Sign::Minus, &g1));
    for v in &back.values {
        assert!((v - c(cst, 0.0)).norm() < 1e-5);
    }
    assert!((back.value_at_infinity - c(cst, 0.0)).norm() < 1e-12);
    let cc = 2.0 * p.mu - 1.0;
    assert!(f0.values.iter().all(|v| (v - c(cst / (cc * cc), 0.0)).norm() < 1e-12));
    assert!(f.modes.iter().filter(|m| m.n != 0).all(|m| m.max_abs() == 0.0));
}

#[test]
fn factorization_identity() {
    let (p, g) = setup(1.5, 8);
    for n in -8i64..=8 {
        let m = ModeFunction::from_fn(n, &g, |b| c((1.0 + 0.3 * b.sin()) / (1.0 + b * b), 0.2 * (-b).exp()), c(0.0, 0.0));
        let (d, comp) = factorization_pair(&g, p.mu, &m);
        for i in 1..g.len() - 2 {
            assert!((d.values[i] - comp.values[i]).norm() < 1e-8, "n {n} beta {}", g.nodes[i]);
        }
    }
}

#[test]
fn tail_integral_mode_zero_is_closed_form() {
    assert!((tail_integral(0.5, 0, 16.0) - c(2.0, 0.0)).norm() < 1e-15);
}
