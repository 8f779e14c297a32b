use spiralflow::params_grids::*;
use spiralflow::spectral_field::*;

fn grid() -> BetaGrid {
    make_grid(&Params::new(1.5).unwrap(), 64).unwrap()
}

#[test]
fn cdelta_norm_examples() {
    let g = grid();
    let c = C64::new(0.3, -0.4);
    let m = ModeFunction::constant(0, g.len(), c);
    let m = ModeFunction { value_at_infinity: c, ..m };
    assert!((cdelta_norm(&m, &g, 0.5) - 0.5).abs() < 1e-15);
    assert_eq!(cdelta_norm(&ModeFunction::zeros(1, g.len()), &g, 0.5), 0.0);
    let m = ModeFunction::from_real_fn(0, &g, |b| (1.0 + b).powf(-0.5), 0.0);
    let v = cdelta_norm(&m, &g, 0.5);
    let direct = g.nodes.iter().map(|b| (1.0 + b).powf(-0.5)).fold(0.0f64, f64::max)
        + g.nodes.iter().map(|b| b.powf(0.5) * (1.0 + b).powf(-0.5)).fold(0.0f64, f64::max);
    assert!((1.0..=2.0).contains(&v));
    assert_eq!(v, direct);
}

#[test]
fn weighted_sum_norm_examples() {
    let g = grid();
    let ms = ModeSet::new(0, true);
    let mut s = SpectralField::zeros(&ms, g.len(), RoleTag::F);
    s.set_mode(ModeFunction { value_at_infinity: C64::new(1.0, 0.0), ..ModeFunction::constant(0, g.len(), C64::new(1.0, 0.0)) });
    assert!((weighted_sum_norm(&s, &g, 0.5, 0.3).norm_A_half_Cdelta - 1.0).abs() < 1e-15);

    let ms = ModeSet::new(1, true);
    let mut s = SpectralField::zeros(&ms, g.len(), RoleTag::F);
    for n in [-1, 1] {
        s.set_mode(ModeFunction { value_at_infinity: C64::new(1.0, 0.0), ..ModeFunction::constant(n, g.len(), C64::new(1.0, 0.0)) });
    }
    let r = weighted_sum_norm(&s, &g, 0.5, 0.3);
    assert!((r.norm_A_half_Cdelta - 2.0 * 2f64.powf(0.25)).abs() < 1e-14);
    assert!(r.norm_sup <= r.norm_A_half_Cdelta);
}

#[test]
fn collocation_examples() {
    let g = grid();
    let ms = ModeSet::new(4, true);
    let mut s = SpectralField::zeros(&ms, g.len(), RoleTag::F);
    s.set_mode(ModeFunction::constant(0, g.len(), C64::new(0.7, 0.0)));
    let c = to_collocation(&s, 96).unwrap();
    assert!(c.values.iter().take(g.len() * 96).all(|v| (v - 0.7).abs() < 1e-15));

    let mut s = SpectralField::zeros(&ms, g.len(), RoleTag::F);
    s.set_mode(ModeFunction::constant(1, g.len(), C64::new(0.5, 0.0)));
    s.set_mode(ModeFunction::constant(-1, g.len(), C64::new(0.5, 0.0)));
    let c = to_collocation(&s, 96).unwrap();
    for j in 0..96 {
        assert!((c.at(3, j) - c.phi(j).cos()).abs() < 1e-14);
    }
    assert!(to_collocation(&s, 6).is_err());
}

#[test]
fn analysis_of_constant_and_cosine() {
    let g = grid();
    let ms = ModeSet::new(4, true);
    let rows = g.len() + 1;
    let mut c = Collocation::zeros(rows, 96);
    c.values.iter_mut().for_each(|v| *v = 2.5);
    let s = from_collocation(&c, &ms);
    assert!((s.mode(0).values[5] - C64::new(2.5, 0.0)).norm() < 1e-14);
    assert!(s.mode(2).max_abs() < 1e-14);

    let mut c = Collocation::zeros(rows, 96);
    for i in 0..rows {
        for j in 0..96 {
            c.values[i * 96 + j] = (2.0 * c.phi(j)).cos();
        }
    }
    let s = from_collocation(&c, &ms);
    for n in [-2, 2] {
        assert!((s.mode(n).values[0] - C64::new(0.5, 0.0)).norm() < 1e-14);
    }
    assert!(s.mode(0).max_abs() < 1e-14 && s.mode(1).max_abs() < 1e-14);
}

#[test]
fn hermitian_enforcement() {
    let g = grid();
    let ms = ModeSet::new(2, true);
    let mut s = SpectralField::zeros(&ms, g.len(), RoleTag::F);
    s.set_mode(ModeFunction::constant(1, g.len(), C64::new(1.0, 2.0)));
    s.set_mode(ModeFunction::constant(0, g.len(), C64::new(1.0, 0.3)));
    assert!(s.hermitian_defect() > 0.0);
    s.enforce_hermitian();
    assert!(s.hermitian_defect() < 1e-15);
    assert_eq!(s.mode(0).values[0].im, 0.0);
}

#[test]
fn n_phi_default() {
    assert_eq!(default_n_phi(8), 96);
    assert_eq!(default_n_phi(40), 120);
}
