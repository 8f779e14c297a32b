//! Per-mode profiles on the β-grid, discrete norms, and the collocation transform in φ.

use crate::error::{Result, SpiralError};
use crate::params_grids::{BetaGrid, ModeSet};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

pub type C64 = Complex64;

#[derive(Debug, Clone, PartialEq)]
pub struct ModeFunction {
    pub n: i64,
    pub values: Vec<C64>,
    pub value_at_infinity: C64,
}

impl ModeFunction {
    pub fn zeros(n: i64, len: usize) -> ModeFunction {
        ModeFunction { n, values: vec![C64::new(0.0, 0.0); len], value_at_infinity: C64::new(0.0, 0.0) }
    }

    pub fn constant(n: i64, len: usize, c: C64) -> ModeFunction {
        ModeFunction { n, values: vec![c; len], value_at_infinity: c }
    }

    pub fn from_fn<F: Fn(f64) -> C64>(n: i64, grid: &BetaGrid, f: F, at_infinity: C64) -> ModeFunction {
        ModeFunction { n, values: grid.nodes.iter().map(|&b| f(b)).collect(), value_at_infinity: at_infinity }
    }

    pub fn from_real_fn<F: Fn(f64) -> f64>(n: i64, grid: &BetaGrid, f: F, at_infinity: f64) -> ModeFunction {
        ModeFunction::from_fn(n, grid, |b| C64::new(f(b), 0.0), C64::new(at_infinity, 0.0))
    }

    /// Nodal values followed by the value at infinity.
    pub fn to_vec(&self) -> Vec<C64> {
        let mut v = self.values.clone();
        v.push(self.value_at_infinity);
        v
    }

    pub fn from_vec(n: i64, v: &[C64]) -> ModeFunction {
        let m = v.len() - 1;
        ModeFunction { n, values: v[..m].to_vec(), value_at_infinity: v[m] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|z| z.re.is_finite() && z.im.is_finite())
            && self.value_at_infinity.re.is_finite()
            && self.value_at_infinity.im.is_finite()
    }

    /// Value at β = 0, taken from the first node.
    pub fn value_at_zero(&self) -> C64 {
        self.values[0]
    }

    pub fn conj(&self) -> ModeFunction {
        ModeFunction {
            n: -self.n,
            values: self.values.iter().map(|z| z.conj()).collect(),
            value_at_infinity: self.value_at_infinity.conj(),
        }
    }

    pub fn scale(&self, c: C64) -> ModeFunction {
        ModeFunction { n: self.n, values: self.values.iter().map(|z| z * c).collect(), value_at_infinity: self.value_at_infinity * c }
    }

    pub fn axpy(&mut self, c: C64, other: &ModeFunction) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
        self.value_at_infinity += c * other.value_at_infinity;
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|z| z.norm()).fold(self.value_at_infinity.norm(), f64::max)
    }

    /// Panel-barycentric evaluation inside the grid; constant below the first node and
    /// the slope-matched tail model f∞ + c₁(B/β)^δ + c₂(B/β)^{δ+1} beyond the last node.
    pub fn eval(&self, grid: &BetaGrid, beta: f64, delta: f64) -> C64 {
        if beta.is_infinite() {
            return self.value_at_infinity;
        }
        if beta > grid.last() {
            let m = self.len();
            let last = self.values[m - 1];
            let slope: C64 = (0..m).map(|j| self.values[j] * grid.dbeta_entry(m - 1, j)).sum();
            let f = last - self.value_at_infinity;
            let c2 = -(slope + f * delta);
            let c1 = f - c2;
            let r = grid.last() / beta;
            return self.value_at_infinity + c1 * r.powf(delta) + c2 * r.powf(delta + 1.0);
        }
        let (start, w) = grid.interp_weights(beta);
        w.iter().enumerate().map(|(k, &wk)| self.values[start + k] * wk).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RoleTag {
    F,
    G,
    H,
    U,
    V,
    Generic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    pub mode_set: ModeSet,
    pub modes: Vec<ModeFunction>,
    pub role_tag: RoleTag,
}

impl SpectralField {
    pub fn zeros(mode_set: &ModeSet, len: usize, role_tag: RoleTag) -> SpectralField {
        SpectralField {
            mode_set: mode_set.clone(),
            modes: mode_set.modes.iter().map(|&n| ModeFunction::zeros(n, len)).collect(),
            role_tag,
        }
    }

    pub fn n_max(&self) -> usize {
        self.mode_set.n_max()
    }

    pub fn grid_len(&self) -> usize {
        self.modes[0].len()
    }

    pub fn mode(&self, n: i64) -> &ModeFunction {
        &self.modes[self.mode_set.index(n).expect("mode outside the retained set")]
    }

    pub fn mode_mut(&mut self, n: i64) -> &mut ModeFunction {
        let i = self.mode_set.index(n).expect("mode outside the retained set");
        &mut self.modes[i]
    }

    pub fn set_mode(&mut self, m: ModeFunction) {
        let n = m.n;
        *self.mode_mut(n) = m;
    }

    pub fn is_finite(&self) -> bool {
        self.modes.iter().all(|m| m.is_finite())
    }

    pub fn scale(&self, c: f64) -> SpectralField {
        let mut out = self.clone();
        for m in out.modes.iter_mut() {
            *m = m.scale(C64::new(c, 0.0));
        }
        out
    }

    pub fn add(&self, other: &SpectralField) -> SpectralField {
        let mut out = self.clone();
        for (a, b) in out.modes.iter_mut().zip(&other.modes) {
            a.axpy(C64::new(1.0, 0.0), b);
        }
        out
    }

    pub fn sub(&self, other: &SpectralField) -> SpectralField {
        let mut out = self.clone();
        for (a, b) in out.modes.iter_mut().zip(&other.modes) {
            a.axpy(C64::new(-1.0, 0.0), b);
        }
        out
    }

    /// Largest deviation from f̂₋ₙ = conj(f̂ₙ).
    pub fn hermitian_defect(&self) -> f64 {
        let mut d: f64 = 0.0;
        for &n in &self.mode_set.modes {
            let a = self.mode(n);
            let b = self.mode(-n);
            for (x, y) in a.values.iter().zip(&b.values) {
                d = d.max((x - y.conj()).norm());
            }
            d = d.max((a.value_at_infinity - b.value_at_infinity.conj()).norm());
        }
        d
    }

    pub fn enforce_hermitian(&mut self) {
        for &n in &self.mode_set.modes.clone() {
            if n < 0 {
                continue;
            }
            let a = self.mode(n).clone();
            let b = self.mode(-n).clone();
            let mut avg = a.clone();
            for (k, v) in avg.values.iter_mut().enumerate() {
                *v = 0.5 * (a.values[k] + b.values[k].conj());
            }
            avg.value_at_infinity = 0.5 * (a.value_at_infinity + b.value_at_infinity.conj());
            if n == 0 {
                for v in avg.values.iter_mut() {
                    v.im = 0.0;
                }
                avg.value_at_infinity.im = 0.0;
                self.set_mode(avg);
            } else {
                self.set_mode(avg.conj());
                self.set_mode(avg);
            }
        }
    }

    /// Truncate or zero-extend to another mode set.
    pub fn restrict(&self, mode_set: &ModeSet) -> SpectralField {
        let mut out = SpectralField::zeros(mode_set, self.grid_len(), self.role_tag);
        for &n in &mode_set.modes {
            if self.mode_set.index(n).is_some() {
                out.set_mode(self.mode(n).clone());
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct NormReport {
    pub norm_A_half_Cdelta: f64,
    pub norm_sup: f64,
    pub per_mode_Cdelta: Vec<(i64, f64)>,
}

/// Discrete 𝒞^δ norm: sup|f| + sup β^δ|f(β) − f(∞)| over the nodes.
pub fn cdelta_norm(m: &ModeFunction, grid: &BetaGrid, delta: f64) -> f64 {
    let mut sup = m.value_at_infinity.norm();
    let mut dec: f64 = 0.0;
    for (z, &b) in m.values.iter().zip(&grid.nodes) {
        sup = sup.max(z.norm());
        dec = dec.max(b.powf(delta) * (z - m.value_at_infinity).norm());
    }
    sup + dec
}

pub fn bracket(n: i64) -> f64 {
    (1.0 + (n * n) as f64).sqrt()
}

pub fn weighted_sum_norm(s: &SpectralField, grid: &BetaGrid, alpha: f64, delta: f64) -> NormReport {
    let mut total = 0.0;
    let mut sup = 0.0;
    let mut per = Vec::with_capacity(s.modes.len());
    for m in &s.modes {
        let c = cdelta_norm(m, grid, delta);
        per.push((m.n, c));
        total += bracket(m.n).powf(alpha) * c;
        sup += m.max_abs();
    }
    NormReport { norm_A_half_Cdelta: total, norm_sup: sup, per_mode_Cdelta: per }
}

/// Real samples on (β_i, φ_j); row i = M is the point at infinity.
#[derive(Debug, Clone, PartialEq)]
pub struct Collocation {
    pub n_phi: usize,
    pub rows: usize,
    pub values: Vec<f64>,
}

impl Collocation {
    pub fn zeros(rows: usize, n_phi: usize) -> Collocation {
        Collocation { n_phi, rows, values: vec![0.0; rows * n_phi] }
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_phi + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_phi..(i + 1) * self.n_phi]
    }

    pub fn phi(&self, j: usize) -> f64 {
        2.0 * std::f64::consts::PI * j as f64 / self.n_phi as f64
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> Collocation {
        Collocation { n_phi: self.n_phi, rows: self.rows, values: self.values.iter().map(|&v| f(v)).collect() }
    }
}

pub fn default_n_phi(n_max: usize) -> usize {
    (3 * n_max).max(96)
}

pub fn to_collocation(s: &SpectralField, n_phi: usize) -> Result<Collocation> {
    let n_max = s.n_max();
    if n_phi < 3 * n_max || n_phi == 0 {
        return Err(SpiralError::Config(format!("n_phi = {n_phi} is below 3·n_max = {}", 3 * n_max)));
    }
    let m = s.grid_len();
    let rows = m + 1;
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_inverse(n_phi);
    let mut out = Collocation::zeros(rows, n_phi);
    let mut buf = vec![C64::new(0.0, 0.0); n_phi];
    for i in 0..rows {
        buf.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
        for mf in &s.modes {
            let k = mf.n.rem_euclid(n_phi as i64) as usize;
            buf[k] += if i < m { mf.values[i] } else { mf.value_at_infinity };
        }
        fft.process(&mut buf);
        for j in 0..n_phi {
            out.values[i * n_phi + j] = buf[j].re;
        }
    }
    Ok(out)
}

pub fn from_collocation(c: &Collocation, mode_set: &ModeSet) -> SpectralField {
    let m = c.rows - 1;
    let mut out = SpectralField::zeros(mode_set, m, RoleTag::Generic);
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(c.n_phi);
    let mut buf = vec![C64::new(0.0, 0.0); c.n_phi];
    let inv = 1.0 / c.n_phi as f64;
    for i in 0..c.rows {
        for j in 0..c.n_phi {
            buf[j] = C64::new(c.at(i, j), 0.0);
        }
        fft.process(&mut buf);
        for mf in out.modes.iter_mut() {
            let k = mf.n.rem_euclid(c.n_phi as i64) as usize;
            let v = buf[k] * inv;
            if i < m {
                mf.values[i] = v;
            } else {
                mf.value_at_infinity = v;
            }
        }
    }
    out.enforce_hermitian();
    out
}
