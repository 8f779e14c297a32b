//! D_β, (D_β+1)⁻¹, the mode inverses L⁻¹ₙ,±, the compact operators 𝒦ₙ, and ℒ⁻¹.

use crate::coefficients::{a_inf, a_n, chi_n, dbeta_chi_n, LogW};
use crate::error::{Result, SpiralError};
use crate::params_grids::{BetaGrid, Params};
use crate::quadrature::{filon_weights, gauss_laguerre, gauss_legendre, Rule};
use crate::spectral_field::{ModeFunction, RoleTag, SpectralField, C64};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

pub type CMat = DMatrix<C64>;

const TAIL_TERMS: usize = 6;
const TAIL_FAR_CUTOFF: f64 = 1e10;

fn czero() -> C64 {
    C64::new(0.0, 0.0)
}

fn cis(t: f64) -> C64 {
    C64::from_polar(1.0, t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[allow(non_camel_case_types)]
pub enum OperatorKind {
    Linv_plus,
    Linv_minus,
    Dbeta_plus_one_inv,
    K1,
    K2,
    K3,
    K_total,
    id_plus_K_factorized,
}

#[derive(Debug, Clone)]
pub struct ModeOperator {
    pub n: i64,
    pub matrix: CMat,
    pub kind: OperatorKind,
}

impl ModeOperator {
    pub fn apply(&self, m: &ModeFunction) -> ModeFunction {
        let v = nalgebra::DVector::from_vec(m.to_vec());
        let out = &self.matrix * v;
        ModeFunction::from_vec(m.n, out.as_slice())
    }

    /// Induced sup-norm (largest absolute row sum).
    pub fn sup_norm(&self) -> f64 {
        inf_norm(&self.matrix)
    }
}

pub fn inf_norm(a: &CMat) -> f64 {
    (0..a.nrows()).map(|i| a.row(i).iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max)
}

pub fn one_norm(a: &CMat) -> f64 {
    (0..a.ncols()).map(|j| a.column(j).iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max)
}

/// Spectral 2-norm estimate by power iteration on AᴴA.
pub fn two_norm_estimate(a: &CMat) -> f64 {
    let n = a.ncols();
    let mut v = nalgebra::DVector::from_fn(n, |i, _| C64::new(1.0 + 0.37 * ((i * 7919) % 101) as f64 / 101.0, 0.0));
    let mut est = 0.0;
    for _ in 0..40 {
        let nv = v.norm();
        if nv == 0.0 {
            return 0.0;
        }
        v /= C64::new(nv, 0.0);
        let w = a * &v;
        let z = a.adjoint() * &w;
        est = w.norm();
        v = z;
    }
    est
}

/// Sparse-row view of D_β: row i is nonzero on columns lo[i]..=hi[i].
#[derive(Debug, Clone)]
pub struct DbetaRows {
    pub m: usize,
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
    pub d: Vec<f64>,
}

impl DbetaRows {
    pub fn new(grid: &BetaGrid) -> DbetaRows {
        let m = grid.len();
        let d = grid.dbeta().to_vec();
        let mut lo = vec![0; m];
        let mut hi = vec![0; m];
        for i in 0..m {
            let row = &d[i * m..(i + 1) * m];
            lo[i] = row.iter().position(|&v| v != 0.0).unwrap_or(i);
            hi[i] = row.iter().rposition(|&v| v != 0.0).unwrap_or(i);
        }
        DbetaRows { m, lo, hi, d }
    }

    pub fn apply(&self, f: &[C64]) -> Vec<C64> {
        (0..self.m)
            .map(|i| (self.lo[i]..=self.hi[i]).map(|j| f[j] * self.d[i * self.m + j]).sum())
            .collect()
    }

    pub fn apply_real(&self, f: &[f64]) -> Vec<f64> {
        (0..self.m)
            .map(|i| (self.lo[i]..=self.hi[i]).map(|j| f[j] * self.d[i * self.m + j]).sum())
            .collect()
    }

    /// D·X on the nodal rows of an (M+1)-row matrix; the infinity row of the result is zero.
    pub fn apply_matrix(&self, x: &CMat) -> CMat {
        let cols = x.ncols();
        let mut out = CMat::zeros(self.m + 1, cols);
        for c in 0..cols {
            let col = x.column(c);
            for i in 0..self.m {
                let mut acc = czero();
                for j in self.lo[i]..=self.hi[i] {
                    acc += col[j] * self.d[i * self.m + j];
                }
                out[(i, c)] = acc;
            }
        }
        out
    }
}

pub fn dbeta_matrix(grid: &BetaGrid) -> DMatrix<f64> {
    let m = grid.len();
    DMatrix::from_row_slice(m, m, grid.dbeta())
}

/// D_β applied to a mode profile; the value at infinity is mapped to 0.
pub fn apply_dbeta(grid: &BetaGrid, m: &ModeFunction) -> ModeFunction {
    let rows = DbetaRows::new(grid);
    ModeFunction { n: m.n, values: rows.apply(&m.values), value_at_infinity: czero() }
}

fn segment_gauss(lo: f64, hi: f64, q: usize) -> Vec<(f64, f64)> {
    let r: &Rule = gauss_legendre(q);
    let h = 0.5 * (hi - lo);
    r.nodes.iter().zip(&r.weights).map(|(t, w)| (lo + h * (t + 1.0), w * h)).collect()
}

pub fn jinv_matrix(grid: &BetaGrid) -> CMat {
    let m = grid.len();
    let b = &grid.nodes;
    let mut rows = vec![vec![0.0f64; m + 1]; m + 1];
    rows[0][0] = 1.0;
    for i in 1..m {
        let ratio = b[i - 1] / b[i];
        let (prev, cur) = rows.split_at_mut(i);
        for (c, p) in cur[0].iter_mut().zip(&prev[i - 1]) {
            *c = ratio * p;
        }
        let dx = grid.x[i] - grid.x[i - 1];
        let q = 12 + (dx * 4.0) as usize;
        for (x, w) in segment_gauss(grid.x[i - 1], grid.x[i], q) {
            let bq = x.exp();
            let (start, wts) = grid.interp_weights(bq);
            for (k, wk) in wts.iter().enumerate() {
                rows[i][start + k] += w * bq / b[i] * wk;
            }
        }
    }
    rows[m][m] = 1.0;
    CMat::from_fn(m + 1, m + 1, |i, j| C64::new(rows[i][j], 0.0))
}

pub fn dbeta_plus_one_inv(grid: &BetaGrid, m: &ModeFunction) -> ModeFunction {
    ModeOperator { n: m.n, matrix: jinv_matrix(grid), kind: OperatorKind::Dbeta_plus_one_inv }.apply(m)
}

/// ∫₁^∞ t^{−q−1} e^{−inB(t−1)} dt.
pub fn tail_integral(q: f64, n: i64, b: f64) -> C64 {
    if n == 0 {
        return C64::new(1.0 / q, 0.0);
    }
    static LAG: OnceLock<Rule> = OnceLock::new();
    let lag = LAG.get_or_init(|| gauss_laguerre(60));
    let sg = n.signum() as f64;
    let nb = n.unsigned_abs() as f64 * b;
    let mut acc = czero();
    for (v, w) in lag.nodes.iter().zip(&lag.weights) {
        let z = C64::new(1.0, -sg * v / nb);
        acc += w * z.powf(-q - 1.0);
    }
    acc * C64::new(0.0, -sg / nb)
}

/// Analytic input profile for operator checks.
pub struct Profile {
    pub f: Box<dyn Fn(f64) -> C64 + Send + Sync>,
    pub at_infinity: C64,
}

impl Profile {
    pub fn real<F: Fn(f64) -> f64 + Send + Sync + 'static>(f: F, at_infinity: f64) -> Profile {
        Profile { f: Box::new(move |b| C64::new(f(b), 0.0)), at_infinity: C64::new(at_infinity, 0.0) }
    }

    pub fn sample(&self, n: i64, grid: &BetaGrid) -> ModeFunction {
        ModeFunction { n, values: grid.nodes.iter().map(|&b| (self.f)(b)).collect(), value_at_infinity: self.at_infinity }
    }
}

/// The four-function smoke family {1, 1/(1+β), e^{−β}, (1+β)^{−δ}}.
pub fn smoke_family(delta: f64) -> Vec<(&'static str, Profile)> {
    vec![
        ("one", Profile::real(|_| 1.0, 1.0)),
        ("inv_one_plus", Profile::real(|b| 1.0 / (1.0 + b), 0.0)),
        ("exp_decay", Profile::real(|b| (-b).exp(), 0.0)),
        ("algebraic_decay", Profile::real(move |b| (1.0 + b).powf(-delta), 0.0)),
    ]
}

/// Kernel data for one branch of the explicit inverse.
struct Branch<'a> {
    grid: &'a BetaGrid,
    n: i64,
    sigma: f64,
    c: f64,
    up: bool,
    lw: Option<LogW>,
    lw_nodes: Vec<f64>,
    rate: f64,
    qe: f64,
    delta: f64,
    mu: f64,
}

impl<'a> Branch<'a> {
    fn new(grid: &'a BetaGrid, params: &Params, n: i64, sign: Sign) -> Result<Branch<'a>> {
        let mu = params.mu;
        let c = 2.0 * mu - 1.0;
        let an = n.unsigned_abs() as f64;
        let (sigma, up) = if n == 0 {
            (0.0, true)
        } else {
            match sign {
                Sign::Plus => (1.0, true),
                Sign::Minus => (-1.0, an < 2.0),
            }
        };
        let lw = if n == 0 { None } else { Some(LogW::new(n, mu)?) };
        let lw_nodes = grid.nodes.iter().map(|&b| lw.as_ref().map_or(0.0, |l| l.eval(b))).collect();
        let rate = c + an * mu + 1.0;
        let qe = c + sigma * a_inf(n, mu);
        Ok(Branch { grid, n, sigma, c, up, lw, lw_nodes, rate, qe, delta: params.delta, mu })
    }

    fn lw(&self, b: f64) -> f64 {
        self.lw.as_ref().map_or(0.0, |l| l.eval(b))
    }

    fn log_factor(&self, i: usize, b: f64) -> f64 {
        self.c * (self.grid.x[i] - b.ln()) + self.sigma * (self.lw_nodes[i] - self.lw(b))
    }

    fn rho(&self, i: usize, k: usize) -> C64 {
        let g = self.grid;
        let mag = (self.c * (g.x[i] - g.x[k]) + self.sigma * (self.lw_nodes[i] - self.lw_nodes[k])).exp();
        cis(self.n as f64 * (g.nodes[i] - g.nodes[k])) * mag
    }

    /// Points and weights with ∫ over [β_j, β_{j+1}] of k_i(b) f(b) db ≈ Σ w f(b).
    fn segment_rule(&self, j: usize, i: usize) -> Vec<(f64, C64)> {
        let g = self.grid;
        let (b0, b1) = (g.nodes[j], g.nodes[j + 1]);
        let (x0, x1) = (g.x[j], g.x[j + 1]);
        let nf = self.n as f64;
        let an = nf.abs();
        let mut out = Vec::new();
        if self.n != 0 && b0 >= 2.0 - 1e-12 && an * (b1 - b0) > 2.0 {
            let q = 20;
            let h = 0.5 * (b1 - b0);
            let bm = 0.5 * (b0 + b1);
            let fw = filon_weights(q, -nf * h);
            let rule = gauss_legendre(q);
            let phase = cis(nf * (g.nodes[i] - bm));
            for (t, w) in rule.nodes.iter().zip(fw) {
                let b = bm + h * t;
                out.push((b, w * phase * (h * self.log_factor(i, b).exp() / b)));
            }
            return out;
        }
        let dx = x1 - x0;
        let nsub = ((self.rate * dx) / 16.0).ceil().max(1.0) as usize;
        let hs = dx / nsub as f64;
        for s in 0..nsub {
            let lo = x0 + hs * s as f64;
            let hi = if s + 1 == nsub { x1 } else { lo + hs };
            let dbs = hi.exp() - lo.exp();
            let q = (8.0 + (self.rate * hs + 1.5 * an * dbs).ceil()).min(80.0) as usize;
            for (x, w) in segment_gauss(lo, hi, q) {
                let b = x.exp();
                out.push((b, cis(nf * (g.nodes[i] - b)) * (w * self.log_factor(i, b).exp())));
            }
        }
        out
    }

    /// Segment functional on nodal data as (first node, weights over the panel).
    fn segment_row(&self, j: usize, i: usize) -> (usize, Vec<C64>) {
        let p = self.grid.panel_of_interval(j);
        let mut row = vec![czero(); p.intervals + 1];
        for (b, w) in self.segment_rule(j, i) {
            let (start, wts) = self.grid.interp_weights(b);
            for (k, wk) in wts.iter().enumerate() {
                row[start + k - p.start] += w * *wk;
            }
        }
        (p.start, row)
    }

    fn segment_profile(&self, j: usize, i: usize, prof: &Profile) -> C64 {
        self.segment_rule(j, i).into_iter().map(|(b, w)| w * (prof.f)(b)).sum()
    }

    fn down_start_rule(&self) -> Vec<(f64, f64)> {
        let p = self.n.unsigned_abs() as f64 * self.mu - 2.0 * self.mu;
        let b0 = self.grid.nodes[0];
        gauss_legendre(30)
            .nodes
            .iter()
            .zip(&gauss_legendre(30).weights)
            .map(|(t, w)| {
                let u = 0.5 * (t + 1.0);
                (u.powf(1.0 / (p + 1.0)), 0.5 * w / (p + 1.0) * b0)
            })
            .collect()
    }

    fn down_start(&self) -> C64 {
        let b0 = self.grid.nodes[0];
        let nf = self.n as f64;
        -self.down_start_rule().iter().map(|&(s, w)| cis(nf * b0 * (1.0 - s)) * (w / b0)).sum::<C64>()
    }

    fn down_start_profile(&self, prof: &Profile) -> C64 {
        let b0 = self.grid.nodes[0];
        let nf = self.n as f64;
        -self.down_start_rule().iter().map(|&(s, w)| cis(nf * b0 * (1.0 - s)) * (w / b0) * (prof.f)(b0 * s)).sum::<C64>()
    }

    /// Tail beyond B from f(∞) + Σₖ cₖ(B/b)^{pₖ}, pₖ ∈ {δ, 1, 2, …}, cₖ least-squares fitted on the last panel.
    fn tail_row(&self) -> Vec<C64> {
        let m = self.grid.len();
        let bb = self.grid.last();
        let panel = self.grid.panels.last().expect("grid has panels");
        let idx: Vec<usize> = (panel.start..m).collect();
        let powers: Vec<f64> = std::iter::once(self.delta)
            .chain((1..).map(|j| j as f64).filter(|p| (p - self.delta).abs() > 0.05))
            .take(TAIL_TERMS)
            .collect();
        let a = DMatrix::from_fn(idx.len(), powers.len(), |i, l| (bb / self.grid.nodes[idx[i]]).powf(powers[l]));
        let pinv = a.pseudo_inverse(1e-14).expect("tail fit");
        let mut row = vec![czero(); m + 1];
        for (l, &p) in powers.iter().enumerate() {
            let t = tail_integral(self.qe + p, self.n, bb);
            for (i, &node) in idx.iter().enumerate() {
                let w = t * pinv[(l, i)];
                row[node] += w;
                row[m] -= w;
            }
        }
        row[m] += tail_integral(self.qe, self.n, bb);
        row
    }

    fn tail_profile(&self, prof: &Profile) -> C64 {
        let bb = self.grid.last();
        let m = self.grid.len();
        let finf = prof.at_infinity;
        let mut acc = tail_integral(self.qe, self.n, bb) * finf;
        let nf = self.n as f64;
        let mut lo = bb;
        while lo < TAIL_FAR_CUTOFF {
            let hi = lo * 1.5;
            let h = 0.5 * (hi - lo);
            let bm = 0.5 * (hi + lo);
            let q = 24;
            let rule = gauss_legendre(q);
            let weights: Vec<C64> = if self.n == 0 {
                rule.weights.iter().map(|&w| C64::new(w, 0.0)).collect()
            } else {
                filon_weights(q, -nf * h)
            };
            let phase = cis(nf * (bb - bm));
            for (t, w) in rule.nodes.iter().zip(weights) {
                let b = bm + h * t;
                let k = (self.qe * (bb / b).ln()).exp() / b;
                acc += w * phase * (h * k) * ((prof.f)(b) - finf);
            }
            lo = hi;
        }
        let _ = m;
        acc
    }
}

fn branch_infinity_value(n: i64, c: f64) -> f64 {
    if n == 0 {
        1.0 / c
    } else {
        0.0
    }
}

/// Matrix of L⁻¹ₙ,± on nodal values plus the infinity slot.
pub fn linv_matrix(grid: &BetaGrid, params: &Params, n: i64, sign: Sign) -> Result<ModeOperator> {
    let br = Branch::new(grid, params, n, sign)?;
    let m = grid.len();
    let mut rows = vec![vec![czero(); m + 1]; m + 1];
    if br.up {
        rows[m - 1] = br.tail_row();
        for i in (0..m - 1).rev() {
            let rho = br.rho(i, i + 1);
            let (prev, cur) = rows.split_at_mut(i + 1);
            for (c, p) in prev[i].iter_mut().zip(&cur[0]) {
                *c = rho * p;
            }
            let (start, seg) = br.segment_row(i, i);
            for (k, w) in seg.into_iter().enumerate() {
                prev[i][start + k] += w;
            }
        }
    } else {
        rows[0][0] = br.down_start();
        for i in 1..m {
            let rho = br.rho(i, i - 1);
            let (prev, cur) = rows.split_at_mut(i);
            for (c, p) in cur[0].iter_mut().zip(&prev[i - 1]) {
                *c = rho * p;
            }
            let (start, seg) = br.segment_row(i - 1, i);
            for (k, w) in seg.into_iter().enumerate() {
                cur[0][start + k] -= w;
            }
        }
    }
    rows[m][m] = C64::new(branch_infinity_value(n, br.c), 0.0);
    let kind = match sign {
        Sign::Plus => OperatorKind::Linv_plus,
        Sign::Minus => OperatorKind::Linv_minus,
    };
    Ok(ModeOperator { n, matrix: CMat::from_fn(m + 1, m + 1, |i, j| rows[i][j]), kind })
}

pub fn l_inv(grid: &BetaGrid, params: &Params, n: i64, sign: Sign, m: &ModeFunction) -> Result<ModeFunction> {
    if !m.is_finite() {
        return Err(SpiralError::Config("non-finite input to L_inv".into()));
    }
    Ok(linv_matrix(grid, params, n, sign)?.apply(m))
}

/// L⁻¹ₙ,± applied to an analytic profile, integrating the closure directly.
pub fn l_inv_profile(grid: &BetaGrid, params: &Params, n: i64, sign: Sign, prof: &Profile) -> Result<ModeFunction> {
    let br = Branch::new(grid, params, n, sign)?;
    let m = grid.len();
    let mut out = vec![czero(); m];
    if br.up {
        out[m - 1] = br.tail_profile(prof);
        for i in (0..m - 1).rev() {
            out[i] = br.rho(i, i + 1) * out[i + 1] + br.segment_profile(i, i, prof);
        }
    } else {
        out[0] = br.down_start_profile(prof);
        for i in 1..m {
            out[i] = br.rho(i, i - 1) * out[i - 1] - br.segment_profile(i - 1, i, prof);
        }
    }
    let inf = prof.at_infinity * branch_infinity_value(n, br.c);
    Ok(ModeFunction { n, values: out, value_at_infinity: inf })
}

/// Forward Lₙ,± g = −D_βg + (inβ + 2μ−1 ± aₙ)g.
pub fn l_forward(grid: &BetaGrid, mu: f64, n: i64, sign: Sign, g: &ModeFunction) -> ModeFunction {
    let c = 2.0 * mu - 1.0;
    let s = sign.value();
    let dg = DbetaRows::new(grid).apply(&g.values);
    let nf = n as f64;
    let values = (0..g.len())
        .map(|i| {
            let b = grid.nodes[i];
            -dg[i] + g.values[i] * C64::new(c + s * a_n(n, b, mu), nf * b)
        })
        .collect();
    ModeFunction { n, values, value_at_infinity: g.value_at_infinity * (c + s * a_inf(n, mu)) }
}

/// D_ρ = −D_β + inβ on one mode.
pub fn drho(rows: &DbetaRows, grid: &BetaGrid, g: &ModeFunction) -> ModeFunction {
    let dg = rows.apply(&g.values);
    let nf = g.n as f64;
    let values = (0..g.len()).map(|i| -dg[i] + g.values[i] * C64::new(0.0, nf * grid.nodes[i])).collect();
    ModeFunction { n: g.n, values, value_at_infinity: czero() }
}

fn lin(a: &ModeFunction, ca: f64, b: &ModeFunction, cb: f64) -> ModeFunction {
    let values = a.values.iter().zip(&b.values).map(|(x, y)| x * ca + y * cb).collect();
    ModeFunction { n: a.n, values, value_at_infinity: a.value_at_infinity * ca + b.value_at_infinity * cb }
}

/// Discrete linearized operator on one mode:
/// ℒf = (D_ρ+2μ−1)²g − n²μ²g + (2μ−1)inβf, g = (D_β+1)f.
pub fn script_l_mode(rows: &DbetaRows, grid: &BetaGrid, mu: f64, f: &ModeFunction) -> ModeFunction {
    let c = 2.0 * mu - 1.0;
    let n = f.n;
    let nf = n as f64;
    let df = rows.apply(&f.values);
    let g = ModeFunction {
        n,
        values: df.iter().zip(&f.values).map(|(d, v)| d + v).collect(),
        value_at_infinity: f.value_at_infinity,
    };
    let t1 = lin(&drho(rows, grid, &g), 1.0, &g, c);
    let t2 = lin(&drho(rows, grid, &t1), 1.0, &t1, c);
    let nn = nf * nf * mu * mu;
    let values = (0..f.len())
        .map(|i| t2.values[i] - g.values[i] * nn + f.values[i] * C64::new(0.0, c * nf * grid.nodes[i]))
        .collect();
    let inf = if n == 0 { c * c * f.value_at_infinity } else { czero() };
    ModeFunction { n, values, value_at_infinity: inf }
}

pub fn script_l(grid: &BetaGrid, mu: f64, f: &SpectralField) -> SpectralField {
    let rows = DbetaRows::new(grid);
    let mut out = f.clone();
    out.role_tag = RoleTag::Generic;
    for m in out.modes.iter_mut() {
        *m = script_l_mode(&rows, grid, mu, m);
    }
    out
}

/// Direct form (D_ρ+2μ−1)²g − n²μ²g + (2μ−1)χₙg and the composition Lₙ,₊(Lₙ,₋g).
pub fn factorization_pair(grid: &BetaGrid, mu: f64, g: &ModeFunction) -> (ModeFunction, ModeFunction) {
    let c = 2.0 * mu - 1.0;
    let rows = DbetaRows::new(grid);
    let n = g.n;
    let nf = n as f64;
    let t1 = lin(&drho(&rows, grid, g), 1.0, g, c);
    let t2 = lin(&drho(&rows, grid, &t1), 1.0, &t1, c);
    let values = (0..g.len())
        .map(|i| t2.values[i] + g.values[i] * (-nf * nf * mu * mu + c * chi_n(n, grid.nodes[i], mu)))
        .collect();
    let direct = ModeFunction { n, values, value_at_infinity: czero() };
    let composed = l_forward(grid, mu, n, Sign::Plus, &l_forward(grid, mu, n, Sign::Minus, g));
    (direct, composed)
}

#[derive(Debug, Clone)]
pub struct KMatrices {
    pub k1: ModeOperator,
    pub k2: ModeOperator,
    pub k3: ModeOperator,
    pub k_total: ModeOperator,
}

fn diag_rows(d: &[C64], x: &CMat) -> CMat {
    let mut out = x.clone();
    for (i, &s) in d.iter().enumerate() {
        let mut r = out.row_mut(i);
        r *= s;
    }
    out
}

fn assemble_k(grid: &BetaGrid, params: &Params, n: i64, lplus: &CMat, lminus: &CMat, jinv: &CMat) -> KMatrices {
    let mu = params.mu;
    let c = 2.0 * mu - 1.0;
    let m = grid.len();
    let nf = n as f64;
    let p = jinv * lminus;
    let mut chi = vec![czero(); m + 1];
    let mut dchi = vec![czero(); m + 1];
    let mut k3d = vec![czero(); m + 1];
    for i in 0..m {
        let b = grid.nodes[i];
        let x = chi_n(n, b, mu);
        chi[i] = C64::new(x, 0.0);
        dchi[i] = C64::new(dbeta_chi_n(n, b, mu), 0.0);
        k3d[i] = C64::new(0.0, (1.0 - x) * nf * b);
    }
    chi[m] = C64::new(1.0, 0.0);
    let k1 = diag_rows(&chi, &p);
    let k2 = diag_rows(&dchi, &p);
    let k3 = diag_rows(&k3d, &p);
    let rows = DbetaRows::new(grid);
    let mut inner = rows.apply_matrix(&k1);
    inner.neg_mut();
    let mut ib = vec![czero(); m + 1];
    for i in 0..m {
        ib[i] = C64::new(-1.0, nf * grid.nodes[i]);
    }
    inner += diag_rows(&ib, &k1);
    inner += &k2;
    inner += &k3;
    let mut kt = lplus * inner;
    kt *= C64::new(c, 0.0);
    KMatrices {
        k1: ModeOperator { n, matrix: k1, kind: OperatorKind::K1 },
        k2: ModeOperator { n, matrix: k2, kind: OperatorKind::K2 },
        k3: ModeOperator { n, matrix: k3, kind: OperatorKind::K3 },
        k_total: ModeOperator { n, matrix: kt, kind: OperatorKind::K_total },
    }
}

pub fn k_n_matrices(grid: &BetaGrid, params: &Params, n: i64) -> Result<KMatrices> {
    if n == 0 {
        return Err(SpiralError::Config("K_n is not defined for n = 0".into()));
    }
    let lp = linv_matrix(grid, params, n, Sign::Plus)?;
    let lm = linv_matrix(grid, params, n, Sign::Minus)?;
    let j = jinv_matrix(grid);
    Ok(assemble_k(grid, params, n, &lp.matrix, &lm.matrix, &j))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSolveReport {
    pub n: i64,
    pub residual_norm: f64,
    pub k_norm_estimate: f64,
    pub condition_estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSolveReport {
    pub modes: Vec<ModeSolveReport>,
}

/// Assembled operators for one nonnegative mode index.
#[derive(Debug, Clone)]
pub struct ModeSolver {
    pub n: i64,
    pub lplus: CMat,
    pub lminus: CMat,
    pub jinv: CMat,
    pub k_total: Option<CMat>,
    lu: Option<nalgebra::linalg::LU<C64, nalgebra::Dyn, nalgebra::Dyn>>,
    pub k_norm_estimate: f64,
    pub condition_estimate: f64,
}

fn cvec(v: &[C64]) -> nalgebra::DVector<C64> {
    nalgebra::DVector::from_column_slice(v)
}

impl ModeSolver {
    pub fn new(grid: &BetaGrid, params: &Params, n: i64, jinv: &CMat) -> Result<ModeSolver> {
        let lp = linv_matrix(grid, params, n, Sign::Plus)?.matrix;
        if n == 0 {
            return Ok(ModeSolver {
                n,
                lminus: lp.clone(),
                lplus: lp,
                jinv: jinv.clone(),
                k_total: None,
                lu: None,
                k_norm_estimate: 0.0,
                condition_estimate: 1.0,
            });
        }
        let lm = linv_matrix(grid, params, n, Sign::Minus)?.matrix;
        let k = assemble_k(grid, params, n, &lp, &lm, jinv).k_total.matrix;
        let dim = k.nrows();
        let a = CMat::identity(dim, dim) + &k;
        let lu = a.clone().lu();
        let inv = lu.try_inverse().ok_or_else(|| SpiralError::Degenerate(format!("id + K_{n} is singular")))?;
        let cond = one_norm(&a) * one_norm(&inv);
        let kn = two_norm_estimate(&k);
        Ok(ModeSolver { n, lplus: lp, lminus: lm, jinv: jinv.clone(), k_total: Some(k), lu: Some(lu), k_norm_estimate: kn, condition_estimate: cond })
    }

    /// Solve (id + 𝒦ₙ)u = v by LU with one refinement step.
    pub fn solve_lu(&self, v: &[C64]) -> Result<Vec<C64>> {
        let (Some(lu), Some(k)) = (&self.lu, &self.k_total) else {
            return Ok(v.to_vec());
        };
        let vv = cvec(v);
        let mut u = lu.solve(&vv).ok_or_else(|| SpiralError::Degenerate("LU solve failed".into()))?;
        let r = &vv - (&u + k * &u);
        if let Some(du) = lu.solve(&r) {
            u += du;
        }
        Ok(u.as_slice().to_vec())
    }

    /// Neumann series Σ(−𝒦ₙ)ᵏv.
    pub fn solve_neumann(&self, v: &[C64], tol: f64, max_terms: usize) -> Result<Vec<C64>> {
        let Some(k) = &self.k_total else {
            return Ok(v.to_vec());
        };
        let vv = cvec(v);
        let scale = vv.norm().max(1e-300);
        let mut term = vv.clone();
        let mut sum = vv;
        for _ in 0..max_terms {
            term = -(k * &term);
            sum += &term;
            if term.norm() <= tol * scale {
                return Ok(sum.as_slice().to_vec());
            }
        }
        Err(SpiralError::Divergence(format!("Neumann series for mode {} did not converge", self.n)))
    }

    pub fn residual(&self, u: &[C64], v: &[C64]) -> f64 {
        let Some(k) = &self.k_total else {
            return 0.0;
        };
        let uu = cvec(u);
        let vv = cvec(v);
        let r = &uu + k * &uu - &vv;
        r.norm() / vv.norm().max(1e-300)
    }

    /// f = (D_β+1)⁻¹ L₋⁻¹ (id+𝒦)⁻¹ L₊⁻¹ w for mode n ≥ 0.
    pub fn apply(&self, w: &[C64]) -> Result<(Vec<C64>, f64)> {
        let v = &self.lplus * cvec(w);
        let u = self.solve_lu(v.as_slice())?;
        let res = self.residual(&u, v.as_slice());
        let g = &self.lminus * cvec(&u);
        let f = &self.jinv * g;
        Ok((f.as_slice().to_vec(), res))
    }
}

pub fn solve_mode(grid: &BetaGrid, params: &Params, n: i64, v: &ModeFunction) -> Result<ModeFunction> {
    let an = n.abs();
    let solver = ModeSolver::new(grid, params, an, &jinv_matrix(grid))?;
    let u = if n >= 0 {
        solver.solve_lu(&v.to_vec())?
    } else {
        let vc: Vec<C64> = v.to_vec().iter().map(|z| z.conj()).collect();
        solver.solve_lu(&vc)?.iter().map(|z| z.conj()).collect()
    };
    Ok(ModeFunction::from_vec(n, &u))
}

/// Assembled ℒ⁻¹ over the retained modes.
#[derive(Debug, Clone)]
pub struct LinearizedInverse {
    pub n_max: usize,
    pub solvers: Vec<ModeSolver>,
}

impl LinearizedInverse {
    pub fn new(grid: &BetaGrid, params: &Params) -> Result<LinearizedInverse> {
        let jinv = jinv_matrix(grid);
        let solvers: Result<Vec<ModeSolver>> = (0..=params.n_max as i64)
            .into_par_iter()
            .map(|n| ModeSolver::new(grid, params, n, &jinv))
            .collect();
        Ok(LinearizedInverse { n_max: params.n_max, solvers: solvers? })
    }

    pub fn solver(&self, n: i64) -> &ModeSolver {
        &self.solvers[n.unsigned_abs() as usize]
    }

    pub fn apply_mode(&self, w: &ModeFunction) -> Result<(ModeFunction, f64)> {
        let s = self.solver(w.n);
        if w.n >= 0 {
            let (f, r) = s.apply(&w.to_vec())?;
            Ok((ModeFunction::from_vec(w.n, &f), r))
        } else {
            let wc: Vec<C64> = w.to_vec().iter().map(|z| z.conj()).collect();
            let (f, r) = s.apply(&wc)?;
            let fc: Vec<C64> = f.iter().map(|z| z.conj()).collect();
            Ok((ModeFunction::from_vec(w.n, &fc), r))
        }
    }

    pub fn apply(&self, w: &SpectralField) -> Result<(SpectralField, LinearSolveReport)> {
        let mut out = SpectralField::zeros(&w.mode_set, w.grid_len(), RoleTag::F);
        let mut reports = Vec::new();
        for m in &w.modes {
            if m.n.unsigned_abs() as usize > self.n_max {
                continue;
            }
            let (f, r) = self.apply_mode(m)?;
            let s = self.solver(m.n);
            reports.push(ModeSolveReport { n: m.n, residual_norm: r, k_norm_estimate: s.k_norm_estimate, condition_estimate: s.condition_estimate });
            out.set_mode(f);
        }
        Ok((out, LinearSolveReport { modes: reports }))
    }

    /// L₊⁻¹ applied mode-wise, used for residual norms.
    pub fn apply_lplus(&self, w: &SpectralField) -> SpectralField {
        let mut out = w.clone();
        for m in out.modes.iter_mut() {
            if m.n.unsigned_abs() as usize > self.n_max {
                continue;
            }
            let s = self.solver(m.n);
            let v = if m.n >= 0 {
                (&s.lplus * cvec(&m.to_vec())).as_slice().to_vec()
            } else {
                let wc: Vec<C64> = m.to_vec().iter().map(|z| z.conj()).collect();
                (&s.lplus * cvec(&wc)).iter().map(|z| z.conj()).collect()
            };
            *m = ModeFunction::from_vec(m.n, &v);
        }
        out
    }
}

pub fn linearized_inverse(grid: &BetaGrid, params: &Params, w: &SpectralField) -> Result<SpectralField> {
    if !w.is_finite() {
        return Err(SpiralError::Config("non-finite right-hand side".into()));
    }
    let op = LinearizedInverse::new(grid, params)?;
    Ok(op.apply(w)?.0)
}
