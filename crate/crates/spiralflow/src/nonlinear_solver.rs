//! Nonlinear terms 𝒩₁–𝒩₃, the residual ℱ, boundary-data normalization, and the Picard iteration.

use crate::error::{Result, SpiralError};
use crate::linear_ops::{drho, script_l, DbetaRows, LinearizedInverse};
use crate::params_grids::{make_grid, BetaGrid, ModeSet, Params};
use crate::spectral_field::{
    bracket, default_n_phi, from_collocation, to_collocation, weighted_sum_norm, Collocation, ModeFunction, NormReport,
    RoleTag, SpectralField, C64,
};
use serde::{Deserialize, Serialize};

pub fn gamma0(mu: f64) -> f64 {
    2.0 - 1.0 / mu
}

pub fn f0(mu: f64) -> f64 {
    1.0 / (2.0 * mu - 1.0)
}

/// Fourier data of Γ and ω̊ after rescaling to Γ̂₀ = 2 − 1/μ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryData {
    pub mu: f64,
    pub modes: Vec<i64>,
    pub gamma_hat: Vec<C64>,
    pub omega_ring_hat: Vec<C64>,
    /// λ = μ^{1/(2μ)}ω̂̊₀ of the input data.
    pub lambda_scale: f64,
    /// κ = λ/Γ₀; the input flow is ω(t,x) = κ·ω_norm(κt, x).
    pub time_factor: f64,
    pub smallness: f64,
    pub truncated_modes: usize,
}

impl BoundaryData {
    pub fn baseline(mu: f64, n_max: usize) -> BoundaryData {
        normalize(&[(0, C64::new(1.0, 0.0))], mu, n_max).expect("positive mean")
    }

    pub fn gamma(&self, n: i64) -> C64 {
        self.modes.iter().position(|&m| m == n).map_or(C64::new(0.0, 0.0), |i| self.gamma_hat[i])
    }

    pub fn omega_ring(&self, n: i64) -> C64 {
        self.modes.iter().position(|&m| m == n).map_or(C64::new(0.0, 0.0), |i| self.omega_ring_hat[i])
    }

    /// Γ − Γ₀ coefficients.
    pub fn gamma_pert(&self) -> Vec<(i64, C64)> {
        let g0 = gamma0(self.mu);
        self.modes
            .iter()
            .zip(&self.gamma_hat)
            .map(|(&n, &g)| (n, if n == 0 { g - g0 } else { g }))
            .collect()
    }

    pub fn is_baseline(&self) -> bool {
        self.gamma_pert().iter().all(|(_, g)| g.norm() == 0.0)
    }

    /// ‖Γ − Γ₀‖_X = Σ⟨n⟩^{−1/2}|Γ̂ₙ − Γ̂₀,ₙ|.
    pub fn pert_norm(&self) -> f64 {
        self.gamma_pert().iter().map(|&(n, g)| bracket(n).powf(-0.5) * g.norm()).sum()
    }

    /// Γ(φ) by direct Fourier summation.
    pub fn gamma_at(&self, phi: f64) -> f64 {
        self.modes.iter().zip(&self.gamma_hat).map(|(&n, g)| (g * C64::from_polar(1.0, n as f64 * phi)).re).sum()
    }

    pub fn pert_at(&self, phi: f64) -> f64 {
        self.gamma_at(phi) - gamma0(self.mu)
    }

    /// ω̊(θ) of the normalized flow.
    pub fn omega_ring_at(&self, theta: f64) -> f64 {
        self.modes.iter().zip(&self.omega_ring_hat).map(|(&n, w)| (w * C64::from_polar(1.0, n as f64 * theta)).re).sum()
    }
}

/// Rescale ω̊ coefficients so that Γ̂₀ = 2 − 1/μ; modes beyond n_max are dropped.
pub fn normalize(omega_ring: &[(i64, C64)], mu: f64, n_max: usize) -> Result<BoundaryData> {
    if !(mu > 1.0) {
        return Err(SpiralError::Config(format!("mu must exceed 1 (got {mu})")));
    }
    let mut coeff: std::collections::BTreeMap<i64, C64> = std::collections::BTreeMap::new();
    for &(n, c) in omega_ring {
        if !(c.re.is_finite() && c.im.is_finite()) {
            return Err(SpiralError::Config(format!("non-finite coefficient for mode {n}")));
        }
        *coeff.entry(n).or_insert(C64::new(0.0, 0.0)) += c;
    }
    let pairs: Vec<(i64, C64)> = coeff.iter().map(|(&n, &c)| (n, c)).collect();
    for (n, c) in pairs {
        match coeff.get(&-n).copied() {
            Some(d) if (d - c.conj()).norm() > 1e-12 * (1.0 + c.norm()) => {
                return Err(SpiralError::Config(format!("modes {n} and {} are not complex conjugates", -n)));
            }
            None => {
                coeff.insert(-n, c.conj());
            }
            _ => {}
        }
    }
    let w0 = coeff.get(&0).copied().unwrap_or(C64::new(0.0, 0.0));
    if w0.im.abs() > 1e-12 * w0.re.abs().max(1.0) {
        return Err(SpiralError::Config("mean coefficient must be real".into()));
    }
    if w0.re == 0.0 {
        return Err(SpiralError::Config("mean vorticity coefficient is zero".into()));
    }
    if w0.re < 0.0 {
        return Err(SpiralError::Config("mean vorticity coefficient must be positive".into()));
    }
    let w0 = w0.re;
    let smallness = coeff.iter().filter(|(&n, _)| n != 0).map(|(&n, c)| (n.abs() as f64).powf(-0.5) * c.norm()).sum::<f64>() / w0;
    let g0 = gamma0(mu);
    let ms = ModeSet::new(n_max, true);
    let truncated = coeff.keys().filter(|n| n.unsigned_abs() as usize > n_max).count();
    let scale = g0 / w0;
    let kappa_inv = mu.powf(-1.0 / (2.0 * mu));
    let gamma_hat: Vec<C64> = ms
        .modes
        .iter()
        .map(|n| {
            if *n == 0 {
                C64::new(g0, 0.0)
            } else {
                coeff.get(n).copied().unwrap_or(C64::new(0.0, 0.0)) * scale
            }
        })
        .collect();
    let omega_ring_hat = gamma_hat.iter().map(|g| g * kappa_inv).collect();
    let lambda = mu.powf(1.0 / (2.0 * mu)) * w0;
    Ok(BoundaryData {
        mu,
        modes: ms.modes.clone(),
        gamma_hat,
        omega_ring_hat,
        lambda_scale: lambda,
        time_factor: lambda / g0,
        smallness,
        truncated_modes: truncated,
    })
}

/// Discretization shared by the nonlinear evaluations.
#[derive(Debug, Clone)]
pub struct Problem {
    pub params: Params,
    pub grid: BetaGrid,
    pub rows: DbetaRows,
    pub mode_set: ModeSet,
    pub n_phi: usize,
}

impl Problem {
    pub fn new(params: &Params, n_nodes: usize) -> Result<Problem> {
        let grid = make_grid(params, n_nodes)?;
        let rows = DbetaRows::new(&grid);
        Ok(Problem {
            params: *params,
            grid,
            rows,
            mode_set: ModeSet::new(params.n_max, true),
            n_phi: default_n_phi(params.n_max),
        })
    }

    pub fn mu(&self) -> f64 {
        self.params.mu
    }

    pub fn zeros(&self, tag: RoleTag) -> SpectralField {
        SpectralField::zeros(&self.mode_set, self.grid.len(), tag)
    }

    /// Total stream profile f₀ + f.
    pub fn total(&self, f: &SpectralField) -> SpectralField {
        let mut out = f.clone();
        let m0 = out.mode_mut(0);
        let c0 = C64::new(f0(self.mu()), 0.0);
        for v in m0.values.iter_mut() {
            *v += c0;
        }
        m0.value_at_infinity += c0;
        out
    }

    /// f − f₀ from a total profile.
    pub fn perturbation(&self, f_total: &SpectralField) -> SpectralField {
        let mut out = f_total.clone();
        let m0 = out.mode_mut(0);
        let c0 = C64::new(f0(self.mu()), 0.0);
        for v in m0.values.iter_mut() {
            *v -= c0;
        }
        m0.value_at_infinity -= c0;
        out
    }

    pub fn norm(&self, s: &SpectralField, alpha: f64) -> NormReport {
        weighted_sum_norm(s, &self.grid, alpha, self.params.delta)
    }
}

fn mode_lin(a: &ModeFunction, ca: C64, b: &ModeFunction, cb: C64) -> ModeFunction {
    ModeFunction {
        n: a.n,
        values: a.values.iter().zip(&b.values).map(|(x, y)| x * ca + y * cb).collect(),
        value_at_infinity: a.value_at_infinity * ca + b.value_at_infinity * cb,
    }
}

/// Feature tuple 𝐡 = (h, ∂_φh, ∂_φf, (D_ρ+2μ)h, (D_ρ+2μ−1)f) stored as baseline plus deviation.
#[derive(Debug, Clone)]
pub struct FeatureVector {
    pub baseline: [f64; 5],
    pub delta: [Collocation; 5],
}

impl FeatureVector {
    pub fn value(&self, k: usize, i: usize, j: usize) -> f64 {
        self.baseline[k] + self.delta[k].at(i, j)
    }

    pub fn rows(&self) -> usize {
        self.delta[0].rows
    }

    pub fn n_phi(&self) -> usize {
        self.delta[0].n_phi
    }
}

/// Mode-wise feature deviations of a perturbation f.
pub fn feature_modes(p: &Problem, f: &SpectralField) -> [SpectralField; 5] {
    let mu = p.mu();
    let c = 2.0 * mu - 1.0;
    let mut out: [SpectralField; 5] = std::array::from_fn(|_| p.zeros(RoleTag::Generic));
    for m in &f.modes {
        let n = m.n;
        let inn = C64::new(0.0, n as f64);
        let df = p.rows.apply(&m.values);
        let h = ModeFunction {
            n,
            values: m.values.iter().zip(&df).map(|(v, d)| v * c - d).collect(),
            value_at_infinity: m.value_at_infinity * c,
        };
        let one = C64::new(1.0, 0.0);
        let z4 = mode_lin(&drho(&p.rows, &p.grid, &h), one, &h, C64::new(2.0 * mu, 0.0));
        let z5 = mode_lin(&drho(&p.rows, &p.grid, m), one, m, C64::new(c, 0.0));
        out[1].set_mode(h.scale(inn));
        out[2].set_mode(m.scale(inn));
        out[3].set_mode(z4);
        out[4].set_mode(z5);
        out[0].set_mode(h);
    }
    out
}

/// Features of f₀ + f on the collocation grid.
pub fn eval_h_features(p: &Problem, f: &SpectralField) -> Result<FeatureVector> {
    if !f.is_finite() {
        return Err(SpiralError::RegimeExit("non-finite profile".into()));
    }
    let modes = feature_modes(p, f);
    let mut cols = Vec::with_capacity(5);
    for s in &modes {
        let col = to_collocation(s, p.n_phi)?;
        if col.values.iter().any(|v| !v.is_finite()) {
            return Err(SpiralError::RegimeExit("non-finite feature".into()));
        }
        cols.push(col);
    }
    let delta: [Collocation; 5] = cols.try_into().expect("five features");
    Ok(FeatureVector { baseline: [1.0, 0.0, 0.0, 2.0 * p.mu(), 1.0], delta })
}

/// Deviations F₁ − 2/μ, F₂, F₃ − 2μ of the nonlinear terms on the collocation grid.
#[derive(Debug, Clone)]
pub struct NonlinearTerms {
    pub dn1: Collocation,
    pub n2: Collocation,
    pub dn3: Collocation,
}

pub fn eval_n_collocation(mu: f64, feat: &FeatureVector) -> Result<NonlinearTerms> {
    let rows = feat.rows();
    let nphi = feat.n_phi();
    let mut dn1 = Collocation::zeros(rows, nphi);
    let mut n2 = Collocation::zeros(rows, nphi);
    let mut dn3 = Collocation::zeros(rows, nphi);
    let p = 1.0 / (2.0 * mu);
    for i in 0..rows {
        for j in 0..nphi {
            let d: [f64; 5] = std::array::from_fn(|k| feat.delta[k].at(i, j));
            let z1 = 1.0 + d[0];
            let z4 = 2.0 * mu + d[3];
            let z5 = 1.0 + d[4];
            if !(z1 > 0.0) || !(z5 > 0.0) || !(z4 > 0.0) {
                return Err(SpiralError::RegimeExit(format!(
                    "h = {z1:.3e}, (D_rho+2mu)h = {z4:.3e}, (D_rho+2mu-1)f = {z5:.3e} at row {i}, column {j}"
                )));
            }
            let (z2, z3) = (d[1], d[2]);
            let k = i * nphi + j;
            let base = 4.0 * (2.0 * mu * (d[0] + d[4] + d[0] * d[4]) - d[3]) / (2.0 * mu * z4);
            dn1.values[k] = base - z2 * z2 * z5 / (z1 * z4) - z2 * z3 / z1;
            n2.values[k] = (z3 * z4 - z2 * z5) / z1;
            let pw = (-p * d[4].ln_1p()).exp_m1();
            dn3.values[k] = d[3] * (1.0 + pw) + 2.0 * mu * pw;
        }
    }
    Ok(NonlinearTerms { dn1, n2, dn3 })
}

/// 𝒩₁ − 2/μ, 𝒩₂, 𝒩₃ − 2μ as spectral fields.
pub fn eval_n(p: &Problem, f: &SpectralField) -> Result<[SpectralField; 3]> {
    let feat = eval_h_features(p, f)?;
    let t = eval_n_collocation(p.mu(), &feat)?;
    Ok([from_collocation(&t.dn1, &p.mode_set), from_collocation(&t.n2, &p.mode_set), from_collocation(&t.dn3, &p.mode_set)])
}

/// Multiply collocation values by a function of φ.
fn times_phi(c: &Collocation, g: &[f64], add: f64) -> Collocation {
    let mut out = c.clone();
    for i in 0..c.rows {
        for j in 0..c.n_phi {
            out.values[i * c.n_phi + j] = (c.at(i, j) + add) * g[j];
        }
    }
    out
}

fn gamma_samples(gamma: &BoundaryData, n_phi: usize) -> (Vec<f64>, Vec<f64>) {
    let phis: Vec<f64> = (0..n_phi).map(|j| 2.0 * std::f64::consts::PI * j as f64 / n_phi as f64).collect();
    (phis.iter().map(|&t| gamma.gamma_at(t)).collect(), phis.iter().map(|&t| gamma.pert_at(t)).collect())
}

/// ℱ(Γ, f₀+f) = μ(D_ρ+2μ−1)𝒩₁ + μ∂_φ𝒩₂ − 𝒩₃Γ, assembled from baseline deviations.
pub fn eval_f(p: &Problem, gamma: &BoundaryData, f: &SpectralField) -> Result<SpectralField> {
    let mu = p.mu();
    let c = 2.0 * mu - 1.0;
    let feat = eval_h_features(p, f)?;
    let t = eval_n_collocation(mu, &feat)?;
    let (g_full, _) = gamma_samples(gamma, p.n_phi);
    let dn1 = from_collocation(&t.dn1, &p.mode_set);
    let n2 = from_collocation(&t.n2, &p.mode_set);
    let dn3g = from_collocation(&times_phi(&t.dn3, &g_full, 0.0), &p.mode_set);
    let mut out = p.zeros(RoleTag::Generic);
    let one = C64::new(1.0, 0.0);
    for (k, &n) in p.mode_set.modes.iter().enumerate() {
        let a = &dn1.modes[k];
        let t1 = mode_lin(&drho(&p.rows, &p.grid, a), C64::new(mu, 0.0), a, C64::new(mu * c, 0.0));
        let t2 = n2.modes[k].scale(C64::new(0.0, mu * n as f64));
        let mut r = mode_lin(&t1, one, &t2, one);
        r.axpy(-one, &dn3g.modes[k]);
        let gp = gamma.gamma(n) - if n == 0 { C64::new(gamma0(mu), 0.0) } else { C64::new(0.0, 0.0) };
        let shift = gp * (2.0 * mu);
        for v in r.values.iter_mut() {
            *v -= shift;
        }
        r.value_at_infinity -= shift;
        out.modes[k] = r;
    }
    out.enforce_hermitian();
    Ok(out)
}

/// 𝒩(f) = ℱ(Γ₀, f₀+f) − μ⁻¹ℒf.
pub fn eval_remainder(p: &Problem, f: &SpectralField) -> Result<SpectralField> {
    let base = BoundaryData::baseline(p.mu(), p.params.n_max);
    let fv = eval_f(p, &base, f)?;
    let lf = script_l(&p.grid, p.mu(), f);
    Ok(fv.sub(&lf.scale(1.0 / p.mu())))
}

/// Right-hand side 𝒩₃(f₀+f)(Γ − Γ₀) − 𝒩(f) of the fixed-point map.
pub fn fixed_point_rhs(p: &Problem, gamma: &BoundaryData, f: &SpectralField) -> Result<SpectralField> {
    let mu = p.mu();
    let feat = eval_h_features(p, f)?;
    let t = eval_n_collocation(mu, &feat)?;
    let (_, g_pert) = gamma_samples(gamma, p.n_phi);
    let n3g = from_collocation(&times_phi(&t.dn3, &g_pert, 2.0 * mu), &p.mode_set);
    let rem = eval_remainder(p, f)?;
    let mut out = n3g.sub(&rem);
    out.enforce_hermitian();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterateRecord {
    pub index: usize,
    pub update_norm: f64,
}

#[derive(Debug, Clone)]
pub struct SolveState {
    pub f: SpectralField,
    pub iterate_index: usize,
    pub last_update_norm: f64,
    pub residual_norm: f64,
    pub contraction_ratio: f64,
    pub history: Vec<IterateRecord>,
    pub f_norm: f64,
    pub gamma_pert_norm: f64,
    /// ‖f‖/‖Γ − Γ₀‖_X, the measured linear-response constant.
    pub response_constant: f64,
}

/// Residual ‖L₊⁻¹ℱ‖ in the discrete 𝒜^{1/2}𝒞^δ norm.
pub fn residual_norm(p: &Problem, inv: Option<&LinearizedInverse>, fv: &SpectralField) -> f64 {
    if fv.modes.iter().all(|m| m.values.iter().all(|z| z.norm() == 0.0) && m.value_at_infinity.norm() == 0.0) {
        return 0.0;
    }
    match inv {
        Some(op) => p.norm(&op.apply_lplus(fv), 0.5).norm_A_half_Cdelta,
        None => {
            let op = LinearizedInverse::new(&p.grid, &p.params);
            match op {
                Ok(op) => p.norm(&op.apply_lplus(fv), 0.5).norm_A_half_Cdelta,
                Err(_) => f64::INFINITY,
            }
        }
    }
}

/// Picard iteration f ← μℒ⁻¹(𝒩₃(f₀+f)(Γ−Γ₀) − 𝒩(f)) from f = 0.
pub fn fixed_point_solve(p: &Problem, gamma: &BoundaryData) -> Result<SolveState> {
    fixed_point_solve_with(p, gamma, None)
}

pub fn fixed_point_solve_with(p: &Problem, gamma: &BoundaryData, inv: Option<&LinearizedInverse>) -> Result<SolveState> {
    if (gamma.mu - p.mu()).abs() > 0.0 {
        return Err(SpiralError::Config("boundary data and parameters disagree on mu".into()));
    }
    let gnorm = gamma.pert_norm();
    let mut f = p.zeros(RoleTag::F);
    if gamma.is_baseline() {
        let fv = eval_f(p, gamma, &f)?;
        let res = residual_norm(p, None, &fv);
        return Ok(SolveState {
            f,
            iterate_index: 0,
            last_update_norm: 0.0,
            residual_norm: res,
            contraction_ratio: 0.0,
            history: Vec::new(),
            f_norm: 0.0,
            gamma_pert_norm: 0.0,
            response_constant: 0.0,
        });
    }
    let owned;
    let op = match inv {
        Some(op) => op,
        None => {
            owned = LinearizedInverse::new(&p.grid, &p.params)?;
            &owned
        }
    };
    let mu = p.mu();
    let mut history = Vec::new();
    let mut growth = 0;
    let mut prev = f64::INFINITY;
    let mut ratio = f64::NAN;
    for k in 0..p.params.max_iters {
        let w = fixed_point_rhs(p, gamma, &f)?;
        let (mut next, _) = op.apply(&w)?;
        next = next.scale(mu);
        next.enforce_hermitian();
        next.role_tag = RoleTag::F;
        let upd = p.norm(&next.sub(&f), 0.5).norm_A_half_Cdelta;
        if !upd.is_finite() {
            return Err(SpiralError::Divergence(format!("non-finite update at iterate {}", k + 1)));
        }
        history.push(IterateRecord { index: k + 1, update_norm: upd });
        if prev.is_finite() {
            ratio = upd / prev;
            if upd > prev {
                growth += 1;
                if growth >= 3 {
                    return Err(SpiralError::Divergence(format!("update norm grew for 3 consecutive iterates (last {upd:.3e})")));
                }
            } else {
                growth = 0;
            }
        }
        f = next;
        if upd < p.params.tol_fixed_point {
            let fv = eval_f(p, gamma, &f)?;
            let res = residual_norm(p, Some(op), &fv);
            let fnorm = p.norm(&f, 0.5).norm_A_half_Cdelta;
            return Ok(SolveState {
                f,
                iterate_index: k + 1,
                last_update_norm: upd,
                residual_norm: res,
                contraction_ratio: if ratio.is_finite() { ratio } else { 0.0 },
                history,
                f_norm: fnorm,
                gamma_pert_norm: gnorm,
                response_constant: fnorm / gnorm,
            });
        }
        prev = upd;
    }
    Err(SpiralError::Divergence(format!("no convergence within {} iterates", p.params.max_iters)))
}
