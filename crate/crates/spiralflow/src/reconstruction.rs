//! Physical coordinates, sampled fields, time slices, spiral curves, and initial-data comparison.

use crate::error::{Result, SpiralError};
use crate::nonlinear_solver::{f0, feature_modes, gamma0, BoundaryData, Problem};
use crate::params_grids::BetaGrid;
use crate::quadrature::gauss_legendre;
use crate::spectral_field::{SpectralField, C64};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

const N_TEST_ANGLES: usize = 64;

/// Mode profiles of f and the five features, with the baseline folded into mode 0.
#[derive(Debug, Clone)]
struct Profiles {
    modes: Vec<i64>,
    f: Vec<Vec<C64>>,
    feat: [Vec<Vec<C64>>; 5],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointFeatures {
    pub f: f64,
    pub h: f64,
    pub dphi_h: f64,
    pub dphi_f: f64,
    pub z4: f64,
    pub z5: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffeoReport {
    pub min_jacobian_factor: f64,
    pub max_jacobian_deviation: f64,
    pub angles_checked: usize,
    pub monotone: bool,
}

/// r = (β^{−2μ}h/μ)^{1/2}, θ = β + φ on the collocation grid, and pointwise evaluation off the grid.
#[derive(Debug, Clone)]
pub struct CoordinateMap {
    pub mu: f64,
    pub delta: f64,
    pub grid: BetaGrid,
    pub n_phi: usize,
    pub r: Vec<f64>,
    pub theta: Vec<f64>,
    pub jacobian_factor: Vec<f64>,
    pub report: DiffeoReport,
    pub gamma: BoundaryData,
    prof: Profiles,
}

fn fourier_real(modes: &[i64], vals: &[C64], phi: f64) -> f64 {
    modes.iter().zip(vals).map(|(&n, v)| (v * C64::from_polar(1.0, n as f64 * phi)).re).sum()
}

pub fn build_map(p: &Problem, f: &SpectralField, gamma: &BoundaryData) -> Result<CoordinateMap> {
    let mu = p.mu();
    let grid = p.grid.clone();
    let m = grid.len();
    let fm = feature_modes(p, f);
    let modes = p.mode_set.modes.clone();
    let base = [1.0, 0.0, 0.0, 2.0 * mu, 1.0];
    let i0 = p.mode_set.index(0).expect("mode 0");
    let mut prof = Profiles {
        modes: modes.clone(),
        f: f.modes.iter().map(|mf| mf.values.clone()).collect(),
        feat: std::array::from_fn(|k| fm[k].modes.iter().map(|mf| mf.values.clone()).collect()),
    };
    for v in prof.f[i0].iter_mut() {
        *v += f0(mu);
    }
    for (k, b) in base.iter().enumerate() {
        for v in prof.feat[k][i0].iter_mut() {
            *v += b;
        }
    }
    let n_phi = p.n_phi;
    let mut r = vec![0.0; m * n_phi];
    let mut theta = vec![0.0; m * n_phi];
    let mut jac = vec![0.0; m * n_phi];
    let mut min_j = f64::INFINITY;
    let mut max_dev: f64 = 0.0;
    for i in 0..m {
        let b = grid.nodes[i];
        let hv: Vec<C64> = prof.feat[0].iter().map(|v| v[i]).collect();
        let zv: Vec<C64> = prof.feat[3].iter().map(|v| v[i]).collect();
        for j in 0..n_phi {
            let phi = 2.0 * PI * j as f64 / n_phi as f64;
            let h = fourier_real(&modes, &hv, phi);
            let z4 = fourier_real(&modes, &zv, phi);
            let k = i * n_phi + j;
            r[k] = radius(mu, b, h);
            theta[k] = (b + phi).rem_euclid(2.0 * PI);
            jac[k] = z4;
            min_j = min_j.min(z4);
            max_dev = max_dev.max((z4 - 2.0 * mu).abs());
        }
    }
    let mut map = CoordinateMap {
        mu,
        delta: p.params.delta,
        grid,
        n_phi,
        r,
        theta,
        jacobian_factor: jac,
        report: DiffeoReport { min_jacobian_factor: min_j, max_jacobian_deviation: max_dev, angles_checked: 0, monotone: true },
        gamma: gamma.clone(),
        prof,
    };
    let monotone = (0..N_TEST_ANGLES).into_par_iter().all(|k| map.radial_monotone(2.0 * PI * k as f64 / N_TEST_ANGLES as f64));
    map.report.angles_checked = N_TEST_ANGLES;
    map.report.monotone = monotone;
    if !(min_j > 0.0) || !monotone {
        return Err(SpiralError::RegimeExit(format!(
            "not a diffeomorphism at this discretization (min (D_rho+2mu)h = {min_j:.3e}, monotone = {monotone})"
        )));
    }
    Ok(map)
}

fn radius(mu: f64, beta: f64, h: f64) -> f64 {
    (beta.powf(-2.0 * mu) * h / mu).sqrt()
}

impl CoordinateMap {
    fn h_node(&self, i: usize, phi: f64) -> f64 {
        let vals: Vec<C64> = self.prof.feat[0].iter().map(|v| v[i]).collect();
        fourier_real(&self.prof.modes, &vals, phi)
    }

    /// r(β_i, θ − β_i) strictly decreasing along the nodes.
    pub fn radial_monotone(&self, theta: f64) -> bool {
        let mut prev = f64::INFINITY;
        for (i, &b) in self.grid.nodes.iter().enumerate() {
            let r = radius(self.mu, b, self.h_node(i, theta - b));
            if !(r < prev) {
                return false;
            }
            prev = r;
        }
        true
    }

    fn interp(&self, data: &[Vec<C64>], start: usize, w: &[f64]) -> Vec<C64> {
        data.iter().map(|v| w.iter().enumerate().map(|(k, wk)| v[start + k] * *wk).sum()).collect()
    }

    fn in_range(&self, beta: f64) -> bool {
        beta >= self.grid.first() && beta <= self.grid.last()
    }

    pub fn h_at(&self, beta: f64, phi: f64) -> Option<f64> {
        if !self.in_range(beta) {
            return None;
        }
        let (start, w) = self.grid.interp_weights(beta);
        Some(fourier_real(&self.prof.modes, &self.interp(&self.prof.feat[0], start, &w), phi))
    }

    pub fn r_at(&self, beta: f64, phi: f64) -> Option<f64> {
        self.h_at(beta, phi).map(|h| radius(self.mu, beta, h))
    }

    pub fn features_at(&self, beta: f64, phi: f64) -> Option<PointFeatures> {
        if !self.in_range(beta) {
            return None;
        }
        let (start, w) = self.grid.interp_weights(beta);
        let ev = |d: &[Vec<C64>]| fourier_real(&self.prof.modes, &self.interp(d, start, &w), phi);
        Some(PointFeatures {
            f: ev(&self.prof.f),
            h: ev(&self.prof.feat[0]),
            dphi_h: ev(&self.prof.feat[1]),
            dphi_f: ev(&self.prof.feat[2]),
            z4: ev(&self.prof.feat[3]),
            z5: ev(&self.prof.feat[4]),
        })
    }

    /// Achievable radius range at angle θ on the truncated grid.
    pub fn radial_range(&self, theta: f64) -> (f64, f64) {
        let lo = self.grid.last();
        let hi = self.grid.first();
        (self.r_at(lo, theta - lo).unwrap_or(0.0), self.r_at(hi, theta - hi).unwrap_or(f64::INFINITY))
    }

    /// Solve r(β, θ−β) = r_target for β by bracketed secant steps in (ln β, ln r).
    pub fn invert_radial(&self, theta: f64, r_target: f64) -> Result<(f64, f64)> {
        if !(r_target > 0.0) || !r_target.is_finite() {
            return Err(SpiralError::Config(format!("radius must be positive (got {r_target})")));
        }
        let (rmin, rmax) = self.radial_range(theta);
        if r_target < rmin || r_target > rmax {
            return Err(SpiralError::Config(format!("radius {r_target:.6e} outside achievable range [{rmin:.6e}, {rmax:.6e}]")));
        }
        let lt = r_target.ln();
        let g = |x: f64| -> f64 {
            let b = x.exp().clamp(self.grid.first(), self.grid.last());
            self.r_at(b, theta - b).map_or(f64::NAN, |r| r.ln() - lt)
        };
        let (mut a, mut b) = (self.grid.first().ln(), self.grid.last().ln());
        let (mut ga, mut gb) = (g(a), g(b));
        if ga == 0.0 {
            return Ok((self.grid.first(), (theta - self.grid.first()).rem_euclid(2.0 * PI)));
        }
        if gb == 0.0 {
            return Ok((self.grid.last(), (theta - self.grid.last()).rem_euclid(2.0 * PI)));
        }
        let mut side = 0i32;
        for _ in 0..300 {
            if (b - a).abs() <= 1e-15 * a.abs().max(b.abs()).max(1.0) {
                break;
            }
            let mut x = (a * gb - b * ga) / (gb - ga);
            if !(x > a.min(b) && x < a.max(b)) {
                x = 0.5 * (a + b);
            }
            let gx = g(x);
            if gx.is_nan() {
                return Err(SpiralError::Degenerate("radial map evaluation failed".into()));
            }
            if gx == 0.0 {
                a = x;
                b = x;
                break;
            }
            if (gx > 0.0) == (ga > 0.0) {
                a = x;
                ga = gx;
                if side == -1 {
                    gb *= 0.5;
                }
                side = -1;
            } else {
                b = x;
                gb = gx;
                if side == 1 {
                    ga *= 0.5;
                }
                side = 1;
            }
        }
        let beta = (0.5 * (a + b)).exp();
        Ok((beta, (theta - beta).rem_euclid(2.0 * PI)))
    }

    /// Ω, Ψ, and polar velocity at a self-similar point (r, θ).
    pub fn sample_point(&self, r: f64, theta: f64) -> Option<PointSample> {
        let (beta, phi) = self.invert_radial(theta, r).ok()?;
        let pf = self.features_at(beta, phi)?;
        let mu = self.mu;
        let bpow = beta.powf(1.0 - 2.0 * mu);
        let psi = bpow * pf.f;
        let omega = beta * pf.z5.powf(-1.0 / (2.0 * mu)) * self.gamma.gamma_at(phi);
        let rr = radius(mu, beta, pf.h);
        let dr_psi = 2.0 * mu * rr * beta * pf.z5 / pf.z4;
        let dth_psi = bpow * (pf.dphi_f - pf.dphi_h * pf.z5 / pf.z4);
        Some(PointSample { beta, phi, omega, psi, u_r: -dth_psi / rr, u_theta: dr_psi })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointSample {
    pub beta: f64,
    pub phi: f64,
    pub omega: f64,
    pub psi: f64,
    pub u_r: f64,
    pub u_theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[allow(non_camel_case_types)]
pub enum FieldKind {
    Omega,
    Psi,
    U,
    omega_t,
    u_t,
    psi_t,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SampleGrid {
    Polar { r: Vec<f64>, theta: Vec<f64> },
    Cartesian { n: usize, extent: f64 },
}

impl SampleGrid {
    /// Sample points in (x, y), row-major with y decreasing for Cartesian grids.
    pub fn points(&self) -> Vec<(f64, f64)> {
        match self {
            SampleGrid::Polar { r, theta } => {
                let mut pts = Vec::with_capacity(r.len() * theta.len());
                for &rr in r {
                    for &t in theta {
                        pts.push((rr * t.cos(), rr * t.sin()));
                    }
                }
                pts
            }
            SampleGrid::Cartesian { n, extent } => {
                let mut pts = Vec::with_capacity(n * n);
                let h = if *n > 1 { 2.0 * extent / (*n as f64 - 1.0) } else { 0.0 };
                for row in 0..*n {
                    for col in 0..*n {
                        pts.push((-extent + h * col as f64, extent - h * row as f64));
                    }
                }
                pts
            }
        }
    }
}

/// Scalar values (NaN where unavailable) or velocity pairs on a sample grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalField {
    pub kind: FieldKind,
    pub grid: SampleGrid,
    pub values: Vec<f64>,
    /// Velocity as (u_r, u_θ) on polar grids and (u_x, u_y) on Cartesian grids.
    pub vectors: Vec<[f64; 2]>,
    pub time: Option<f64>,
}

impl PhysicalField {
    pub fn max_abs(&self) -> f64 {
        self.values.iter().filter(|v| v.is_finite()).fold(0.0, |a, v| a.max(v.abs()))
    }
}

fn polar_of(x: f64, y: f64) -> (f64, f64) {
    (x.hypot(y), y.atan2(x).rem_euclid(2.0 * PI))
}

fn to_cartesian(theta: f64, ur: f64, ut: f64) -> [f64; 2] {
    let (s, c) = theta.sin_cos();
    [ur * c - ut * s, ur * s + ut * c]
}

fn sample_all(map: &CoordinateMap, pts: &[(f64, f64)], scale: impl Fn(f64, f64) -> Option<(f64, f64)> + Sync) -> Vec<Option<(f64, PointSample)>> {
    pts.par_iter()
        .map(|&(x, y)| {
            let (r, th) = polar_of(x, y);
            let (rs, _) = scale(r, th)?;
            map.sample_point(rs, th).map(|s| (th, s))
        })
        .collect()
}

/// Ω, Ψ, U of the self-similar profile on a sample grid.
pub fn sample_fields(map: &CoordinateMap, grid: &SampleGrid) -> Vec<PhysicalField> {
    let pts = grid.points();
    let polar = matches!(grid, SampleGrid::Polar { .. });
    let samples = sample_all(map, &pts, |r, t| Some((r, t)));
    let nan = f64::NAN;
    let om = samples.iter().map(|s| s.map_or(nan, |(_, p)| p.omega)).collect();
    let ps = samples.iter().map(|s| s.map_or(nan, |(_, p)| p.psi)).collect();
    let u = samples
        .iter()
        .map(|s| match s {
            Some((_, p)) if polar => [p.u_r, p.u_theta],
            Some((th, p)) => to_cartesian(*th, p.u_r, p.u_theta),
            None => [nan, nan],
        })
        .collect();
    vec![
        PhysicalField { kind: FieldKind::Omega, grid: grid.clone(), values: om, vectors: Vec::new(), time: None },
        PhysicalField { kind: FieldKind::Psi, grid: grid.clone(), values: ps, vectors: Vec::new(), time: None },
        PhysicalField { kind: FieldKind::U, grid: grid.clone(), values: Vec::new(), vectors: u, time: None },
    ]
}

/// Physical-time sample: ω = κτ⁻¹Ω(τ^{−μ}x), u = κτ^{μ−1}U, ψ = κτ^{2μ−1}Ψ with τ = κt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeSample {
    pub omega: f64,
    pub psi: f64,
    pub u_r: f64,
    pub u_theta: f64,
}

pub fn time_sample(map: &CoordinateMap, t: f64, x: f64, y: f64) -> Option<TimeSample> {
    let mu = map.mu;
    let kappa = map.gamma.time_factor;
    let tau = kappa * t;
    let (r, th) = polar_of(x, y);
    let s = map.sample_point(r * tau.powf(-mu), th)?;
    Some(TimeSample {
        omega: kappa * s.omega / tau,
        psi: kappa * tau.powf(2.0 * mu - 1.0) * s.psi,
        u_r: kappa * tau.powf(mu - 1.0) * s.u_r,
        u_theta: kappa * tau.powf(mu - 1.0) * s.u_theta,
    })
}

/// ω(t,·), u(t,·), ψ(t,·) on a grid at physical time t.
pub fn time_slice(map: &CoordinateMap, t: f64, grid: &SampleGrid) -> Result<Vec<PhysicalField>> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(SpiralError::Config(format!("time must be positive (got {t})")));
    }
    let pts = grid.points();
    let polar = matches!(grid, SampleGrid::Polar { .. });
    let samples: Vec<Option<(f64, TimeSample)>> =
        pts.par_iter().map(|&(x, y)| time_sample(map, t, x, y).map(|s| (polar_of(x, y).1, s))).collect();
    let nan = f64::NAN;
    let om = samples.iter().map(|s| s.map_or(nan, |(_, p)| p.omega)).collect();
    let ps = samples.iter().map(|s| s.map_or(nan, |(_, p)| p.psi)).collect();
    let u = samples
        .iter()
        .map(|s| match s {
            Some((_, p)) if polar => [p.u_r, p.u_theta],
            Some((th, p)) => to_cartesian(*th, p.u_r, p.u_theta),
            None => [nan, nan],
        })
        .collect();
    Ok(vec![
        PhysicalField { kind: FieldKind::omega_t, grid: grid.clone(), values: om, vectors: Vec::new(), time: Some(t) },
        PhysicalField { kind: FieldKind::psi_t, grid: grid.clone(), values: ps, vectors: Vec::new(), time: Some(t) },
        PhysicalField { kind: FieldKind::u_t, grid: grid.clone(), values: Vec::new(), vectors: u, time: Some(t) },
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpiralCurve {
    pub phi0: f64,
    /// (β, r, θ) along the curve.
    pub points: Vec<(f64, f64, f64)>,
    pub winding_count: i64,
}

/// Characteristic curves β ↦ (r(β, φ₀), β + φ₀) over grid nodes in [beta_lo, beta_hi].
pub fn spiral_curves(map: &CoordinateMap, phis: &[f64], beta_lo: f64, beta_hi: f64) -> Vec<SpiralCurve> {
    let idx: Vec<usize> = (0..map.grid.len()).filter(|&i| map.grid.nodes[i] >= beta_lo && map.grid.nodes[i] <= beta_hi).collect();
    phis.iter()
        .map(|&phi0| {
            let points: Vec<(f64, f64, f64)> = idx
                .iter()
                .map(|&i| {
                    let b = map.grid.nodes[i];
                    (b, radius(map.mu, b, map.h_node(i, phi0)), b + phi0)
                })
                .collect();
            let range = points.last().map_or(0.0, |p| p.0) - points.first().map_or(0.0, |p| p.0);
            SpiralCurve { phi0, points, winding_count: (range / (2.0 * PI)).floor() as i64 }
        })
        .collect()
}

/// Coefficients ψ̊ₙ = ω̊ₙ/((2−1/μ)² − n²) of the limiting stream function.
pub fn psi_ring_hat(gamma: &BoundaryData) -> Vec<(i64, C64)> {
    let a = gamma0(gamma.mu);
    gamma
        .modes
        .iter()
        .zip(&gamma.omega_ring_hat)
        .map(|(&n, w)| (n, w * gamma.time_factor / (a * a - (n * n) as f64)))
        .collect()
}

/// Limit fields at t = 0: ω₀ = r^{−1/μ}ω̊, ψ₀ = r^{2−1/μ}ψ̊, u₀ = ∇^⊥ψ₀ in polar components.
pub fn initial_data(gamma: &BoundaryData, x: f64, y: f64) -> TimeSample {
    let mu = gamma.mu;
    let a = gamma0(mu);
    let (r, th) = polar_of(x, y);
    let k = gamma.time_factor;
    let om = k * gamma.omega_ring_at(th);
    let ps = psi_ring_hat(gamma);
    let psi: f64 = ps.iter().map(|(n, c)| (c * C64::from_polar(1.0, *n as f64 * th)).re).sum();
    let dpsi: f64 = ps.iter().map(|(n, c)| (c * C64::new(0.0, *n as f64) * C64::from_polar(1.0, *n as f64 * th)).re).sum();
    TimeSample {
        omega: r.powf(-1.0 / mu) * om,
        psi: r.powf(a) * psi,
        u_r: -r.powf(a - 1.0) * dpsi,
        u_theta: a * r.powf(a - 1.0) * psi,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub t: f64,
    pub omega_sup_error: f64,
    pub psi_sup_error: f64,
    pub u_l2_error: f64,
    pub missing_points: usize,
}

/// Errors of ω(t,·), ψ(t,·), u(t,·) against the t = 0 limits over an annulus.
pub fn initial_data_compare(map: &CoordinateMap, t_list: &[f64], r_in: f64, r_out: f64, n_r: usize, n_theta: usize) -> Result<Vec<ConvergenceRow>> {
    if !(r_in > 0.0 && r_out > r_in) {
        return Err(SpiralError::Config("annulus must satisfy 0 < r_in < r_out".into()));
    }
    let gl = gauss_legendre(n_r);
    let pts: Vec<(f64, f64, f64)> = gl
        .nodes
        .iter()
        .zip(&gl.weights)
        .flat_map(|(s, w)| {
            let r = r_in + 0.5 * (r_out - r_in) * (s + 1.0);
            let wr = 0.5 * (r_out - r_in) * w * r * 2.0 * PI / n_theta as f64;
            (0..n_theta).map(move |j| (r, 2.0 * PI * j as f64 / n_theta as f64, wr))
        })
        .collect();
    let limits: Vec<TimeSample> = pts.iter().map(|&(r, th, _)| initial_data(&map.gamma, r * th.cos(), r * th.sin())).collect();
    let mut rows = Vec::with_capacity(t_list.len());
    for &t in t_list {
        if !(t > 0.0) {
            return Err(SpiralError::Config(format!("time must be positive (got {t})")));
        }
        let samples: Vec<Option<TimeSample>> = pts.par_iter().map(|&(r, th, _)| time_sample(map, t, r * th.cos(), r * th.sin())).collect();
        let mut row = ConvergenceRow { t, omega_sup_error: 0.0, psi_sup_error: 0.0, u_l2_error: 0.0, missing_points: 0 };
        let mut l2 = 0.0;
        for ((s, l), &(_, _, w)) in samples.iter().zip(&limits).zip(&pts) {
            match s {
                Some(s) => {
                    row.omega_sup_error = row.omega_sup_error.max((s.omega - l.omega).abs());
                    row.psi_sup_error = row.psi_sup_error.max((s.psi - l.psi).abs());
                    l2 += w * ((s.u_r - l.u_r).powi(2) + (s.u_theta - l.u_theta).powi(2));
                }
                None => row.missing_points += 1,
            }
        }
        row.u_l2_error = l2.sqrt();
        rows.push(row);
    }
    Ok(rows)
}

/// Closed-form radial vortex with mean ω̊₀: (Ω, Ψ, u_θ) at radius r.
pub fn radial_solution(mu: f64, omega0: f64, r: f64) -> (f64, f64, f64) {
    let a = gamma0(mu);
    (omega0 * r.powf(-1.0 / mu), omega0 / (a * a) * r.powf(a), omega0 / a * r.powf(a - 1.0))
}

/// Circulation of u around an axis-aligned rectangle and the integral of ω over it at time t.
pub fn circulation_check(map: &CoordinateMap, t: f64, x0: f64, x1: f64, y0: f64, y1: f64, q: usize) -> Option<(f64, f64)> {
    let gl = gauss_legendre(q);
    let uxy = |x: f64, y: f64| -> Option<[f64; 2]> {
        let s = time_sample(map, t, x, y)?;
        Some(to_cartesian(polar_of(x, y).1, s.u_r, s.u_theta))
    };
    let mut circ = 0.0;
    for (s, w) in gl.nodes.iter().zip(&gl.weights) {
        let hx = 0.5 * (x1 - x0);
        let hy = 0.5 * (y1 - y0);
        let x = x0 + hx * (s + 1.0);
        let y = y0 + hy * (s + 1.0);
        circ += w * hx * (uxy(x, y0)?[0] - uxy(x, y1)?[0]);
        circ += w * hy * (uxy(x1, y)?[1] - uxy(x0, y)?[1]);
    }
    let mut area = 0.0;
    for (s, ws) in gl.nodes.iter().zip(&gl.weights) {
        for (v, wv) in gl.nodes.iter().zip(&gl.weights) {
            let x = x0 + 0.5 * (x1 - x0) * (s + 1.0);
            let y = y0 + 0.5 * (y1 - y0) * (v + 1.0);
            area += ws * wv * 0.25 * (x1 - x0) * (y1 - y0) * time_sample(map, t, x, y)?.omega;
        }
    }
    Some((circ, area))
}
