//! Cutoff η, factorization coefficients aₙ and χₙ, and the weights Wₙ.

use crate::error::{Result, SpiralError};
use crate::params_grids::BetaGrid;
use crate::quadrature::gauss_legendre;
use std::f64::consts::PI;
use std::sync::OnceLock;

const ETA_GAUSS: usize = 80;
const LOGW_NODES: usize = 128;

fn bump(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        0.0
    } else {
        (-1.0 / (t * (1.0 - t))).exp()
    }
}

fn bump_prime(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        0.0
    } else {
        let s = t * (1.0 - t);
        bump(t) * (1.0 - 2.0 * t) / (s * s)
    }
}

fn bump_integral(t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let r = gauss_legendre(ETA_GAUSS);
    let h = 0.5 * t;
    r.nodes.iter().zip(&r.weights).map(|(x, w)| w * bump(h * (x + 1.0))).sum::<f64>() * h
}

fn bump_total() -> f64 {
    static Z: OnceLock<f64> = OnceLock::new();
    *Z.get_or_init(|| 2.0 * bump_integral(0.5))
}

/// Smooth monotone cutoff: 0 for β ≤ 1, 1 for β ≥ 2, symmetric bump-integral bridge.
pub fn eta(beta: f64) -> f64 {
    if beta <= 1.0 {
        0.0
    } else if beta >= 2.0 {
        1.0
    } else {
        let t = beta - 1.0;
        let z = bump_total();
        if t <= 0.5 {
            bump_integral(t) / z
        } else {
            1.0 - bump_integral(1.0 - t) / z
        }
    }
}

/// D_βη = β η′(β).
pub fn dbeta_eta(beta: f64) -> f64 {
    beta * bump(beta - 1.0) / bump_total()
}

/// D_β²η = β η′ + β² η″.
pub fn dbeta2_eta(beta: f64) -> f64 {
    let z = bump_total();
    beta * bump(beta - 1.0) / z + beta * beta * bump_prime(beta - 1.0) / z
}

pub fn a_inf(n: i64, mu: f64) -> f64 {
    if n == 0 {
        0.0
    } else {
        let nn = (n * n) as f64;
        (nn * mu * mu - 2.0 * mu + 1.0).sqrt()
    }
}

pub fn a_n(n: i64, beta: f64, mu: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let nn = (n * n) as f64;
    (nn * mu * mu - (2.0 * mu - 1.0) * eta(beta)).sqrt()
}

/// D_βaₙ from the closed form of aₙ.
pub fn dbeta_a_n(n: i64, beta: f64, mu: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    -(2.0 * mu - 1.0) * dbeta_eta(beta) / (2.0 * a_n(n, beta, mu))
}

pub fn chi_n(n: i64, beta: f64, mu: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    eta(beta) - dbeta_eta(beta) / (2.0 * a_n(n, beta, mu))
}

pub fn dbeta_chi_n(n: i64, beta: f64, mu: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let a = a_n(n, beta, mu);
    let de = dbeta_eta(beta);
    de - dbeta2_eta(beta) / (2.0 * a) - (2.0 * mu - 1.0) * de * de / (4.0 * a * a * a)
}

/// ln Wₙ(β) with a Chebyshev table of the bridge on [1, 2].
#[derive(Debug, Clone)]
pub struct LogW {
    pub n: i64,
    pub mu: f64,
    pub a_near: f64,
    pub a_far: f64,
    pub ln_c: f64,
    nodes: Vec<f64>,
    values: Vec<f64>,
}

impl LogW {
    pub fn new(n: i64, mu: f64) -> Result<LogW> {
        if n == 0 {
            return Err(SpiralError::Config("W_n is defined for n != 0 only".into()));
        }
        let k = LOGW_NODES;
        let nodes: Vec<f64> = (0..=k).map(|j| 1.5 + 0.5 * (PI * (2.0 * j as f64 - k as f64) / (2.0 * k as f64)).sin()).collect();
        let rule = gauss_legendre(24);
        let mut values = vec![0.0; k + 1];
        for j in 1..=k {
            let (lo, hi) = (nodes[j - 1], nodes[j]);
            let h = 0.5 * (hi - lo);
            let seg: f64 = rule
                .nodes
                .iter()
                .zip(&rule.weights)
                .map(|(x, w)| {
                    let b = lo + h * (x + 1.0);
                    w * a_n(n, b, mu) / b
                })
                .sum::<f64>()
                * h;
            values[j] = values[j - 1] + seg;
        }
        let a_far = a_inf(n, mu);
        let ln_c = values[k] - a_far * 2f64.ln();
        Ok(LogW { n, mu, a_near: n.unsigned_abs() as f64 * mu, a_far, ln_c, nodes, values })
    }

    pub fn eval(&self, beta: f64) -> f64 {
        if beta <= 1.0 {
            return self.a_near * beta.ln();
        }
        if beta >= 2.0 {
            return self.ln_c + self.a_far * beta.ln();
        }
        let k = LOGW_NODES;
        let mut num = 0.0;
        let mut den = 0.0;
        for j in 0..=k {
            let d = beta - self.nodes[j];
            if d == 0.0 {
                return self.values[j];
            }
            let mut w = if j % 2 == 0 { 1.0 } else { -1.0 };
            if j == 0 || j == k {
                w *= 0.5;
            }
            let r = w / d;
            num += r * self.values[j];
            den += r;
        }
        num / den
    }

    pub fn c_n(&self) -> f64 {
        self.ln_c.exp()
    }
}

pub fn w_n(n: i64, beta: f64, mu: f64) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(SpiralError::Config("W_n requires beta > 0".into()));
    }
    Ok(LogW::new(n, mu)?.eval(beta).exp())
}

pub fn c_n(n: i64, mu: f64) -> Result<f64> {
    Ok(LogW::new(n, mu)?.c_n())
}

/// Per-node coefficient samples for one mode.
#[derive(Debug, Clone)]
pub struct CoefficientTable {
    pub n: i64,
    pub a_n: Vec<f64>,
    pub chi_n: Vec<f64>,
    pub dbeta_chi_n: Vec<f64>,
    pub w_n: Vec<f64>,
    pub c_n: f64,
}

impl CoefficientTable {
    pub fn new(n: i64, mu: f64, grid: &BetaGrid) -> Result<CoefficientTable> {
        let b = &grid.nodes;
        let (w, c) = if n == 0 {
            (vec![1.0; b.len()], 1.0)
        } else {
            let lw = LogW::new(n, mu)?;
            (b.iter().map(|&x| lw.eval(x).exp()).collect(), lw.c_n())
        };
        Ok(CoefficientTable {
            n,
            a_n: b.iter().map(|&x| a_n(n, x, mu)).collect(),
            chi_n: b.iter().map(|&x| chi_n(n, x, mu)).collect(),
            dbeta_chi_n: b.iter().map(|&x| dbeta_chi_n(n, x, mu)).collect(),
            w_n: w,
            c_n: c,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eta_symmetry() {
        for &t in &[0.1, 0.25, 0.4, 0.49] {
            assert!((eta(1.0 + t) + eta(2.0 - t) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn logw_bridge_matches_direct_quadrature() {
        let lw = LogW::new(3, 1.5).unwrap();
        for &b in &[1.1, 1.37, 1.5, 1.93] {
            let (v, _) = crate::quadrature::adaptive_gk(|t| a_n(3, t, 1.5) / t, 1.0, b, 1e-14);
            assert!((lw.eval(b) - v).abs() < 1e-13);
        }
    }
}
