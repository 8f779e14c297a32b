//! Global parameters, the β-grid, and the retained mode set.

use crate::error::{Result, SpiralError};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const BETA_MIN: f64 = 1e-24;
pub const DEFAULT_N_NODES: usize = 256;
pub const DEFAULT_N_MAX: usize = 32;
pub const DEFAULT_BETA_INF_CUT: f64 = 16.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub mu: f64,
    pub delta: f64,
    pub n_max: usize,
    pub beta_inf_cut: f64,
    pub tol_fixed_point: f64,
    pub tol_quadrature: f64,
    pub max_iters: usize,
}

/// Upper end of the admissible decay-exponent interval, min{√(4μ²−2μ+1) − 2μ + 1, 1}.
pub fn delta_upper_bound(mu: f64) -> f64 {
    (2.0 * mu / ((4.0 * mu * mu - 2.0 * mu + 1.0).sqrt() + 2.0 * mu - 1.0)).min(1.0)
}

pub fn default_delta(mu: f64) -> Result<f64> {
    if !(mu > 1.0) || !mu.is_finite() {
        return Err(SpiralError::Config(format!("mu must exceed 1 (got {mu})")));
    }
    Ok(0.5 * delta_upper_bound(mu))
}

impl Params {
    pub fn new(mu: f64) -> Result<Params> {
        let p = Params {
            mu,
            delta: default_delta(mu)?,
            n_max: DEFAULT_N_MAX,
            beta_inf_cut: DEFAULT_BETA_INF_CUT,
            tol_fixed_point: 1e-9,
            tol_quadrature: 1e-10,
            max_iters: 50,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_n_max(mut self, n_max: usize) -> Params {
        self.n_max = n_max;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 1.0) || !self.mu.is_finite() {
            return Err(SpiralError::Config(format!("mu must exceed 1 (got {})", self.mu)));
        }
        let ub = delta_upper_bound(self.mu);
        if !(self.delta > 0.0 && self.delta < ub) {
            return Err(SpiralError::Config(format!("delta must lie in (0, {ub}) (got {})", self.delta)));
        }
        if self.n_max == 0 {
            return Err(SpiralError::Config("n_max must be positive".into()));
        }
        if !(self.beta_inf_cut >= 2.0) || !self.beta_inf_cut.is_finite() {
            return Err(SpiralError::Config(format!("beta_inf_cut must be at least 2 (got {})", self.beta_inf_cut)));
        }
        if !(self.tol_fixed_point > 0.0) || !(self.tol_quadrature > 0.0) {
            return Err(SpiralError::Config("tolerances must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(SpiralError::Config("max_iters must be positive".into()));
        }
        Ok(())
    }
}

/// One Chebyshev–Lobatto panel in x = ln β.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Panel {
    pub x0: f64,
    pub x1: f64,
    pub intervals: usize,
    pub start: usize,
}

impl Panel {
    pub fn end(&self) -> usize {
        self.start + self.intervals
    }
}

#[derive(Debug, Clone)]
pub struct BetaGrid {
    pub nodes: Vec<f64>,
    pub x: Vec<f64>,
    pub map_scale: f64,
    pub has_infinity_node: bool,
    pub panels: Vec<Panel>,
    pub beta_inf_cut: f64,
    d: Vec<f64>,
}

fn lobatto_t(n: usize, k: usize) -> f64 {
    (PI * (2.0 * k as f64 - n as f64) / (2.0 * n as f64)).sin()
}

fn lobatto_weight(n: usize, k: usize) -> f64 {
    let s = if k % 2 == 0 { 1.0 } else { -1.0 };
    if k == 0 || k == n {
        0.5 * s
    } else {
        s
    }
}

/// Chebyshev–Lobatto differentiation matrix on [-1, 1], ascending nodes, row-major.
pub fn cheb_diff(n: usize) -> Vec<f64> {
    let m = n + 1;
    let mut d = vec![0.0; m * m];
    let theta: Vec<f64> = (0..m).map(|k| PI * k as f64 / n as f64).collect();
    for i in 0..m {
        let mut sum = 0.0;
        for j in 0..m {
            if i != j {
                let diff = 2.0 * (0.5 * (theta[i] + theta[j])).sin() * (0.5 * (theta[i] - theta[j])).sin();
                let v = lobatto_weight(n, j) / lobatto_weight(n, i) / diff;
                d[i * m + j] = v;
                sum += v;
            }
        }
        d[i * m + i] = -sum;
    }
    d
}

const NEAR_WEIGHTS: [f64; 6] = [0.04, 0.06, 0.06, 0.06, 0.07, 0.08];
const NEAR_TOTAL: f64 = 0.37;
const W_ONE_TWO: f64 = 0.27;
/// Below this node count the grid uses three panels split at 1 and 2.
const FINE_N_NODES: usize = 32;
const COARSE_WEIGHTS: [f64; 3] = [0.5, 0.25, 0.25];
pub const MIN_N_NODES: usize = 16;

fn panel_breaks(b: f64) -> Vec<f64> {
    let mut br = vec![BETA_MIN, 1e-10, 1e-6, 1e-3, 1e-2, 0.1, 1.0, 2.0];
    let mut last = 2.0;
    while last * 2.0 < b * (1.0 - 1e-12) {
        last *= 2.0;
        br.push(last);
    }
    if b > 2.0 {
        if b / last < 1.5 && br.len() > 8 {
            br.pop();
        }
        br.push(b);
    }
    br
}

fn allocate(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let raw: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut alloc: Vec<usize> = raw.iter().map(|r| (r.floor() as usize).max(2)).collect();
    let mut used: usize = alloc.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    let mut k = 0;
    while used < total {
        alloc[order[k % order.len()]] += 1;
        used += 1;
        k += 1;
    }
    while used > total {
        let (imax, _) = alloc.iter().enumerate().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0))).unwrap();
        alloc[imax] -= 1;
        used -= 1;
    }
    alloc
}

pub fn make_grid(params: &Params, n_nodes: usize) -> Result<BetaGrid> {
    params.validate()?;
    if n_nodes < MIN_N_NODES {
        return Err(SpiralError::Config(format!("n_nodes must be at least {MIN_N_NODES} (got {n_nodes})")));
    }
    let total = n_nodes + 1;
    let (breaks, weights) = if n_nodes < FINE_N_NODES {
        (vec![BETA_MIN, 1.0, 2.0, params.beta_inf_cut], COARSE_WEIGHTS.to_vec())
    } else {
        let breaks = panel_breaks(params.beta_inf_cut);
        let np = breaks.len() - 1;
        let mut weights: Vec<f64> = NEAR_WEIGHTS.to_vec();
        let n_far = np - weights.len() - 1;
        let (w12, wf) = if n_far == 0 { (1.0 - NEAR_TOTAL, 0.0) } else { (W_ONE_TWO, 1.0 - NEAR_TOTAL - W_ONE_TWO) };
        weights.push(w12);
        for _ in 0..n_far {
            weights.push(wf / n_far as f64);
        }
        (breaks, weights)
    };
    let np = breaks.len() - 1;
    if total < 2 * np {
        return Err(SpiralError::Config(format!("n_nodes too small for {np} panels")));
    }
    let counts = allocate(total, &weights);
    let mut nodes = vec![breaks[0]];
    let mut panels = Vec::with_capacity(np);
    for p in 0..np {
        let (b0, b1) = (breaks[p], breaks[p + 1]);
        let (x0, x1) = (b0.ln(), b1.ln());
        let n = counts[p];
        panels.push(Panel { x0, x1, intervals: n, start: nodes.len() - 1 });
        for k in 1..n {
            let t = lobatto_t(n, k);
            nodes.push((x0 + (x1 - x0) * 0.5 * (t + 1.0)).exp());
        }
        nodes.push(b1);
    }
    let x: Vec<f64> = nodes.iter().map(|b| b.ln()).collect();
    let m = nodes.len();
    let mut d = vec![0.0; m * m];
    let mut cnt = vec![0.0f64; m];
    for p in &panels {
        let n = p.intervals;
        let local = cheb_diff(n);
        let scale = 2.0 / (p.x1 - p.x0);
        for i in 0..=n {
            for j in 0..=n {
                d[(p.start + i) * m + p.start + j] += local[i * (n + 1) + j] * scale;
            }
            cnt[p.start + i] += 1.0;
        }
    }
    for i in 0..m {
        let mut sum = 0.0;
        for j in 0..m {
            if i != j {
                d[i * m + j] /= cnt[i];
                sum += d[i * m + j];
            }
        }
        d[i * m + i] = -sum;
    }
    Ok(BetaGrid {
        nodes,
        x,
        map_scale: 1.0,
        has_infinity_node: true,
        panels,
        beta_inf_cut: params.beta_inf_cut,
        d,
    })
}

impl BetaGrid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn to_s(&self, beta: f64) -> f64 {
        if beta.is_infinite() {
            1.0
        } else {
            beta / (beta + self.map_scale)
        }
    }

    pub fn from_s(&self, s: f64) -> f64 {
        if s >= 1.0 {
            f64::INFINITY
        } else {
            self.map_scale * s / (1.0 - s)
        }
    }

    /// Dense D_β = β∂_β differentiation matrix (row-major, nodes only).
    pub fn dbeta(&self) -> &[f64] {
        &self.d
    }

    pub fn dbeta_entry(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.len() + j]
    }

    pub fn last(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    pub fn first(&self) -> f64 {
        self.nodes[0]
    }

    pub fn index_of(&self, beta: f64) -> Option<usize> {
        self.nodes.iter().position(|&b| b == beta)
    }

    pub fn panel_of_interval(&self, j: usize) -> &Panel {
        self.panels.iter().find(|p| j >= p.start && j < p.end()).unwrap()
    }

    fn panel_of_x(&self, x: f64) -> &Panel {
        self.panels.iter().find(|p| x <= p.x1).unwrap_or_else(|| self.panels.last().unwrap())
    }

    /// Barycentric interpolation weights for x = ln β inside the grid range.
    /// Returns the first global node index and the weights over that panel.
    pub fn interp_weights(&self, beta: f64) -> (usize, Vec<f64>) {
        if beta <= self.first() {
            return (0, vec![1.0]);
        }
        if beta >= self.last() {
            return (self.len() - 1, vec![1.0]);
        }
        let x = beta.ln();
        let p = self.panel_of_x(x);
        let n = p.intervals;
        let mut w = vec![0.0; n + 1];
        let mut sum = 0.0;
        for k in 0..=n {
            let xk = self.x[p.start + k];
            let dx = x - xk;
            if dx == 0.0 {
                let mut e = vec![0.0; n + 1];
                e[k] = 1.0;
                return (p.start, e);
            }
            let v = lobatto_weight(n, k) / dx;
            w[k] = v;
            sum += v;
        }
        for v in w.iter_mut() {
            *v /= sum;
        }
        (p.start, w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSet {
    pub modes: Vec<i64>,
    pub hermitian_pairing: bool,
}

impl ModeSet {
    pub fn new(n_max: usize, hermitian_pairing: bool) -> ModeSet {
        let k = n_max as i64;
        ModeSet { modes: (-k..=k).collect(), hermitian_pairing }
    }

    pub fn n_max(&self) -> usize {
        self.modes.iter().map(|n| n.unsigned_abs() as usize).max().unwrap_or(0)
    }

    pub fn index(&self, n: i64) -> Option<usize> {
        let k = self.n_max() as i64;
        if n.abs() <= k {
            Some((n + k) as usize)
        } else {
            None
        }
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }
}
