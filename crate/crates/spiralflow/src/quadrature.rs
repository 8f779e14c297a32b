//! Gauss rules, adaptive Gauss–Kronrod, and Filon–Legendre weights.

use num_complex::Complex64;
use std::f64::consts::PI;
use std::sync::OnceLock;

pub const MAX_GL: usize = 160;

#[derive(Debug, Clone)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

fn build_gauss_legendre(n: usize) -> Rule {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Rule { nodes, weights }
}

/// Gauss–Legendre rule on [-1, 1] with `n` points, `1 <= n <= MAX_GL`.
pub fn gauss_legendre(n: usize) -> &'static Rule {
    static TABLE: OnceLock<Vec<Rule>> = OnceLock::new();
    let table = TABLE.get_or_init(|| (0..=MAX_GL).map(|k| build_gauss_legendre(k.max(1))).collect());
    &table[n.clamp(1, MAX_GL)]
}

/// Gauss–Laguerre rule for the weight e^{-x} on [0, ∞).
pub fn gauss_laguerre(n: usize) -> Rule {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..n {
        if i == 0 {
            z = 3.0 / (1.0 + 2.4 * nf);
        } else if i == 1 {
            z += 15.0 / (1.0 + 2.5 * nf);
        } else {
            let ai = (i - 1) as f64;
            z += (1.0 + 2.55 * ai) / (1.9 * ai) * (z - nodes[i - 2]);
        }
        let mut pp = 0.0;
        let mut p2 = 0.0;
        for _ in 0..200 {
            let mut p1 = 1.0;
            p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = ((2.0 * jf + 1.0 - z) * p2 - jf * p3) / (jf + 1.0);
            }
            pp = (nf * p1 - nf * p2) / z;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs() {
                break;
            }
        }
        nodes[i] = z;
        weights[i] = -1.0 / (pp * nf * p2);
    }
    Rule { nodes, weights }
}

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15<F: Fn(f64) -> Complex64>(f: &F, a: f64, b: f64) -> (Complex64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut rk = fc * WGK[7];
    let mut rg = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        rk += s * WGK[j];
        if j % 2 == 1 {
            rg += s * WG[j / 2];
        }
    }
    (rk * h, ((rk - rg) * h).norm())
}

/// Adaptive 7/15-point Gauss–Kronrod integration of a complex integrand.
pub fn adaptive_gk_complex<F: Fn(f64) -> Complex64>(f: F, a: f64, b: f64, tol: f64) -> (Complex64, f64) {
    let (v, e) = gk15(&f, a, b);
    let mut stack = vec![(a, b, v, e)];
    let mut total = Complex64::new(0.0, 0.0);
    let mut err = 0.0;
    let scale = v.norm().max(1e-300);
    let mut evals = 0usize;
    while let Some((lo, hi, val, est)) = stack.pop() {
        let width = (hi - lo) / (b - a);
        if est <= (tol * scale).max(1e-300) * width.max(1e-3) || evals > 200_000 || (hi - lo).abs() < 1e-14 * (b - a).abs() {
            total += val;
            err += est;
            continue;
        }
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = gk15(&f, lo, mid);
        let (v2, e2) = gk15(&f, mid, hi);
        evals += 30;
        stack.push((lo, mid, v1, e1));
        stack.push((mid, hi, v2, e2));
    }
    (total, err)
}

/// Adaptive 7/15-point Gauss–Kronrod integration of a real integrand.
pub fn adaptive_gk<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> (f64, f64) {
    let (v, e) = adaptive_gk_complex(|x| Complex64::new(f(x), 0.0), a, b, tol);
    (v.re, e)
}

/// Spherical Bessel functions j_0..j_{kmax} at real x.
pub fn spherical_bessel(kmax: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; kmax + 1];
    let ax = x.abs();
    if ax < 1e-300 {
        out[0] = 1.0;
        return out;
    }
    if ax > kmax as f64 + 1.0 {
        let (s, c) = ax.sin_cos();
        out[0] = s / ax;
        if kmax >= 1 {
            out[1] = s / (ax * ax) - c / ax;
        }
        for k in 1..kmax {
            out[k + 1] = (2.0 * k as f64 + 1.0) / ax * out[k] - out[k - 1];
        }
    } else {
        let start = kmax + 30 + (2.0 * ax) as usize;
        let mut jp1 = 0.0f64;
        let mut j = 1e-300f64;
        for k in (1..=start).rev() {
            let jm1 = (2.0 * k as f64 + 1.0) / ax * j - jp1;
            jp1 = j;
            j = jm1;
            if k - 1 <= kmax {
                out[k - 1] = j;
            }
            if j.abs() > 1e250 {
                j *= 1e-250;
                jp1 *= 1e-250;
                for v in out.iter_mut() {
                    *v *= 1e-250;
                }
            }
        }
        let (s, c) = ax.sin_cos();
        let j0 = if ax < 1e-4 { 1.0 - ax * ax / 6.0 } else { s / ax };
        let j1 = if ax < 1e-4 { ax / 3.0 - ax * ax * ax / 30.0 } else { s / (ax * ax) - c / ax };
        let scale = if j0.abs() >= j1.abs() || kmax == 0 { j0 / out[0] } else { j1 / out[1] };
        for v in out.iter_mut() {
            *v *= scale;
        }
    }
    if x < 0.0 {
        for (k, v) in out.iter_mut().enumerate() {
            if k % 2 == 1 {
                *v = -*v;
            }
        }
    }
    out
}

/// Weights w_j with ∫_{-1}^{1} g(t) e^{iκt} dt ≈ Σ w_j g(t_j) at the q-point Gauss nodes.
pub fn filon_weights(q: usize, kappa: f64) -> Vec<Complex64> {
    let rule = gauss_legendre(q);
    let jb = spherical_bessel(q, kappa);
    let mut moments = Vec::with_capacity(q);
    let mut ik = Complex64::new(1.0, 0.0);
    for k in 0..q {
        moments.push(ik * (2.0 * jb[k]));
        ik *= Complex64::new(0.0, 1.0);
    }
    rule.nodes
        .iter()
        .zip(&rule.weights)
        .map(|(&t, &w)| {
            let mut p0 = 1.0;
            let mut p1 = t;
            let mut acc = moments[0] * 0.5;
            if q > 1 {
                acc += moments[1] * (1.5 * p1);
            }
            for k in 2..q {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * t * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
                acc += moments[k] * ((2.0 * kf + 1.0) * 0.5 * p2);
            }
            acc * w
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for n in [1usize, 5, 20, 64, 128] {
            let r = gauss_legendre(n);
            let s: f64 = r.weights.iter().sum();
            assert!((s - 2.0).abs() < 1e-13);
            let deg = 2 * n - 2;
            let v: f64 = r.nodes.iter().zip(&r.weights).map(|(x, w)| w * x.powi(deg as i32)).sum();
            assert!((v - 2.0 / (deg as f64 + 1.0)).abs() < 1e-13);
        }
    }

    #[test]
    fn gauss_laguerre_moments() {
        let r = gauss_laguerre(60);
        let mut fact = 1.0;
        for k in 0..12 {
            if k > 0 {
                fact *= k as f64;
            }
            let v: f64 = r.nodes.iter().zip(&r.weights).map(|(x, w)| w * x.powi(k)).sum();
            assert!((v / fact - 1.0).abs() < 1e-12, "k={k} v={v}");
        }
    }

    #[test]
    fn spherical_bessel_matches_closed_forms() {
        for &x in &[1e-6, 0.3, 1.0, 5.0, 17.0, 80.0, -2.5] {
            let j = spherical_bessel(6, x);
            let (s, c) = (x.sin(), x.cos());
            let j2 = (3.0 / (x * x) - 1.0) * s / x - 3.0 * c / (x * x);
            if x.abs() > 1e-3 {
                assert!((j[0] - s / x).abs() < 1e-14);
                assert!((j[2] - j2).abs() < 1e-12, "x={x}");
            } else {
                assert!((j[2] - x * x / 15.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn filon_matches_direct_integration() {
        for &kappa in &[0.0, 3.0, 40.0, 700.0] {
            let w = filon_weights(24, kappa);
            let r = gauss_legendre(24);
            let got: Complex64 = r.nodes.iter().zip(&w).map(|(&t, &wt)| wt * (1.0 / (2.0 + t))).sum();
            let (want, _) = adaptive_gk_complex(|t| Complex64::from_polar(1.0 / (2.0 + t), kappa * t), -1.0, 1.0, 1e-14);
            assert!((got - want).norm() < 1e-12, "kappa={kappa} got={got} want={want}");
        }
    }

    #[test]
    fn adaptive_gk_handles_peaks() {
        let (v, _) = adaptive_gk(|x| 1.0 / (1e-4 + x * x), -1.0, 1.0, 1e-12);
        let want = 2.0 * (1.0f64 / 1e-2).atan() / 1e-2;
        assert!((v - want).abs() / want < 1e-11);
    }
}
