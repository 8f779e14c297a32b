//! Configuration, run orchestration, and serialization of fields, curves, tables, heatmaps, and manifests.

use crate::coefficients::{a_n, chi_n, dbeta_a_n};
use crate::error::{Result, SpiralError};
use crate::linear_ops::{factorization_pair, l_forward, l_inv_profile, linv_matrix, smoke_family, Sign};
use crate::nonlinear_solver::{fixed_point_solve, gamma0, normalize, BoundaryData, Problem, SolveState};
use crate::params_grids::{make_grid, Params, DEFAULT_N_NODES};
use crate::reconstruction::{build_map, initial_data_compare, radial_solution, spiral_curves, time_slice, ConvergenceRow, FieldKind, PhysicalField, SampleGrid};
use crate::spectral_field::{ModeFunction, NormReport, RoleTag, SpectralField, C64};
use crate::verification::{asymptotic_slope_check, frobenius_solve, kernel_exponent_check, top_solution_2f2, ModeODE};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const SOLUTION_FILE: &str = "solution.csv";
pub const CONVERGENCE_TIMES: [f64; 5] = [1.0, 0.3, 0.1, 0.03, 0.01];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Solve,
    Reconstruct,
    Verify,
    Radial,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Reconstruct => "reconstruct",
            Command::Verify => "verify",
            Command::Radial => "radial",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Inline(Vec<(i64, f64, f64)>),
    File(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n: usize,
    pub extent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub params: Params,
    pub n_nodes: usize,
    pub boundary: Boundary,
    pub commands: Vec<Command>,
    pub output_dir: PathBuf,
    pub grid_spec: GridSpec,
    pub times: Vec<f64>,
    pub spiral_count: usize,
}

/// Command-line values that override the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub mu: Option<f64>,
    pub n_max: Option<usize>,
    pub out: Option<PathBuf>,
    pub t: Option<String>,
    pub grid: Option<String>,
}

fn cfg_err(msg: impl Into<String>) -> SpiralError {
    SpiralError::Config(msg.into())
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse::<T>().map_err(|_| cfg_err(format!("{key}: cannot parse {:?}", v.trim())))
}

pub fn parse_grid_spec(s: &str) -> Result<GridSpec> {
    let bad = || cfg_err(format!("grid: expected <N>x<N>@<extent>, got {s:?}"));
    let (dims, ext) = s.trim().split_once('@').ok_or_else(bad)?;
    let (a, b) = dims.split_once('x').ok_or_else(bad)?;
    let n: usize = a.trim().parse().map_err(|_| bad())?;
    let m: usize = b.trim().parse().map_err(|_| bad())?;
    let extent: f64 = ext.trim().parse().map_err(|_| bad())?;
    if n != m {
        return Err(cfg_err(format!("grid: only square grids are supported, got {n}x{m}")));
    }
    if n < 2 || !(extent > 0.0) || !extent.is_finite() {
        return Err(cfg_err(format!("grid: need N >= 2 and a positive extent, got {s:?}")));
    }
    Ok(GridSpec { n, extent })
}

pub fn parse_times(s: &str) -> Result<Vec<f64>> {
    let out: Vec<f64> = s.split(',').filter(|p| !p.trim().is_empty()).map(|p| parse_num::<f64>("t", p)).collect::<Result<_>>()?;
    if out.is_empty() || out.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
        return Err(cfg_err(format!("t: need a nonempty list of positive times, got {s:?}")));
    }
    Ok(out)
}

/// Mode-coefficient text: one `n re im` per line, `#` comments.
pub fn parse_coefficients(text: &str) -> Result<Vec<(i64, f64, f64)>> {
    let mut out = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let bad = || cfg_err(format!("line {}: expected `n re im`, got {:?}", k + 1, raw.trim()));
        if parts.len() != 3 {
            return Err(bad());
        }
        let n: i64 = parts[0].parse().map_err(|_| bad())?;
        let re: f64 = parts[1].parse().map_err(|_| bad())?;
        let im: f64 = parts[2].parse().map_err(|_| bad())?;
        if !re.is_finite() || !im.is_finite() {
            return Err(bad());
        }
        if out.iter().any(|(m, _, _)| *m == n) {
            return Err(cfg_err(format!("line {}: mode {n} listed twice", k + 1)));
        }
        out.push((n, re, im));
    }
    if !out.iter().any(|(n, _, _)| *n == 0) {
        return Err(cfg_err("coefficients: mean mode 0 is required"));
    }
    Ok(out)
}

fn parse_inline_modes(v: &str) -> Result<Vec<(i64, f64, f64)>> {
    parse_coefficients(&v.replace(';', "\n")).map_err(|e| cfg_err(format!("modes: {e}")))
}

impl RunConfig {
    pub fn defaults(command: Command) -> Result<RunConfig> {
        Ok(RunConfig {
            params: Params::new(1.5)?,
            n_nodes: DEFAULT_N_NODES,
            boundary: Boundary::Inline(vec![(0, 1.0, 0.0)]),
            commands: vec![command],
            output_dir: PathBuf::from("spiralflow_out"),
            grid_spec: GridSpec { n: 65, extent: 2.0 },
            times: vec![1.0],
            spiral_count: 8,
        })
    }

    /// Flat `key = value` text applied over defaults, then CLI overrides.
    pub fn load(command: Command, text: Option<&str>, base_dir: Option<&Path>, ov: &Overrides) -> Result<RunConfig> {
        let mut cfg = RunConfig::defaults(command)?;
        let mut kv: BTreeMap<String, String> = BTreeMap::new();
        if let Some(text) = text {
            for (k, raw) in text.lines().enumerate() {
                let line = raw.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| cfg_err(format!("config line {}: expected key = value", k + 1)))?;
                kv.insert(key.trim().to_string(), value.trim().to_string());
            }
        }
        if let Some(m) = ov.mu {
            kv.insert("mu".into(), m.to_string());
        }
        if let Some(n) = ov.n_max {
            kv.insert("n_max".into(), n.to_string());
        }
        if let Some(o) = &ov.out {
            kv.insert("output_dir".into(), o.display().to_string());
        }
        if let Some(t) = &ov.t {
            kv.insert("t".into(), t.clone());
        }
        if let Some(g) = &ov.grid {
            kv.insert("grid".into(), g.clone());
        }
        if let Some(v) = kv.get("mu") {
            let mu: f64 = parse_num("mu", v)?;
            if !(mu > 1.0) {
                return Err(cfg_err(format!("mu must exceed 1 (the construction requires mu > 1), got {mu}")));
            }
            let keep = cfg.params;
            cfg.params = Params::new(mu)?;
            cfg.params.n_max = keep.n_max;
        }
        for (key, v) in &kv {
            match key.as_str() {
                "mu" => {}
                "delta" => cfg.params.delta = parse_num(key, v)?,
                "n_max" => cfg.params.n_max = parse_num(key, v)?,
                "n_nodes" => cfg.n_nodes = parse_num(key, v)?,
                "beta_inf_cut" => cfg.params.beta_inf_cut = parse_num(key, v)?,
                "tol_fixed_point" => cfg.params.tol_fixed_point = parse_num(key, v)?,
                "tol_quadrature" => cfg.params.tol_quadrature = parse_num(key, v)?,
                "max_iters" => cfg.params.max_iters = parse_num(key, v)?,
                "modes" => cfg.boundary = Boundary::Inline(parse_inline_modes(v)?),
                "coefficients" => {
                    let p = PathBuf::from(v);
                    cfg.boundary = Boundary::File(match base_dir {
                        Some(d) if p.is_relative() => d.join(p),
                        _ => p,
                    });
                }
                "output_dir" => cfg.output_dir = PathBuf::from(v),
                "grid" => cfg.grid_spec = parse_grid_spec(v)?,
                "t" => cfg.times = parse_times(v)?,
                "spiral_count" => cfg.spiral_count = parse_num(key, v)?,
                other => return Err(cfg_err(format!("unknown config key {other:?}"))),
            }
        }
        cfg.params.validate()?;
        if cfg.n_nodes < 64 {
            return Err(cfg_err(format!("n_nodes must be at least 64, got {}", cfg.n_nodes)));
        }
        Ok(cfg)
    }

    pub fn boundary_modes(&self) -> Result<Vec<(i64, C64)>> {
        let raw = match &self.boundary {
            Boundary::Inline(v) => v.clone(),
            Boundary::File(p) => {
                let text = fs::read_to_string(p).map_err(|e| SpiralError::Io(format!("{}: {e}", p.display())))?;
                parse_coefficients(&text).map_err(|e| cfg_err(format!("{}: {e}", p.display())))?
            }
        };
        Ok(raw.into_iter().map(|(n, re, im)| (n, C64::new(re, im))).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub iterations: usize,
    pub last_update_norm: f64,
    pub residual_norm: f64,
    pub contraction_ratio: f64,
    pub response_constant: f64,
    pub f_norm: f64,
    pub gamma_pert_norm: f64,
    pub update_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    pub smallness: f64,
    pub lambda_scale: f64,
    pub time_factor: f64,
    pub truncated_modes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyItem {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl VerifyItem {
    fn at_most(name: impl Into<String>, measured: f64, tolerance: f64) -> VerifyItem {
        VerifyItem { name: name.into(), measured, tolerance, pass: measured <= tolerance }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Command,
    pub config: RunConfig,
    pub boundary: Option<BoundaryReport>,
    pub solver: Option<SolverReport>,
    pub norms: Option<NormReport>,
    pub diffeomorphism: Option<crate::reconstruction::DiffeoReport>,
    pub convergence: Vec<ConvergenceRow>,
    pub verify: Vec<VerifyItem>,
    pub artifacts: Vec<String>,
    /// Wall-clock seconds per stage; the only nondeterministic field.
    pub timings: BTreeMap<String, f64>,
}

impl RunManifest {
    fn new(cfg: &RunConfig, command: Command) -> RunManifest {
        RunManifest {
            command,
            config: cfg.clone(),
            boundary: None,
            solver: None,
            norms: None,
            diffeomorphism: None,
            convergence: Vec::new(),
            verify: Vec::new(),
            artifacts: Vec::new(),
            timings: BTreeMap::new(),
        }
    }
}

/// Shortest decimal with 17 significant digits.
pub fn fmt17(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

fn write_file(dir: &Path, name: &str, bytes: &[u8], m: &mut RunManifest) -> Result<()> {
    let p = dir.join(name);
    fs::write(&p, bytes).map_err(|e| SpiralError::Io(format!("{}: {e}", p.display())))?;
    m.artifacts.push(name.to_string());
    Ok(())
}

/// CSV text with a header row and 17-significant-digit cells.
pub fn csv_text(header: &[&str], rows: impl Iterator<Item = Vec<f64>>) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        let cells: Vec<String> = r.iter().map(|v| fmt17(*v)).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

pub fn read_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().ok_or_else(|| cfg_err("empty CSV"))?.split(',').map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    for (k, l) in lines.enumerate() {
        if l.trim().is_empty() {
            continue;
        }
        let r: Vec<f64> = l.split(',').map(|c| c.trim().parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|_| cfg_err(format!("CSV row {}: bad number", k + 2)))?;
        if r.len() != header.len() {
            return Err(cfg_err(format!("CSV row {}: expected {} cells", k + 2, header.len())));
        }
        rows.push(r);
    }
    Ok((header, rows))
}

/// Scalar field on a Cartesian grid as `x,y,<name>`.
pub fn field_csv(field: &PhysicalField, name: &str) -> String {
    let pts = field.grid.points();
    if field.vectors.is_empty() {
        csv_text(&["x", "y", name], pts.iter().zip(&field.values).map(|(p, v)| vec![p.0, p.1, *v]))
    } else {
        let hx = format!("{name}_x");
        let hy = format!("{name}_y");
        csv_text(&["x", "y", &hx, &hy], pts.iter().zip(&field.vectors).map(|(p, v)| vec![p.0, p.1, v[0], v[1]]))
    }
}

/// Diverging blue–white–red map on [−1, 1]; NaN is mid gray.
pub fn diverging_rgb(v: f64) -> [u8; 3] {
    if !v.is_finite() {
        return [128, 128, 128];
    }
    let v = v.clamp(-1.0, 1.0);
    let c = |x: f64| (255.0 * x).round() as u8;
    if v < 0.0 {
        [c(1.0 + v), c(1.0 + v), 255]
    } else {
        [255, c(1.0 - v), c(1.0 - v)]
    }
}

/// Binary P6 image of an n×n field, row-major from the top-left, limits ±max|value|.
pub fn ppm_bytes(values: &[f64], n: usize) -> Vec<u8> {
    let lim = values.iter().filter(|v| v.is_finite()).fold(0.0f64, |a, v| a.max(v.abs()));
    let mut out = format!("P6\n{n} {n}\n255\n").into_bytes();
    for v in values {
        let s = if lim > 0.0 { v / lim } else { 0.0 * v };
        out.extend_from_slice(&diverging_rgb(s));
    }
    out
}

/// Per-mode β-profiles as `n,beta,re,im`; β = inf carries the value at infinity.
pub fn solution_csv(p: &Problem, f: &SpectralField) -> String {
    let mut rows = Vec::new();
    for m in &f.modes {
        for (b, z) in p.grid.nodes.iter().zip(&m.values) {
            rows.push(vec![m.n as f64, *b, z.re, z.im]);
        }
        rows.push(vec![m.n as f64, f64::INFINITY, m.value_at_infinity.re, m.value_at_infinity.im]);
    }
    csv_text(&["n", "beta", "re", "im"], rows.into_iter())
}

pub fn read_solution(p: &Problem, text: &str) -> Result<SpectralField> {
    let (header, rows) = read_csv(text)?;
    if header != ["n", "beta", "re", "im"] {
        return Err(cfg_err("solution file: unexpected header"));
    }
    let mut f = p.zeros(RoleTag::F);
    let m = p.grid.len();
    let mut counts = vec![0usize; f.modes.len()];
    for r in rows {
        let n = r[0] as i64;
        let idx = p.mode_set.index(n).ok_or_else(|| cfg_err(format!("solution file: mode {n} outside n_max")))?;
        let z = C64::new(r[2], r[3]);
        if r[1].is_infinite() {
            f.modes[idx].value_at_infinity = z;
        } else {
            let k = counts[idx];
            if k >= m || (p.grid.nodes[k] - r[1]).abs() > 1e-15 * r[1].abs() {
                return Err(cfg_err("solution file: β-grid does not match this configuration"));
            }
            f.modes[idx].values[k] = z;
            counts[idx] += 1;
        }
    }
    if counts.iter().any(|&c| c != m) {
        return Err(cfg_err("solution file: incomplete mode profiles"));
    }
    Ok(f)
}

fn write_manifest(dir: &Path, m: &RunManifest) -> Result<()> {
    let text = serde_json::to_string_pretty(m).map_err(|e| SpiralError::Io(e.to_string()))?;
    let p = dir.join(format!("{}_manifest.json", m.command.name()));
    fs::write(&p, text).map_err(|e| SpiralError::Io(format!("{}: {e}", p.display())))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| SpiralError::Io(format!("{}: {e}", dir.display())))
}

fn boundary_data(cfg: &RunConfig) -> Result<BoundaryData> {
    normalize(&cfg.boundary_modes()?, cfg.params.mu, cfg.params.n_max)
}

fn solver_report(st: &SolveState) -> SolverReport {
    SolverReport {
        iterations: st.iterate_index,
        last_update_norm: st.last_update_norm,
        residual_norm: st.residual_norm,
        contraction_ratio: st.contraction_ratio,
        response_constant: st.response_constant,
        f_norm: st.f_norm,
        gamma_pert_norm: st.gamma_pert_norm,
        update_history: st.history.iter().map(|h| h.update_norm).collect(),
    }
}

fn boundary_report(g: &BoundaryData) -> BoundaryReport {
    BoundaryReport { smallness: g.smallness, lambda_scale: g.lambda_scale, time_factor: g.time_factor, truncated_modes: g.truncated_modes }
}

pub fn cmd_solve(cfg: &RunConfig) -> Result<RunManifest> {
    let mut man = RunManifest::new(cfg, Command::Solve);
    ensure_dir(&cfg.output_dir)?;
    let t = Instant::now();
    let gamma = boundary_data(cfg)?;
    let p = Problem::new(&cfg.params, cfg.n_nodes)?;
    man.timings.insert("setup".into(), t.elapsed().as_secs_f64());
    let t = Instant::now();
    let st = fixed_point_solve(&p, &gamma)?;
    man.timings.insert("fixed_point".into(), t.elapsed().as_secs_f64());
    man.boundary = Some(boundary_report(&gamma));
    man.solver = Some(solver_report(&st));
    man.norms = Some(p.norm(&st.f, 0.5));
    write_file(&cfg.output_dir, SOLUTION_FILE, solution_csv(&p, &st.f).as_bytes(), &mut man)?;
    write_manifest(&cfg.output_dir, &man)?;
    Ok(man)
}

fn time_tag(k: usize) -> String {
    format!("t{k}")
}

pub fn cmd_reconstruct(cfg: &RunConfig) -> Result<RunManifest> {
    let mut man = RunManifest::new(cfg, Command::Reconstruct);
    let t = Instant::now();
    let gamma = boundary_data(cfg)?;
    let p = Problem::new(&cfg.params, cfg.n_nodes)?;
    let sol_path = cfg.output_dir.join(SOLUTION_FILE);
    let text = fs::read_to_string(&sol_path).map_err(|_| cfg_err(format!("missing solution {}: run solve first", sol_path.display())))?;
    let f = read_solution(&p, &text)?;
    let map = build_map(&p, &f, &gamma)?;
    man.boundary = Some(boundary_report(&gamma));
    man.diffeomorphism = Some(map.report.clone());
    man.timings.insert("coordinates".into(), t.elapsed().as_secs_f64());
    let t = Instant::now();
    let grid = SampleGrid::Cartesian { n: cfg.grid_spec.n, extent: cfg.grid_spec.extent };
    for (k, &tt) in cfg.times.iter().enumerate() {
        let fields = time_slice(&map, tt, &grid)?;
        let tag = time_tag(k);
        for fl in &fields {
            match fl.kind {
                FieldKind::omega_t => {
                    write_file(&cfg.output_dir, &format!("omega_{tag}.csv"), field_csv(fl, "omega").as_bytes(), &mut man)?;
                    write_file(&cfg.output_dir, &format!("omega_{tag}.ppm"), &ppm_bytes(&fl.values, cfg.grid_spec.n), &mut man)?;
                }
                FieldKind::psi_t => write_file(&cfg.output_dir, &format!("psi_{tag}.csv"), field_csv(fl, "psi").as_bytes(), &mut man)?,
                FieldKind::u_t => write_file(&cfg.output_dir, &format!("u_{tag}.csv"), field_csv(fl, "u").as_bytes(), &mut man)?,
                _ => {}
            }
        }
    }
    man.timings.insert("fields".into(), t.elapsed().as_secs_f64());
    let t = Instant::now();
    let phis: Vec<f64> = (0..cfg.spiral_count).map(|k| 2.0 * std::f64::consts::PI * k as f64 / cfg.spiral_count.max(1) as f64).collect();
    let curves = spiral_curves(&map, &phis, 1e-3, map.grid.last());
    let rows = curves.iter().flat_map(|c| c.points.iter().map(move |&(b, r, th)| vec![c.phi0, b, r, th]));
    write_file(&cfg.output_dir, "spiral_curves.csv", csv_text(&["phi0", "beta", "r", "theta"], rows).as_bytes(), &mut man)?;
    let conv = initial_data_compare(&map, &CONVERGENCE_TIMES, 1.0, 2.0, 16, 64)?;
    let rows = conv.iter().map(|r| vec![r.t, r.omega_sup_error, r.psi_sup_error, r.u_l2_error, r.missing_points as f64]);
    write_file(
        &cfg.output_dir,
        "convergence.csv",
        csv_text(&["t", "omega_sup_error", "psi_sup_error", "u_l2_error", "missing_points"], rows).as_bytes(),
        &mut man,
    )?;
    man.convergence = conv;
    man.timings.insert("curves_and_convergence".into(), t.elapsed().as_secs_f64());
    write_manifest(&cfg.output_dir, &man)?;
    Ok(man)
}

pub fn cmd_radial(cfg: &RunConfig) -> Result<RunManifest> {
    let mut man = RunManifest::new(cfg, Command::Radial);
    ensure_dir(&cfg.output_dir)?;
    let t = Instant::now();
    let mu = cfg.params.mu;
    let gamma = boundary_data(cfg)?;
    let c0 = gamma0(mu) * mu.powf(-1.0 / (2.0 * mu));
    let nr = 101;
    let rows = (0..nr).map(|k| {
        let r = 0.1 * 100f64.powf(k as f64 / (nr - 1) as f64);
        let (om, ps, ut) = radial_solution(mu, c0, r);
        vec![r, om, ps, ut]
    });
    write_file(&cfg.output_dir, "radial.csv", csv_text(&["r", "omega", "psi", "u_theta"], rows).as_bytes(), &mut man)?;
    let omega0 = gamma.time_factor * gamma.omega_ring(0).re;
    let grid = SampleGrid::Cartesian { n: cfg.grid_spec.n, extent: cfg.grid_spec.extent };
    let pts = grid.points();
    for k in 0..cfg.times.len() {
        let tag = time_tag(k);
        let sample: Vec<(f64, f64, f64)> = pts.iter().map(|&(x, y)| radial_solution(mu, omega0, x.hypot(y))).collect();
        let om: Vec<f64> = sample.iter().map(|s| if s.0.is_finite() { s.0 } else { f64::NAN }).collect();
        let fl = PhysicalField { kind: FieldKind::omega_t, grid: grid.clone(), values: om, vectors: Vec::new(), time: Some(cfg.times[k]) };
        write_file(&cfg.output_dir, &format!("omega_{tag}.csv"), field_csv(&fl, "omega").as_bytes(), &mut man)?;
        write_file(&cfg.output_dir, &format!("omega_{tag}.ppm"), &ppm_bytes(&fl.values, cfg.grid_spec.n), &mut man)?;
        let ps = PhysicalField { kind: FieldKind::psi_t, values: sample.iter().map(|s| s.1).collect(), ..fl.clone() };
        write_file(&cfg.output_dir, &format!("psi_{tag}.csv"), field_csv(&ps, "psi").as_bytes(), &mut man)?;
    }
    man.boundary = Some(boundary_report(&gamma));
    man.timings.insert("radial".into(), t.elapsed().as_secs_f64());
    write_manifest(&cfg.output_dir, &man)?;
    Ok(man)
}

/// Invariant battery: coefficient identity, endpoint laws, factorization, round trips, series oracles, exponents.
pub fn verify_battery(params: &Params, n_nodes: usize) -> Result<Vec<VerifyItem>> {
    let mu = params.mu;
    let c = 2.0 * mu - 1.0;
    let grid = make_grid(params, n_nodes)?;
    let nm = params.n_max as i64;
    let mut items = Vec::new();

    let mut ident: f64 = 0.0;
    for n in 1..=nm {
        for &b in &grid.nodes {
            let a = a_n(n, b, mu);
            let lhs = a * a - dbeta_a_n(n, b, mu);
            let rhs = (n * n) as f64 * mu * mu - c * chi_n(n, b, mu);
            ident = ident.max((lhs - rhs).abs() / rhs.abs().max(1.0));
        }
    }
    items.push(VerifyItem::at_most("coefficient_identity", ident, 1e-12));

    let mut endpoint: f64 = 0.0;
    let mut round: f64 = 0.0;
    let family = smoke_family(params.delta);
    for n in -nm..=nm {
        for s in [Sign::Plus, Sign::Minus] {
            let op = linv_matrix(&grid, params, n, s)?;
            let one = ModeFunction::from_real_fn(n, &grid, |_| 1.0, 1.0);
            let expect = 1.0 / (s.value() * n.unsigned_abs() as f64 * mu + c);
            endpoint = endpoint.max((op.apply(&one).value_at_zero() - expect).norm());
            for (_, prof) in &family {
                let u = l_inv_profile(&grid, params, n, s, prof)?;
                let back = l_forward(&grid, mu, n, s, &u);
                let f = prof.sample(n, &grid);
                for (x, y) in back.values.iter().zip(&f.values) {
                    round = round.max((x - y).norm());
                }
            }
        }
    }
    items.push(VerifyItem::at_most("endpoint_law", endpoint, 1e-9));
    items.push(VerifyItem::at_most("operator_round_trip", round, 1e-7));

    let mut fact: f64 = 0.0;
    for n in -nm.min(8)..=nm.min(8) {
        let g = ModeFunction::from_fn(
            n,
            &grid,
            |b| C64::new((1.0 + 0.3 * b.sin()) / (1.0 + b * b), 0.2 * (-b).exp() * (n as f64)),
            C64::new(0.0, 0.0),
        );
        let (d, comp) = factorization_pair(&grid, mu, &g);
        for i in 1..grid.len() - 1 {
            fact = fact.max((d.values[i] - comp.values[i]).norm());
        }
    }
    items.push(VerifyItem::at_most("factorization", fact, 1e-8));

    let mut cross: f64 = 0.0;
    let mut defect: f64 = 0.0;
    let mut slope: f64 = 0.0;
    for n in [2i64, 3] {
        let ode = ModeODE::new(n, mu)?;
        let sol = frobenius_solve(&ode, 1, 60)?;
        for b in [0.1, 0.5, 1.0] {
            let a = sol.eval(b);
            cross = cross.max((a - top_solution_2f2(&ode, b)?).norm() / a.norm());
        }
        for w in 1..=3 {
            defect = defect.max(frobenius_solve(&ode, w, 60)?.recursion_defect(&ode));
        }
        let s = asymptotic_slope_check(&ode, 200.0, 2000.0, 40)?;
        slope = slope.max((s / ode.growth_exponent - 1.0).abs());
    }
    items.push(VerifyItem::at_most("frobenius_vs_2f2", cross, 1e-10));
    items.push(VerifyItem::at_most("frobenius_recursion", defect, 1e-13));
    items.push(VerifyItem::at_most("asymptotic_slope_relative", slope, 0.05));

    let mut min_exp = f64::INFINITY;
    for n in 1..=nm {
        let r = kernel_exponent_check(n, mu)?;
        min_exp = min_exp.min(r.growth_exponent);
        if let Some((x, y)) = r.case3_pair {
            min_exp = min_exp.min(x).min(y);
        }
    }
    items.push(VerifyItem { name: "kernel_exponents_positive".into(), measured: min_exp, tolerance: 0.0, pass: min_exp > 0.0 });
    Ok(items)
}

pub fn cmd_verify(cfg: &RunConfig) -> Result<RunManifest> {
    let mut man = RunManifest::new(cfg, Command::Verify);
    ensure_dir(&cfg.output_dir)?;
    let t = Instant::now();
    man.verify = verify_battery(&cfg.params, cfg.n_nodes)?;
    man.timings.insert("battery".into(), t.elapsed().as_secs_f64());
    let mut report = String::new();
    for it in &man.verify {
        let _ = writeln!(report, "{} {} measured={} tolerance={}", if it.pass { "PASS" } else { "FAIL" }, it.name, fmt17(it.measured), fmt17(it.tolerance));
    }
    write_file(&cfg.output_dir, "verify.txt", report.as_bytes(), &mut man)?;
    write_manifest(&cfg.output_dir, &man)?;
    let failed: Vec<&str> = man.verify.iter().filter(|i| !i.pass).map(|i| i.name.as_str()).collect();
    if !failed.is_empty() {
        return Err(SpiralError::Verification(format!("failed items: {}", failed.join(", "))));
    }
    Ok(man)
}

pub fn run(command: Command, config_path: Option<&Path>, ov: &Overrides) -> Result<RunManifest> {
    let text = match config_path {
        Some(p) => Some(fs::read_to_string(p).map_err(|e| SpiralError::Io(format!("{}: {e}", p.display())))?),
        None => None,
    };
    let base = config_path.and_then(|p| p.parent());
    let cfg = RunConfig::load(command, text.as_deref(), base, ov)?;
    match command {
        Command::Solve => cmd_solve(&cfg),
        Command::Reconstruct => cmd_reconstruct(&cfg),
        Command::Verify => cmd_verify(&cfg),
        Command::Radial => cmd_radial(&cfg),
    }
}

/// Machine-readable error line for stderr.
pub fn error_json(e: &SpiralError) -> String {
    serde_json::json!({ "class": e.class(), "message": e.to_string() }).to_string()
}

/// Caps the worker pool from `SPIRALFLOW_THREADS`.
pub fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("SPIRALFLOW_THREADS") {
        let n: usize = v.trim().parse().map_err(|_| cfg_err(format!("SPIRALFLOW_THREADS: cannot parse {v:?}")))?;
        if n == 0 {
            return Err(cfg_err("SPIRALFLOW_THREADS must be positive"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| cfg_err(e.to_string()))?;
    }
    Ok(())
}
