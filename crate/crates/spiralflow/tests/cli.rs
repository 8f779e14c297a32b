use spiralflow::cli_io::*;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spiralflow"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().args(args).arg("--out").arg(dir).output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let p = dir.join("run.cfg");
    fs::write(&p, body).unwrap();
    p
}

fn manifest(dir: &Path, name: &str) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join(format!("{name}_manifest.json"))).unwrap()).unwrap()
}

fn stderr_json(o: &Output) -> serde_json::Value {
    serde_json::from_str(String::from_utf8_lossy(&o.stderr).trim()).unwrap()
}

fn csv(dir: &Path, name: &str) -> (Vec<String>, Vec<Vec<f64>>) {
    read_csv(&fs::read_to_string(dir.join(name)).unwrap()).unwrap()
}

#[test]
fn mean_only_solve_takes_zero_iterations() {
    let d = tempfile::tempdir().unwrap();
    let o = run_in(d.path(), &["solve", "--n-max", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(d.path(), "solve");
    assert_eq!(m["solver"]["iterations"], 0);
    assert_eq!(m["command"], "solve");
    assert!(d.path().join(SOLUTION_FILE).exists());
}

#[test]
fn small_dipole_solve_contracts() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), "mu = 1.5\nn_max = 8\nmodes = 0 1 0; 1 5e-4 0; -1 5e-4 0\n");
    let o = bin().arg("solve").arg("--config").arg(&cfg).arg("--out").arg(d.path()).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(d.path(), "solve");
    let s = &m["solver"];
    assert!(s["iterations"].as_u64().unwrap() > 0);
    assert!(s["contraction_ratio"].as_f64().unwrap() < 1.0);
    assert!((m["boundary"]["smallness"].as_f64().unwrap() - 1e-3).abs() < 1e-15);
}

#[test]
fn coefficient_file_is_resolved_relative_to_config() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("coef.txt"), "# mean\n0 1 0\n2 1e-4 0\n-2 1e-4 0\n").unwrap();
    let cfg = write_config(d.path(), "n_max = 4\ncoefficients = coef.txt\n");
    let o = bin().arg("solve").arg("--config").arg(&cfg).arg("--out").arg(d.path()).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn malformed_coefficients_are_config_errors() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("coef.txt"), "0 1 0\n1 0.01\n").unwrap();
    let cfg = write_config(d.path(), "coefficients = coef.txt\n");
    let o = bin().arg("solve").arg("--config").arg(&cfg).arg("--out").arg(d.path()).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let e = stderr_json(&o);
    assert_eq!(e["class"], "config");
    assert!(e["message"].as_str().unwrap().contains("line 2"));
}

#[test]
fn mu_at_most_one_is_config_error() {
    let d = tempfile::tempdir().unwrap();
    for cmd in ["solve", "verify", "radial"] {
        let o = run_in(d.path(), &[cmd, "--mu", "1.0"]);
        assert_eq!(o.status.code(), Some(2));
        assert_eq!(stderr_json(&o)["class"], "config");
    }
}

#[test]
fn unknown_key_and_bad_grid_are_config_errors() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), "colour = red\n");
    let o = bin().arg("solve").arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = run_in(d.path(), &["radial", "--grid", "10x12@2"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run_in(d.path(), &["radial", "--t", "1,-2"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn reconstruct_without_solution_is_config_error() {
    let d = tempfile::tempdir().unwrap();
    let o = run_in(d.path(), &["reconstruct"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_config_file_is_io_error() {
    let o = bin().args(["solve", "--config", "/nonexistent/run.cfg"]).output().unwrap();
    assert_eq!(o.status.code(), Some(5));
    assert_eq!(stderr_json(&o)["class"], "io");
}

#[test]
fn outputs_are_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg_text = "mu = 1.5\nn_max = 4\nmodes = 0 1 0; 1 5e-4 0; -1 5e-4 0\ngrid = 17x17@1.5\nt = 1,0.5\n";
    for d in [&a, &b] {
        let cfg = write_config(d.path(), cfg_text);
        for cmd in ["solve", "reconstruct"] {
            let o = bin().arg(cmd).arg("--config").arg(&cfg).arg("--out").arg(d.path()).output().unwrap();
            assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        }
    }
    let m = manifest(a.path(), "reconstruct");
    for art in m["artifacts"].as_array().unwrap() {
        let name = art.as_str().unwrap();
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    assert_eq!(fs::read(a.path().join(SOLUTION_FILE)).unwrap(), fs::read(b.path().join(SOLUTION_FILE)).unwrap());
}

#[test]
fn csv_round_trips_through_text() {
    let vals = [0.1, -1.0 / 3.0, 1e-300, 6.02e23, std::f64::consts::PI, f64::INFINITY];
    for v in vals {
        assert_eq!(fmt17(v).parse::<f64>().unwrap(), v);
    }
    let text = csv_text(&["a", "b"], vec![vec![vals[0], vals[1]], vec![vals[2], vals[3]]].into_iter());
    let (h, rows) = read_csv(&text).unwrap();
    assert_eq!(h, ["a", "b"]);
    assert_eq!(rows, vec![vec![vals[0], vals[1]], vec![vals[2], vals[3]]]);
    assert!(read_csv("a,b\n1,2,3\n").is_err());
    assert!(read_csv("a,b\n1,x\n").is_err());
}

#[test]
fn ppm_header_and_size() {
    let n = 5;
    let vals: Vec<f64> = (0..n * n).map(|k| k as f64 - 12.0).collect();
    let img = ppm_bytes(&vals, n);
    let header = b"P6\n5 5\n255\n";
    assert_eq!(&img[..header.len()], header);
    assert_eq!(img.len(), header.len() + 3 * n * n);
    assert_eq!(diverging_rgb(0.0), [255, 255, 255]);
    assert_eq!(diverging_rgb(1.0), [255, 0, 0]);
    assert_eq!(diverging_rgb(-1.0), [0, 0, 255]);
    assert_eq!(diverging_rgb(f64::NAN), [128, 128, 128]);
}

fn omega_by_radius(rows: &[Vec<f64>]) -> Vec<(f64, f64)> {
    rows.iter().filter(|r| r[2].is_finite()).map(|r| (r[0].hypot(r[1]), r[2])).collect()
}

#[test]
fn baseline_reconstruction_is_rotationally_symmetric_and_matches_radial() {
    let d = tempfile::tempdir().unwrap();
    let rd = tempfile::tempdir().unwrap();
    for cmd in ["solve", "reconstruct"] {
        let o = run_in(d.path(), &[cmd, "--n-max", "4", "--grid", "33x33@2"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let o = run_in(rd.path(), &["radial", "--n-max", "4", "--grid", "33x33@2"]);
    assert!(o.status.success());
    let (h, rec) = csv(d.path(), "omega_t0.csv");
    assert_eq!(h, ["x", "y", "omega"]);
    let (_, rad) = csv(rd.path(), "omega_t0.csv");
    assert_eq!(rec.len(), 33 * 33);
    let pts = omega_by_radius(&rec);
    assert!(pts.len() >= 33 * 33 - 1);
    for (i, &(r1, w1)) in pts.iter().enumerate() {
        for &(r2, w2) in &pts[i + 1..] {
            if (r1 - r2).abs() < 1e-14 * r1 {
                assert!((w1 - w2).abs() <= 1e-8 * w1.abs());
            }
        }
    }
    for (a, b) in rec.iter().zip(&rad) {
        assert_eq!(a[..2], b[..2]);
        if a[2].is_finite() {
            assert!((a[2] / b[2] - 1.0).abs() <= 1e-8);
        }
    }
    let img = fs::read(d.path().join("omega_t0.ppm")).unwrap();
    assert!(img.starts_with(b"P6\n33 33\n255\n"));
    let (h, rows) = csv(rd.path(), "radial.csv");
    assert_eq!(h, ["r", "omega", "psi", "u_theta"]);
    assert_eq!(rows.len(), 101);
}

#[test]
fn perturbed_reconstruction_outputs() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), "n_max = 8\nmodes = 0 1 0; 1 5e-4 0; -1 5e-4 0\ngrid = 17x17@2\nt = 1,0.25\nspiral_count = 4\n");
    for cmd in ["solve", "reconstruct"] {
        let o = bin().arg(cmd).arg("--config").arg(&cfg).arg("--out").arg(d.path()).output().unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for name in ["omega_t0.csv", "omega_t1.ppm", "psi_t1.csv", "u_t0.csv", "convergence.csv"] {
        assert!(d.path().join(name).exists(), "{name}");
    }
    let (h, u) = csv(d.path(), "u_t0.csv");
    assert_eq!(h, ["x", "y", "u_x", "u_y"]);
    assert_eq!(u.len(), 17 * 17);
    let (h, curves) = csv(d.path(), "spiral_curves.csv");
    assert_eq!(h, ["phi0", "beta", "r", "theta"]);
    let mut phis: Vec<f64> = curves.iter().map(|r| r[0]).collect();
    phis.dedup();
    assert_eq!(phis.len(), 4);
    for phi in phis {
        let c: Vec<&Vec<f64>> = curves.iter().filter(|r| r[0] == phi).collect();
        assert!(c.windows(2).all(|w| w[1][1] > w[0][1] && w[1][2] < w[0][2]));
    }
    let (_, conv) = csv(d.path(), "convergence.csv");
    assert_eq!(conv.len(), CONVERGENCE_TIMES.len());
    assert!(conv.windows(2).all(|w| w[1][1] < w[0][1]));
    let m = manifest(d.path(), "reconstruct");
    assert_eq!(m["diffeomorphism"]["monotone"], true);
    assert!(m["timings"].is_object());
}

#[test]
fn verify_passes_and_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = run_in(d.path(), &["verify", "--n-max", "8"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stdout).lines().all(|l| l.starts_with("PASS")));
    }
    let ta = fs::read_to_string(a.path().join("verify.txt")).unwrap();
    assert_eq!(ta, fs::read_to_string(b.path().join("verify.txt")).unwrap());
    assert_eq!(ta.lines().count(), 8);
    let m = manifest(a.path(), "verify");
    assert!(m["verify"].as_array().unwrap().iter().all(|i| i["pass"] == true));
}
