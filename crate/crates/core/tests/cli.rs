use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const QUADRATIC: &str = "\
selection.kind = quadratic
selection.coeffs = 1.0
z_star0 = 1.0
epsilon = 0.2
grid.zmin = -2.0
grid.zmax = 3.0
time.t_end = 0.5
time.snapshot_every = 0.25
";

const DEEP_DOUBLE_WELL: &str = "\
selection.kind = double_well
selection.coeffs = 1.0, 0.52, 0.0
z_star0 = 0.6
epsilon = 0.1
grid.zmin = -2.5
grid.zmax = 2.5
time.t_end = 2.0
init.profile = gaussian
";

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn infmodel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_infmodel")).args(args).output().unwrap()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

#[test]
fn verify_quadratic_passes() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "q.cfg", QUADRATIC);
    let out = infmodel(&["verify", "--config", &cfg]);
    let stdout = text(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}{}", text(&out.stderr));
    assert!(stdout.contains("T eigenvalue, k = 3"));
    assert!(!stdout.contains("FAIL"));
}

#[test]
fn check_reports_violation_without_failing() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "dw.cfg", DEEP_DOUBLE_WELL);
    let out = infmodel(&["check", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0));
    assert!(text(&out.stdout).contains("cond_Gamma: FAIL"));
    assert!(text(&out.stderr).contains("warning: cond_Gamma violated"));
}

#[test]
fn unknown_subcommand_prints_usage() {
    let out = infmodel(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("Usage"));
}

#[test]
fn invalid_config_reports_line() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "bad.cfg", &format!("{QUADRATIC}alpha = 0.5\n"));
    let out = infmodel(&["verify", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("line 9"), "{}", text(&out.stderr));
}

#[test]
fn missing_config_is_runtime_error() {
    let out = infmodel(&["verify", "--config", "/nonexistent/q.cfg"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_is_deterministic_and_writes_meta() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "q.cfg", QUADRATIC);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        let out = infmodel(&["simulate", "--config", &cfg, "--out", dir.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    }
    let mut csvs: Vec<String> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    csvs.sort();
    assert_eq!(
        csvs,
        ["f_t0.0000.csv", "f_t0.2500.csv", "f_t0.5000.csv", "mass.csv", "mode.csv"]
    );
    for name in &csvs {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let meta = fs::read_to_string(a.join("meta.txt")).unwrap();
    assert!(meta.contains("selection.kind = quadratic"));
    assert!(meta.contains("alpha = 0.4"));
    assert!(meta.contains("cond_Gamma: pass"));
}

#[test]
fn profiles_write_trajectory_and_v_star() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "q.cfg", QUADRATIC);
    let dir = tmp.path().join("p");
    let out = infmodel(&["profiles", "--config", &cfg, "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let traj = fs::read_to_string(dir.join("trajectory.csv")).unwrap();
    assert!(traj.starts_with("t,z_star,lambda,q_star,p_star\n"));
    let v = fs::read_to_string(dir.join("v_star_t0.5000.csv")).unwrap();
    assert!(v.starts_with("z,V_star\n"));
    assert!(!v.contains("NaN"));
    assert!(dir.join("meta.txt").exists());
}

#[test]
fn sweep_writes_report_per_eps_override() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "s.cfg",
        &format!("{}grid.zmax = 4.0\nharness.half_width = 1.0\n", QUADRATIC.replace("grid.zmax = 3.0\n", "")),
    );
    let dir = tmp.path().join("s");
    let out = infmodel(&["sweep", "--config", &cfg, "--out", dir.to_str().unwrap(), "--eps", "0.4,0.2"]);
    let code = out.status.code().unwrap();
    assert!(code == 0 || code == 1, "{}", text(&out.stderr));
    let report = fs::read_to_string(dir.join("report.csv")).unwrap();
    let mut lines = report.lines();
    assert_eq!(
        lines.next(),
        Some("eps,sup_F_norm_W,sup_abs_kappa,sup_p_err_over_eps2,slope_V,passed")
    );
    assert_eq!(lines.count(), 2);
    let meta = fs::read_to_string(dir.join("meta.txt")).unwrap();
    assert!(meta.contains("epsilon = 0.4,0.2"));
    assert!(dir.join("eps_0.4").is_dir());
    // Row flags cover boundedness only; the exit code also needs uniform ratios.
    if code == 0 {
        assert!(report.lines().skip(1).all(|l| l.ends_with("true")));
    }
    assert!(dir.join("summary.txt").exists());
}

#[test]
fn sweep_rejects_increasing_eps() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "q.cfg", QUADRATIC);
    let out = infmodel(&["sweep", "--config", &cfg, "--eps", "0.1,0.2"]);
    assert_eq!(out.status.code(), Some(1));
}
