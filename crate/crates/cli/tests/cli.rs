use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn run(args: &[&str], out: &Path, threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_crackbal"));
    cmd.args(args).arg("--out").arg(out);
    if let Some(n) = threads {
        cmd.env("CRACKBAL_THREADS", n);
    }
    cmd.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn validate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ok = run(&["validate", "--scenario", scenario("straight.toml").to_str().unwrap()], dir.path(), None);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(dir.path().join("validation.json").exists());
    assert!(dir.path().join("manifest.json").exists());

    let fast = run(&["validate", "--scenario", scenario("too_fast.toml").to_str().unwrap()], dir.path(), None);
    assert_eq!(code(&fast), 1);
}

#[test]
fn malformed_scenario_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(scenario("straight.toml")).unwrap().replace("eta = 0.6", "eta = 0.6\ncolour = \"red\"");
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, text).unwrap();
    let o = run(&["validate", "--scenario", path.to_str().unwrap()], dir.path(), None);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line") && err.contains("colour"), "{err}");
}

#[test]
fn audits_pass() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["audit", "fondlem"], dir.path(), None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("fondlem.csv").exists());

    let o = run(&["audit", "tipflux"], dir.path(), None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let o = run(&["audit", "ellipticity", "--scenario", scenario("straight.toml").to_str().unwrap()], dir.path(), None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("ellipticity.csv").exists());
}

#[test]
fn failing_audit_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    // A tolerance no extrapolation can meet.
    let o = run(&["audit", "tipflux", "--tol", "1e-12"], dir.path(), None);
    assert_eq!(code(&o), 2);
}

#[test]
fn solver_cases() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario("straight.toml");
    let o = run(&["solve", "--scenario", s.to_str().unwrap(), "--case", "zero"], dir.path(), None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mesh = std::fs::read_to_string(dir.path().join("mesh.txt")).unwrap();
    assert!(mesh.starts_with("# crackbal mesh v1"));

    let o = run(&["solve", "--scenario", s.to_str().unwrap(), "--case", "smooth"], dir.path(), None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let conv: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("convergence.json")).unwrap()).unwrap();
    assert_eq!(conv["pass"], true);
}

#[test]
fn balance_is_thread_independent() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(scenario("straight.toml")).unwrap().replace("time_samples = 20", "time_samples = 6");
    let path = dir.path().join("short.toml");
    std::fs::write(&path, text).unwrap();
    let (a, b) = (dir.path().join("one"), dir.path().join("two"));
    let args = ["balance", "--scenario", path.to_str().unwrap()];
    let o1 = run(&args, &a, Some("1"));
    let o2 = run(&args, &b, Some("2"));
    assert_eq!(code(&o1), 0, "{}", String::from_utf8_lossy(&o1.stderr));
    assert_eq!(code(&o2), 0);
    for f in ["energy.csv", "sif.csv", "energy.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["pass"], true);
    assert_eq!(m["command"], "balance");
}

#[test]
fn balance_with_off_griffith_k_reports_expected_failure() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(scenario("straight.toml")).unwrap().replace("time_samples = 20", "time_samples = 4");
    let path = dir.path().join("short.toml");
    std::fs::write(&path, text).unwrap();
    let o = run(&["balance", "--scenario", path.to_str().unwrap(), "--k-mode", "constant:1"], dir.path(), None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let e: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("energy.json")).unwrap()).unwrap();
    assert_eq!(e["expected_failure"], true);
}

#[test]
fn usage_error_is_a_validation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["audit", "nonsense"], dir.path(), None);
    assert_eq!(code(&o), 1);
}
