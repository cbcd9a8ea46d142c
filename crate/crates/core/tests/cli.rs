use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_semiclassical"))
}

fn run(cmd: &mut Command) -> String {
    let out = cmd.output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn trajectory_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("traj.csv");
    run(bin().args(["trajectory", "--potential", "harmonic:1", "--t-end", "0.1", "--dt", "0.01", "--out"]).arg(&path));
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,x,xi,S"));
    assert_eq!(lines.count(), 11);
}

#[test]
fn envelope_writes_diagnostics_and_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("env");
    let stdout = run(bin()
        .args(["envelope", "--regime", "critical", "--t-end", "0.1", "--stride", "50", "--out-prefix"])
        .arg(&prefix));
    assert!(stdout.contains("critical envelope"));
    let diag = std::fs::read_to_string(dir.path().join("env_diagnostics.csv")).unwrap();
    assert!(diag.starts_with("t,mass,sigma1"));
    assert!(Path::new(&dir.path().join("env_snap0000.csv")).exists());
}

#[test]
fn physical_simulation_sizes_its_grid() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = run(bin()
        .args(["simulate", "--frame", "physical", "--eps", "0.125", "--t-end", "0.05", "--out-prefix"])
        .arg(dir.path().join("sim")));
    assert!(stdout.starts_with("grid n = "));
}

#[test]
fn converge_persists_manifest_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(&config, r#"{"eps": [0.0625, 0.03125, 0.015625, 0.0078125], "t_end": 0.25, "t_fit": 0.25}"#).unwrap();
    let mut reports = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let stdout = run(bin().arg("converge").arg("--config").arg(&config).arg("--out").arg(&out).args(["--jobs", "1"]));
        assert!(out.join("manifest.json").exists());
        assert!(out.join("fit.json").exists());
        reports.push(stdout);
    }
    assert_eq!(reports[0], reports[1]);
    let json: serde_json::Value = serde_json::from_str(&reports[0]).unwrap();
    assert_eq!(json["regime"], "critical");
}

#[test]
fn bad_configuration_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(&config, r#"{"eps": [0.1]}"#).unwrap();
    let out = bin().arg("converge").arg("--config").arg(&config).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}
