use std::path::{Path, PathBuf};
use std::process::Command;

fn perchsim() -> Command {
    Command::new(env!("CARGO_BIN_EXE_perchsim"))
}

fn mission(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/missions").join(name)
}

#[test]
fn nominal_script_exits_zero_with_telemetry() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let status = perchsim()
        .args(["run", mission("nominal.mission").to_str().unwrap(), "--seed", "0", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(0), "{}", String::from_utf8_lossy(&status.stderr));
    let csv = std::fs::read_to_string(out.join("telemetry.csv")).unwrap();
    assert!(csv.lines().count() > 100);
    assert!(csv.starts_with("time,"));
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["completed"], true);
    assert!(std::fs::read_to_string(out.join("events.jsonl")).unwrap().contains("\"separation\""));
}

#[test]
fn guard_violation_exits_three_and_logs_the_rejection() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("bad.mission");
    std::fs::write(&script, "at 0 pumps on\nat 0.1 tool on\n").unwrap();
    let out = dir.path().join("run");
    let o = perchsim().arg("run").arg(&script).arg("--out").arg(&out).output().unwrap();
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
    let events = std::fs::read_to_string(out.join("events.jsonl")).unwrap();
    assert!(events.contains("\"rejected\""), "{events}");
}

#[test]
fn unreadable_inputs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = perchsim()
        .args(["run", mission("nominal.mission").to_str().unwrap(), "--params"])
        .arg(dir.path().join("missing.toml"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));

    let script = dir.path().join("typo.mission");
    std::fs::write(&script, "at 0 pumps maybe\n").unwrap();
    let o = perchsim().arg("run").arg(&script).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));

    let o = perchsim().args(["experiment", "nonsense"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn timeout_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("stuck.mission");
    std::fs::write(&script, "@timeout 1\nwhen attached mode perching\n").unwrap();
    let o = perchsim().arg("run").arg(&script).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn parameter_file_round_trips_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("p.toml");
    assert_eq!(perchsim().args(["params", "--out"]).arg(&file).status().unwrap().code(), Some(0));
    let text = std::fs::read_to_string(&file).unwrap();
    assert!(text.contains("provenance"));
    let out = dir.path().join("exp");
    let o = perchsim()
        .args(["experiment", "endurance", "--params"])
        .arg(&file)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("endurance/report.json")).unwrap()).unwrap();
    assert!((report["summary"]["endurance_s"].as_f64().unwrap() - 250.2).abs() < 1e-9);
}

#[test]
fn port_comes_from_the_environment() {
    let o = perchsim().args(["serve", "--rate", "1"]).env("PERCHSIM_PORT", "not-a-port").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let help = perchsim().args(["serve", "--help"]).env_remove("PERCHSIM_PORT").output().unwrap();
    let text = String::from_utf8_lossy(&help.stdout);
    assert!(text.contains("PERCHSIM_PORT") && text.contains("8765"), "{text}");
}
