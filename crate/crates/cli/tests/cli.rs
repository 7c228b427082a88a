use std::path::Path;
use std::process::Command;

fn evl(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_evl")).args(args).output().expect("binary runs")
}

fn write_spec(dir: &Path, body: &str) -> String {
    let path = dir.join("spec.json");
    std::fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn invalid_spec_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    for body in [
        "{",
        r#"{"envs":["env1"],"methods":["evl"],"partners":{"count":1,"seed":0},"seeds":[],"max_iterations":1}"#,
        r#"{"envs":["env1"],"methods":["evl"],"partners":{"count":1,"seed":0},"seeds":[1],"max_iterations":0}"#,
        r#"{"envs":["env3"],"methods":["evl"],"partners":{"count":1,"seed":0},"seeds":[1],"max_iterations":1}"#,
    ] {
        let spec = write_spec(dir.path(), body);
        let o = evl(&["run", "--spec", &spec, "--out", out]);
        assert_eq!(o.status.code(), Some(2), "{body}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let spec = write_spec(
        dir.path(),
        r#"{"envs":["env1"],"methods":["evl"],"partners":{"count":1,"seed":0},"seeds":[1],"max_iterations":1}"#,
    );
    let o = evl(&["run", "--spec", &spec, "--out", out, "--seeds", "4,4"]);
    assert_eq!(o.status.code(), Some(2));
    let o = evl(&["run", "--spec", &spec]);
    assert_eq!(o.status.code(), Some(2), "missing output directory");
}

#[test]
fn run_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(
        dir.path(),
        r#"{"envs":["env1","env2"],"methods":["evl","fixed"],"partners":{"count":1,"seed":3},"seeds":[1,2],"max_iterations":2,"snapshot_every":1}"#,
    );
    let out = dir.path().join("out");
    let o = evl(&["run", "--spec", &spec, "--out", out.to_str().unwrap(), "--env", "env1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["spec.json", "results.csv", "runs.csv", "summary.json", "failures.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let run_dir = out.join("runs/env1-evl-s1-p0");
    for f in ["iterations.csv", "validation.json", "validation_trajectory.csv", "reward_0000.grid", "reward_0002.grid", "reward_final.grid"] {
        assert!(run_dir.join(f).is_file(), "{f}");
    }
    assert!(!out.join("runs/env2-evl-s1-p0").exists());
    let runs = std::fs::read_to_string(out.join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 1 + 4);

    let rep = dir.path().join("report");
    let o = evl(&["report", "--in", out.to_str().unwrap(), "--out", rep.to_str().unwrap(), "--resamples", "200"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(rep.join("table.csv")).unwrap();
    let mut lines = table.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("env,method,n,U_mean,U_std,U_ci_low,U_ci_high,L_mean"));
    assert_eq!(lines.count(), 2);
    let heatmaps = std::fs::read_to_string(rep.join("heatmaps.csv")).unwrap();
    assert_eq!(heatmaps.lines().count(), 1 + 4 * 4);
    assert!(rep.join("ordering.csv").is_file());
}

#[test]
fn pretrain_fixed_writes_a_loadable_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("keeper.json");
    let o = evl(&["pretrain-fixed", "--out", out.to_str().unwrap(), "--env", "env2", "--iterations", "2", "--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["version"], 1);
    assert!(v["board"]["walls"]["right"] == false);
}

#[test]
fn report_without_inputs_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = evl(&["report", "--in", dir.path().join("missing").to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}
