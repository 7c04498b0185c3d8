use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const EXE: &str = env!("CARGO_BIN_EXE_taskmerge");

fn taskmerge(args: &[&str], dir: &Path) -> Output {
    Command::new(EXE)
        .args(args)
        .current_dir(dir)
        .env_remove("TASKMERGE_MODE")
        .env_remove("TASKMERGE_SEED")
        .output()
        .unwrap()
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(Result::unwrap).collect()
}

fn column(path: &Path, name: &str) -> usize {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.headers().unwrap().iter().position(|h| h == name).unwrap()
}

const SINGLE: &str = "id,stream_id,segment_idx,op_type,param,arrival_s,mu_s,sigma_s,deadline_s,viewer_id\n\
                      0,1,0,adjust_frame_rate,30fps,0,10,0,15,0\n";

#[test]
fn single_task_run_has_zero_dmr() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("t.csv"), SINGLE).unwrap();
    let out = taskmerge(&["run", "--trace", "t.csv", "--out", "s.csv", "--records", "r.csv"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s = dir.path().join("s.csv");
    let rows = csv_rows(&s);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][column(&s, "dmr")].parse::<f64>().unwrap(), 0.0);
    assert_eq!(rows[0][column(&s, "makespan")].parse::<f64>().unwrap(), 10.0);
    assert_eq!(csv_rows(&dir.path().join("r.csv")).len(), 1);
}

#[test]
fn generate_then_run_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.csv", "b.csv"] {
        let out = taskmerge(&["generate", "--tasks", "300", "--seed", "4", "--out", name], dir.path());
        assert!(out.status.success());
    }
    let a = fs::read(dir.path().join("a.csv")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b.csv")).unwrap());
    let mut outs = Vec::new();
    for _ in 0..2 {
        let out = taskmerge(&["run", "--trace", "a.csv", "--mode", "adaptive", "--queue-policy", "mu"], dir.path());
        assert!(out.status.success());
        outs.push(out.stdout);
    }
    assert_eq!(outs[0], outs[1]);
    let text = String::from_utf8(outs[0].clone()).unwrap();
    assert!(text.starts_with("mode,policy,load,dmr"));
    assert!(text.contains("adaptive,max_urgency,300,"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(taskmerge(&["run", "--trace", "missing.csv"], dir.path()).status.code(), Some(2));
    assert_eq!(taskmerge(&["run"], dir.path()).status.code(), Some(1));
    assert_eq!(taskmerge(&["run", "--trace", "x", "--mode", "eager"], dir.path()).status.code(), Some(1));
    assert_eq!(taskmerge(&["--help"], dir.path()).status.code(), Some(0));
    fs::write(dir.path().join("bad.csv"), "id,stream_id\n1,2\n").unwrap();
    let out = taskmerge(&["run", "--trace", "bad.csv"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn flags_beat_env_beat_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("t.csv"), SINGLE).unwrap();
    fs::write(dir.path().join("c.toml"), "[engine]\nmode = \"aggressive\"\n").unwrap();
    let mode_of = |args: &[&str], env: Option<&str>| {
        let mut cmd = Command::new(EXE);
        cmd.args(args).current_dir(dir.path()).env_remove("TASKMERGE_MODE");
        if let Some(m) = env {
            cmd.env("TASKMERGE_MODE", m);
        }
        let out = cmd.output().unwrap();
        assert!(out.status.success());
        String::from_utf8(out.stdout).unwrap().lines().nth(1).unwrap().split(',').next().unwrap().to_string()
    };
    assert_eq!(mode_of(&["run", "--trace", "t.csv"], None), "no_merge");
    assert_eq!(mode_of(&["run", "--trace", "t.csv", "--config", "c.toml"], None), "aggressive");
    assert_eq!(mode_of(&["run", "--trace", "t.csv", "--config", "c.toml"], Some("conservative")), "conservative");
    assert_eq!(
        mode_of(&["run", "--trace", "t.csv", "--config", "c.toml", "--mode", "adaptive"], Some("conservative")),
        "adaptive"
    );
}

#[test]
fn experiment_row_accounting() {
    let dir = tempfile::tempdir().unwrap();
    let out = taskmerge(
        &[
            "experiment",
            "--reps",
            "2",
            "--loads",
            "1000",
            "--modes",
            "no_merge,conservative",
            "--position-finder",
            "off,on",
            "--out",
            "e.csv",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let path = dir.path().join("e.csv");
    let rows = csv_rows(&path);
    let kind = column(&path, "row_type");
    // 2 cells x 2 modes x (2 raw + 1 aggregate).
    assert_eq!(rows.len(), 12);
    assert_eq!(rows.iter().filter(|r| &r[kind] == "aggregate").count(), 4);
    let red = column(&path, "dmr_reduction");
    let mode = column(&path, "mode");
    for r in rows.iter().filter(|r| &r[mode] == "no_merge") {
        assert_eq!(r[red].parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn validate_config_reports_problems() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("ok.toml"), "[workload]\ntotal_tasks = 1500\n").unwrap();
    fs::write(dir.path().join("typo.toml"), "[workload]\ntotal_taks = 1500\n").unwrap();
    fs::write(dir.path().join("bad.toml"), "[engine]\nmachine_count = 0\n").unwrap();
    let ok = taskmerge(&["validate-config", "--config", "ok.toml"], dir.path());
    assert!(ok.status.success());
    assert!(String::from_utf8_lossy(&ok.stdout).contains("total_tasks = 1500"));
    assert_eq!(taskmerge(&["validate-config", "--config", "typo.toml"], dir.path()).status.code(), Some(2));
    assert_eq!(taskmerge(&["validate-config", "--config", "bad.toml"], dir.path()).status.code(), Some(2));
}
