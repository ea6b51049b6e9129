use std::fs;
use std::path::Path;
use std::process::Command;

const SYNTH: &str = r#"
[synth]
n_traders = 20
n_days = 15
groups = [[1, 2, 3, 4, 5], [6, 7, 8, 9, 10]]
group_event_rate = 0.2
burst_rate = 4.0

[[synth.couplings]]
source = 0
source_dt_s = 1800
target = 1
target_dt_s = 600
beta = 0.8

[sweep]
t_in_days = 10
window_step_days = 5
grid_values = [600, 1800]
"#;

fn llsvn(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_llsvn")).current_dir(dir).args(args).env_remove("LLSVN_THREADS").output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = llsvn(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn manifest(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn with_market() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.toml"), SYNTH).unwrap();
    ok(dir.path(), &["synth", "--config", "cfg.toml", "--out", "trades.csv", "--truth", "truth.json"]);
    dir
}

#[test]
fn synth_sweep_asym_report_pipeline() {
    let dir = with_market();
    let d = dir.path();
    let truth = manifest(&d.join("truth.json"));
    assert_eq!(truth["groups"].as_array().unwrap().len(), 2);
    assert_eq!(manifest(&d.join("trades.csv.run.json"))["command"], "synth");

    ok(d, &["sweep", "--config", "cfg.toml", "--input", "trades.csv", "--out", "sw"]);
    assert!(d.join("sw/manifest.json").exists());
    let run = manifest(&d.join("sw/run.json"));
    assert_eq!(run["results"]["n_windows"], 2);
    assert_eq!(run["inputs"].as_array().unwrap().len(), 2);

    ok(d, &["asym", "--sweep", "sw", "--metric", "links", "--out", "mug.csv"]);
    let mug = fs::read_to_string(d.join("mug.csv")).unwrap();
    assert!(mug.starts_with("dt1,dt2,mean,tstat,fdr_pass\n"));
    assert_eq!(mug.lines().count(), 4);
    assert!(d.join("mug.json").exists());

    ok(d, &["report", "--sweep", "sw", "--out", "report.csv"]);
    let first = fs::read(d.join("report.csv")).unwrap();
    assert_eq!(String::from_utf8_lossy(&first).lines().count(), 3);
    ok(d, &["report", "--sweep", "sw", "--out", "report.csv"]);
    assert_eq!(fs::read(d.join("report.csv")).unwrap(), first);
}

#[test]
fn single_window_commands_write_outputs_and_manifests() {
    let dir = with_market();
    let d = dir.path();
    ok(d, &["states", "--input", "trades.csv", "--dt", "1800", "--out", "states.csv"]);
    ok(d, &["svn", "--input", "trades.csv", "--dt", "600", "--out", "svn.csv"]);
    ok(d, &["groups", "--input", "trades.csv", "--dt", "600", "--out", "groups.csv"]);
    ok(d, &["leadlag", "--input", "trades.csv", "--dt1", "1800", "--dt2", "600", "--out", "ll.csv"]);
    for f in ["states.csv", "svn.csv", "groups.csv", "ll.csv"] {
        assert!(d.join(f).exists(), "{f}");
        assert!(d.join(format!("{f}.run.json")).exists(), "{f}");
    }
    let ll = manifest(&d.join("ll.csv.run.json"));
    assert!(ll["results"]["taxonomy"]["n_links"].as_u64().unwrap() >= 1);
}

#[test]
fn flags_override_config_and_env_sets_threads() {
    let dir = with_market();
    let d = dir.path();
    ok(d, &["synth", "--config", "cfg.toml", "--seed", "9", "--days", "5", "--out", "t9.csv"]);
    let m = manifest(&d.join("t9.csv.run.json"));
    assert_eq!(m["seed"], 9);
    assert_eq!(m["config"]["n_days"], 5);
    assert_eq!(m["config"]["n_traders"], 20);

    let out = Command::new(env!("CARGO_BIN_EXE_llsvn"))
        .current_dir(d)
        .args(["groups", "--input", "trades.csv", "--dt", "600", "--out", "g.csv"])
        .env("LLSVN_THREADS", "2")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(manifest(&d.join("g.csv.run.json"))["threads"], 2);
}

#[test]
fn outputs_are_reproducible() {
    let dir = with_market();
    let d = dir.path();
    let first = fs::read(d.join("trades.csv")).unwrap();
    ok(d, &["synth", "--config", "cfg.toml", "--out", "again.csv"]);
    assert_eq!(fs::read(d.join("again.csv")).unwrap(), first);
    ok(d, &["groups", "--input", "trades.csv", "--dt", "600", "--out", "a.csv"]);
    ok(d, &["groups", "--input", "trades.csv", "--dt", "600", "--out", "b.csv", "--threads", "3"]);
    assert_eq!(fs::read(d.join("a.csv")).unwrap(), fs::read(d.join("b.csv")).unwrap());
}

#[test]
fn exit_codes() {
    let dir = with_market();
    let d = dir.path();
    assert_eq!(llsvn(d, &["frobnicate"]).status.code(), Some(2));
    assert_eq!(llsvn(d, &["groups", "--input", "trades.csv"]).status.code(), Some(2));

    fs::write(d.join("bad.toml"), "[sweep]\nno_such_key = 1\n").unwrap();
    let out = llsvn(d, &["groups", "--config", "bad.toml", "--input", "trades.csv", "--dt", "600", "--out", "g.csv"]);
    assert_eq!(out.status.code(), Some(2));

    fs::write(d.join("bad.csv"), "trader_id,timestamp_ms,volume\nx,abc,--\n").unwrap();
    let out = llsvn(d, &["states", "--input", "bad.csv", "--dt", "600", "--out", "s.csv"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    assert!(!d.join("s.csv").exists());

    let out = llsvn(d, &["report", "--sweep", "missing", "--out", "r.csv"]);
    assert_eq!(out.status.code(), Some(3));
    fs::create_dir(d.join("empty")).unwrap();
    assert_eq!(llsvn(d, &["report", "--sweep", "empty", "--out", "r.csv"]).status.code(), Some(3));

    let out = llsvn(d, &["groups", "--input", "trades.csv", "--dt", "0", "--out", "g.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn incomplete_sweep_lists_missing_cells() {
    let dir = with_market();
    let d = dir.path();
    ok(d, &["sweep", "--config", "cfg.toml", "--input", "trades.csv", "--out", "sw"]);
    fs::remove_file(d.join("sw/cells-0001.csv")).unwrap();
    let out = llsvn(d, &["report", "--sweep", "sw", "--out", "r.csv"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("incomplete sweep"));
}
