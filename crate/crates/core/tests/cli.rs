//! The `remac` binary: subcommands, files and exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn remac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_remac")).args(args).env_remove("REMAC_REMOTE_URL").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn exit_codes_follow_the_episode_status() {
    let ok = remac(&["run", "--task", "OpenMicrowavePnP", "--setting", "REMAC", "--success-prob", "1"]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(stdout(&ok).contains("\"initial_plan_length\":4"));

    let blind = remac(&["run", "--task", "DefrostInBowl", "--setting", "BASE"]);
    assert_eq!(blind.status.code(), Some(3));

    let failed = remac(&["run", "--task", "OpenCabinetPnP", "--setting", "CC", "--success-prob", "0", "--max-retries", "0"]);
    assert_eq!(failed.status.code(), Some(2));

    let missing = remac(&["run", "--task", "OpenCabinetPnP", "--backend", "remote"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("REMAC_REMOTE_URL"));

    let bad = remac(&["run", "--task", "MakeCoffee"]);
    assert_eq!(bad.status.code(), Some(2), "clap usage errors exit with 2");
}

#[test]
fn run_replay_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.jsonl");
    let db = dir.path().join("reflections.json");
    let transcript = dir.path().join("transcript.jsonl");
    let out = remac(&[
        "run", "--task", "HeatOnStove", "--setting", "RE", "--seed", "5", "--success-prob", "0.8",
        "--trace", p(&trace), "--reflections", p(&db), "--transcript", p(&transcript),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let replay = remac(&["replay", "--transcript", p(&transcript), "--expect-trace", p(&trace)]);
    assert!(replay.status.success(), "{}", String::from_utf8_lossy(&replay.stderr));
    assert!(stdout(&replay).contains("matches"));

    // A transcript whose recorded requests no longer match diverges.
    let text = std::fs::read_to_string(&transcript).unwrap();
    let tampered = dir.path().join("tampered.jsonl");
    std::fs::write(&tampered, text.replacen("cook", "fry", 1).replacen("heat", "warm", 1)).unwrap();
    let diverged = remac(&["replay", "--transcript", p(&tampered)]);
    assert_eq!(diverged.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&diverged.stderr).contains("diverge"));

    let inspect = remac(&["inspect", "--trace", p(&trace)]);
    assert!(inspect.status.success());
    assert!(stdout(&inspect).contains("reflection on"));
    let inspect = remac(&["inspect", "--reflections", p(&db)]);
    assert!(stdout(&inspect).contains("distinct"));
}

#[test]
fn bench_writes_both_report_formats() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bench.json");
    std::fs::write(&config, r#"{"tasks": ["OpenCabinetPnP"], "settings": ["BASE", "REMAC"], "trials": 2}"#).unwrap();
    let out_dir = dir.path().join("out");
    let out = remac(&["bench", "--config", p(&config), "--out", p(&out_dir), "--transcripts"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("report.json").exists());
    assert!(stdout(&out).contains("NaN"));
    let table = std::fs::read_to_string(out_dir.join("report.txt")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert_eq!(std::fs::read_dir(out_dir.join("transcripts")).unwrap().count(), 4);

    std::fs::write(&config, r#"{"trials": 0}"#).unwrap();
    assert_eq!(remac(&["bench", "--config", p(&config), "--out", p(&out_dir)]).status.code(), Some(1));
}

#[test]
fn reflect_bench_records_and_rescores() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("reflect.jsonl");
    let live = remac(&["reflect-bench", "--task", "HeatOnStove", "--trials", "2", "--transcript", p(&t)]);
    assert!(live.status.success(), "{}", String::from_utf8_lossy(&live.stderr));
    assert!(stdout(&live).contains("reflect success rate 100.00%"));
    let again = remac(&["reflect-bench", "--task", "HeatOnStove", "--trials", "2", "--replay", p(&t)]);
    assert!(stdout(&again).contains("reflect success rate 100.00%"));

    let echo = remac(&["reflect-bench", "--task", "HeatOnStove", "--trials", "2", "--backend", "echo"]);
    assert!(stdout(&echo).contains("reflect success rate 0.00%"));
}

#[test]
fn bundled_scenario_files_run() {
    let scenario = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/v1/scenarios/DefrostInBowl.json");
    let out = remac(&["run", "--task", "DefrostInBowl", "--setting", "REMAC", "--scenario", p(&scenario)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
