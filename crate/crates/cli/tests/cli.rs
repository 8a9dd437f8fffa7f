use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn taskcomm() -> Command {
    Command::new(env!("CARGO_BIN_EXE_taskcomm"))
}

/// A config with a short horizon so batches finish quickly.
fn quick_config(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, r#"{"planner": {"horizon_ticks": 2}}"#).unwrap();
    p
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn error_of(out: &Output) -> Value {
    assert!(!out.status.success());
    let v: Value = serde_json::from_slice(&out.stderr).expect("stderr is one JSON object");
    v["error"].clone()
}

#[test]
fn simulate_analyze_replay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    let out = dir.path().join("batch");
    let stdout = run(taskcomm()
        .arg("--config")
        .arg(&cfg)
        .args(["simulate", "--trials", "3", "--seed", "11", "--out"])
        .arg(&out))
    .stdout;
    let summary: Value = serde_json::from_slice(&stdout).unwrap();
    assert_eq!(summary["trials"], 3);
    let on_disk: Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary, on_disk);

    let csv = std::fs::read_to_string(out.join("trials.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "trial_id,seed,true_task,inferred_task,correct,ticks_to_final,seconds_to_final,presses,injected_mistakes,entropy_at_final"
    );
    let ids: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ids, ["trial-0000", "trial-0001", "trial-0002"]);

    let report_path = dir.path().join("report.json");
    let stdout = run(taskcomm()
        .args(["analyze", "--in"])
        .arg(&out)
        .arg("--report")
        .arg(&report_path))
    .stdout;
    let report: Value = serde_json::from_slice(&stdout).unwrap();
    assert_eq!(report["trials"], 3);
    let saved: Value = serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report, saved);

    let trace = out.join("traces").join("trial-0000.jsonl");
    let records = std::fs::read_to_string(&trace).unwrap().lines().count();
    let text = String::from_utf8(run(taskcomm().args(["replay", "--trace"]).arg(&trace)).stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), records + 1);
    assert!(lines[0].trim_start().starts_with("0 "));
    let last = lines.last().unwrap();
    assert!(last.starts_with(&format!("{records} records")), "{last}");
    let dev: f64 = last.rsplit(' ').next().unwrap().parse().unwrap();
    assert!(dev <= 1e-9, "{dev}");
}

#[test]
fn batches_are_reproducible_and_prefix_stable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    let csv = |name: &str, trials: &str| {
        let out = dir.path().join(name);
        run(taskcomm()
            .arg("--config")
            .arg(&cfg)
            .args(["simulate", "--trials", trials, "--seed", "5", "--out"])
            .arg(&out));
        std::fs::read(out.join("trials.csv")).unwrap()
    };
    let a = csv("a", "2");
    let b = csv("b", "2");
    assert_eq!(a, b);
    let three = String::from_utf8(csv("c", "3")).unwrap();
    let two = String::from_utf8(a).unwrap();
    assert!(three.starts_with(&two));
}

#[test]
fn fixed_task_and_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    let scenario = dir.path().join("silent.json");
    let ticks: Vec<u32> = (0..=40).collect();
    std::fs::write(
        &scenario,
        serde_json::json!({"true_task": {"mov": 2, "wrt": 3, "dist": 4}, "suppressed_ticks": ticks}).to_string(),
    )
    .unwrap();
    let out = dir.path().join("s");
    run(taskcomm()
        .arg("--config")
        .arg(&cfg)
        .args(["simulate", "--trials", "1", "--max-ticks", "40", "--scenario"])
        .arg(&scenario)
        .arg("--out")
        .arg(&out));
    let csv = std::fs::read_to_string(out.join("trials.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[2], "2-3-4");
    assert_eq!(row[3], "");
    assert_eq!(row[4], "");
    assert_eq!(row[5], "");

    let out = dir.path().join("t");
    run(taskcomm()
        .arg("--config")
        .arg(&cfg)
        .args(["simulate", "--trials", "2", "--task", "3,1,2", "--out"])
        .arg(&out));
    let csv = std::fs::read_to_string(out.join("trials.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.split(',').nth(2) == Some("3-1-2")));
}

#[test]
fn errors_are_json_on_stderr() {
    let usage = taskcomm().arg("bogus").output().unwrap();
    assert_eq!(usage.status.code(), Some(2));
    assert_eq!(error_of(&usage)["code"], "usage");

    let bad_task = taskcomm()
        .args(["simulate", "--task", "1,1,2", "--out", "x"])
        .output()
        .unwrap();
    assert_eq!(error_of(&bad_task)["code"], "usage");

    let zero = taskcomm()
        .args(["simulate", "--trials", "0", "--out", "x"])
        .output()
        .unwrap();
    assert_eq!(zero.status.code(), Some(1));
    assert_eq!(error_of(&zero)["code"], "invalid_params");

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"teacher": {"peak": 0.9}}"#).unwrap();
    let bad_cfg = taskcomm()
        .arg("--config")
        .arg(&cfg)
        .args(["replay", "--trace", "x"])
        .output()
        .unwrap();
    assert_eq!(error_of(&bad_cfg)["code"], "invalid_params");

    let missing = taskcomm()
        .args(["replay", "--trace", "/nonexistent/trace.jsonl"])
        .output()
        .unwrap();
    assert_eq!(error_of(&missing)["code"], "io");

    let help = taskcomm().arg("--help").output().unwrap();
    assert!(help.status.success());
    assert!(String::from_utf8_lossy(&help.stdout).contains("simulate"));
}

#[test]
fn analyze_edge_cases() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let report = dir.path().join("r.json");
    let out = run(taskcomm()
        .args(["analyze", "--in"])
        .arg(&empty)
        .arg("--report")
        .arg(&report));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["trials"], 0);
    assert_eq!(v["presses"], 0);

    // A live trace has no ground truth to score against.
    let cfg = quick_config(dir.path());
    let sim = dir.path().join("sim");
    run(taskcomm()
        .arg("--config")
        .arg(&cfg)
        .args(["simulate", "--trials", "1", "--seed", "2", "--out"])
        .arg(&sim));
    let live = dir.path().join("live");
    std::fs::create_dir(&live).unwrap();
    let text = std::fs::read_to_string(sim.join("traces/trial-0000.jsonl")).unwrap();
    let stripped: String = text
        .lines()
        .map(|l| {
            let mut v: Value = serde_json::from_str(l).unwrap();
            v["truth"] = Value::Null;
            v.to_string() + "\n"
        })
        .collect();
    std::fs::write(live.join("live-1.jsonl"), stripped).unwrap();
    let out = taskcomm()
        .args(["analyze", "--in"])
        .arg(&live)
        .arg("--report")
        .arg(&report)
        .output()
        .unwrap();
    assert_eq!(error_of(&out)["code"], "missing_truth");
}

#[test]
fn serve_answers_health_checks() {
    let dir = tempfile::tempdir().unwrap();
    let mut child = taskcomm()
        .args(["serve", "--bind", "127.0.0.1:0", "--traces"])
        .arg(dir.path())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stderr = BufReader::new(child.stderr.take().unwrap());
    let addr = loop {
        let mut line = String::new();
        assert!(stderr.read_line(&mut line).unwrap() > 0, "server exited");
        if let Some(a) = line.trim().strip_prefix("listening on ") {
            break a.to_string();
        }
    };
    let mut s = std::net::TcpStream::connect(&addr).unwrap();
    s.write_all(b"GET /health HTTP/1.1\r\nhost: x\r\nconnection: close\r\n\r\n")
        .unwrap();
    let mut body = String::new();
    s.read_to_string(&mut body).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(body.starts_with("HTTP/1.1 200"), "{body}");

    let bad = taskcomm().args(["serve", "--bind", "not-an-address"]).output().unwrap();
    assert_eq!(error_of(&bad)["code"], "invalid_params");
}
