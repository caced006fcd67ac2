use serde_json::Value;
use std::fs;
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};

fn cyborg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cyborg")).args(args).output().expect("binary runs")
}

fn json_out(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

fn write_plan(dir: &Path, body: &str) -> String {
    let p = dir.join("plan_in.json");
    fs::write(&p, body).unwrap();
    p.display().to_string()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir.join("trials"))
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    out.push(("plan.json".into(), fs::read(dir.join("plan.json")).unwrap()));
    out.sort();
    out
}

const ONE_TRIAL: &str = r#"{"beetles": 1, "trials_per_condition": 1, "targets": ["both"]}"#;

#[test]
fn run_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let plan = write_plan(tmp.path(), ONE_TRIAL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = cyborg(&["sim", "run", "--plan", &plan, "--out", out.to_str().unwrap(), "--seed", "5", "--json"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(json_out(&o)["trials"], 1);
    }
    let (fa, fb) = (files(&a), files(&b));
    assert_eq!(fa.len(), 4);
    assert_eq!(fa, fb);
    let c = tmp.path().join("c");
    cyborg(&["sim", "run", "--plan", &plan, "--out", c.to_str().unwrap(), "--seed", "6"]);
    assert_ne!(files(&c)[0], fa[0]);
}

#[test]
fn invalid_frequency_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let plan = write_plan(tmp.path(), r#"{"frequency": {"kind": "grid", "values": [200]}}"#);
    let o = cyborg(&["sim", "run", "--plan", &plan, "--out", tmp.path().join("x").to_str().unwrap(), "--json"]);
    assert_eq!(o.status.code(), Some(1));
    let v = json_out(&o);
    assert_eq!(v["kind"], "validation");
    assert!(!tmp.path().join("x").exists());
    let bad_json = write_plan(tmp.path(), "{ not json");
    assert_eq!(cyborg(&["sim", "run", "--plan", &bad_json, "--out", "unused"]).status.code(), Some(1));
    assert_eq!(cyborg(&["sim", "run"]).status.code(), Some(1));
}

#[test]
fn unwritable_output_is_an_environment_error() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let plan = write_plan(tmp.path(), ONE_TRIAL);
    let o = cyborg(&["sim", "run", "--plan", &plan, "--out", blocker.join("out").to_str().unwrap(), "--json"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(json_out(&o)["kind"], "environment");
    let missing = tmp.path().join("missing.json");
    assert_eq!(cyborg(&["sim", "run", "--plan", missing.to_str().unwrap(), "--out", "unused"]).status.code(), Some(2));
}

#[test]
fn analyze_rejects_empty_and_missing_dirs() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(cyborg(&["sim", "analyze", tmp.path().to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(cyborg(&["sim", "analyze", tmp.path().join("nope").to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn analyze_skips_corrupt_trials_with_a_warning() {
    let tmp = tempfile::tempdir().unwrap();
    let plan = write_plan(tmp.path(), r#"{"beetles": 2, "trials_per_condition": 4}"#);
    let run = tmp.path().join("run");
    assert!(cyborg(&["sim", "run", "--plan", &plan, "--out", run.to_str().unwrap()]).status.success());
    let victim = fs::read_dir(run.join("trials"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.to_string_lossy().ends_with(".imu.csv"))
        .unwrap();
    fs::write(&victim, "t_ms,garbage\n1,2,3\n").unwrap();
    let o = cyborg(&["sim", "analyze", run.to_str().unwrap(), "--json"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json_out(&o);
    assert_eq!(v["trials"], 11);
    assert!(v["warning_count"].as_u64().unwrap() >= 1);
    for f in ["report.json", "induced.csv", "panels/both_d_pitch.csv", "panels/single_d_yaw.csv"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let panel = fs::read_to_string(run.join("panels/both_d_av.csv")).unwrap();
    assert!(panel.lines().next().unwrap().contains("ci_lo"));
}

#[test]
fn serve_bind_failure_and_replay_reporting() {
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let o = cyborg(&["sim", "serve", "--port", &port, "--duration-ms", "100", "--json"]);
    assert_eq!(o.status.code(), Some(2));

    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("live");
    let o = cyborg(&["sim", "serve", "--port", "0", "--time-scale", "50", "--duration-ms", "3000", "--out", out.to_str().unwrap(), "--json"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json_out(&o)["sim_ms"], 3000);
    let log = out.join("frames.bin");
    let mut bytes = fs::read(&log).unwrap();
    // telemetry every 10 ms and a heartbeat per second: 300 * 36 + 3 * 16
    assert_eq!(bytes.len(), 300 * 36 + 3 * 16);
    // heartbeat at t = 0, then telemetry: byte 180 lies in the frame at 16 + 4 * 36
    bytes[180] ^= 0xFF;
    bytes.truncate(bytes.len() - 4);
    let damaged = tmp.path().join("damaged.bin");
    fs::write(&damaged, &bytes).unwrap();
    let o = cyborg(&["sim", "replay", damaged.to_str().unwrap(), "--json"]);
    assert!(o.status.success());
    let v = json_out(&o);
    let errors = v["errors"].as_array().unwrap();
    assert_eq!(errors[0]["kind"], "BadCrc");
    assert_eq!(errors[0]["offset"], 16 + 4 * 36);
    assert_eq!(errors.last().unwrap()["kind"], "Incomplete");
    assert_eq!(v["frames"], 300 + 3 - 2);

    let empty = tmp.path().join("empty.bin");
    fs::write(&empty, b"").unwrap();
    assert_eq!(cyborg(&["sim", "replay", empty.to_str().unwrap()]).status.code(), Some(1));
}
