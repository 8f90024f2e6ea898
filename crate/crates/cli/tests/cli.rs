//! The `mmg` binary driven as a subprocess.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures")
        .join(name)
        .display()
        .to_string()
}

fn mmg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmg")).args(args).output().unwrap()
}

fn game_args(sub: &str, out: &Path) -> Vec<String> {
    vec![
        sub.into(),
        "--scenario".into(),
        fixture("planted_clue.scenario.json"),
        "--config".into(),
        fixture("planted_clue.config.json"),
        "--out".into(),
        out.display().to_string(),
    ]
}

fn run(args: &[String]) -> Output {
    mmg(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn play_writes_transcript_and_tallies() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&game_args("play", dir.path()));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let tallies: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("tallies.json")).unwrap()).unwrap();
    assert_eq!(tallies["win_rate"], 1.0);
    assert_eq!(tallies["tallies"][0]["eliminated"], "Carol");
    let t = std::fs::read_to_string(dir.path().join("transcript.jsonl")).unwrap();
    assert!(t.lines().count() > 10);
}

#[test]
fn seeded_reruns_write_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        let mut args = game_args("play", d);
        args.extend(["--seed".into(), "7".into()]);
        assert_eq!(run(&args).status.code(), Some(0));
    }
    for f in ["transcript.jsonl", "tallies.json"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    // Rerunning into the same directory overwrites with the same bytes.
    let before = std::fs::read(a.path().join("transcript.jsonl")).unwrap();
    let mut args = game_args("play", a.path());
    args.extend(["--seed".into(), "7".into()]);
    run(&args);
    assert_eq!(std::fs::read(a.path().join("transcript.jsonl")).unwrap(), before);
}

#[test]
fn validation_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = mmg(&["play", "--scenario", "/no/such/scenario.json", "--out", &dir.path().display().to_string()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/no/such/scenario.json"));

    let o = mmg(&["play", "--unknown-flag"]);
    assert_eq!(o.status.code(), Some(2));

    let mut args = game_args("play", dir.path());
    args.extend(["--backend".into(), "remote".into()]);
    assert_eq!(run(&args).status.code(), Some(2));

    let o = run(&[
        "play".into(),
        "--scenario".into(),
        fixture("invalid.scenario.json"),
        "--out".into(),
        dir.path().display().to_string(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn help_lists_every_flag() {
    let o = mmg(&["eval", "--help"]);
    let text = String::from_utf8_lossy(&o.stdout);
    for flag in ["--scenario", "--config", "--bank", "--out", "--seed", "--mode", "--repeat", "--backend", "--transcript"] {
        assert!(text.contains(flag), "{flag}");
    }
    let o = mmg(&["ablate", "--help"]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("--jobs"));
    let o = mmg(&["--help"]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("MMG_API_KEY"));
}

#[test]
fn backend_failure_exits_three_with_partial_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bare.config.json");
    std::fs::write(&config, r#"{"backend": {"kind": "scripted"}}"#).unwrap();
    let out = dir.path().join("out");
    let o = mmg(&[
        "play",
        "--scenario",
        &fixture("planted_clue.scenario.json"),
        "--config",
        &config.display().to_string(),
        "--out",
        &out.display().to_string(),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(out.join("transcript.jsonl").exists());
}

#[test]
fn eval_reports_mode_and_repeats() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = game_args("eval", dir.path());
    args.extend(["--bank".into(), fixture("planted_clue.bank.json"), "--mode".into(), "pp".into()]);
    args.extend(["--repeat".into(), "3".into()]);
    let o = run(&args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["mode"], "pp");
    assert_eq!(report["overall"]["values"].as_array().unwrap().len(), 3);
    let table = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert!(table.contains("mode: pp"));
    assert!(table.contains(" ± "));
    let answers = std::fs::read_to_string(dir.path().join("answers.jsonl")).unwrap();
    assert_eq!(answers.lines().count(), 3 * 4 * 6);
}

#[test]
fn eval_post_mode_reads_a_transcript() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&game_args("play", &dir.path().join("game"))).status.code(), Some(0));
    let transcript = dir.path().join("game/transcript.jsonl").display().to_string();
    let mut args = game_args("eval", &dir.path().join("eval"));
    args.extend(["--bank".into(), fixture("planted_clue.bank.json"), "--mode".into(), "post".into()]);
    let mut without = args.clone();
    assert_eq!(run(&without).status.code(), Some(2));
    without.extend(["--transcript".into(), transcript]);
    let o = run(&without);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = std::fs::read_to_string(dir.path().join("eval/report.json")).unwrap();
    assert!(report.contains("\"post_game\""));
}

#[test]
fn bad_bank_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let bank = dir.path().join("bad.bank.json");
    std::fs::write(&bank, "{ not json").unwrap();
    let mut args = game_args("eval", dir.path());
    args.extend(["--bank".into(), bank.display().to_string()]);
    assert_eq!(run(&args).status.code(), Some(2));
}

#[test]
fn ablation_grid_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = game_args("ablate", dir.path());
    args.extend(["--rounds".into(), "1,2,3".into(), "--questions".into(), "1,2".into(), "--jobs".into(), "3".into()]);
    let o = run(&args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 6);
    assert!(csv.lines().next().unwrap().starts_with("cell,"));
    assert!(rows[0].starts_with("r1-m1,"));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("ablation.json")).unwrap()).unwrap();
    assert_eq!(json["cells"].as_array().unwrap().len(), 6);
    assert_eq!(std::fs::read_dir(dir.path().join("cells")).unwrap().count(), 6);
}

#[test]
fn pooled_and_serial_ablations_agree() {
    let serial = tempfile::tempdir().unwrap();
    let pooled = tempfile::tempdir().unwrap();
    for (d, jobs) in [(serial.path(), "1"), (pooled.path(), "4")] {
        let mut args = game_args("ablate", d);
        args.extend(["--sensor-k".into(), "2".into(), "--jobs".into(), jobs.into()]);
        assert_eq!(run(&args).status.code(), Some(0));
    }
    for entry in std::fs::read_dir(serial.path().join("cells")).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(
            std::fs::read(serial.path().join("cells").join(&name)).unwrap(),
            std::fs::read(pooled.path().join("cells").join(&name)).unwrap()
        );
    }
    let csv = std::fs::read_to_string(pooled.path().join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 10);
}

#[test]
fn empty_ablation_grid_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&game_args("ablate", dir.path())).status.code(), Some(2));
    let grid = dir.path().join("grid.json");
    std::fs::write(&grid, r#"{"rounds": []}"#).unwrap();
    let mut args = game_args("ablate", dir.path());
    args.extend(["--grid".into(), grid.display().to_string()]);
    assert_eq!(run(&args).status.code(), Some(2));
    let mut args = game_args("ablate", dir.path());
    args.extend(["--jobs".into(), "0".into(), "--rounds".into(), "1".into()]);
    assert_eq!(run(&args).status.code(), Some(2));
}

#[test]
fn serve_accepts_sessions() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_mmg"))
        .args([
            "serve",
            "--scenario",
            &fixture("planted_clue.scenario.json"),
            "--config",
            &fixture("planted_clue.config.json"),
            "--addr",
            "127.0.0.1:0",
        ])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on http://").unwrap().to_string();

    let body = r#"{"scenario":"planted-clue","human_seat":"Bob"}"#;
    let mut s = TcpStream::connect(&addr).unwrap();
    write!(
        s,
        "POST /sessions HTTP/1.1\r\nHost: {addr}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut resp = String::new();
    s.read_to_string(&mut resp).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(resp.starts_with("HTTP/1.1 201"), "{resp}");
    assert!(resp.contains("\"token\""));
}

#[test]
fn serve_rejects_missing_scenarios() {
    let o = mmg(&["serve", "--scenario", "/no/such.json"]);
    assert_eq!(o.status.code(), Some(2));
}
