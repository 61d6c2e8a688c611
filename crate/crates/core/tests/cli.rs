use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::sync::OnceLock;

use hasr_core::recognizer::WordModelSet;
use hasr_core::synth::{synth_pcm, synth_sequence};

const BIN: &str = env!("CARGO_BIN_EXE_hasr");

fn hasr(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn stdout_json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

struct Fixture {
    _dir: tempfile::TempDir,
    data: PathBuf,
    model: PathBuf,
}

/// A 2-word synthetic dataset and a model trained on it by the CLI.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        let model = dir.path().join("m.hasr.json");
        let o = hasr(&["synth", "--out", s(&data), "--words", "go,stop", "--per-word", "20", "--seed", "17"]);
        assert!(o.status.success());
        assert_eq!(stdout_json(&o)["written"], 40);
        let o = train(&data, &model, &[]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        Fixture { _dir: dir, data, model }
    })
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn train(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--data", s(data), "--words", "go,stop", "--out", s(out), "--codebook", "16"];
    args.extend(extra);
    hasr(&args)
}

#[test]
fn train_writes_loadable_model_and_summary() {
    let f = fixture();
    WordModelSet::load(&f.model).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let o = train(&f.data, &dir.path().join("x.hasr.json"), &[]);
    let summary = stdout_json(&o);
    let words = summary["words"].as_array().unwrap();
    assert_eq!(words.len(), 2);
    assert_eq!(words[0]["word"], "go");
    assert_eq!(words[0]["n_clips"], 16);
    assert!(words[1]["final_log_likelihood"].as_f64().unwrap().is_finite());
}

#[test]
fn train_is_byte_reproducible() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let again = dir.path().join("again.hasr.json");
    assert!(train(&f.data, &again, &[]).status.success());
    assert_eq!(std::fs::read(&f.model).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn missing_word_directory_is_a_runtime_error() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.hasr.json");
    let o = hasr(&["train", "--data", s(&f.data), "--words", "go,banana", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("banana"));
    assert!(!out.exists());
}

#[test]
fn single_state_is_a_usage_error() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let o = train(&f.data, &dir.path().join("m.json"), &["--states", "1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bad_flags_are_usage_errors() {
    assert_eq!(hasr(&[]).status.code(), Some(1));
    assert_eq!(hasr(&["train", "--data", "x"]).status.code(), Some(1));
    assert_eq!(hasr(&["edge", "--input", "-", "--policy", "sideways"]).status.code(), Some(1));
    assert_eq!(hasr(&["recognize", "--model", "m", "--wav", "w", "--threshold", "abc"]).status.code(), Some(1));
    assert_eq!(hasr(&["--help"]).status.code(), Some(0));
}

#[test]
fn recognize_training_clip() {
    let f = fixture();
    let o = hasr(&["recognize", "--model", s(&f.model), "--wav", s(&f.data.join("go/go_0000.wav"))]);
    assert!(o.status.success());
    let r = stdout_json(&o);
    assert_eq!(r["best_word"], "go");
    assert_eq!(r["rejected"], false);
    assert!(r["scores"]["stop"].is_number() || r["scores"]["stop"].is_null());
    assert_eq!(r["t_frames"], 98);

    let o = hasr(&[
        "recognize",
        "--model",
        s(&f.model),
        "--wav",
        s(&f.data.join("go/go_0000.wav")),
        "--threshold",
        "1e9",
    ]);
    let r = stdout_json(&o);
    assert_eq!(r["rejected"], true);
    assert!(r["best_word"].is_null());
}

#[test]
fn recognize_missing_files_is_runtime_error() {
    let f = fixture();
    let o = hasr(&["recognize", "--model", s(&f.model), "--wav", "/nonexistent.wav"]);
    assert_eq!(o.status.code(), Some(2));
    let o = hasr(&["recognize", "--model", "/nonexistent.hasr.json", "--wav", "/nonexistent.wav"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn evaluate_reports_and_gates() {
    let f = fixture();
    let o = hasr(&["evaluate", "--model", s(&f.model), "--data", s(&f.data), "--min-accuracy", "0.9"]);
    assert_eq!(o.status.code(), Some(0));
    let r = stdout_json(&o);
    assert_eq!(r["n_test"], 8);
    let total: u64 = r["confusion"].as_array().unwrap().iter().flat_map(|row| row.as_array().unwrap()).map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(total, 8);

    // Swap the labels: "go" holds stop audio and vice versa.
    let dir = tempfile::tempdir().unwrap();
    for (label, source) in [("go", "stop"), ("stop", "go")] {
        std::fs::create_dir(dir.path().join(label)).unwrap();
        for i in 0..10 {
            let pcm = synth_pcm(source, 100 + i, 17);
            hasr_core::audio::write_wav(dir.path().join(label).join(format!("{i:02}.wav")), &pcm).unwrap();
        }
    }
    let o = hasr(&["evaluate", "--model", s(&f.model), "--data", s(dir.path()), "--min-accuracy", "0.99"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout_json(&o)["accuracy"].as_f64().unwrap() < 0.99);
}

#[test]
fn serve_rejects_malformed_backend() {
    for spec in ["whisper", "mock:fixed", "mock:nope:1"] {
        let o = hasr(&["serve", "--listen", "127.0.0.1:0", "--backend", spec]);
        assert_eq!(o.status.code(), Some(1), "{spec}");
    }
}

struct Server(Child, String);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn serve(backend: &str) -> Server {
    let mut child = Command::new(BIN)
        .args(["serve", "--listen", "127.0.0.1:0", "--backend", backend])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stderr.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").unwrap().to_string();
    Server(child, addr)
}

#[test]
fn edge_hybrid_against_served_mock() {
    let f = fixture();
    let server = serve("mock:fixed:hello world");
    let wav = f.data.join("go/go_0004.wav");
    let o = hasr(&["edge", "--model", s(&f.model), "--input", s(&wav), "--policy", "hybrid", "--connect", &server.1]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let raw = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<serde_json::Value> = raw.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["kind"], "Keyword");
    assert_eq!(lines[0]["word"], "go");
    assert_eq!(lines[1]["kind"], "Transcript");
    assert_eq!(lines[1]["text"], "hello world");
    let first = raw.lines().next().unwrap();
    let pos: Vec<usize> = ["\"kind\"", "\"utt_id\"", "\"word\"", "\"score\"", "\"compute_ms\"", "\"wall_ms_since_utt_end\""]
        .iter()
        .map(|k| first.find(k).unwrap())
        .collect();
    assert!(pos.windows(2).all(|w| w[0] < w[1]), "{first}");
}

#[test]
fn edge_remote_unreachable_exits_2() {
    let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = l.local_addr().unwrap().to_string();
    drop(l);
    let o = hasr(&["edge", "--input", "/dev/null", "--policy", "remote", "--connect", &addr]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn edge_policy_flag_requirements() {
    assert_eq!(hasr(&["edge", "--input", "-", "--policy", "remote"]).status.code(), Some(1));
    assert_eq!(hasr(&["edge", "--input", "-", "--policy", "local"]).status.code(), Some(1));
}

#[test]
fn edge_reads_raw_pcm_from_stdin() {
    let f = fixture();
    let (clip, _) = synth_sequence(&[("stop", 500), ("go", 501)], 2);
    let mut child = Command::new(BIN)
        .args(["edge", "--model", s(&f.model), "--input", "-", "--policy", "local"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(&clip.to_le_bytes()).unwrap();
    let o = child.wait_with_output().unwrap();
    assert!(o.status.success());
    let words: Vec<String> = String::from_utf8(o.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["word"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(words, ["stop", "go"]);
}

#[test]
fn export_vectors_matches_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v.json");
    assert!(hasr(&["export-vectors", "--out", s(&out)]).status.success());
    let fixture = include_str!("fixtures/protocol_vectors.json");
    assert_eq!(std::fs::read_to_string(out).unwrap(), fixture);
}

#[test]
fn help_documents_every_flag() {
    let cases: [(&str, &[&str]); 5] = [
        ("train", &["--data", "--words", "--out", "--states", "--codebook", "--seed"]),
        ("recognize", &["--model", "--wav", "--threshold"]),
        ("evaluate", &["--model", "--data", "--min-accuracy"]),
        ("serve", &["--listen", "--backend", "--log"]),
        ("edge", &["--model", "--input", "--policy", "--connect"]),
    ];
    for (cmd, flags) in cases {
        let o = hasr(&[cmd, "--help"]);
        assert!(o.status.success());
        let text = String::from_utf8(o.stdout).unwrap();
        for flag in flags {
            assert!(text.contains(flag), "{cmd} --help lacks {flag}");
        }
    }
}
