use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mfcm_core::train::synth::{write_synthetic_corpus, SynthSpec};
use mfcm_core::wav::{write_wav, WavEncoding};
use mfcm_core::{AudioClip, RunConfig};
use serde_json::Value;
use tempfile::TempDir;

fn mfcm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfcm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "status {:?}, stderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn small_config(dir: &Path, epochs: usize) -> PathBuf {
    let mut run = RunConfig::default().with_input_size(64, 64);
    run.train.epochs = epochs;
    run.train.batch_size = 8;
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&run).unwrap()).unwrap();
    path
}

fn corpus(dir: &Path) -> PathBuf {
    let root = dir.join("corpus");
    let spec = SynthSpec {
        per_class: [8, 2, 2],
        ..SynthSpec::default()
    };
    write_synthetic_corpus(&root, 1337, &spec).unwrap();
    root
}

fn tone(path: &Path, amplitude: f64) {
    let samples = (0..16000)
        .map(|i| amplitude * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 16000.0).sin())
        .collect();
    write_wav(path, &AudioClip::new(samples, 16000), WavEncoding::Pcm16).unwrap();
}

/// Splits a binary PGM into `(width, height, maxval, pixels)`.
fn pgm_header(bytes: &[u8]) -> (usize, usize, usize, &[u8]) {
    let mut rest = bytes;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        let end = rest.iter().position(u8::is_ascii_whitespace).unwrap();
        fields.push(std::str::from_utf8(&rest[..end]).unwrap().to_owned());
        rest = &rest[end + 1..];
    }
    assert_eq!(fields[0], "P5");
    let n: Vec<usize> = fields[1..].iter().map(|f| f.parse().unwrap()).collect();
    (n[0], n[1], n[2], rest)
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(mfcm(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(mfcm(&["infer"]).status.code(), Some(1));
    assert_eq!(mfcm(&["--help"]).status.code(), Some(0));
}

#[test]
fn truncated_wav_exits_2_with_one_line() {
    let dir = TempDir::new().unwrap();
    let wav = dir.path().join("cut.wav");
    tone(&wav, 0.5);
    let bytes = std::fs::read(&wav).unwrap();
    std::fs::write(&wav, &bytes[..30]).unwrap();
    let out = mfcm(&["extract", s(&wav), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with("error:"));
}

#[test]
fn invalid_config_exits_4() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"train": {"learning_rate": -1.0}}"#).unwrap();
    let wav = dir.path().join("a.wav");
    tone(&wav, 0.5);
    let out = mfcm(&["--config", s(&cfg), "extract", s(&wav)]);
    assert_eq!(out.status.code(), Some(4));
    std::fs::write(&cfg, r#"{"unknown_section": {}}"#).unwrap();
    assert_eq!(mfcm(&["--config", s(&cfg), "gradcheck"]).status.code(), Some(4));
}

#[test]
fn extract_writes_all_artifacts() {
    let dir = TempDir::new().unwrap();
    let wav = dir.path().join("tone.wav");
    tone(&wav, 0.5);
    let summary = stdout_json(&mfcm(&["extract", s(&wav), "--out", s(dir.path())]));
    let frames = summary["frames"].as_u64().unwrap() as usize;
    let n_mels = summary["n_mels"].as_u64().unwrap() as usize;
    assert_eq!(summary["input_shape"], serde_json::json!([3, 224, 224]));
    for suffix in [".mel.csv", ".mel.pgm", ".mfcc.csv", ".input.mfct"] {
        assert!(dir.path().join(format!("tone{suffix}")).is_file(), "{suffix}");
    }
    let pgm = std::fs::read(dir.path().join("tone.mel.pgm")).unwrap();
    let (width, height, maxval, pixels) = pgm_header(&pgm);
    assert_eq!((width, height, maxval), (frames, n_mels, 255));
    assert_eq!(pixels.len(), frames * n_mels);
    let mel_rows = std::fs::read_to_string(dir.path().join("tone.mel.csv")).unwrap();
    assert!(mel_rows.lines().count() >= frames);
}

#[test]
fn silent_clip_gives_blank_image() {
    let dir = TempDir::new().unwrap();
    let wav = dir.path().join("silence.wav");
    tone(&wav, 0.0);
    let prefix = dir.path().join("out/quiet");
    stdout_json(&mfcm(&["extract", s(&wav), "--prefix", s(&prefix)]));
    let pgm = std::fs::read(dir.path().join("out/quiet.mel.pgm")).unwrap();
    let (_, _, _, pixels) = pgm_header(&pgm);
    assert!(!pixels.is_empty());
    assert!(pixels.iter().all(|&p| p == 0));
}

#[test]
fn gradcheck_passes() {
    let out = mfcm(&["gradcheck"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.lines().skip(1).all(|l| l.ends_with(",pass")));
    assert!(table.contains("micro_network"));
}

#[test]
fn bench_reports_throughput() {
    let v = stdout_json(&mfcm(&["bench", "depthwise", "--shape", "1,8,16,16", "--iters", "2"]));
    assert_eq!(v["op"], "depthwise");
    assert!(v["items_per_second"].as_f64().unwrap() > 0.0);
    assert_eq!(mfcm(&["bench", "fft", "--shape", "1,2"]).status.code(), Some(1));
}

#[test]
fn train_eval_infer_round_trip() {
    let dir = TempDir::new().unwrap();
    let root = corpus(dir.path());
    let cfg = small_config(dir.path(), 25);
    let out_dir = dir.path().join("run");
    let report = stdout_json(&mfcm(&["--config", s(&cfg), "--out", s(&out_dir), "train", s(&root)]));
    let best = PathBuf::from(report["best_checkpoint"].as_str().unwrap());
    assert!(best.is_file());
    assert!(out_dir.join("epochs.csv").is_file());

    // The last checkpoint has seen the training split for every epoch.
    let last = out_dir.join("last.mfck");
    let metrics = stdout_json(&mfcm(&[
        "--config", s(&cfg), "--out", s(&out_dir), "eval", s(&last), s(&root), "--split", "training",
    ]));
    let acc = metrics["accuracy"].as_f64().unwrap();
    assert!(acc >= 0.95, "training accuracy {acc}");
    assert!(out_dir.join("scores-training.csv").is_file());

    let clip = root.join("testing/fake").read_dir().unwrap().next().unwrap().unwrap().path();
    let inf = stdout_json(&mfcm(&["--config", s(&cfg), "infer", s(&best), s(&clip)]));
    let score = inf["score"].as_f64().unwrap();
    assert!(score > 0.0 && score < 1.0);
    assert!(["real", "fake"].contains(&inf["prediction"].as_str().unwrap()));

    // A checkpoint for 64×64 input cannot serve the default 224×224 config.
    assert_eq!(mfcm(&["infer", s(&best), s(&clip)]).status.code(), Some(4));
}

#[test]
fn training_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let root = corpus(dir.path());
    let cfg = small_config(dir.path(), 2);
    let run = |name: &str| {
        let out = dir.path().join(name);
        stdout_json(&mfcm(&["--config", s(&cfg), "--seed", "7", "--out", s(&out), "train", s(&root)]));
        std::fs::read(out.join("last.mfck")).unwrap()
    };
    assert_eq!(run("a"), run("b"));
}
