use std::path::Path;
use std::process::{Command, Output};

use reverbkit::checkpoint::Checkpoint;
use reverbkit::fhvae::FhvaeConfig;
use reverbkit::harness::MetricsReport;
use reverbkit::roomsim::{generate_pool, read_rir, sample_rooms, RirOptions, RoomSet};
use reverbkit::sigproc::{logmel, read_feat, read_wav, LogMelConfig};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reverbkit")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// The final stderr line is the structured error record.
fn error_line(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let last = stderr.lines().last().expect("stderr has an error line");
    serde_json::from_str(last).unwrap_or_else(|e| panic!("{last:?}: {e}"))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn help_lists_every_subcommand() {
    let out = ok(&["--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in [
        "rir", "augment", "features", "synth", "train-am", "train-enhance", "train-fhvae", "extract-z1", "eval",
        "grid", "report",
    ] {
        assert!(text.contains(cmd), "{cmd} missing from help:\n{text}");
    }
    ok(&["rir", "sample", "--help"]);
    ok(&["--version"]);
}

#[test]
fn usage_errors_exit_one() {
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_line(&out)["code"], "usage");

    let out = run(&["rir", "sample", "--set", "S9", "--rooms", "1", "--per-room", "1", "--out", "x"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(error_line(&out)["message"].as_str().unwrap().contains("S9"));

    let out = run(&["features", "--out", "x"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_config_exits_two_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out = run(&["grid", "--config", p(&missing)]);
    assert_eq!(out.status.code(), Some(2));
    let err = error_line(&out);
    assert_eq!(err["code"], "io");
    assert_eq!(err["context"]["path"], p(&missing));
    assert_eq!(err["context"]["subcommand"], "grid");
}

#[test]
fn argument_errors_from_the_library_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["rir", "sample", "--set", "S1", "--rooms", "0", "--per-room", "1", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_line(&out)["code"], "argument");
}

#[test]
fn rir_sample_matches_library_and_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = |d: &Path| {
        vec![
            "--seed".to_string(),
            "12".into(),
            "rir".into(),
            "sample".into(),
            "--set".into(),
            "S1".into(),
            "--rooms".into(),
            "2".into(),
            "--per-room".into(),
            "2".into(),
            "--duration".into(),
            "0.5".into(),
            "--out".into(),
            p(d).into(),
        ]
    };
    ok(&args(a.path()).iter().map(String::as_str).collect::<Vec<_>>());
    ok(&args(b.path()).iter().map(String::as_str).collect::<Vec<_>>());

    let specs = sample_rooms(RoomSet::S1, 2, 2, 12).unwrap();
    let pool = generate_pool(&specs, &RirOptions { duration_s: 0.5, ..RirOptions::default() }).unwrap();
    let mut wavs: Vec<_> = std::fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "wav"))
        .collect();
    wavs.sort();
    assert_eq!(wavs.len(), 4);
    for (wav, want) in wavs.iter().zip(&pool) {
        let got = read_rir(wav).unwrap();
        assert_eq!(got.meta.as_ref().unwrap().spec, want.meta.as_ref().unwrap().spec);
        // Stored as 32-bit float samples.
        for (g, w) in got.taps.iter().zip(&want.taps) {
            assert!((g - w).abs() <= 1e-7 * w.abs().max(1e-3), "{g} vs {w}");
        }
        let other = b.path().join(wav.file_name().unwrap());
        assert_eq!(std::fs::read(wav).unwrap(), std::fs::read(other).unwrap());
    }

    let out = ok(&["rir", "t60", "--rir", p(&wavs[0])]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["t60_s"].as_f64().unwrap() > 0.0);
}

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let corpus = root.join("corpus");
    let synth = [
        "--seed", "4", "synth", "--out", p(&corpus), "--n-train", "4", "--n-dev", "2", "--n-test", "2", "--frames",
        "120", "--classes", "4", "--distant",
    ];
    ok(&synth);
    let again = root.join("again");
    let mut synth2 = synth;
    synth2[4] = p(&again);
    ok(&synth2);
    for f in ["clean-train.jsonl", "clean-test.jsonl"] {
        assert_eq!(
            std::fs::read_to_string(corpus.join(f)).unwrap().replace(p(&corpus), ""),
            std::fs::read_to_string(again.join(f)).unwrap().replace(p(&again), "")
        );
    }
    let m = |name: &str| corpus.join(name);
    let distant = |split: &str| corpus.join("distant").join(split).join("manifest.jsonl");
    let (clean_train, clean_dev) = (m("clean-train.jsonl"), m("clean-dev.jsonl"));
    let (distant_train, distant_dev) = (distant("train"), distant("dev"));

    // Features: single WAV equals the library front end.
    let first_wav = corpus.join("clean").join("train").join("train000.wav");
    let feat = root.join("one.feat");
    ok(&["features", "--wav", p(&first_wav), "--out", p(&feat)]);
    let want = logmel(&read_wav(&first_wav).unwrap(), &LogMelConfig::default()).unwrap();
    assert_eq!(read_feat(&feat).unwrap(), want.frames);
    let fdir = root.join("feats");
    ok(&["features", "--manifest", p(&clean_dev), "--out", p(&fdir)]);
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(fdir.join("features.json")).unwrap()).unwrap();
    assert_eq!(meta["kind"], "log-mel");
    assert_eq!(meta["utterances"].as_array().unwrap().len(), 2);

    // Acoustic model, evaluation.
    let am = root.join("am");
    let epochs = ["--phase1-epochs", "2", "--phase2-epochs", "1", "--hidden", "8"];
    let mut args = vec!["train-am", "--train", p(&clean_train), "--dev", p(&clean_dev), "--out", p(&am)];
    args.extend(epochs);
    ok(&args);
    let log: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(am.join("am_log.json")).unwrap()).unwrap();
    assert_eq!(log["epochs"].as_array().unwrap().len(), 3);
    let ckpt = am.join("am.ckpt");
    Checkpoint::load(&ckpt).unwrap();
    let result = root.join("eval.json");
    let out = ok(&["eval", "--model", p(&ckpt), "--manifest", p(&distant("test")), "--out", p(&result)]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let fer = v["fer"].as_f64().unwrap();
    assert!((0.0..=100.0).contains(&fer));
    let again = ok(&["eval", "--model", p(&ckpt), "--manifest", p(&distant("test"))]);
    assert_eq!(out.stdout, again.stdout);

    // Enhancer on parallel pairs.
    let enh = root.join("enh");
    let mut args = vec![
        "train-enhance", "--noisy", p(&distant_train), "--clean", p(&clean_train), "--dev-noisy",
        p(&distant_dev), "--dev-clean", p(&clean_dev), "--out", p(&enh),
    ];
    args.extend(epochs);
    ok(&args);
    ok(&[
        "eval", "--model", p(&ckpt), "--manifest", p(&distant("test")), "--enhancer", p(&enh.join("enhancer.ckpt")),
    ]);

    // FHVAE, z1 extraction and a z1 acoustic model.
    let cfg = root.join("fhvae.json");
    let small = FhvaeConfig {
        lstm_units: 8,
        z1_dim: 4,
        z2_dim: 4,
        ..FhvaeConfig::default()
    };
    std::fs::write(&cfg, serde_json::to_string(&small).unwrap()).unwrap();
    let fh = root.join("fhvae");
    ok(&[
        "train-fhvae", "--train", p(&clean_train), "--train", p(&distant_train), "--dev",
        p(&clean_dev), "--out", p(&fh), "--config", p(&cfg), "--max-epochs", "2",
    ]);
    let fh_ckpt = fh.join("fhvae.ckpt");
    let zdir = root.join("z1");
    ok(&["extract-z1", "--model", p(&fh_ckpt), "--manifest", p(&clean_dev), "--out", p(&zdir), "--logvar"]);
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(zdir.join("features.json")).unwrap()).unwrap();
    assert_eq!(meta["kind"], "z1-mean-logvar");
    let id = meta["utterances"][0].as_str().unwrap();
    assert_eq!(read_feat(zdir.join(format!("{id}.feat"))).unwrap().ncols(), 8);
    let zam = root.join("zam");
    let mut args = vec![
        "train-am", "--train", p(&clean_train), "--dev", p(&clean_dev), "--out", p(&zam),
        "--fhvae", p(&fh_ckpt),
    ];
    args.extend(epochs);
    ok(&args);
    ok(&["eval", "--model", p(&zam.join("am.ckpt")), "--manifest", p(&distant("test")), "--fhvae", p(&fh_ckpt)]);

    // A z1 model fed log-mel input is a shape error, not a crash.
    let out = run(&["eval", "--model", p(&zam.join("am.ckpt")), "--manifest", p(&distant("test"))]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["code"], "shape");
}

#[test]
fn report_renders_requested_formats() {
    let dir = tempfile::tempdir().unwrap();
    let mut report = MetricsReport::default();
    report.record("domains", "clean", "clean", 1, Ok(1.5));
    report.record("domains", "clean", "distant", 1, Ok(12.5));
    report.record("domains", "clean", "distant", 2, Err("diverged".into()));
    let metrics = dir.path().join("metrics.json");
    std::fs::write(&metrics, report.to_json()).unwrap();
    let out = dir.path().join("out");
    ok(&["report", "--metrics", p(&metrics), "--out", p(&out), "--format", "csv,text"]);
    assert!(out.join("report.csv").exists());
    assert!(out.join("report.txt").exists());
    assert!(!out.join("report.svg").exists());

    std::fs::write(&metrics, MetricsReport::default().to_json()).unwrap();
    let empty = run(&["report", "--metrics", p(&metrics), "--out", p(&dir.path().join("empty"))]);
    assert_ne!(empty.status.code(), Some(0));
    assert!(!dir.path().join("empty").join("report.csv").exists());
}
