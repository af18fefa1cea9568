use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mee::checkpoint;
use mee::dataset::Dataset;
use mee::embed;
use mee::format;
use serde_json::Value;

fn mee(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mee"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = mee(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn error_code(out: &Output) -> String {
    assert!(!out.status.success());
    let line = String::from_utf8_lossy(&out.stderr);
    let last = line.lines().last().expect("stderr line");
    let v: Value = serde_json::from_str(last).expect("json error");
    v["error"].as_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small synthetic dataset and a model trained on it for a few epochs.
fn trained(root: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let data = root.join("data");
    let run = root.join("run");
    ok(&["synth", "--out", s(&data), "--n", "40", "--missing", "audio=0.3", "--mc", "--seed", "3"]);
    let cfg = root.join("cfg.json");
    fs::write(
        &cfg,
        r#"{"preset": "msrvtt", "epochs": 6, "batch_size": 8, "embed_dim": 16, "text_clusters": 4, "audio_clusters": 4}"#,
    )
    .unwrap();
    ok(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&run)]);
    (data, run)
}

#[test]
fn train_eval_embed_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let (data, run) = trained(dir.path());

    let log = fs::read_to_string(run.join("train_log.jsonl")).unwrap();
    let entries: Vec<Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(entries.len(), 6);
    assert!(entries.iter().all(|e| e["loss"].as_f64().unwrap().is_finite()));

    let ckpt = run.join("best.ckpt");
    let a = ok(&["eval", "--checkpoint", s(&ckpt), "--data", s(&data), "--task", "t2v", "--seed", "4"]);
    let b = ok(&["eval", "--checkpoint", s(&ckpt), "--data", s(&data), "--task", "t2v", "--seed", "4"]);
    assert_eq!(a, b);
    let report: Value = serde_json::from_str(&a).unwrap();
    for key in ["r1", "r5", "r10", "medr", "n"] {
        assert!(report.get(key).is_some(), "{key}");
    }
    assert_eq!(report["n"], 40);
    let r = |k: &str| report[k].as_f64().unwrap();
    assert!(r("r1") <= r("r5") && r("r5") <= r("r10"));

    let v2t: Value = serde_json::from_str(&ok(&[
        "eval", "--checkpoint", s(&ckpt), "--data", s(&data), "--task", "v2t", "--pool", "20",
    ]))
    .unwrap();
    assert_eq!(v2t["n"], 20);
    let mc: Value =
        serde_json::from_str(&ok(&["eval", "--checkpoint", s(&ckpt), "--data", s(&data), "--task", "mc"])).unwrap();
    assert_eq!(mc["n"], 40);

    // Exported vectors reproduce the model's scores on fully observed videos.
    let out = dir.path().join("emb");
    ok(&["embed", "--checkpoint", s(&ckpt), "--data", s(&data), "--out", s(&out)]);
    let text = format::read_matrix(&out.join(embed::TEXT_FILE)).unwrap();
    let video = format::read_matrix(&out.join(embed::VIDEO_FILE)).unwrap();
    let ids: Vec<String> = serde_json::from_slice(&fs::read(out.join(embed::IDS_FILE)).unwrap()).unwrap();
    assert_eq!(ids.len(), 40);
    let params = checkpoint::load(&ckpt).unwrap().params;
    let pairs = Dataset::open(&data).unwrap().pairs_for(params.config()).unwrap();
    let audio = params.config().modality_index("audio").unwrap();
    let offset: usize = params.config().modalities[..audio].iter().map(|m| m.embed_dim).sum();
    let mut full = 0;
    for (i, p) in pairs.iter().enumerate() {
        for (j, q) in pairs.iter().enumerate().take(10) {
            if q.video.mask().count() < params.config().experts() {
                continue;
            }
            full += 1;
            let dot: f64 = text.row(i).iter().zip(video.row(j)).map(|(a, b)| *a as f64 * *b as f64).sum();
            let score = params.similarity(&p.caption, &q.video).unwrap() as f64;
            assert!((dot - score).abs() < 1e-5, "({i},{j}) {dot} vs {score}");
        }
        if p.video.mask().is_available(audio) {
            continue;
        }
        let block = &video.row(i)[offset..offset + params.config().modalities[audio].embed_dim];
        assert!(block.iter().all(|v| *v == 0.0));
    }
    assert!(full > 0);
}

#[test]
fn resume_continues_the_same_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["synth", "--out", s(&data), "--n", "30", "--seed", "1"]);
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"batch_size": 8, "embed_dim": 8, "text_clusters": 2, "audio_clusters": 2}"#).unwrap();
    let straight = dir.path().join("straight");
    ok(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&straight), "--epochs", "4"]);
    let split = dir.path().join("split");
    ok(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&split), "--epochs", "2"]);
    let last = split.join("last.ckpt");
    ok(&[
        "train", "--config", s(&cfg), "--data", s(&data), "--out", s(&split), "--epochs", "4", "--resume", s(&last),
    ]);
    let read = |p: &Path| -> Vec<Value> {
        fs::read_to_string(p.join("train_log.jsonl"))
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect()
    };
    assert_eq!(read(&straight), read(&split));
    assert_eq!(
        fs::read(straight.join("last.ckpt")).unwrap(),
        fs::read(split.join("last.ckpt")).unwrap()
    );
}

#[test]
fn alpha_zero_ignores_image_directory() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["synth", "--out", s(&data), "--n", "20"]);
    let run = dir.path().join("run");
    let missing = dir.path().join("no-such-dir");
    let out = mee(&[
        "train", "--data", s(&data), "--out", s(&run), "--epochs", "1", "--images", s(&missing),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!missing.exists());
}

#[test]
fn alpha_needs_images() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let images = dir.path().join("images");
    ok(&["synth", "--out", s(&data), "--n", "20"]);
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"alpha": 0.5, "epochs": 1, "batch_size": 8, "embed_dim": 8}"#).unwrap();
    let run = dir.path().join("run");
    let out = mee(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&run)]);
    assert_eq!(error_code(&out), "config");
    ok(&["synth", "--out", s(&images), "--n", "30", "--images", "--seed", "2"]);
    ok(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&run), "--images", s(&images)]);
    let log = fs::read_to_string(run.join("train_log.jsonl")).unwrap();
    let entry: Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    // 18 training pairs after the 10% split.
    assert_eq!(entry["images"], 9);
}

#[test]
fn multiple_choice_without_items_is_typed_error() {
    let dir = tempfile::tempdir().unwrap();
    let (_, run) = trained(dir.path());
    let plain = dir.path().join("plain");
    ok(&["synth", "--out", s(&plain), "--n", "10", "--missing", "audio=0.3", "--seed", "3"]);
    let out = mee(&[
        "eval", "--checkpoint", s(&run.join("best.ckpt")), "--data", s(&plain), "--task", "mc",
    ]);
    assert_eq!(error_code(&out), "no_multiple_choice");
}

#[test]
fn checkpoint_needs_its_modalities() {
    let dir = tempfile::tempdir().unwrap();
    let (_, run) = trained(dir.path());
    let other = dir.path().join("other");
    ok(&["synth", "--out", s(&other), "--n", "10", "--modalities", "appearance:24,motion:16"]);
    let out = mee(&["eval", "--checkpoint", s(&run.join("best.ckpt")), "--data", s(&other), "--task", "t2v"]);
    assert_eq!(error_code(&out), "missing_modality");
}

#[test]
fn empty_dataset_embeds_to_empty_matrices() {
    let dir = tempfile::tempdir().unwrap();
    let (_, run) = trained(dir.path());
    let empty = dir.path().join("empty");
    ok(&["synth", "--out", s(&empty), "--n", "0"]);
    let out = dir.path().join("emb");
    ok(&["embed", "--checkpoint", s(&run.join("best.ckpt")), "--data", s(&empty), "--out", s(&out)]);
    let text = format::read_matrix(&out.join(embed::TEXT_FILE)).unwrap();
    assert_eq!(text.rows(), 0);
    assert_eq!(text.cols(), 48);
}

#[test]
fn gradcheck_command() {
    let out = ok(&["gradcheck", "--seeds", "2"]);
    assert!(out.contains("geu") && out.contains("netvlad") && out.contains("model"));
    assert!(!out.contains("FAIL"));
    let bad = mee(&["gradcheck", "--seeds", "1", "--inject-fault", "geu-sign"]);
    assert_eq!(error_code(&bad), "gradcheck_failed");
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL"));
}

#[test]
fn bad_inputs_exit_nonzero_with_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["synth", "--out", s(&data), "--n", "10"]);
    let wv = data.join("word_vectors.bin");
    let mut bytes = fs::read(&wv).unwrap();
    bytes[0] = b'X';
    fs::write(&wv, bytes).unwrap();
    let out = mee(&["train", "--data", s(&data), "--out", s(&dir.path().join("r"))]);
    assert_eq!(error_code(&out), "bad_magic");

    let out = mee(&["synth", "--out", s(&data), "--missing", "smell=0.1"]);
    assert_eq!(error_code(&out), "config");
    let out = mee(&["synth", "--out", s(&data), "--missing", "audio=2"]);
    assert_eq!(error_code(&out), "model");
}
