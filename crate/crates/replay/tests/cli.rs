//! End-to-end runs of the `replay` binary on a tiny synthetic dataset.

use std::path::Path;
use std::process::Command;

use replay_core::synth::SynthSpec;
use replay_core::{ModelConfig, TrainConfig};

fn replay(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_replay"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "replay {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()))
        .lines()
        .map(str::to_owned)
        .collect()
}

#[test]
fn gen_data_train_eval_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();

    let spec = SynthSpec { n_train: 8, n_val: 4, seed: 3, ..SynthSpec::default() };
    std::fs::write(root.join("spec.json"), serde_json::to_string(&spec).unwrap()).unwrap();
    let data = root.join("data");
    replay(&["gen-data", "--spec", p(&root.join("spec.json")), "--out", p(&data)]);
    let train_rows = lines(&data.join("train.csv"));
    assert_eq!(train_rows.len(), 9);
    assert_eq!(lines(&data.join("val.csv")).len(), 5);

    let cfg = TrainConfig {
        model: ModelConfig {
            width: 16,
            depth: 1,
            heads: 2,
            mlp_ratio: 2,
            slot_dim: 16,
            latents: 2,
            decoder_heads: 2,
            ..ModelConfig::default()
        },
        epochs: 1,
        batch_size: 4,
        ..TrainConfig::default()
    };
    std::fs::write(root.join("cfg.json"), serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    let ckpt = root.join("model.pibk");
    replay(&["train", "--config", p(&root.join("cfg.json")), "--data", p(&data), "--out", p(&ckpt)]);
    assert!(ckpt.exists());
    let log = lines(&root.join("model.pibk.metrics.csv"));
    assert_eq!(log.len(), 2);
    assert!(log[0].starts_with("epoch,lr,train_loss,val_top1"), "{}", log[0]);

    let report = root.join("report.json");
    replay(&["eval", "--ckpt", p(&ckpt), "--data", p(&data), "--report", p(&report)]);
    let metrics: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(metrics["n"], 4);
    assert_eq!(metrics["per_pass_top1"].as_array().unwrap().len(), 3);

    let wav = data.join(train_rows[1].split(',').next().unwrap());
    let dump = root.join("dump");
    replay(&["inspect", "--ckpt", p(&ckpt), "--wav", p(&wav), "--dump", p(&dump), "--csv"]);
    for k in 1..=3 {
        let pgm = std::fs::read(dump.join(format!("spectrogram_pass{k}.pgm"))).unwrap();
        assert!(pgm.starts_with(b"P5\n"));
        assert!(dump.join(format!("spectrogram_pass{k}.csv")).exists());
    }
    for k in 1..=2 {
        let rows = lines(&dump.join(format!("saliency_pass{k}.csv")));
        assert_eq!(rows[0], "frame_index,time_s,saliency,selected");
        assert_eq!(rows.len(), 1 + cfg.model.input_frames);
    }
    assert!(!dump.join("saliency_pass3.csv").exists());
    let segs = lines(&dump.join("segments.csv"));
    assert_eq!(segs[0], "pass,start_s,end_s");
    assert_eq!(segs[1], "1,0.000000e+00,2.000000e+00");
    let logits: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dump.join("logits.json")).unwrap()).unwrap();
    let passes = logits["passes"].as_array().unwrap();
    assert_eq!(passes.len(), 3);
    let hops: Vec<f64> = passes.iter().map(|p| p["hop_ms"].as_f64().unwrap()).collect();
    assert_eq!(hops, [10.0, 9.0, 8.0]);
    let sum: f64 = logits["probabilities"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
    assert!((sum - 1.0).abs() < 1e-10);
}

#[test]
fn gradcheck_reports_every_check() {
    let out = replay(&["gradcheck"]);
    let text = String::from_utf8_lossy(&out.stdout);
    for name in ["gru", "slot_iteration", "decode", "rank_loss", "end_to_end"] {
        assert!(text.contains(name), "{name} missing from:\n{text}");
    }
}

#[test]
fn missing_inputs_fail_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_replay"))
        .args(["eval", "--ckpt", p(&dir.path().join("none.pibk")), "--data", p(dir.path()), "--report", "r.json"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("none.pibk"));
}
