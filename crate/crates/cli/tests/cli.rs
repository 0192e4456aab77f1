//! Exercise the command-line surface end to end on tiny budgets.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_asrlab"))
}

fn workdir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("asrlab_cli_test").join(name);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn tiny_config() -> String {
    [
        "family = rnnt",
        "streaming = true",
        "seed = 3",
        "steps = 15",
        "corpus_utts = 6",
        "enc_blocks = 1",
        "enc_cell = 8",
        "enc_proj = 8",
        "pred_cell = 8",
        "pred_proj = 8",
        "joint_hidden = 8",
        "beam = 2",
    ]
    .join("\n")
}

#[test]
fn latency_report_prints_the_expected_rows() {
    let out = bin().args(["latency-report"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("rnnt-context-6x4\t24\t720\t720"), "{text}");
    assert!(text.contains("transformer-chunk-480ms\t12\t960\t720\t[480, 960]"), "{text}");
    assert!(text.contains("transformer-lookahead-18x1\t18\t720\t720\t[720, 720]\t240"), "{text}");
}

#[test]
fn latency_report_json_is_valid() {
    let out = bin().args(["latency-report", "--format", "json"]).output().unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v.as_array().unwrap().len() >= 6);
}

#[test]
fn gen_train_eval_decode_pipeline() {
    let dir = workdir("pipeline");
    let cfg_path = dir.join("toy.cfg");
    std::fs::write(&cfg_path, tiny_config()).unwrap();

    let out = bin()
        .args(["gen-corpus", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("toy.corpus").exists());
    assert!(dir.join("toy.ali").exists());

    let out = bin()
        .args(["train", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ckpt = dir.join("model.ckpt");
    assert!(ckpt.exists());
    assert!(dir.join("loss.tsv").exists());

    let out = bin()
        .args(["eval", "--checkpoint"])
        .arg(&ckpt)
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("wer\t"), "{text}");

    let out = bin()
        .args(["decode", "--checkpoint"])
        .arg(&ckpt)
        .args(["--corpus"])
        .arg(dir.join("toy.corpus"))
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("utterance\thypothesis\tlog_score\ttrigger_frames"), "{text}");
    assert_eq!(text.lines().count(), 7); // header + 6 utterances
}

#[test]
fn bad_config_fails_with_nonzero_exit() {
    let dir = workdir("badcfg");
    let cfg_path = dir.join("bad.cfg");
    std::fs::write(&cfg_path, "family = rnnt\nnot_a_key = 7\n").unwrap();
    let out = bin()
        .args(["train", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("unknown key"), "{err}");
}

#[test]
fn gradcheck_reports_every_layer() {
    let out = bin().args(["gradcheck"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in [
        "lstm-standard",
        "lstm-custom",
        "context-layer",
        "multi-head-attention",
        "transformer-block",
        "vgg-frontend",
    ] {
        let line = text.lines().find(|l| l.starts_with(name)).expect(name);
        assert!(line.ends_with("ok"), "{line}");
    }
}
