use std::path::{Path, PathBuf};
use std::process::Command;

use kneecast::checkpoint::{save_checkpoint, Checkpoint};
use kneecast::dataset::{load_recording, write_recording};
use kneecast::model::{build_model, ModelHyper};
use kneecast::signal::PreprocessConfig;
use kneecast::train::TrainHistory;
use kneecast::Scenario;
use kneecast_cli::run_cli;
use serde_json::json;

fn run(args: &[&str]) -> i32 {
    run_cli(std::iter::once("kneecast").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(name);
    let mut args = vec!["synth", "-o", s(&out)];
    args.extend_from_slice(extra);
    assert_eq!(run(&args), 0);
    out
}

/// Small windows and a small network, so commands finish quickly.
fn tiny_config(dir: &Path, scenario: &str, extra: serde_json::Value) -> PathBuf {
    let mut doc = json!({
        "scenario": scenario,
        "seed": 4,
        "preprocess": { "window": { "window_ms": 400 } },
        "model": {
            "conv1": { "filters": 2, "kernel": 3, "stride": 2 },
            "conv2": { "filters": 4, "kernel": 3, "stride": 2 },
            "emg_feature_dim": 4, "lstm1_hidden": 4, "lstm2_hidden": 4,
            "kin_lstm_hidden": 4, "attn_dim": 4, "force_feature_dim": 4,
            "window_len": 40
        },
        "train": { "max_epochs": 40, "batch_size": 32, "base_lr": 0.01 }
    });
    for (k, v) in extra.as_object().unwrap() {
        doc[k] = v.clone();
    }
    let path = dir.join(format!("{scenario}.json"));
    std::fs::write(&path, doc.to_string()).unwrap();
    path
}

fn binary(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_kneecast")).args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8(out.stderr).unwrap())
}

fn nmae(path: &Path) -> f64 {
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    v["nmae"].as_f64().unwrap()
}

#[test]
fn synth_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["--cycles", "40", "--condition", "abnormal", "--seed", "7"];
    let a = synth(dir.path(), "a.csv", &args);
    let b = synth(dir.path(), "b.csv", &args);
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn predict_emits_one_row_per_hop() {
    let dir = tempfile::tempdir().unwrap();
    let long = synth(dir.path(), "long.csv", &["--cycles", "12"]);
    let rec = load_recording(&long).unwrap();
    assert!(rec.len() > 12_000);
    let csv = dir.path().join("twelve.csv");
    write_recording(&rec.truncated(12_000), &csv).unwrap();

    let model = build_model(Scenario::Dic, ModelHyper::default().with_horizon(50), 1).unwrap();
    let ckpt = dir.path().join("m.ckpt");
    save_checkpoint(&Checkpoint { model, preprocess: PreprocessConfig::default(), seed: 1 }, &ckpt).unwrap();

    let out = dir.path().join("pred.csv");
    assert_eq!(run(&["predict", s(&csv), "--model", s(&ckpt), "--horizon", "50", "-o", s(&out)]), 0);
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    let header: Vec<_> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.len(), 1 + 50 + 4);
    assert_eq!(header[50], "pred_50");
    assert_eq!(header[54], "attn_vm");
    let rows: Vec<_> = lines.collect();
    assert_eq!(rows.len(), 251);
    assert!(rows.iter().all(|r| r.split(',').count() == header.len()));

    assert_eq!(run(&["predict", s(&csv), "--model", s(&ckpt), "--horizon", "1"]), 1);
}

#[test]
fn truncation_never_changes_earlier_rows() {
    let dir = tempfile::tempdir().unwrap();
    let full = synth(dir.path(), "full.csv", &["--cycles", "6", "--seed", "3"]);
    let cfg = tiny_config(dir.path(), "DIC", json!({ "train": { "max_epochs": 2 } }));
    let trained = dir.path().join("trained");
    assert_eq!(run(&["train", s(&full), "--config", s(&cfg), "-o", s(&trained)]), 0);
    let ckpt = trained.join("model.ckpt");

    let rec = load_recording(&full).unwrap();
    let predict = |len: usize| {
        let csv = dir.path().join(format!("cut{len}.csv"));
        write_recording(&rec.truncated(len), &csv).unwrap();
        let out = dir.path().join(format!("pred{len}.csv"));
        assert_eq!(run(&["predict", s(&csv), "--model", s(&ckpt), "-o", s(&out)]), 0);
        std::fs::read_to_string(out).unwrap().lines().map(String::from).collect::<Vec<_>>()
    };
    let whole = predict(rec.len());
    for cut in [1_000, 2_345, 4_000] {
        let t = rec.time_ms[cut - 1];
        let part = predict(cut);
        assert!(part.len() > 1);
        let kept: Vec<_> = whole
            .iter()
            .skip(1)
            .filter(|r| r.split(',').next().unwrap().parse::<f64>().unwrap() <= t)
            .collect();
        assert_eq!(kept.len(), part.len() - 1, "cut {cut}");
        for (a, b) in kept.iter().zip(&part[1..]) {
            assert_eq!(*a, b);
        }
    }
}

#[test]
fn eval_refuses_another_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let rec = synth(dir.path(), "r.csv", &["--cycles", "6"]);
    let cfg = tiny_config(dir.path(), "SIC", json!({ "train": { "max_epochs": 1 } }));
    let out = dir.path().join("sic");
    assert_eq!(run(&["train", s(&rec), "--config", s(&cfg), "-o", s(&out)]), 0);
    let ckpt = out.join("model.ckpt");

    assert_eq!(run(&["eval", s(&rec), "--model", s(&ckpt), "--scenario", "SIC"]), 0);
    assert_eq!(run(&["eval", s(&rec), "--model", s(&ckpt), "--scenario", "DIC"]), 1);
    let dic_cfg = tiny_config(dir.path(), "DIC", json!({}));
    assert_eq!(run(&["eval", s(&rec), "--model", s(&ckpt), "--config", s(&dic_cfg)]), 1);

    let grafted = dir.path().join("dic");
    let args = ["transfer", s(&rec), "--from", s(&ckpt), "--epochs", "1", "-o", s(&grafted)];
    assert_eq!(run(&args), 0);
    assert!(grafted.join("graft.json").exists());
    assert_eq!(run(&["eval", s(&rec), "--model", s(&grafted.join("model.ckpt")), "--scenario", "DIC"]), 0);
}

#[test]
fn eval_scores_training_data_better() {
    let dir = tempfile::tempdir().unwrap();
    let seen = synth(dir.path(), "seen.csv", &["--cycles", "8", "--seed", "1", "--condition", "abnormal"]);
    let unseen = synth(dir.path(), "unseen.csv", &["--cycles", "8", "--seed", "2", "--condition", "abnormal", "--trial", "1"]);
    let cfg = tiny_config(dir.path(), "SIC", json!({ "split": { "kind": "trial_80_20", "order": "shuffled", "seed": 1 } }));
    let out = dir.path().join("m");
    assert_eq!(run(&["train", s(&seen), "--config", s(&cfg), "-o", s(&out)]), 0);
    let ckpt = out.join("model.ckpt");
    let (a, b) = (dir.path().join("seen.json"), dir.path().join("unseen.json"));
    assert_eq!(run(&["eval", s(&seen), "--model", s(&ckpt), "-o", s(&a)]), 0);
    assert_eq!(run(&["eval", s(&unseen), "--model", s(&ckpt), "-o", s(&b)]), 0);
    assert!(nmae(&a) < nmae(&b), "seen {} unseen {}", nmae(&a), nmae(&b));
}

#[test]
fn pipeline_is_repeatable() {
    let outputs: Vec<_> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            let rec = synth(dir.path(), "r.csv", &["--cycles", "6", "--seed", "5", "--forces"]);
            let cfg = tiny_config(dir.path(), "DIC_F", json!({ "horizon": 26, "train": { "max_epochs": 3 } }));
            let out = dir.path().join("m");
            assert_eq!(run(&["train", s(&rec), "--config", s(&cfg), "-o", s(&out)]), 0);
            let eval = dir.path().join("eval.json");
            let plot = dir.path().join("plot.csv");
            let ckpt = out.join("model.ckpt");
            let args = ["eval", s(&rec), "--model", s(&ckpt), "-o", s(&eval), "--plot", s(&plot)];
            assert_eq!(run(&args), 0);
            ["model.ckpt", "history.json", "metrics.json"]
                .iter()
                .map(|f| std::fs::read(out.join(f)).unwrap())
                .chain([std::fs::read(eval).unwrap(), std::fs::read(plot).unwrap()])
                .collect::<Vec<_>>()
        })
        .collect();
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn finetune_records_reduced_rate() {
    let dir = tempfile::tempdir().unwrap();
    let pop = synth(dir.path(), "pop.csv", &["--cycles", "6", "--seed", "1"]);
    let new = synth(dir.path(), "new.csv", &["--cycles", "3", "--seed", "9", "--subject", "new"]);
    let cfg = tiny_config(dir.path(), "DIC", json!({ "train": { "max_epochs": 2 } }));
    let base = dir.path().join("base");
    assert_eq!(run(&["train", s(&pop), "--config", s(&cfg), "-o", s(&base)]), 0);
    let out = dir.path().join("ft");
    let ckpt = base.join("model.ckpt");
    let args = ["finetune", s(&new), "--model", s(&ckpt), "--lr-scale", "0.2", "--epochs", "2", "-o", s(&out)];
    assert_eq!(run(&args), 0);
    let history: TrainHistory = serde_json::from_str(&std::fs::read_to_string(out.join("history.json")).unwrap()).unwrap();
    assert!(history.lr.iter().all(|&lr| (lr - 2e-4).abs() < 1e-15));
    assert!(out.join("zero_shot.json").exists());
    let bad = ["finetune", s(&new), "--model", s(&ckpt), "--lr-scale", "0.5", "-o", s(&out)];
    assert_eq!(run(&bad), 1);
}

#[test]
fn stage_plan_from_config() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "a.csv", &["--cycles", "5", "--seed", "1", "--subject", "a"]);
    synth(dir.path(), "b.csv", &["--cycles", "4", "--seed", "2", "--subject", "b"]);
    let cfg = tiny_config(
        dir.path(),
        "SIC",
        json!({
            "train": { "max_epochs": 1 },
            "data": {
                "pop": { "recordings": ["a.csv"] },
                "subject_train": { "recordings": ["b.csv"], "part": "train", "split": { "kind": "half_half" } },
                "subject_eval": { "recordings": ["b.csv"], "part": "eval", "split": { "kind": "half_half" } }
            },
            "plan": { "stages": [
                { "name": "primary", "kind": "primary_train", "train": "pop" },
                { "name": "dic", "kind": "sic_to_dic", "after": "primary", "train": "pop" },
                { "name": "adapt", "kind": "subject_finetune", "after": "dic", "train": "subject_train",
                  "eval": "subject_eval", "lr_scale": 0.1 }
            ] }
        }),
    );
    let out = dir.path().join("plan");
    assert_eq!(run(&["train", "--config", s(&cfg), "-o", s(&out)]), 0);
    for f in ["primary.ckpt", "dic.ckpt", "dic.graft.json", "adapt.ckpt", "adapt.metrics.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn failures_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let rec = synth(dir.path(), "r.csv", &["--cycles", "4"]);

    let (code, err) = binary(&["train", "--bogus"]);
    assert_eq!(code, 1);
    let line = err.lines().last().unwrap();
    assert!(line.starts_with("error kind=usage msg=\""), "{line}");

    let bad_cfg = dir.path().join("bad.json");
    std::fs::write(&bad_cfg, r#"{"scenario": "SIC", "horizon": 7}"#).unwrap();
    let (code, err) = binary(&["train", s(&rec), "--config", s(&bad_cfg), "-o", s(dir.path())]);
    assert_eq!(code, 1);
    assert!(err.trim_end().starts_with("error kind=config"), "{err}");

    let (code, err) = binary(&["eval", s(&rec), "--model", s(&dir.path().join("missing.ckpt"))]);
    assert_eq!(code, 2);
    assert!(err.starts_with("error kind=io"), "{err}");

    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"KNEECKPT not really").unwrap();
    let (code, err) = binary(&["eval", s(&rec), "--model", s(&junk)]);
    assert_eq!((code, err.starts_with("error kind=corrupt")), (2, true), "{err}");

    let wild = tiny_config(dir.path(), "SIC", json!({ "train": { "base_lr": 1e250, "clip_norm": null, "max_epochs": 3 } }));
    let (code, err) = binary(&["train", s(&rec), "--config", s(&wild), "-o", s(&dir.path().join("w"))]);
    assert_eq!(code, 3, "{err}");
    assert!(err.starts_with("error kind=numeric"), "{err}");

    let (code, err) = binary(&["--help"]);
    assert_eq!((code, err.as_str()), (0, ""));
}
