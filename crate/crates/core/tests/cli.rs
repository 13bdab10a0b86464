use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use stam::datakit::{load_dataset, load_dir, read_mask_csv};
use stam::trainer::{mean_impute, score};

fn stam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stam"))
        .args(args)
        .env_remove("STAM_SEED")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = stam(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(args: &[&str]) -> i32 {
    stam(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn csv_rows(p: &Path) -> Vec<Vec<String>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(p).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect()
}

fn dir_snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            let bytes = fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    out.sort();
    out
}

const TINY: &str = r#"{
    "model": {"layers": 1, "heads": 2, "d_in": 8, "d_pe": 4, "ffn_hidden": 8, "readout_hidden": 8},
    "train": {"epochs": 2, "window": 12},
    "e_per_node": 3
}"#;

fn synth_and_mask(root: &Path, nodes: usize, steps: usize) -> (PathBuf, PathBuf) {
    let raw = root.join("raw");
    let masked = root.join("masked");
    ok(&["synth", "--nodes", &nodes.to_string(), "--steps", &steps.to_string(), "--seed", "3", "--out-dir", s(&raw)]);
    ok(&["mask", "--pattern", "point", "--rate", "0.25", "--seed", "4", "--in-dir", s(&raw), "--out-dir", s(&masked)]);
    (raw, masked)
}

#[test]
fn synth_shape_determinism_and_validation() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["synth", "--nodes", "30", "--steps", "2048", "--seed", "9", "--out-dir", s(&a)]);
    ok(&["synth", "--nodes", "30", "--steps", "2048", "--seed", "9", "--out-dir", s(&b)]);
    let rows = csv_rows(&a.join("values.csv"));
    assert_eq!(rows.len(), 2049);
    assert!(rows.iter().all(|r| r.len() == 30));
    for f in ["values.csv", "dist.csv", "meta.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(code(&["synth", "--nodes", "3", "--out-dir", s(&tmp.path().join("c"))]), 1);
}

#[test]
fn mask_rates_and_validation() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = tmp.path().join("raw");
    ok(&["synth", "--nodes", "30", "--steps", "2000", "--seed", "1", "--out-dir", s(&raw)]);
    let before = dir_snapshot(&raw);

    let point = tmp.path().join("point");
    ok(&["mask", "--pattern", "point", "--rate", "0.25", "--seed", "2", "--in-dir", s(&raw), "--out-dir", s(&point)]);
    let eval = read_mask_csv(&point.join("eval_mask.csv")).unwrap();
    let density = eval.sum() / eval.len() as f64;
    assert!((density - 0.25).abs() < 0.01, "{density}");
    let masked = load_dir(&point).unwrap();
    assert_eq!(masked.observed_count() as f64 + eval.sum(), eval.len() as f64);

    let block = tmp.path().join("block");
    ok(&[
        "mask", "--pattern", "block", "--failure-prob", "0.01", "--min-len", "12", "--max-len", "48",
        "--point-rate", "0.05", "--seed", "2", "--in-dir", s(&raw), "--out-dir", s(&block),
    ]);
    let masked = load_dir(&block).unwrap();
    let hidden = 1.0 - masked.observed_count() as f64 / masked.mask.len() as f64;
    assert!((hidden - 0.30).abs() < 0.06, "{hidden}");

    let bad = tmp.path().join("bad");
    assert_eq!(code(&["mask", "--pattern", "point", "--rate", "1.1", "--in-dir", s(&raw), "--out-dir", s(&bad)]), 1);
    assert_eq!(code(&["mask", "--pattern", "point", "--in-dir", s(&raw), "--out-dir", s(&raw)]), 1);
    assert_eq!(dir_snapshot(&raw), before);
}

#[test]
fn default_pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let (raw, masked) = synth_and_mask(tmp.path(), 30, 192);
    let before = dir_snapshot(&masked);
    let ckpt = tmp.path().join("ckpt");
    ok(&["train", "--data-dir", s(&masked), "--out", s(&ckpt)]);
    for f in ["manifest.json", "run.json", "loss_history.csv", "val_history.csv"] {
        assert!(ckpt.join(f).exists(), "{f}");
    }

    // observed cells come back unchanged, hidden ones are filled
    let imputed = tmp.path().join("imputed.csv");
    ok(&["impute", "--checkpoint", s(&ckpt), "--data-dir", s(&masked), "--out", s(&imputed)]);
    let input = csv_rows(&masked.join("values.csv"));
    let output = csv_rows(&imputed);
    assert_eq!(input[0], output[0]);
    for (a, b) in input.iter().zip(&output).skip(1) {
        for (x, y) in a.iter().zip(b) {
            if x.is_empty() {
                assert!(y.parse::<f64>().unwrap().is_finite());
            } else {
                assert_eq!(x, y);
            }
        }
    }

    let truth = raw.join("values.csv");
    let metrics = tmp.path().join("metrics.json");
    ok(&["eval", "--checkpoint", s(&ckpt), "--data-dir", s(&masked), "--truth", s(&truth), "--out", s(&metrics)]);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&metrics).unwrap()).unwrap();
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(ckpt.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config_hash"], manifest["config_hash"]);
    assert!(m["mae"].as_f64().unwrap() > 0.0);

    // the mean baseline through the CLI equals the library computation
    ok(&["eval", "--baseline", "mean", "--data-dir", s(&masked), "--truth", s(&truth), "--out", s(&metrics)]);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&metrics).unwrap()).unwrap();
    let series = load_dir(&masked).unwrap();
    let truth_w = load_dataset(&truth, None, &masked.join("meta.json")).unwrap();
    let eval = read_mask_csv(&masked.join("eval_mask.csv")).unwrap();
    let lib = score(&mean_impute(&series).unwrap(), &truth_w.values_2d(), &eval).unwrap();
    assert_eq!(m["mae"].as_f64().unwrap(), lib.mae);
    assert_eq!(m["rmse"].as_f64().unwrap(), lib.rmse);
    assert_eq!(m["cells"].as_u64().unwrap() as usize, lib.cells);
    ok(&["eval", "--baseline", "knn", "--data-dir", s(&masked), "--truth", s(&truth), "--out", s(&metrics)]);

    let graphs = tmp.path().join("graphs");
    ok(&["export-graph", "--checkpoint", s(&ckpt), "--data-dir", s(&masked), "--mode", "mean", "--out-dir", s(&graphs)]);
    let rows = csv_rows(&graphs.join("graph_mean.csv"));
    assert_eq!(rows.len(), 30);
    for r in rows {
        assert_eq!(r.len(), 30);
        let total: f64 = r.iter().map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-6);
    }
    ok(&["export-graph", "--checkpoint", s(&ckpt), "--data-dir", s(&masked), "--mode", "per-step", "--out-dir", s(&graphs)]);
    let layers = manifest["model"]["layers"].as_u64().unwrap();
    for l in 0..layers {
        let rows = csv_rows(&graphs.join(format!("graph_layer{l}.csv")));
        assert_eq!(rows.len(), 1 + 192 * 30);
        assert_eq!(rows[0].len(), 32);
    }
    assert_eq!(dir_snapshot(&masked), before);
}

#[test]
fn runs_repeat_bit_for_bit_and_seed_env_applies() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, masked) = synth_and_mask(tmp.path(), 8, 120);
    let cfg = tmp.path().join("tiny.json");
    fs::write(&cfg, TINY).unwrap();
    let run = |name: &str, seed: Option<&str>| {
        let ckpt = tmp.path().join(name);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_stam"));
        cmd.args(["train", "--config", s(&cfg), "--data-dir", s(&masked), "--out", s(&ckpt)]);
        cmd.env_remove("STAM_SEED");
        if let Some(v) = seed {
            cmd.env("STAM_SEED", v);
        }
        assert!(cmd.output().unwrap().status.success());
        let imputed = tmp.path().join(format!("{name}.csv"));
        ok(&["impute", "--checkpoint", s(&ckpt), "--data-dir", s(&masked), "--out", s(&imputed)]);
        let graphs = tmp.path().join(format!("{name}_g"));
        ok(&["export-graph", "--checkpoint", s(&ckpt), "--data-dir", s(&masked), "--mode", "per-step", "--out-dir", s(&graphs)]);
        (
            fs::read(ckpt.join("loss_history.csv")).unwrap(),
            fs::read(imputed).unwrap(),
            fs::read(graphs.join("graph_layer0.csv")).unwrap(),
        )
    };
    let a = run("a", None);
    let b = run("b", None);
    assert!(a == b);
    let c = run("c", Some("77"));
    assert!(a.0 != c.0);
    let run_cfg: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("c/run.json")).unwrap()).unwrap();
    assert_eq!(run_cfg["train"]["seed"], 77);
}

#[test]
fn user_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let (raw, masked) = synth_and_mask(tmp.path(), 8, 60);
    let out = tmp.path().join("o");
    let missing = tmp.path().join("nope");
    assert_eq!(code(&["train", "--data-dir", s(&missing), "--out", s(&out)]), 1);
    assert_eq!(code(&["train", "--out", s(&out)]), 1);
    let bad_cfg = tmp.path().join("bad.json");
    fs::write(&bad_cfg, r#"{"model": {"layerz": 1}}"#).unwrap();
    assert_eq!(code(&["train", "--config", s(&bad_cfg), "--data-dir", s(&masked), "--out", s(&out)]), 1);
    // eval needs an eval mask
    assert_eq!(
        code(&["eval", "--baseline", "mean", "--data-dir", s(&raw), "--truth", s(&raw.join("values.csv")), "--out", s(&out)]),
        1
    );
    assert_eq!(code(&["eval", "--data-dir", s(&masked), "--truth", "x", "--out", "y"]), 1);

    // a checkpoint from a future format version is refused
    let cfg = tmp.path().join("tiny.json");
    fs::write(&cfg, TINY.replace("\"epochs\": 2", "\"epochs\": 1")).unwrap();
    let ckpt = tmp.path().join("ckpt");
    ok(&["train", "--config", s(&cfg), "--data-dir", s(&masked), "--out", s(&ckpt)]);
    let manifest = ckpt.join("manifest.json");
    let text = fs::read_to_string(&manifest).unwrap().replacen("\"version\": 1", "\"version\": 2", 1);
    fs::write(&manifest, text).unwrap();
    let imputed = tmp.path().join("i.csv");
    assert_eq!(code(&["impute", "--checkpoint", s(&ckpt), "--data-dir", s(&masked), "--out", s(&imputed)]), 1);
    assert!(!imputed.exists());
}

#[test]
fn gradcheck_and_feature_dump() {
    let out = ok(&["gradcheck"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("max relative error"));
    assert_eq!(code(&["gradcheck", "--dims", "9,6,1,2,8"]), 1);

    let tmp = tempfile::tempdir().unwrap();
    let (raw, _) = synth_and_mask(tmp.path(), 6, 64);
    let feats = tmp.path().join("feats");
    ok(&["dump-features", "--data-dir", s(&raw), "--out-dir", s(&feats)]);
    let low = load_dataset(&feats.join("x_low.csv"), None, &raw.join("meta.json")).unwrap();
    let high = load_dataset(&feats.join("x_high.csv"), None, &raw.join("meta.json")).unwrap();
    let (normed, _) = stam::datakit::normalize(&load_dir(&raw).unwrap());
    for i in 0..normed.values.len() {
        let sum = low.values.data()[i] + high.values.data()[i];
        assert!((sum - normed.values.data()[i]).abs() < 1e-9);
    }
}
