use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mgdoc::attention::region_word_heatmap;
use mgdoc::ingestion::load_canonical;
use mgdoc::pretraining::Checkpoint;
use mgdoc::Granularities;
use serde_json::{json, Value};

fn mgdoc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mgdoc"))
        .args(args)
        .env_remove("MGDOC_SEED")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = mgdoc(args);
    assert!(out.status.success(), "mgdoc {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_json(path: &Path, v: Value) -> PathBuf {
    fs::write(path, v.to_string()).unwrap();
    path.to_path_buf()
}

/// Synthetic corpus of `n` documents under `dir/name`.
fn corpus(dir: &Path, name: &str, n: usize, seed: u64, extra: Value) -> PathBuf {
    let mut spec = json!({"n_docs": n, "seed": seed, "id_prefix": name});
    spec.as_object_mut().unwrap().extend(extra.as_object().unwrap().clone());
    let spec = write_json(&dir.join(format!("{name}.spec.json")), spec);
    let out = dir.join(name);
    ok(&["ingest", "--format", "synthetic", "--spec", p(&spec), "--out", p(&out)]);
    out
}

fn small_config(dir: &Path, extra: Value) -> PathBuf {
    let mut cfg = json!({
        "d_model": 16, "n_heads": 2, "conv_channels_1": 4, "conv_channels_2": 4,
        "epochs": 2, "batch_size": 2, "log_wall_clock": false,
        "ft_epochs": 2, "ft_batch_size": 2
    });
    cfg.as_object_mut().unwrap().extend(extra.as_object().unwrap().clone());
    write_json(&dir.join("config.json"), cfg)
}

fn log_lines(dir: &Path) -> Vec<Value> {
    fs::read_to_string(dir.join("train.log.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn ingest_synthetic_counts_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_json(&dir.path().join("s.json"), json!({"n_docs": 7, "seed": 3}));
    let out = dir.path().join("docs");
    let summary = ok(&["ingest", "--format", "synthetic", "--spec", p(&spec), "--out", p(&out)]);
    assert!(summary.starts_with("7 documents"), "{summary}");
    let json_files = |d: &Path| {
        let mut v: Vec<_> = fs::read_dir(d)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        v.sort();
        v
    };
    let first: Vec<Vec<u8>> = json_files(&out).iter().map(|f| fs::read(f).unwrap()).collect();
    assert_eq!(first.len(), 7);
    ok(&["ingest", "--format", "synthetic", "--spec", p(&spec), "--out", p(&out)]);
    let second: Vec<Vec<u8>> = json_files(&out).iter().map(|f| fs::read(f).unwrap()).collect();
    assert_eq!(first, second);
}

#[test]
fn missing_input_and_bad_config_fail() {
    let dir = tempfile::tempdir().unwrap();
    let out = mgdoc(&["ingest", "--format", "funsd", "--in", p(&dir.path().join("nope")), "--out", p(dir.path())]);
    assert!(!out.status.success());

    let cfg = write_json(&dir.path().join("bad.json"), json!({"learning_rate": 0.1}));
    let out = mgdoc(&["pretrain", "--config", p(&cfg), "--corpus", p(dir.path()), "--out", p(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
}

#[test]
fn desk_pretraining_lowers_the_loss() {
    let dir = tempfile::tempdir().unwrap();
    let docs = corpus(dir.path(), "pre", 50, 1, json!({}));
    let cfg = write_json(&dir.path().join("c.json"), json!({"epochs": 5, "lr": 1e-3, "log_wall_clock": false}));
    let out = dir.path().join("run");
    ok(&["pretrain", "--config", p(&cfg), "--corpus", p(&docs), "--out", p(&out)]);
    let lines = log_lines(&out);
    assert_eq!(lines.len(), 35);
    let mean = |s: &[Value]| s.iter().map(|l| l["l_total"].as_f64().unwrap()).sum::<f64>() / s.len() as f64;
    assert!(mean(&lines[28..]) < mean(&lines[..7]));
    for f in ["config.resolved.json", "metrics.json", "ckpt-35.bin"] {
        assert!(out.join(f).is_file(), "{f}");
    }
}

#[test]
fn pretraining_is_reproducible_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let docs = corpus(dir.path(), "pre", 6, 2, json!({}));
    let cfg = small_config(dir.path(), json!({"checkpoint_every": 2}));
    let run = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        let mut args = vec!["pretrain", "--config", p(&cfg), "--corpus", p(&docs), "--out", p(&out)];
        args.extend_from_slice(extra);
        ok(&args);
        out
    };
    let a = run("a", &[]);
    let b = run("b", &[]);
    assert_eq!(fs::read(a.join("train.log.jsonl")).unwrap(), fs::read(b.join("train.log.jsonl")).unwrap());
    assert_eq!(fs::read(a.join("ckpt-6.bin")).unwrap(), fs::read(b.join("ckpt-6.bin")).unwrap());
    assert!(a.join("ckpt-2.bin").is_file() && a.join("ckpt-4.bin").is_file());

    let ckpt = a.join("ckpt-2.bin");
    let r = run("resumed", &["--resume", p(&ckpt)]);
    let (full, rest) = (log_lines(&a), log_lines(&r));
    assert_eq!(rest.len(), 4);
    assert_eq!(rest[..], full[2..]);
    assert_eq!(fs::read(a.join("ckpt-6.bin")).unwrap(), fs::read(r.join("ckpt-6.bin")).unwrap());

    let t = run("tasks", &["--tasks", "mtm,mvm"]);
    assert!(log_lines(&t).iter().all(|l| l["l_mgm"].as_f64() == Some(0.0)));
}

#[test]
fn seed_environment_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let docs = corpus(dir.path(), "pre", 2, 2, json!({}));
    let cfg = small_config(dir.path(), json!({"epochs": 1, "seed": 5}));
    let out = dir.path().join("run");
    let status = Command::new(env!("CARGO_BIN_EXE_mgdoc"))
        .args(["pretrain", "--config", p(&cfg), "--corpus", p(&docs), "--out", p(&out)])
        .env("MGDOC_SEED", "41")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    let resolved: Value = serde_json::from_str(&fs::read_to_string(out.join("config.resolved.json")).unwrap()).unwrap();
    assert_eq!(resolved["seed"], 41);
}

#[test]
fn finetune_overfits_and_eval_agrees() {
    let dir = tempfile::tempdir().unwrap();
    let docs = corpus(dir.path(), "ft", 5, 4, json!({}));
    let cfg = small_config(dir.path(), json!({"ft_epochs": 60, "ft_lr": 3e-3, "d_model": 32, "n_heads": 4}));
    let out = dir.path().join("run");
    ok(&["finetune", "--task", "entity", "--config", p(&cfg), "--corpus", p(&docs), "--eval-corpus", p(&docs), "--out", p(&out)]);
    let metrics: Value = serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["metric"], "entity_f1");
    assert!(metrics["value"].as_f64().unwrap() > 0.95, "{metrics}");
    assert_eq!(metrics["config_hash"].as_str().unwrap().len(), 64);
    let n_regions: usize = mgdoc::ingestion::load_corpus(&docs).unwrap().iter().map(|d| d.n_regions()).sum();
    let preds = fs::read_to_string(out.join("preds.csv")).unwrap();
    assert_eq!(preds.lines().count(), n_regions + 1);

    let ev = dir.path().join("ev");
    let ckpt = out.join("ckpt-finetuned.bin");
    ok(&["eval", "--ckpt", p(&ckpt), "--config", p(&cfg), "--corpus", p(&docs), "--out", p(&ev)]);
    let again: Value = serde_json::from_str(&fs::read_to_string(ev.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(again["value"], metrics["value"]);
    assert_eq!(fs::read(ev.join("preds.csv")).unwrap(), preds.into_bytes());
}

#[test]
fn classify_on_unlabeled_pages_fails() {
    let dir = tempfile::tempdir().unwrap();
    let docs = corpus(dir.path(), "kv", 3, 4, json!({}));
    let cfg = small_config(dir.path(), json!({}));
    let out = mgdoc(&[
        "finetune", "--task", "classify", "--config", p(&cfg), "--corpus", p(&docs), "--eval-corpus", p(&docs), "--out",
        p(&dir.path().join("o")),
    ]);
    assert!(!out.status.success());
}

#[test]
fn heatmap_csv_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let docs = corpus(dir.path(), "hm", 2, 6, json!({}));
    let cfg = small_config(dir.path(), json!({"epochs": 1}));
    let run = dir.path().join("run");
    ok(&["pretrain", "--config", p(&cfg), "--corpus", p(&docs), "--out", p(&run)]);
    let ckpt = run.join("ckpt-1.bin");
    let doc_path = docs.join("hm-00000.json");
    let out = dir.path().join("hm");
    ok(&["heatmap", "--ckpt", p(&ckpt), "--doc", p(&doc_path), "--out", p(&out)]);

    let model = Checkpoint::load(&ckpt).unwrap().to_model().unwrap();
    let doc = load_canonical(&doc_path).unwrap();
    let prep = model.prepare(&doc, Granularities::ALL).unwrap();
    let h = region_word_heatmap(&model.fuse(&prep).unwrap().f, &prep.units);

    let mut r = csv::Reader::from_path(out.join("heatmap.csv")).unwrap();
    assert_eq!(r.headers().unwrap().len(), h.ncols() + 1);
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!(rows.len(), h.nrows());
    for (j, rec) in rows.iter().enumerate() {
        for i in 0..h.ncols() {
            assert_eq!(rec[i + 1].parse::<f64>().unwrap(), h[[j, i]]);
        }
    }
    let png = image::open(out.join("heatmap.png")).unwrap();
    assert_eq!((png.width() as usize, png.height() as usize), (h.ncols() * 8, h.nrows() * 8));

    let empty = write_json(
        &dir.path().join("empty.json"),
        json!({"format": "mgdoc-doc/1", "id": "empty", "width": 10, "height": 10, "regions": []}),
    );
    assert!(!mgdoc(&["heatmap", "--ckpt", p(&ckpt), "--doc", p(&empty), "--out", p(&out)]).status.success());
}
