use std::path::Path;
use std::process::{Command, Output};

fn gath(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gath"))
        .current_dir(dir)
        .env_remove("GATH_DATA_ROOT")
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// 40 synthetic examples split 24/8/8 into train/dev/test files.
fn dataset(dir: &Path) {
    let o = gath(dir, &["gen-synth", "--n", "40", "--seed", "7", "--out", "all.jsonl"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.join("all.jsonl")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    for (name, range) in [("train.jsonl", 0..24), ("dev.jsonl", 24..32), ("test.jsonl", 32..40)] {
        std::fs::write(dir.join(name), lines[range].join("\n") + "\n").unwrap();
    }
}

const SMALL: &[&str] = &["--d", "8", "--heads", "2", "--epochs", "1", "--batch-size", "8"];

#[test]
fn gen_synth_writes_n_lines_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let o = gath(dir.path(), &["gen-synth", "--n", "500", "--seed", "7", "--out", "a.jsonl"]);
    assert_eq!(code(&o), 0);
    let o = gath(dir.path(), &["gen-synth", "--n", "500", "--seed", "7", "--out", "b.jsonl"]);
    assert_eq!(code(&o), 0);
    let a = std::fs::read(dir.path().join("a.jsonl")).unwrap();
    let b = std::fs::read(dir.path().join("b.jsonl")).unwrap();
    assert_eq!(a.iter().filter(|&&c| c == b'\n').count(), 500);
    assert_eq!(a, b);
}

#[test]
fn gen_synth_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&gath(dir.path(), &["gen-synth", "--n", "0", "--out", "x.jsonl"])), 2);
    assert_eq!(code(&gath(dir.path(), &["gen-synth", "--n", "5"])), 2);
    let o = gath(dir.path(), &["gen-synth", "--n", "5", "--vocab-size", "10", "--out", "x.jsonl"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert_eq!(code(&gath(dir.path(), &["no-such-command"])), 2);
    assert_eq!(code(&gath(dir.path(), &["--help"])), 0);
}

#[test]
fn train_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path());
    let o = gath(dir.path(), &["train", "--data", "missing.jsonl", "--out", "ck"]);
    assert_eq!(code(&o), 2);
    let o = gath(dir.path(), &["train", "--data", "train.jsonl", "--out", "ck", "--order", "p,x"]);
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(err.contains("p,s,e") && err.contains("s,e,p"), "{err}");
    let o = gath(dir.path(), &["train", "--data", "train.jsonl", "--out", "ck", "--heads", "5"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(!dir.path().join("ck").exists());
}

#[test]
fn train_writes_checkpoint_manifest_and_curve_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path());
    let run = |out: &str| {
        let mut args = vec![
            "train", "--data", "train.jsonl", "--dev", "dev.jsonl", "--test", "test.jsonl", "--out", out,
            "--mode", "gath", "--order", "s,e,p",
        ];
        args.extend_from_slice(SMALL);
        let o = gath(dir.path(), &args);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    };
    run("ck1");
    run("ck2");
    for f in ["model.json", "params.bin", "loss.csv", "train.json", "metrics.json", "predictions.json"] {
        let a = std::fs::read(dir.path().join("ck1").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("ck2").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between identical runs");
    }
    let csv = std::fs::read_to_string(dir.path().join("ck1/loss.csv")).unwrap();
    assert!(csv.starts_with("step,train_loss,dev_loss\n"));
    assert_eq!(csv.lines().count(), 1 + 3, "24 examples / batch 8 = 3 steps");

    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("ck1/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "train");
    assert_eq!(m["seed"], 7);
    assert_eq!(m["precision"], "f64");
    assert_eq!(m["config"]["model"]["gath"]["level_order"], "s,e,p");
    assert_eq!(m["inputs"].as_array().unwrap().len(), 3);
    let m2: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("ck2/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["input_hash"], m2["input_hash"]);
    let manifests = std::fs::read_dir(dir.path().join("ck1"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name() == "manifest.json")
        .count();
    assert_eq!(manifests, 1);
}

#[test]
fn train_baselines_and_f32() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path());
    for extra in [
        &["--mode", "gat2"][..],
        &["--mode", "gat1", "--qs-edges", "off"],
        &["--include-query-level", "--order", "p,s,e"],
        &["--precision", "f32"],
    ] {
        let mut args = vec!["train", "--data", "train.jsonl", "--out", "ck"];
        args.extend_from_slice(SMALL);
        args.extend_from_slice(extra);
        let o = gath(dir.path(), &args);
        assert_eq!(code(&o), 0, "{extra:?}: {}", stderr(&o));
    }
}

#[test]
fn eval_perfect_predictions_score_one() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path());
    let text = std::fs::read_to_string(dir.path().join("test.jsonl")).unwrap();
    let mut answer = serde_json::Map::new();
    let mut sp = serde_json::Map::new();
    for line in text.lines() {
        let ex: serde_json::Value = serde_json::from_str(line).unwrap();
        let id = ex["id"].as_str().unwrap().to_string();
        answer.insert(id.clone(), ex["answer"].clone());
        sp.insert(id, ex["supporting_facts"].clone());
    }
    let preds = serde_json::json!({ "answer": answer, "sp": sp });
    std::fs::write(dir.path().join("p.json"), preds.to_string()).unwrap();
    let o = gath(
        dir.path(),
        &["eval", "--pred", "p.json", "--gold", "test.jsonl", "--out", "r.json", "--min-joint-f1", "1.0"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    for group in ["answer", "support", "joint"] {
        for m in ["em", "f1", "precision", "recall"] {
            assert_eq!(r[group][m], 1.0, "{group}.{m}");
        }
    }
    assert!(stdout(&o).contains("100.0"));
}

#[test]
fn eval_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path());
    assert_eq!(code(&gath(dir.path(), &["eval"])), 2);
    assert_eq!(code(&gath(dir.path(), &["eval", "--pred", "nope.json", "--gold", "test.jsonl"])), 2);
    std::fs::write(dir.path().join("empty.json"), r#"{"answer":{},"sp":{}}"#).unwrap();
    let o = gath(dir.path(), &["eval", "--pred", "empty.json", "--gold", "test.jsonl"]);
    assert_eq!(code(&o), 0, "missing predictions score zero, not an error");
    let o = gath(
        dir.path(),
        &["eval", "--pred", "empty.json", "--gold", "test.jsonl", "--min-answer-em", "0.5"],
    );
    assert_eq!(code(&o), 1);

    let mut args = vec!["train", "--data", "train.jsonl", "--out", "ck"];
    args.extend_from_slice(SMALL);
    assert_eq!(code(&gath(dir.path(), &args)), 0);
    let o = gath(dir.path(), &["eval", "--checkpoint", "ck", "--data", "test.jsonl", "--pred-out", "p.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = gath(dir.path(), &["eval", "--pred", "p.json", "--gold", "test.jsonl"]);
    assert_eq!(code(&o), 0);
    assert_eq!(code(&gath(dir.path(), &["eval", "--checkpoint", "nowhere", "--data", "test.jsonl"])), 2);
}

#[test]
fn gradcheck_passes_and_reports_every_group() {
    let dir = tempfile::tempdir().unwrap();
    let o = gath(dir.path(), &["gradcheck", "--seed", "1", "--out", "g.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("12 nodes"), "{out}");
    let groups: Vec<serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("g.json")).unwrap()).unwrap();
    let pass_lines = out.lines().filter(|l| l.starts_with("PASS rel_err<1e-4")).count();
    assert_eq!(pass_lines, groups.len());
    assert!(!out.contains("FAIL"));
}

#[test]
fn gradcheck_failure_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = gath(dir.path(), &["gradcheck", "--tolerance", "1e-300", "--max-entries", "4", "--d", "8", "--heads", "2"]);
    assert_eq!(code(&o), 1, "{}", stdout(&o));
    assert!(stdout(&o).contains("FAIL"));
    assert_eq!(code(&gath(dir.path(), &["gradcheck", "--n-p", "3", "--n-s", "2"])), 2);
}

#[test]
fn ablate_two_orders_gives_two_rows() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path());
    let mut args = vec!["ablate", "--data", "train.jsonl", "--test", "test.jsonl", "--orders", "p,s,e;s,e,p", "--out", "ab"];
    args.extend_from_slice(SMALL);
    let o = gath(dir.path(), &args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    let rows: Vec<&str> = out.lines().filter(|l| l.starts_with("GATH")).collect();
    assert_eq!(rows.len(), 2, "{out}");
    assert!(rows[0].starts_with("GATH P/S/E") && rows[1].starts_with("GATH S/E/P"));
    for f in ["ablation.json", "table.txt", "manifest.json"] {
        assert!(dir.path().join("ab").join(f).is_file(), "{f}");
    }
}

#[test]
fn ablate_rejects_empty_and_bad_orders() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path());
    for orders in ["", ";", "p,s"] {
        let o = gath(dir.path(), &["ablate", "--data", "train.jsonl", "--test", "test.jsonl", "--orders", orders]);
        assert_eq!(code(&o), 2, "{orders:?}: {}", stderr(&o));
    }
}

#[test]
fn build_graph_dumps_json() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path());
    let o = gath(dir.path(), &["build-graph", "--data", "test.jsonl", "--index", "0"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let nodes = v["graph"]["nodes"].as_array().unwrap();
    assert_eq!(nodes[0]["level"], "query");
    let n_s = v["graph"]["n_s"].as_u64().unwrap() as usize;
    let qs = v["graph"]["edges"].as_array().unwrap().iter().filter(|e| e["kind"] == "QS").count();
    assert_eq!(qs, n_s);

    let o = gath(dir.path(), &["build-graph", "--data", "test.jsonl", "--index", "0", "--qs-edges", "off"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["graph"]["edges"].as_array().unwrap().iter().all(|e| e["kind"] != "QS"));

    let o = gath(dir.path(), &["build-graph", "--data", "test.jsonl", "--out", "g.jsonl"]);
    assert_eq!(code(&o), 0);
    let dump = std::fs::read_to_string(dir.path().join("g.jsonl")).unwrap();
    assert_eq!(dump.lines().count(), 8);
    assert_eq!(code(&gath(dir.path(), &["build-graph", "--data", "test.jsonl", "--id", "nope"])), 2);
    assert_eq!(code(&gath(dir.path(), &["build-graph", "--data", "test.jsonl", "--index", "99"])), 2);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path());
    std::fs::write(
        dir.path().join("run.cfg"),
        "seed = 3\n[train]\nd = 8\nheads = 2\nepochs = 2\nbatch_size = 8\norder = p,s,e\n",
    )
    .unwrap();
    let o = gath(
        dir.path(),
        &["--config", "run.cfg", "train", "--data", "train.jsonl", "--out", "ck", "--epochs", "1"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("ck/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 3);
    assert_eq!(m["config"]["train"]["epochs"], 1);
    assert_eq!(m["config"]["model"]["encoder"]["d"], 8);
    assert_eq!(m["config"]["model"]["gath"]["level_order"], "p,s,e");

    std::fs::write(dir.path().join("bad.cfg"), "colour = blue\n").unwrap();
    let o = gath(dir.path(), &["--config", "bad.cfg", "train", "--data", "train.jsonl", "--out", "x"]);
    assert_eq!(code(&o), 2);
    let o = gath(dir.path(), &["--config", "missing.cfg", "train", "--data", "train.jsonl", "--out", "x"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn data_root_and_jobs() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path());
    let work = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_gath"))
        .current_dir(work.path())
        .env("GATH_DATA_ROOT", dir.path())
        .env("RUST_LOG", "warn")
        .args(["--jobs", "2", "build-graph", "--data", "test.jsonl", "--index", "1"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(code(&gath(dir.path(), &["--jobs", "0", "gradcheck"])), 2);
}
