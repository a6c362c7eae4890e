use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn rankloss(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rankloss"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = rankloss(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_writes_dataset_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["synth", "--out", s(&a), "--queries", "150"]);
    ok(&["synth", "--out", s(&b), "--queries", "150"]);
    let records = fs::read_to_string(a.join("records.jsonl")).unwrap();
    assert_eq!(records.lines().count(), 150);
    for f in ["corpus.jsonl", "queries.jsonl", "records.jsonl", "qrels.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let m = manifest(&a);
    assert_eq!(m["command"], "synth");
    assert_eq!(m["config"]["queries"], 150);
    assert_eq!(m["config"]["topics"], 8);
}

#[test]
fn synth_rejects_bad_levels_with_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = rankloss(&["synth", "--out", s(tmp.path()), "--levels", "0,0.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("invalid config"));
}

#[test]
fn train_and_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let model = tmp.path().join("model");
    let eval = tmp.path().join("eval");
    ok(&["synth", "--out", s(&data)]);
    let log = ok(&["train", "--data", s(&data), "--loss", "bixse", "--out", s(&model)]);
    let losses: Vec<f64> = log
        .lines()
        .filter(|l| l.starts_with("epoch"))
        .map(|l| l.split_whitespace().nth(5).unwrap().parse().unwrap())
        .collect();
    assert_eq!(losses.len(), 4);
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    assert!(model.join("model.ckpt").exists());

    // omitted --lr falls back to the documented default and is recorded
    let m = manifest(&model);
    assert_eq!(m["config"]["base_lr"], 0.01);
    assert_eq!(m["config"]["loss"], "bixse");

    let args = [
        "eval",
        "--checkpoint",
        &format!("{}/model.ckpt", s(&model)),
        "--queries",
        &format!("{}/queries.jsonl", s(&data)),
        "--corpus",
        &format!("{}/corpus.jsonl", s(&data)),
        "--qrels",
        &format!("{}/qrels.txt", s(&data)),
        "--out",
        s(&eval),
    ];
    let printed = ok(&args);
    assert!(printed.starts_with("ndcg@10 "), "{printed}");
    let ndcg: f64 = printed.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!(ndcg > 0.5, "{ndcg}");
    ok(&args);
    let csv = fs::read_to_string(eval.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let run = fs::read_to_string(eval.join("run.trec")).unwrap();
    let first: Vec<&str> = run.lines().next().unwrap().split(' ').collect();
    assert_eq!(first.len(), 6);
    assert_eq!((first[1], first[3], first[5]), ("Q0", "1", "rankloss"));
}

#[test]
fn train_errors_map_to_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&["synth", "--out", s(&data), "--queries", "64"]);
    let out = rankloss(&[
        "train", "--data", s(&data), "--loss", "margin_mse", "--hard-negs", "0", "--out", s(tmp.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("hard negative"));

    let out = rankloss(&["train", "--data", s(&tmp.path().join("missing.jsonl")), "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    let out = rankloss(&["train", "--data", s(&data), "--loss", "hinge", "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_missing_qrels_is_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let p = |n: &str| tmp.path().join(n).display().to_string();
    let out = rankloss(&[
        "eval", "--checkpoint", &p("m.ckpt"), "--queries", &p("q"), "--corpus", &p("c"), "--qrels", &p("nope"),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn flags_override_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&["synth", "--out", s(&data), "--queries", "96"]);
    let cfg = tmp.path().join("train.cfg");
    fs::write(&cfg, "# small run\nepochs = 1\nbatch = 16\nloss = infonce\ndim = 16\n").unwrap();
    let model = tmp.path().join("m");
    ok(&["train", "--config", s(&cfg), "--batch", "8", "--data", s(&data), "--out", s(&model)]);
    let m = manifest(&model);
    assert_eq!(m["config"]["epochs"], 1);
    assert_eq!(m["config"]["batch"], 8);
    assert_eq!(m["config"]["loss"], "infonce");
    assert_eq!(m["config"]["dim"], 16);

    fs::write(&cfg, "epoch = 1\n").unwrap();
    let out = rankloss(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&model)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gradcheck_sweep_table() {
    let tmp = tempfile::tempdir().unwrap();
    let printed = ok(&["sweep", "--kind", "gradcheck", "--out", s(tmp.path())]);
    let rows: Vec<&str> = printed.lines().skip(1).collect();
    assert_eq!(rows.len(), 7);
    for r in rows {
        let err: f64 = r.split_whitespace().nth(1).unwrap().parse().unwrap();
        assert!(err < 1e-4, "{r}");
    }
    let csv = fs::read_to_string(tmp.path().join("gradcheck.csv")).unwrap();
    assert!(csv.starts_with("loss,max_rel_error,max_abs_error,parameters,beta_analytic,beta_numeric\n"));
}

#[test]
fn noise_sweep_default_grid_row_count() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&[
        "sweep", "--kind", "noise", "--out", s(tmp.path()), "--set", "synth.queries=200", "--set", "train.epochs=1",
        "--set", "train.dim=16",
    ]);
    let csv = fs::read_to_string(tmp.path().join("noise.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("loss,p,seed,ndcg@10"));
    assert_eq!(lines.count(), 2 * 6 * 5);
    assert_eq!(manifest(tmp.path())["config"]["grid"].as_array().unwrap().len(), 6);
}

#[test]
fn biaslr_and_batchgrid_sweeps() {
    let tmp = tempfile::tempdir().unwrap();
    let small = ["--set", "synth.queries=200", "--set", "train.epochs=1", "--set", "train.dim=16", "--seeds", "1"];
    let mut args = vec!["sweep", "--kind", "biaslr", "--out", s(tmp.path())];
    args.extend(small);
    let printed = ok(&args);
    assert_eq!(printed.lines().count(), 4);
    let csv = fs::read_to_string(tmp.path().join("biaslr.csv")).unwrap();
    let mults: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(mults, ["0.01", "1", "100", "10000"]);

    let mut args = vec![
        "sweep", "--kind", "batchgrid", "--grid", "1x8,0x16", "--losses", "bixse,margin_mse", "--out", s(tmp.path()),
    ];
    args.extend(small);
    ok(&args);
    let csv = fs::read_to_string(tmp.path().join("batchgrid.csv")).unwrap();
    assert!(csv.contains("margin_mse,0,16,1,,failed:NeedsHardNegatives"), "{csv}");
    assert_eq!(csv.lines().filter(|l| l.ends_with(",ok")).count(), 3);
}
