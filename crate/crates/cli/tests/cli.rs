use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use vinet::train::TrainConfig;
use vinet::ViNet;

const SMALL: [&str; 10] =
    ["--subjects", "2", "--views", "6", "--size", "16", "--min-frames", "16", "--max-frames", "40"];

fn vinet(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vinet"))
        .args(args)
        .current_dir(cwd)
        .env_remove("VINET_SEED")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn status(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn ok(o: Output) -> Output {
    assert_eq!(status(&o), 0, "stderr: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_string_lossy().into_owned()
}

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend(SMALL);
    v
}

fn echo(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("resolved_config.json")).expect("echo written")).expect("json")
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).expect("readable") {
            let p = entry.expect("entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push((p.strip_prefix(dir).expect("inside").to_path_buf(), fs::read(&p).expect("file")));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn generate_is_reproducible() {
    let (cwd, tmp) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let (a, b) = (path(&tmp, "a"), path(&tmp, "b"));
    ok(vinet(cwd.path(), &with_small(&["generate", "--out", &a, "--seed", "4"])));
    ok(vinet(cwd.path(), &with_small(&["generate", "--out", &b, "--dataset-seed", "4"])));
    let (ta, tb) = (tree(Path::new(&a)), tree(Path::new(&b)));
    assert_eq!(ta.len(), 2 * 6 * 5 + 3);
    assert_eq!(ta, tb);
    assert!(fs::read_dir(cwd.path()).unwrap().next().is_none(), "nothing written to the working directory");
}

#[test]
fn zero_epochs_saves_the_initialization() {
    let (cwd, tmp) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let out = path(&tmp, "t");
    ok(vinet(cwd.path(), &with_small(&["train", "--out", &out, "--epochs", "0", "--seed", "9"])));
    let cfg: TrainConfig = serde_json::from_value(echo(Path::new(&out))["train"].clone()).unwrap();
    let init = ViNet::build(cfg.model_config(15, 16, 16), cfg.model_seed()).unwrap();
    let expected = tmp.path().join("init.vick");
    init.save(&expected, 0).unwrap();
    assert_eq!(fs::read(Path::new(&out).join("checkpoint.vick")).unwrap(), fs::read(expected).unwrap());
    assert_eq!(fs::read_to_string(Path::new(&out).join("losses.csv")).unwrap(), "epoch,loss\n");
    assert!(fs::read_dir(cwd.path()).unwrap().next().is_none());
}

#[test]
fn echoed_config_reproduces_training() {
    let (cwd, tmp) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let (a, b) = (path(&tmp, "a"), path(&tmp, "b"));
    let args =
        with_small(&["train", "--out", &a, "--epochs", "2", "--split", "cross_subject", "--folds", "2", "--fold", "1"]);
    ok(vinet(cwd.path(), &args));
    let config = Path::new(&a).join("resolved_config.json").to_string_lossy().into_owned();
    ok(vinet(cwd.path(), &["train", "--out", &b, "--config", &config]));
    assert_eq!(tree(Path::new(&a)), tree(Path::new(&b)));
    let losses = fs::read_to_string(Path::new(&a).join("losses.csv")).unwrap();
    assert_eq!(losses.lines().count(), 3);
    assert_eq!(echo(Path::new(&a))["split"], serde_json::json!({"kind": "cross_subject", "folds": 2}));
}

#[test]
fn score_and_evaluate_leave_inputs_alone() {
    let (cwd, tmp) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let (data, model) = (path(&tmp, "data"), path(&tmp, "model"));
    ok(vinet(cwd.path(), &with_small(&["generate", "--out", &data])));
    ok(vinet(
        cwd.path(),
        &["train", "--data", &data, "--out", &model, "--epochs", "1", "--split", "cross_view", "--train-views", "1"],
    ));
    let ckpt = Path::new(&model).join("checkpoint.vick").to_string_lossy().into_owned();
    let before = (tree(Path::new(&data)), fs::read(&ckpt).unwrap(), fs::metadata(&ckpt).unwrap().modified().unwrap());

    let (scored, evaluated) = (path(&tmp, "scored"), path(&tmp, "eval"));
    let split = ["--split", "cross_view", "--train-views", "1"];
    let mut args = vec!["score", "--data", &data, "--checkpoint", &ckpt, "--out", &scored];
    args.extend(split);
    ok(vinet(cwd.path(), &args));
    let mut args = vec!["evaluate", "--data", &data, "--checkpoint", &ckpt, "--out", &evaluated];
    args.extend(split);
    let o = ok(vinet(cwd.path(), &args));
    assert!(String::from_utf8_lossy(&o.stdout).contains("spearman_rho"));

    let after = (tree(Path::new(&data)), fs::read(&ckpt).unwrap(), fs::metadata(&ckpt).unwrap().modified().unwrap());
    assert!(before == after, "inputs changed");

    let predictions = fs::read_to_string(Path::new(&scored).join("predictions.csv")).unwrap();
    let mut lines = predictions.lines();
    assert_eq!(
        lines.next().unwrap(),
        "sample_id,subject,view,truth,prediction,clips,mean_0,mean_1,mean_2,mean_3,mean_4"
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2 * 5 * 5);
    assert!(rows.iter().all(|r| r[2] != "1" && r.len() == 11));

    let report = fs::read_to_string(Path::new(&evaluated).join("eval_report.csv")).unwrap();
    assert_eq!(report.lines().count(), 1 + 50 + 1);
    assert!(report.lines().last().unwrap().starts_with("spearman_rho,,,,"));
    // the same predictions through both commands
    let eval_preds: Vec<&str> = report.lines().skip(1).take(50).map(|l| l.rsplit(',').next().unwrap()).collect();
    let score_preds: Vec<&str> = rows.iter().map(|r| r[4]).collect();
    assert_eq!(eval_preds, score_preds);
}

#[test]
fn two_view_grid_tests_the_other_views() {
    let (cwd, tmp) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let out = path(&tmp, "grid");
    let args = with_small(&[
        "grid",
        "--split",
        "cross_view",
        "--train-views",
        "2,5",
        "--epochs",
        "1",
        "--jobs",
        "2",
        "--out",
        &out,
    ]);
    ok(vinet(cwd.path(), &args));
    let table = fs::read_to_string(Path::new(&out).join("grid_walk_cross_view.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next().unwrap(), "action,split,backbone,stn,train_views,fold,test_view,rho,videos");
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    assert!(rows.iter().all(|r| r[4] == "2+5"));
    let views: BTreeSet<&str> = rows.iter().map(|r| r[6].as_str()).filter(|v| v.parse::<u32>().is_ok()).collect();
    assert_eq!(views, BTreeSet::from(["1", "3", "4", "6"]));
    assert!(rows.iter().any(|r| r[6] == "all") && rows.iter().any(|r| r[6] == "avg"));
    assert_eq!(echo(Path::new(&out))["grid"], serde_json::json!([{"kind": "cross_view", "train_views": [2, 5]}]));
    assert!(fs::read_dir(cwd.path()).unwrap().next().is_none());
}

#[test]
fn seed_comes_from_flag_then_file_then_environment() {
    let (cwd, tmp) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let run = |out: &str, extra: &[&str], env: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_vinet"));
        cmd.args(with_small(&["train", "--epochs", "0", "--out", out]))
            .args(extra)
            .current_dir(cwd.path())
            .env("RUST_LOG", "warn");
        match env {
            Some(v) => cmd.env("VINET_SEED", v),
            None => cmd.env_remove("VINET_SEED"),
        };
        cmd.output().unwrap()
    };
    let seeds = |out: &str| {
        let e = echo(Path::new(out));
        (e["train"]["seed"].as_u64().unwrap(), e["dataset"]["seed"].as_u64().unwrap())
    };
    let a = path(&tmp, "a");
    ok(run(&a, &[], None));
    assert_eq!(seeds(&a), (0, 0));
    let b = path(&tmp, "b");
    ok(run(&b, &[], Some("31")));
    assert_eq!(seeds(&b), (31, 31));
    let c = path(&tmp, "c");
    ok(run(&c, &["--seed", "5"], Some("31")));
    assert_eq!(seeds(&c), (5, 31));
    let file = tmp.path().join("cfg.json");
    fs::write(&file, r#"{"train": {"seed": 12}}"#).unwrap();
    let d = path(&tmp, "d");
    ok(run(&d, &["--config", file.to_str().unwrap()], Some("31")));
    assert_eq!(seeds(&d), (12, 31));
    assert_eq!(status(&run(&path(&tmp, "e"), &[], Some("twelve"))), 2);
}

#[test]
fn exit_codes() {
    let (cwd, tmp) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let out = path(&tmp, "x");
    assert_eq!(status(&vinet(cwd.path(), &["train", "--out", &out, "--no-such-flag"])), 2);
    assert_eq!(status(&vinet(cwd.path(), &["frobnicate"])), 2);
    assert_eq!(status(&vinet(cwd.path(), &["train"])), 2);
    assert_eq!(status(&vinet(cwd.path(), &["train", "--out", &out, "--backbone", "alexnet"])), 2);

    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"train": {"epochs": 1, "momentum": 0.9}}"#).unwrap();
    let o = vinet(cwd.path(), &["train", "--out", &out, "--config", bad.to_str().unwrap()]);
    assert_eq!(status(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("momentum"));
    fs::write(&bad, "{ not json").unwrap();
    assert_eq!(status(&vinet(cwd.path(), &["train", "--out", &out, "--config", bad.to_str().unwrap()])), 2);

    let split = with_small(&["train", "--out", &out, "--epochs", "0", "--split", "cross_view"]);
    assert_eq!(status(&vinet(cwd.path(), &split)), 2);
    let fold = with_small(&["train", "--out", &out, "--epochs", "0", "--folds", "2", "--fold", "2"]);
    assert_eq!(status(&vinet(cwd.path(), &fold)), 2);
    assert_eq!(status(&vinet(cwd.path(), &with_small(&["train", "--out", &out, "--lr", "-1"]))), 2);

    let missing = tmp.path().join("missing.vick");
    let o = vinet(cwd.path(), &with_small(&["score", "--out", &out, "--checkpoint", missing.to_str().unwrap()]));
    assert_eq!(status(&o), 1);
    let o = vinet(cwd.path(), &["train", "--out", &out, "--data", tmp.path().join("nowhere").to_str().unwrap()]);
    assert_eq!(status(&o), 1);
    assert!(fs::read_dir(cwd.path()).unwrap().next().is_none());
}

#[test]
fn check_passes() {
    let (cwd, tmp) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let out = path(&tmp, "check");
    let o = ok(vinet(cwd.path(), &["check", "--out", &out]));
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 5, "{text}");
    let report = fs::read_to_string(Path::new(&out).join("check_report.csv")).unwrap();
    assert!(report.starts_with("name,passed,detail,seconds\n"));
    assert!(fs::read_dir(cwd.path()).unwrap().next().is_none());
}
