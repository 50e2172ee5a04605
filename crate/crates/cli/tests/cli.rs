use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

use tdm::net::{load_checkpoint, NetConfig, ScoreModel};
use tdm::rng::{stream, tags};

fn tdm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tdm"))
        .current_dir(dir)
        .env("TDM_THREADS", "2")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_config(dir: &Path, name: &str, v: Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    p
}

fn torus_config(out_dir: &str) -> Value {
    json!({
        "dataset": {"name": "checkerboard", "board": 4, "samples": 600},
        "model": {"hidden": 16, "depth": 2},
        "diffusion": {"steps": 40},
        "train": {"iters": 6, "batch": 32, "checkpoint_every": 2},
        "sample": {"n": 50},
        "nll": {"samples": 2, "max_points": 10},
        "eval": {"permutations": 20},
        "seed": 11,
        "out_dir": out_dir
    })
}

fn so3_config(out_dir: &str) -> Value {
    json!({
        "dataset": {"name": "so_mixture", "n": 3, "components": 4, "samples": 200},
        "model": {"hidden": 16, "depth": 1},
        "diffusion": {"steps": 20},
        "train": {"iters": 2, "batch": 16, "pairs_per_path": 4},
        "sample": {"n": 20},
        "nll": {"samples": 1, "max_points": 4},
        "seed": 3,
        "out_dir": out_dir
    })
}

#[test]
fn make_data_is_deterministic_and_sized() {
    let tmp = tempfile::tempdir().unwrap();
    let c = write_config(tmp.path(), "c.json", torus_config("run"));
    ok(&tdm(tmp.path(), &["make-data", "-c", c.to_str().unwrap()]));
    let first = fs::read(tmp.path().join("run/data.jsonl")).unwrap();
    ok(&tdm(tmp.path(), &["make-data", "-c", c.to_str().unwrap()]));
    let second = fs::read(tmp.path().join("run/data.jsonl")).unwrap();
    assert_eq!(first, second);
    let text = String::from_utf8(first).unwrap();
    // header plus one element per line
    assert_eq!(text.lines().count(), 601);
    let train = fs::read_to_string(tmp.path().join("run/train.jsonl")).unwrap();
    let test = fs::read_to_string(tmp.path().join("run/test.jsonl")).unwrap();
    assert_eq!(train.lines().count() + test.lines().count(), 602);
    assert!(tmp.path().join("run/config.json").exists());
}

#[test]
fn unknown_generator_lists_valid_names() {
    let tmp = tempfile::tempdir().unwrap();
    let c = write_config(tmp.path(), "c.json", torus_config("run"));
    let out = tdm(tmp.path(), &["make-data", "-c", c.to_str().unwrap(), "--set", "dataset.name=spirals"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    for name in tdm::datasets::GENERATORS {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn config_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let c = write_config(tmp.path(), "c.json", torus_config("run"));
    let c = c.to_str().unwrap();
    for args in [
        vec!["train", "-c", c],
        vec!["make-data", "-c", c, "--set", "train.batch=0"],
        vec!["make-data", "-c", c, "--set", "diffusion.steps=0"],
        vec!["make-data", "-c", c, "--set", "model.hidden=15"],
        vec!["make-data", "-c", c, "--set", "bogus=1"],
        vec!["make-data", "-c", "missing.json"],
        vec!["--threads", "0", "make-data", "-c", c],
    ] {
        let out = tdm(tmp.path(), &args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn zero_iterations_checkpoint_equals_init() {
    let tmp = tempfile::tempdir().unwrap();
    let c = write_config(tmp.path(), "c.json", torus_config("run"));
    let c = c.to_str().unwrap();
    ok(&tdm(tmp.path(), &["make-data", "-c", c]));
    ok(&tdm(tmp.path(), &["train", "-c", c, "--set", "train.iters=0"]));
    let ck = load_checkpoint(&tmp.path().join("run/checkpoint.ckpt")).unwrap();
    assert_eq!(ck.iteration, 0);
    let kind = "torus:2".parse().unwrap();
    let cfg = NetConfig { hidden: 16, depth: 2, ..NetConfig::for_kind(&kind) };
    let init = ScoreModel::new(kind, cfg, &mut stream(11, tags::INIT, 0)).unwrap();
    assert_eq!(ck.model.params(), init.params());
}

#[test]
fn resume_matches_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let a = write_config(tmp.path(), "a.json", torus_config("a"));
    let b = write_config(tmp.path(), "b.json", torus_config("b"));
    let (a, b) = (a.to_str().unwrap(), b.to_str().unwrap());
    ok(&tdm(tmp.path(), &["make-data", "-c", a]));
    ok(&tdm(tmp.path(), &["make-data", "-c", b]));
    ok(&tdm(tmp.path(), &["train", "-c", a]));
    ok(&tdm(tmp.path(), &["train", "-c", b, "--stop-after", "3"]));
    let mid = load_checkpoint(&tmp.path().join("b/checkpoint.ckpt")).unwrap();
    assert_eq!(mid.iteration, 3);
    let out = ok(&tdm(tmp.path(), &["train", "-c", b, "--resume"]));
    assert!(out.contains("resuming from iteration 3"), "{out}");

    let ca = load_checkpoint(&tmp.path().join("a/checkpoint.ckpt")).unwrap();
    let cb = load_checkpoint(&tmp.path().join("b/checkpoint.ckpt")).unwrap();
    assert_eq!(ca.iteration, 6);
    assert_eq!(cb.iteration, 6);
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(ca.model.params()), bits(cb.model.params()));
    let (oa, ob) = (ca.optimizer.unwrap(), cb.optimizer.unwrap());
    assert_eq!(oa.step, ob.step);
    assert_eq!(bits(&oa.m), bits(&ob.m));
    assert_eq!(bits(&oa.v), bits(&ob.v));

    let la = fs::read_to_string(tmp.path().join("a/loss.csv")).unwrap();
    let lb = fs::read_to_string(tmp.path().join("b/loss.csv")).unwrap();
    let loss_col = |s: &str| s.lines().map(|l| l.split(',').nth(2).unwrap().to_string()).collect::<Vec<_>>();
    assert_eq!(loss_col(&la), loss_col(&lb));
    assert!(la.starts_with("iteration,wall_time_s,loss,lr\n"));
}

#[test]
fn objective_branch_is_logged() {
    let tmp = tempfile::tempdir().unwrap();
    let t = write_config(tmp.path(), "t.json", torus_config("t"));
    let s = write_config(tmp.path(), "s.json", so3_config("s"));
    let (t, s) = (t.to_str().unwrap(), s.to_str().unwrap());
    ok(&tdm(tmp.path(), &["make-data", "-c", t]));
    ok(&tdm(tmp.path(), &["make-data", "-c", s]));
    assert!(ok(&tdm(tmp.path(), &["train", "-c", t, "--set", "train.iters=1"])).contains("objective: dsm"));
    assert!(ok(&tdm(tmp.path(), &["train", "-c", s])).contains("objective: ism"));
}

#[test]
fn sample_eval_and_nll_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let c = write_config(tmp.path(), "c.json", torus_config("run"));
    let c = c.to_str().unwrap();
    ok(&tdm(tmp.path(), &["make-data", "-c", c]));
    ok(&tdm(tmp.path(), &["train", "-c", c]));

    ok(&tdm(tmp.path(), &["sample", "-c", c, "--mode", "ode", "-o", "ode1.jsonl"]));
    ok(&tdm(tmp.path(), &["--threads", "1", "sample", "-c", c, "--mode", "ode", "-o", "ode2.jsonl"]));
    assert_eq!(fs::read(tmp.path().join("ode1.jsonl")).unwrap(), fs::read(tmp.path().join("ode2.jsonl")).unwrap());

    ok(&tdm(tmp.path(), &["sample", "-c", c]));
    let ds = tdm::datasets::Dataset::read_jsonl(&tmp.path().join("run/samples.jsonl")).unwrap();
    assert_eq!(ds.len(), 50);
    assert!(ds.items.iter().all(|g| g.is_on_group(1e-6)));
    let rep: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("run/samples_report.json")).unwrap()).unwrap();
    assert_eq!(rep["off_group"], 0);

    ok(&tdm(tmp.path(), &["eval", "-c", c]));
    let ev: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("run/eval.json")).unwrap()).unwrap();
    let p = ev["mmd"]["p_value"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));
    assert!(tmp.path().join("run/marginals.csv").exists());

    let out = ok(&tdm(tmp.path(), &["nll", "-c", c]));
    assert!(out.contains("NLL") && out.contains('±'), "{out}");
    let nll: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("run/nll.json")).unwrap()).unwrap();
    assert!(nll["mean"].as_f64().unwrap().is_finite());
    assert_eq!(nll["haar_normalized"], false);
}

#[test]
fn so3_nll_is_haar_normalized_and_kind_mismatch_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let s = write_config(tmp.path(), "s.json", so3_config("s"));
    let t = write_config(tmp.path(), "t.json", torus_config("t"));
    let (s, t) = (s.to_str().unwrap(), t.to_str().unwrap());
    ok(&tdm(tmp.path(), &["make-data", "-c", s]));
    ok(&tdm(tmp.path(), &["train", "-c", s]));
    ok(&tdm(tmp.path(), &["nll", "-c", s]));
    let nll: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("s/nll.json")).unwrap()).unwrap();
    assert_eq!(nll["haar_normalized"], true);

    let out = tdm(tmp.path(), &["sample", "-c", t, "--checkpoint", "s/checkpoint.ckpt"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not match"));
}

#[test]
fn diverging_training_exits_three_with_iteration() {
    let tmp = tempfile::tempdir().unwrap();
    let c = write_config(tmp.path(), "c.json", torus_config("run"));
    let c = c.to_str().unwrap();
    ok(&tdm(tmp.path(), &["make-data", "-c", c]));
    let out = tdm(tmp.path(), &["train", "-c", c, "--set", "train.lr=1e300", "--set", "train.weight_decay=0"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("iteration"));
}
