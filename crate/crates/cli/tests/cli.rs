use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use proptest::prelude::*;
use stagerec::commands::OutDir;
use stagerec::config::RunConfig;

const SMALL: &str = r#"{
  "seed": 5,
  "data": {"synthetic": {"n_users": 60, "n_items": 40, "n_stages": 5}},
  "train": {"model": {"dim": 6, "max_prefix": 8}, "learning_rate": 0.01, "batch_size": 64, "max_epochs": 2}
}"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stagerec"))
}

fn run(cwd: &Path, args: &[&str]) -> Output {
    bin().current_dir(cwd).env("RUST_LOG", "warn").args(args).output().unwrap()
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files_under(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.json"), SMALL).unwrap();
    dir
}

#[test]
fn gen_train_eval_round_trip() {
    let dir = setup();
    let d = dir.path();
    let out = run(d, &["gen-data", "--config", "small.json", "--out", "data"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["interactions.tsv", "ground_truth.json", "config.json", "manifest.json"] {
        assert!(d.join("data").join(f).is_file(), "{f}");
    }
    let generated = RunConfig::load(&d.join("data/config.json")).unwrap();
    let mut cfg: serde_json::Value = serde_json::from_str(SMALL).unwrap();
    cfg["data"] = serde_json::to_value(&generated.data).unwrap();
    fs::write(d.join("files.json"), cfg.to_string()).unwrap();

    let out = run(d, &["train", "--config", "files.json", "--out", "run"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["manifest.json", "train_log.csv", "checkpoint.json", "metrics.json", "metrics.csv"] {
        assert!(d.join("run").join(f).is_file(), "{f}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("run/manifest.json")).unwrap()).unwrap();
    assert!(manifest["wall_seconds"].as_f64().unwrap() >= 0.0);
    assert_eq!(manifest["seed"], 5);
    let restored: RunConfig = serde_json::from_value(manifest["config"].clone()).unwrap();
    assert_eq!(restored.hash(), manifest["config_hash"].as_str().unwrap());

    let out = run(d, &["eval", "--checkpoint", "run/checkpoint.json", "--out", "eval"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        fs::read(d.join("run/metrics.csv")).unwrap(),
        fs::read(d.join("eval/metrics.csv")).unwrap()
    );
}

#[test]
fn reruns_are_byte_identical() {
    let dir = setup();
    let d = dir.path();
    for out in ["a", "b"] {
        let o = run(d, &["train", "--config", "small.json", "--ablation", "no_lra", "--out", out]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["metrics.csv", "metrics.json", "train_log.csv", "checkpoint.json"] {
        assert_eq!(fs::read(d.join("a").join(f)).unwrap(), fs::read(d.join("b").join(f)).unwrap(), "{f}");
    }
    let o = run(d, &["train", "--config", "small.json", "--ablation", "no_lra", "--seed", "6", "--out", "c"]);
    assert!(o.status.success());
    assert_ne!(fs::read(d.join("a/metrics.csv")).unwrap(), fs::read(d.join("c/metrics.csv")).unwrap());
}

#[test]
fn writes_stay_inside_the_output_directory() {
    let dir = setup();
    let d = dir.path();
    let o = run(d, &["ablate", "--config", "small.json", "--max-epochs", "1", "--out", "nested/abl"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let all = files_under(d);
    let outside: Vec<_> = all.iter().filter(|p| !p.starts_with(d.join("nested/abl")) && !p.ends_with("small.json")).collect();
    assert!(outside.is_empty(), "{outside:?}");
    let mut r = csv::Reader::from_path(d.join("nested/abl/ablation.csv")).unwrap();
    let col = r.headers().unwrap().iter().position(|h| h == "ablation").unwrap();
    let variants: Vec<String> = r.records().map(|rec| rec.unwrap()[col].to_string()).collect();
    assert_eq!(variants, ["full", "no_lpm", "no_ste", "no_lra", "no_gpm"]);
}

#[test]
fn sweep_marks_windows_that_leave_too_few_stages() {
    let dir = setup();
    let d = dir.path();
    let o = run(
        d,
        &["sweep", "--config", "small.json", "--max-epochs", "1", "--windows", "1w,3w", "--lambda-sl", "0,1", "--out", "sw"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut r = csv::Reader::from_path(d.join("sw/sweep.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 4);
    let status = r.headers().unwrap().iter().position(|h| h == "status").unwrap();
    assert_eq!(&rows[0][status], "ok");
    assert!(rows[1][status].starts_with("error"), "{:?}", rows[1]);
    assert_eq!(&rows[2][status], "ok");

    let o = run(d, &["report", "sw/sweep.csv", "--out", "rep"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.join("rep/summary.csv").is_file() && d.join("rep/summary.md").is_file());
}

#[test]
fn failures_exit_nonzero() {
    let dir = setup();
    let d = dir.path();
    let o = run(d, &["train", "--config", "missing.json", "--out", "x"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.json"));
    assert!(!d.join("x/metrics.csv").exists());
    let o = run(d, &["train", "--config", "small.json", "--ablation", "bogus", "--out", "y"]);
    assert!(!o.status.success());
    let o = run(d, &["eval", "--checkpoint", "small.json", "--out", "z"]);
    assert!(!o.status.success());
    assert!(!d.join("z/metrics.csv").exists());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn output_names_resolve_inside(parts in prop::collection::vec("[a-z.]{1,4}", 1..4), abs in any::<bool>()) {
        let dir = tempfile::tempdir().unwrap();
        let out = OutDir::create(dir.path()).unwrap();
        let mut name = parts.join("/");
        if abs {
            name.insert(0, '/');
        }
        match out.path(&name) {
            Ok(p) => {
                prop_assert_eq!(p.parent().unwrap(), dir.path());
                prop_assert!(name != ".." && name != "." && !name.contains('/'));
            }
            Err(_) => prop_assert!(name.contains('/') || name == ".." || name == "."),
        }
    }
}
