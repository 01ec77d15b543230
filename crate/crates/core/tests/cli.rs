use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use wlfusion::cli::{run_from, sha256_path, RunManifest, MANIFEST};

const SMALL: &str = r#"
[synth]
train_per_lang = 80
dev_per_lang = 40
test_per_lang = 40
unlabeled_per_lang = 120

[backbone_mlm]
epochs = 1

[la_mlm]
epochs = 1

[train]
epochs = 2
"#;

fn wlf(args: &[&str]) -> i32 {
    run_from(std::iter::once("wlfusion").chain(args.iter().copied()))
}

struct Ws {
    _tmp: tempfile::TempDir,
    root: PathBuf,
    config: String,
}

impl Ws {
    fn new() -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().to_path_buf();
        let config = root.join("small.toml");
        fs::write(&config, SMALL).unwrap();
        Ws { config: config.display().to_string(), root, _tmp: tmp }
    }

    fn p(&self, name: &str) -> String {
        self.root.join(name).display().to_string()
    }

    /// Runs a command with `--config` and `--out <name>`, asserting success.
    fn ok(&self, name: &str, args: &[&str]) -> String {
        let out = self.p(name);
        let mut full = args.to_vec();
        full.extend(["--config", &self.config, "--out", &out]);
        assert_eq!(wlf(&full), 0, "{args:?} failed");
        assert!(Path::new(&out).join(MANIFEST).is_file(), "{name} has no manifest");
        out
    }
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_wlfusion"))
}

#[test]
fn synthetic_pipeline_runs_end_to_end() {
    let w = Ws::new();
    let data = w.ok("data", &["gen-synth"]);
    let data_hash = sha256_path(Path::new(&data)).unwrap();
    let bb = w.ok("bb", &["pretrain-backbone", "--data", &data]);
    let mut las = Vec::new();
    let mut tas = Vec::new();
    for l in ["en", "ar", "es"] {
        let la = w.ok(&format!("la.{l}"), &["pretrain-la", "--backbone", &bb, "--data", &data, "--lang", l]);
        tas.push(w.ok(&format!("ta.{l}"), &["train-ta", "--backbone", &bb, "--data", &data, "--lang", l, "--la", &la]));
        las.push(la);
    }
    let mut fusion = vec!["train-fusion", "--backbone", &bb, "--data", &data];
    for t in &tas {
        fusion.extend(["--ta", t]);
    }
    for l in &las {
        fusion.extend(["--la", l]);
    }
    let af = w.ok("af", &fusion);
    let ev = w.ok("eval", &["evaluate", "--model", &af, "--data", &data]);
    let interp = w.ok("interp", &["interpret", "--model", &af, "--data", &data]);
    let topics = w.ok("topics", &["topical-split", "--backbone", &bb, "--data", &data]);
    w.ok("eval.global", &["evaluate", "--model", &af, "--data", &data, "--scope", "global", "--topical", &topics]);
    let attr =
        w.ok("attr", &["attribute", "--model", &tas[0], "--data", &data, "--lang", "tr", "--n", "3", "--steps", "64"]);
    let rep = w.ok("report", &["report", "--model", &tas[0], "--model", &af]);

    let eval = fs::read_to_string(Path::new(&ev).join("eval.tsv")).unwrap();
    for l in ["en", "ar", "es", "tr", "bg", "nl"] {
        assert!(eval.lines().any(|r| r.split('\t').nth(2) == Some(l)), "no row for {l}");
    }
    let heat = fs::read_to_string(Path::new(&interp).join("heatmap_token.csv")).unwrap();
    assert!(heat.lines().count() > 1);
    for f in ["topical.tsv", "graph.dot", "graph.json", "split.json"] {
        assert!(Path::new(&topics).join(f).is_file(), "{f}");
    }
    assert_eq!(fs::read_to_string(Path::new(&attr).join("attributions.jsonl")).unwrap().lines().count(), 3);
    assert!(fs::read_to_string(Path::new(&rep).join("sizes.tsv")).unwrap().contains("TA+LA-single[en]"));
    assert_eq!(sha256_path(Path::new(&data)).unwrap(), data_hash, "inputs were modified");
}

#[test]
fn rerun_with_same_seed_reproduces_artifacts() {
    let w = Ws::new();
    let digest = |name: &str, seed: &str| {
        let d = w.ok(name, &["gen-synth", "--seed", seed]);
        RunManifest::load(Path::new(&d)).unwrap().artifact_digest()
    };
    let a = digest("a", "5");
    assert_eq!(a, digest("b", "5"));
    assert_ne!(a, digest("c", "6"));
}

#[test]
fn manifest_records_config_sources() {
    let w = Ws::new();
    let data = w.ok("data", &["gen-synth"]);
    let bb = w.ok("bb", &["pretrain-backbone", "--data", &data, "--lr", "0.002"]);
    let m = RunManifest::load(Path::new(&bb)).unwrap();
    assert_eq!(m.config_sources["backbone_mlm.lr"], "flag");
    assert_eq!(m.config_sources["backbone_mlm.epochs"], "config");
    assert_eq!(m.config_sources["backbone_mlm.batch_size"], "default");
    assert_eq!(m.config["backbone_mlm"]["lr"], 0.002);
    assert_eq!(m.command, "pretrain-backbone");
    assert!(m.inputs.keys().any(|k| k.ends_with("small.toml")));
}

#[test]
fn usage_errors_exit_two() {
    for args in [&["no-such-command"][..], &["evaluate", "--bogus"], &["train-ta", "--lang", "en", "--metric", "auc"]] {
        let out = bin().args(args).output().unwrap();
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
    assert_eq!(wlf(&["gen-synth", "--seed", "minus-one"]), 2);
}

#[test]
fn failures_exit_one_with_a_category_line() {
    let tmp = tempfile::tempdir().unwrap();
    let out =
        bin().args(["evaluate", "--model", "missing", "--data", "missing"]).current_dir(tmp.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 1, "{err}");
    assert!(lines[0].starts_with("error[input]: "), "{err}");
}

#[test]
fn non_empty_out_is_refused() {
    let w = Ws::new();
    let out = w.p("taken");
    fs::create_dir_all(&out).unwrap();
    fs::write(Path::new(&out).join("keep.txt"), "x").unwrap();
    assert_eq!(wlf(&["gen-synth", "--out", &out]), 1);
    assert_eq!(fs::read_to_string(Path::new(&out).join("keep.txt")).unwrap(), "x");
}

#[test]
fn env_var_sets_the_default_run_root() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("runs");
    for expect in ["gen-synth-001", "gen-synth-002"] {
        let out = bin().arg("gen-synth").env("WLFUSION_OUT", &root).output().unwrap();
        assert_eq!(out.status.code(), Some(0));
        let printed = String::from_utf8(out.stdout).unwrap();
        assert_eq!(Path::new(printed.trim()), root.join(expect));
    }
}

#[test]
fn zero_shot_scope_rejects_a_source_language() {
    let w = Ws::new();
    let data = w.ok("data", &["gen-synth"]);
    let bb = w.ok("bb", &["pretrain-backbone", "--data", &data]);
    let ta = w.ok("ta", &["train-ta", "--backbone", &bb, "--data", &data, "--lang", "en", "--epochs", "1"]);
    let out = w.p("ev");
    assert_eq!(
        wlf(&["evaluate", "--model", &ta, "--data", &data, "--scope", "zero-shot", "--langs", "en", "--out", &out]),
        1
    );
    let ok = w.ok("ev2", &["evaluate", "--model", &ta, "--data", &data, "--scope", "zero-shot"]);
    let eval = fs::read_to_string(Path::new(&ok).join("eval.tsv")).unwrap();
    assert!(eval.lines().skip(1).all(|r| r.split('\t').nth(2) != Some("en")));
}

#[test]
fn help_lists_every_command() {
    let out = bin().arg("--help").output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    for c in [
        "gen-synth",
        "pretrain-backbone",
        "pretrain-la",
        "train-ta",
        "train-fusion",
        "train-baseline",
        "evaluate",
        "topical-split",
        "interpret",
        "attribute",
        "report",
    ] {
        assert!(text.contains(c), "{c}");
    }
}
