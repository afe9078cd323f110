use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn fsr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fsr"))
        .current_dir(dir)
        .args(args)
        .env("RUST_LOG", "info")
        .env_remove("FSR__SEED")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = fsr(dir, args);
    assert!(
        out.status.success(),
        "fsr {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

/// `key<TAB>value` lines.
fn table(stdout: &str) -> BTreeMap<String, String> {
    stdout
        .lines()
        .filter_map(|l| l.split_once('\t'))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

/// A temporary directory holding the small prepared split in `split/`.
fn workspace() -> TempDir {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = root().join("configs/tiny-corpus.toml");
    ok(
        tmp.path(),
        &[
            "prepare",
            "--synthetic",
            corpus.to_str().unwrap(),
            "--n-per-class",
            "10",
            "--num-validation",
            "60",
            "--out",
            "split",
        ],
    );
    tmp
}

fn tiny_config() -> String {
    root().join("configs/tiny.toml").display().to_string()
}

fn train(dir: &Path, out: &str, extra: &[&str]) -> String {
    let cfg = tiny_config();
    let mut args = vec!["train", "-c", &cfg, "--split", "split", "--output", out];
    args.extend_from_slice(extra);
    ok(dir, &args)
}

fn records(run: &Path) -> Vec<serde_json::Value> {
    fs::read_to_string(run.join("records.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn prepare_reports_counts_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let a = table(&ok(tmp.path(), &["prepare", "--synthetic", "--out", "a", "--seed", "5"]));
    assert_eq!(a["labeled"], "40");
    assert_eq!(a["unlabeled"], "960");
    let b = table(&ok(tmp.path(), &["prepare", "--synthetic", "--out", "b", "--seed", "5"]));
    assert_eq!(a["manifest_sha256"], b["manifest_sha256"]);
    assert_eq!(
        fs::read(tmp.path().join("a/labeled.jsonl")).unwrap(),
        fs::read(tmp.path().join("b/labeled.jsonl")).unwrap()
    );
    let c = table(&ok(tmp.path(), &["prepare", "--synthetic", "--out", "c", "--seed", "6"]));
    assert_ne!(a["manifest_sha256"], c["manifest_sha256"]);
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["counts"]["labeled"], 40);
}

#[test]
fn prepare_names_the_short_class() {
    let tmp = tempfile::tempdir().unwrap();
    let out = fsr(tmp.path(), &["prepare", "--synthetic", "--out", "a", "--n-per-class", "900"]);
    assert_eq!(code(&out), 1);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("class0") && err.contains("900 requested"), "{err}");
}

#[test]
fn prepare_reads_a_jsonl_corpus_without_touching_it() {
    let tmp = tempfile::tempdir().unwrap();
    let mut lines = String::new();
    for i in 0..12 {
        let label = i % 3;
        lines.push_str(&format!(
            "{{\"id\":\"d{i}\",\"tokens\":[\"w{label}\",\"x\",\"y\"],\"label\":{label},\"rationale_spans\":[[0,1]]}}\n"
        ));
    }
    let path = tmp.path().join("corpus.jsonl");
    fs::write(&path, &lines).unwrap();
    let t = table(&ok(tmp.path(), &["prepare", "--corpus", "corpus.jsonl", "--n-per-class", "2", "--out", "s"]));
    assert_eq!((t["labeled"].as_str(), t["unlabeled"].as_str()), ("6", "6"));
    assert_eq!(fs::read_to_string(&path).unwrap(), lines);
    let unlabeled = fs::read_to_string(tmp.path().join("s/unlabeled.jsonl")).unwrap();
    assert!(!unlabeled.contains("label") && !unlabeled.contains("rationale_spans"));
}

#[test]
fn one_iteration_run_writes_the_run_directory() {
    let ws = workspace();
    train(ws.path(), "run", &["--max-iterations", "1"]);
    let run = ws.path().join("run");
    let recs = records(&run);
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0]["iteration"], 1);
    assert!(run.join("checkpoints/iter-0001.ckpt").exists());
    assert_eq!(fs::read_to_string(run.join("best")).unwrap().trim(), "iter-0001.ckpt");
    assert!(!run.join("run.lock").exists());
    let snapshot: serde_json::Value = serde_json::from_slice(&fs::read(run.join("config.json")).unwrap()).unwrap();
    assert_eq!(snapshot["config"]["self_train"]["max_iterations"], 1);
    assert!(snapshot["data_hash"].is_string());
    assert!(fs::read_to_string(run.join("run.log")).unwrap().contains("iteration 1"));

    // a second fresh run into the same directory is refused
    let cfg = tiny_config();
    let again = fsr(ws.path(), &["train", "-c", &cfg, "--split", "split", "--output", "run"]);
    assert_eq!(code(&again), 1);
}

#[test]
fn ablate_flag_leaves_only_the_pseudo_label_loss() {
    let ws = workspace();
    train(ws.path(), "run", &["--max-iterations", "1", "--ablate", "suff,comp,co"]);
    let recs = records(&ws.path().join("run"));
    let coef = &recs[0]["student_fit"]["coefficients"];
    assert_eq!(coef["coef_wu"], 1.0);
    for k in ["coef_suff", "coef_comp", "coef_sparsity", "coef_continuity"] {
        assert_eq!(coef[k], 0.0, "{k}");
    }
    let cfg = tiny_config();
    let bad = fsr(ws.path(), &["train", "-c", &cfg, "--split", "split", "--output", "r2", "--ablate", "attention"]);
    assert_eq!(code(&bad), 1);
}

#[test]
fn resumed_run_matches_an_uninterrupted_one() {
    let ws = workspace();
    train(ws.path(), "whole", &[]);
    train(ws.path(), "parts", &["--stop-after", "1"]);
    assert_eq!(records(&ws.path().join("parts")).len(), 1);
    ok(ws.path(), &["train", "--resume", "--output", "parts", "--stop-after", "1"]);
    assert_eq!(records(&ws.path().join("parts")).len(), 2);
    ok(ws.path(), &["train", "--resume", "--output", "parts"]);

    let read = |run: &str, f: &str| fs::read(ws.path().join(run).join(f)).unwrap();
    assert_eq!(records(&ws.path().join("whole")).len(), 3);
    assert_eq!(read("whole", "records.jsonl"), read("parts", "records.jsonl"));
    assert_eq!(read("whole", "best"), read("parts", "best"));
    let best = String::from_utf8(read("whole", "best")).unwrap();
    let ckpt = format!("checkpoints/{}", best.trim());
    assert_eq!(read("whole", &ckpt), read("parts", &ckpt));

    // configuration flags cannot change a resumed run
    let out = fsr(ws.path(), &["train", "--resume", "--output", "parts", "--max-iterations", "9"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn eval_is_deterministic_and_checks_the_vocabulary() {
    let ws = workspace();
    train(ws.path(), "run", &["--max-iterations", "2"]);
    let a = ok(ws.path(), &["eval", "--run", "run", "--out", "a.json"]);
    let b = ok(ws.path(), &["eval", "--run", "run"]);
    assert_eq!(a, b);
    let flat: BTreeMap<String, f64> = serde_json::from_slice(&fs::read(ws.path().join("a.json")).unwrap()).unwrap();
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(ws.path().join("run/summary.json")).unwrap()).unwrap();
    for (k, v) in &flat {
        assert_eq!(summary["validation"][k].as_f64(), Some(*v), "{k}");
    }

    // scoring an explicit corpus file equals scoring the run's validation set
    let c = ok(ws.path(), &["eval", "--run", "run", "--corpus", "split/validation.jsonl"]);
    assert_eq!(a, c);

    let mut vocab: serde_json::Value = serde_json::from_slice(&fs::read(ws.path().join("run/vocab.json")).unwrap()).unwrap();
    vocab.as_array_mut().unwrap().push("extra-token".into());
    fs::write(ws.path().join("bad-vocab.json"), serde_json::to_vec(&vocab).unwrap()).unwrap();
    let ckpt = format!("run/checkpoints/{}", fs::read_to_string(ws.path().join("run/best")).unwrap().trim());
    let out = fsr(
        ws.path(),
        &["eval", "--checkpoint", &ckpt, "--vocab", "bad-vocab.json", "--corpus", "split/validation.jsonl"],
    );
    assert_eq!(code(&out), 1, "{}", String::from_utf8_lossy(&out.stderr));
    let out = fsr(
        ws.path(),
        &["eval", "--run", "run", "--corpus", "split/validation.jsonl", "--classes", "a,b,c"],
    );
    assert_eq!(code(&out), 1);
}

#[test]
fn teacher_only_row_equals_a_zero_iteration_run() {
    let ws = workspace();
    let cfg = tiny_config();
    let t = ok(
        ws.path(),
        &["ablate", "-c", &cfg, "--split", "split", "--rows", "teacher-only", "--output", "abl"],
    );
    let rows: Vec<&str> = t.lines().skip(1).collect();
    assert_eq!(rows.len(), 1);
    assert!(fs::read_to_string(ws.path().join("abl/ablation.jsonl")).unwrap().lines().count() == 1);
    let line: serde_json::Value =
        serde_json::from_str(fs::read_to_string(ws.path().join("abl/ablation.jsonl")).unwrap().trim()).unwrap();

    let flat = table(&train(ws.path(), "teacher", &["--max-iterations", "0"]));
    assert!(records(&ws.path().join("teacher")).is_empty());
    for k in ["task_f1", "token_f1", "token_precision", "token_recall", "bleu2", "rationale_pct"] {
        assert_eq!(flat[k].parse::<f64>().unwrap(), line["report"][k].as_f64().unwrap(), "{k}");
    }
    // the saved teacher scores the same through eval
    let e = table(&ok(ws.path(), &["eval", "--run", "teacher"]));
    assert_eq!(e["task_f1"], flat["task_f1"]);
}

#[test]
fn curves_mirror_the_records() {
    let ws = workspace();
    train(ws.path(), "run", &[]);
    let run = ws.path().join("run");
    ok(ws.path(), &["export-curves", "--run", "run"]);
    let task = fs::read_to_string(run.join("task_f1.csv")).unwrap();
    let pct = fs::read_to_string(run.join("rationale_pct.csv")).unwrap();
    let recs = records(&run);
    for (text, field) in [(&task, "task_f1"), (&pct, "rationale_pct")] {
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], format!("iteration,{field}"));
        assert_eq!(lines.len() - 1, recs.len());
        for (line, r) in lines[1..].iter().zip(&recs) {
            let (i, v) = line.split_once(',').unwrap();
            assert_eq!(i.parse::<u64>().unwrap(), r["iteration"].as_u64().unwrap());
            let expected = if field == "task_f1" { &r["validation"]["task_f1"] } else { &r["rationale_pct"] };
            assert_eq!(v.parse::<f64>().unwrap(), expected.as_f64().unwrap());
        }
    }
    ok(ws.path(), &["export-curves", "--run", "run"]);
    assert_eq!(fs::read_to_string(run.join("task_f1.csv")).unwrap(), task);
    ok(ws.path(), &["export-curves", "--run", "run", "--delimiter", "tab", "--out", "tsv"]);
    assert!(fs::read_to_string(ws.path().join("tsv/rationale_pct.tsv")).unwrap().starts_with("iteration\trationale_pct\n"));

    let missing = fsr(ws.path(), &["export-curves", "--run", "nowhere"]);
    assert_eq!(code(&missing), 1);
}

#[test]
fn configuration_layers_and_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("c.toml"),
        "[data.synthetic]\nnum_unlabeled = 10\n[self_train]\nmax_iterations = 3\n",
    )
    .unwrap();
    let show = |env: Option<&str>, flags: &[&str]| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_fsr"));
        cmd.current_dir(tmp.path()).args(["train", "-c", "c.toml", "--print-config"]).args(flags);
        if let Some(v) = env {
            cmd.env("FSR__SELF_TRAIN__MAX_ITERATIONS", v);
        }
        let out = cmd.output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let cfg: toml::Table = String::from_utf8(out.stdout).unwrap().parse().unwrap();
        cfg["self_train"]["max_iterations"].as_integer().unwrap()
    };
    assert_eq!(show(None, &[]), 3);
    assert_eq!(show(Some("2"), &[]), 2);
    assert_eq!(show(Some("2"), &["--max-iterations", "1"]), 1);
    assert_eq!(show(Some("2"), &["--set", "self_train.max_iterations=4"]), 4);

    assert_eq!(code(&fsr(tmp.path(), &["--help"])), 0);
    assert_eq!(code(&fsr(tmp.path(), &["train", "--no-such-flag"])), 1);
    assert_eq!(code(&fsr(tmp.path(), &["train", "-c", "c.toml", "--set", "self_train.learning_rat=1"])), 1);
    assert_eq!(code(&fsr(tmp.path(), &["train", "--set", "output=x"])), 1);
    for cmd in ["prepare", "train", "eval", "ablate", "export-curves"] {
        let help = String::from_utf8(fsr(tmp.path(), &[cmd, "--help"]).stdout).unwrap();
        assert!(help.contains("--seed"), "{cmd} lacks --seed");
    }
}
