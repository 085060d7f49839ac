use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nextaction::eval::EvalReport;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_nextaction"));
    c.env_remove("NEXTACTION_WORKERS");
    c
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = run(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn files_with(dir: &Path, prefix: &str, ext: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| {
            let name = p.file_name().unwrap().to_string_lossy();
            name.starts_with(prefix) && name.ends_with(ext)
        })
        .collect();
    v.sort();
    v
}

/// Small synthetic corpus ingested into `dir/data`.
fn prepared() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.cfg");
    std::fs::write(
        &cfg,
        "students_certified = 30\nstudents_uncertified = 30\nmean_sequence_length = 60\n",
    )
    .unwrap();
    ok(&["synth", "--config", "small.cfg", "--out-dir", "data"], dir.path());
    ok(
        &["ingest", "--log", "data/events.tsv", "--roster", "data/roster.tsv", "--min-count", "5", "--out-dir", "data"],
        dir.path(),
    );
    dir
}

#[test]
fn synth_ingest_ngram_pipeline() {
    let dir = prepared();
    ok(
        &["ngram", "--corpus", "data/corpus.nact", "--max-order", "3", "--folds", "5", "--seed", "7", "--out-dir", "rep"],
        dir.path(),
    );
    let reports = files_with(&dir.path().join("rep"), "ngram3-", ".json");
    assert_eq!(reports.len(), 1);
    let r = EvalReport::from_json(&std::fs::read_to_string(&reports[0]).unwrap(), &reports[0]).unwrap();
    assert_eq!(r.folds, 5);
    assert_eq!(r.metadata["seed"], "7");
    assert_eq!(r.metadata["max_order"], "3");
    assert!(r.metadata.contains_key("input.corpus.sha256"));
    assert!(r.cv_accuracy > 0.3);
    assert_eq!(files_with(&dir.path().join("rep"), "ngram3-", ".pred").len(), 1);
}

#[test]
fn invalid_input_exits_nonzero() {
    let dir = prepared();
    let p = dir.path();
    for args in [
        vec!["ngram", "--corpus", "data/corpus.nact", "--max-order", "0"],
        vec!["ngram", "--corpus", "data/missing.nact"],
        vec!["ngram", "--corpus", "data/corpus.nact", "--no-such-flag"],
        vec!["ngram", "--corpus", "data/vocab.tsv"],
        vec!["lstm", "--corpus", "data/corpus.nact", "--layers", "4"],
        vec!["lstm", "--corpus", "data/corpus.nact", "--nodes", "8,16"],
        vec!["baseline", "--corpus", "data/corpus.nact", "--kind", "syllabus"],
        vec!["baseline", "--corpus", "data/corpus.nact", "--kind", "oracle"],
        vec!["eval", "--model", "data/vocab.tsv", "--corpus", "data/corpus.nact"],
        vec!["ngram", "--corpus", "data/corpus.nact", "--cohort", "everyone"],
    ] {
        let out = run(&args, p);
        assert!(!out.status.success(), "{args:?} should fail");
        assert!(!out.stderr.is_empty());
    }
    std::fs::write(p.join("bad.cfg"), "p_repeat = 0.9\n").unwrap();
    assert!(!run(&["synth", "--config", "bad.cfg", "--out-dir", "x"], p).status.success());
    std::fs::write(p.join("typo.cfg"), "studnets = 3\n").unwrap();
    assert!(!run(&["synth", "--config", "typo.cfg", "--out-dir", "x"], p).status.success());
}

#[test]
fn agreeing_with_itself_has_empty_off_diagonals() {
    let dir = prepared();
    let p = dir.path();
    ok(&["baseline", "--corpus", "data/corpus.nact", "--kind", "repeat", "--out-dir", "rep"], p);
    let pred = files_with(&p.join("rep"), "baseline-repeat-", ".pred").remove(0);
    let pred = pred.to_str().unwrap();
    let stdout = ok(&["agree", pred, pred, "--out-dir", "rep"], p);
    assert!(stdout.contains("A correct"));
    let json = files_with(&p.join("rep"), "agree-", ".json").remove(0);
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(doc["table"]["a_correct_b_incorrect"], 0);
    assert_eq!(doc["table"]["a_incorrect_b_correct"], 0);
    assert!(doc["total"].as_u64().unwrap() > 0);
}

#[test]
fn flags_override_config_file() {
    let dir = prepared();
    let p = dir.path();
    std::fs::write(p.join("run.cfg"), "max-order = 2\nfolds = 4\nlayers = 3\n").unwrap();
    let report = |out: &str| {
        let f = files_with(&p.join(out), "ngram", ".json").remove(0);
        EvalReport::from_json(&std::fs::read_to_string(&f).unwrap(), &f).unwrap()
    };
    let out = run(&["ngram", "--corpus", "data/corpus.nact", "--config", "run.cfg", "--out-dir", "a"], p);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("layers"));
    let a = report("a");
    assert_eq!((a.metadata["max_order"].as_str(), a.folds), ("2", 4));
    ok(&["ngram", "--corpus", "data/corpus.nact", "--config", "run.cfg", "--max-order", "3", "--out-dir", "b"], p);
    let b = report("b");
    assert_eq!((b.metadata["max_order"].as_str(), b.folds), ("3", 4));
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = prepared();
    let p = dir.path();
    for out in ["r1", "r2"] {
        ok(&["ngram", "--corpus", "data/corpus.nact", "--sweep", "--max-order", "4", "--out-dir", out], p);
        ok(
            &[
                "lstm", "--corpus", "data/corpus.nact", "--layers", "2", "--nodes", "6", "--emb-dim", "4",
                "--epochs", "1", "--seed", "5", "--out-dir", out, "--checkpoint", &format!("{out}/net.ckpt"),
            ],
            p,
        );
    }
    let (a, b) = (dir_bytes(&p.join("r1")), dir_bytes(&p.join("r2")));
    assert!(a.len() >= 10);
    assert_eq!(a, b);
    // a changed seed changes the content address
    ok(&["ngram", "--corpus", "data/corpus.nact", "--seed", "8", "--out-dir", "r1"], p);
    assert_eq!(files_with(&p.join("r1"), "ngram3-", ".json").len(), 2);
}

#[test]
fn saved_models_evaluate_on_the_other_cohort() {
    let dir = prepared();
    let p = dir.path();
    ok(&["ngram", "--corpus", "data/corpus.nact", "--save-model", "tri.ngram", "--out-dir", "rep"], p);
    let stdout = ok(&["eval", "--model", "tri.ngram", "--corpus", "data/corpus.nact", "--out-dir", "rep"], p);
    assert!(stdout.contains("3-gram"));
    let f = files_with(&p.join("rep"), "eval-", ".json").remove(0);
    let r = EvalReport::from_json(&std::fs::read_to_string(&f).unwrap(), &f).unwrap();
    assert_eq!(r.metadata["cohort"], "uncertified");
    assert_eq!(r.backoff_usage.as_ref().map(Vec::len), Some(3));
}
