use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn langid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_langid")).args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[track_caller]
fn ok(o: Output) -> Output {
    assert!(o.status.success(), "exit {:?}\nstdout: {}\nstderr: {}", o.status.code(), stdout(&o), stderr(&o));
    o
}

/// Synthesizes, splits and extracts a 3-class corpus of 20 clips per class.
fn corpus(dir: &Path) -> (PathBuf, PathBuf) {
    let corpus = dir.join("corpus");
    ok(langid(&["synth", "--classes", "3", "--per-class", "20", "--sr", "8000", "--out", p(&corpus)]));
    let manifest = corpus.join("manifest.csv");
    ok(langid(&["split", "--manifest", p(&manifest), "--seed", "42"]));
    let cache = dir.join("cache");
    ok(langid(&["extract", "--manifest", p(&manifest), "--cache", p(&cache)]));
    (manifest, cache)
}

fn count_files(dir: &Path, ext: &str) -> usize {
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            n += count_files(&path, ext);
        } else if path.extension().is_some_and(|e| e == ext) {
            n += 1;
        }
    }
    n
}

#[test]
fn help_on_every_command() {
    for cmd in ["synth", "split", "extract", "train", "eval", "report", "sweep"] {
        let o = ok(langid(&[cmd, "--help"]));
        assert!(stdout(&o).contains("Usage"), "{cmd}");
    }
    let o = ok(langid(&["train", "--help"]));
    for flag in ["--arch", "--epochs", "--seed", "--balance", "--cluster", "--config", "--out"] {
        assert!(stdout(&o).contains(flag), "train --help lacks {flag}");
    }
    ok(langid(&["--help"]));
}

#[test]
fn synth_argument_errors_exit_2() {
    let o = langid(&["synth", "--classes", "1", "--out", "/tmp/never"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("need ≥ 2 classes"), "{}", stderr(&o));
    let o = langid(&["synth", "--classes", "4"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--out"));
}

#[test]
fn synth_writes_every_clip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c");
    let o = ok(langid(&["synth", "--classes", "4", "--per-class", "3", "--sr", "8000", "--out", p(&out)]));
    assert!(stdout(&o).contains("12 clips"));
    assert_eq!(count_files(&out, "wav"), 12);
    let text = fs::read_to_string(out.join("manifest.csv")).unwrap();
    assert!(text.starts_with("path,label,gender,split\n"));
    assert_eq!(text.lines().count(), 13);
}

#[test]
fn extract_is_idempotent_and_force_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, cache) = corpus(dir.path());
    assert_eq!(count_files(&cache, "mfc"), 60);
    let o = ok(langid(&["extract", "--manifest", p(&manifest), "--cache", p(&cache)]));
    assert!(stdout(&o).contains("skipped 60"), "{}", stdout(&o));
    let one = cache.join("t00/0000.mfc");
    let before = fs::read(&one).unwrap();
    let o = ok(langid(&["extract", "--manifest", p(&manifest), "--cache", p(&cache), "--force"]));
    assert!(stdout(&o).contains("written 60"));
    assert_eq!(fs::read(&one).unwrap(), before);
}

#[test]
fn extract_reports_corrupt_clips_and_continues() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    ok(langid(&["synth", "--classes", "2", "--per-class", "3", "--sr", "8000", "--out", p(&corpus)]));
    fs::write(corpus.join("t01/0001.wav"), b"RIFF junk").unwrap();
    let cache = dir.path().join("cache");
    let o = langid(&["extract", "--manifest", p(&corpus.join("manifest.csv")), "--cache", p(&cache)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("0001.wav"), "{}", stderr(&o));
    assert_eq!(count_files(&cache, "mfc"), 5);
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, "{\"epochs\": 3}").unwrap();
    let o = langid(&["extract", "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("epochs"), "{}", stderr(&o));
}

#[test]
fn train_eval_report_round() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, cache) = corpus(dir.path());
    let train = |out: &Path, extra: &[&str]| {
        let mut args = vec![
            "train", "--manifest", p(&manifest), "--cache", p(&cache), "--arch", "cnn", "--epochs", "1", "--seed", "7",
            "--out", p(out),
        ];
        args.extend_from_slice(extra);
        ok(langid(&args))
    };

    // Determinism: identical checkpoints from identical runs.
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    train(&a, &[]);
    train(&b, &[]);
    assert_eq!(fs::read(a.join("model.lidm")).unwrap(), fs::read(b.join("model.lidm")).unwrap());
    assert_eq!(fs::read(a.join("labels.json")).unwrap(), fs::read(b.join("labels.json")).unwrap());
    let log = fs::read_to_string(a.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 1);
    let rec: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    for key in ["epoch", "train_loss", "val_loss", "val_accuracy", "lr_last", "seconds"] {
        assert!(rec.get(key).is_some(), "{key}");
    }

    // Evaluation reuses run.json for the manifest; byte-identical reruns.
    let o = ok(langid(&["eval", "--model", p(&a)]));
    assert!(stdout(&o).contains("| actual \\ predicted |"));
    let report = a.join("eval_test.json");
    let first = fs::read(&report).unwrap();
    ok(langid(&["eval", "--model", p(&a)]));
    assert_eq!(fs::read(&report).unwrap(), first);

    ok(langid(&["eval", "--model", p(&a), "--noise", "white:10"]));
    assert!(a.join("eval_test_white10.json").is_file());
    let o = langid(&["eval", "--model", p(&a), "--noise", "pink:10"]);
    assert_eq!(o.status.code(), Some(2));

    let o = ok(langid(&["report", "--input", p(&report), "--format", "csv"]));
    assert!(stdout(&o).starts_with("actual,t00,t01,t02,ppv,tpr,f1\n"), "{}", stdout(&o));
    assert!(stdout(&o).contains("\naccuracy,"));
    let o = ok(langid(&["report", "--input", p(&report), "--format", "json"]));
    assert!(stdout(&o).contains("\"accuracy\""));
    let md = dir.path().join("r.md");
    ok(langid(&["report", "--input", p(&report), "--out", p(&md)]));
    assert!(fs::read_to_string(&md).unwrap().contains("Accuracy:"));

    // A two-label cluster model cannot score the full label set.
    let c = dir.path().join("cluster");
    train(&c, &["--cluster", "t00,t01", "--balance", "manual:10"]);
    assert_eq!(fs::read_to_string(c.join("labels.json")).unwrap().matches('"').count(), 4);
    let run: serde_json::Value = serde_json::from_str(&fs::read_to_string(c.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["per_class"], 10);
    let o = langid(&["eval", "--model", p(&c), "--cluster", "t00,t01,t02"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("t02"), "{}", stderr(&o));
    ok(langid(&["eval", "--model", p(&c)]));

    let o = langid(&["train", "--manifest", p(&manifest), "--cache", p(&cache), "--balance", "manual:0", "--out", p(&c)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_writes_two_column_table() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, cache) = corpus(dir.path());
    let cfg = dir.path().join("sweep.json");
    fs::write(&cfg, r#"{"arch": "CNN", "padding": "same", "kernels": [3, 5], "train": {"epochs": 1}}"#).unwrap();
    let out = dir.path().join("sweep");
    let o = ok(langid(&[
        "sweep", "--config", p(&cfg), "--manifest", p(&manifest), "--cache", p(&cache), "--out", p(&out),
    ]));
    let table = stdout(&o);
    assert!(table.starts_with("| Kernel size | Accuracy |"), "{table}");
    assert_eq!(table.lines().count(), 4);
    assert!(out.join("kernel_5/model.lidm").is_file());
    let o = ok(langid(&["report", "--input", p(&out.join("sweep.json")), "--format", "csv"]));
    assert!(stdout(&o).starts_with("kernel_size,accuracy\n3,"));
}
