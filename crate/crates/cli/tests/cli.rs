use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rxa_core::store::{load_checkpoint, read_dataset, CheckpointKind};

const SMALL: &str = "\
[generate]
transmitters = 4
receivers = 3
per_cell = 6
[schedule]
e1 = 1
loops = 2
max_epochs = 3
head_epochs = 5
";

struct Work {
    dir: tempfile::TempDir,
}

impl Work {
    fn new(extra: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("c.toml"), format!("{SMALL}{extra}")).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn rxa(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_rxa"))
            .current_dir(self.dir.path())
            .env("RXA_THREADS", "2")
            .arg("--config")
            .arg("c.toml")
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> Output {
        let out = self.rxa(args);
        assert!(out.status.success(), "rxa {args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
        out
    }
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap()
}

#[test]
fn generate_is_deterministic_and_fills_every_cell() {
    let w = Work::new("");
    w.ok(&["generate", "--out", "a"]);
    w.ok(&["generate", "--out", "b"]);
    w.ok(&["--seed", "9", "generate", "--out", "c"]);
    assert_eq!(read(&w.path("a/records.bin")), read(&w.path("b/records.bin")));
    assert_ne!(read(&w.path("a/records.bin")), read(&w.path("c/records.bin")));

    let (m, records) = read_dataset(&w.path("a")).unwrap();
    assert_eq!(records.len(), 4 * 3 * 4 * 6);
    assert_eq!(m.record_count, records.len());
    assert_eq!(m.transmitters.len(), 4);
    assert_eq!(m.receivers.len(), 3);
    for tx in 0..4u32 {
        for rx in 0..3u32 {
            for day in 1..=4u16 {
                let n = records.iter().filter(|r| r.tx == tx && r.rx == rx && r.day == day).count();
                assert_eq!(n, 6, "cell {tx}/{rx}/{day}");
            }
        }
    }
    assert!(records.iter().all(|r| r.len() == m.record_len));
}

#[test]
fn gan_training_logs_every_phase() {
    let w = Work::new("");
    w.ok(&["generate", "--out", "d"]);
    let out = w.ok(&["train-fe", "--method", "gan", "--data", "d", "--out", "fe.ckpt"]);
    let log = stderr(&out);
    for part in ["part=1", "part=2"] {
        assert!(log.lines().any(|l| l.starts_with("rxa.phase") && l.contains(part)), "{part} missing:\n{log}");
    }
    assert!(log.contains("rxa.check"));
    let ckpt = load_checkpoint(&w.path("fe.ckpt"), CheckpointKind::FeatureExtractor).unwrap();
    assert_eq!(ckpt.provenance.method, "gan");
    assert!(ckpt.provenance.data_digest.is_some());
}

#[test]
fn sd_without_receiver_terms_matches_basic() {
    let w = Work::new("[weights]\nalpha = 0.0\nbeta = 0.0\n");
    w.ok(&["generate", "--out", "d"]);
    w.ok(&["train-fe", "--method", "basic", "--data", "d", "--out", "basic.ckpt"]);
    w.ok(&["train-fe", "--method", "sd", "--data", "d", "--out", "sd.ckpt"]);
    let a = load_checkpoint(&w.path("basic.ckpt"), CheckpointKind::FeatureExtractor).unwrap();
    let b = load_checkpoint(&w.path("sd.ckpt"), CheckpointKind::FeatureExtractor).unwrap();
    let fe = |c: &rxa_core::store::Checkpoint| c.models.iter().find(|(r, _)| r == "fe").unwrap().1.clone();
    assert_eq!(fe(&a), fe(&b));
}

#[test]
fn receiver_aware_methods_need_two_receivers() {
    let w = Work::new("");
    w.ok(&["generate", "--out", "d"]);
    for method in ["sd", "gan"] {
        let out = w.rxa(&["train-fe", "--method", method, "--data", "d", "--receivers", "0", "--out", "x.ckpt"]);
        assert_eq!(out.status.code(), Some(2), "{method}");
        assert!(stderr(&out).contains("receivers"), "{}", stderr(&out));
    }
    w.ok(&["train-fe", "--method", "basic", "--data", "d", "--receivers", "0", "--out", "x.ckpt"]);
}

#[test]
fn classifier_pipeline_and_integrity() {
    let w = Work::new("");
    w.ok(&["generate", "--out", "d"]);
    w.ok(&["train-fe", "--method", "basic", "--data", "d", "--receivers", "0,1", "--out", "fe.ckpt"]);
    let fe_before = read(&w.path("fe.ckpt"));

    // two field receivers are refused
    let out = w.rxa(&["train-classifier", "--fe", "fe.ckpt", "--data", "d", "--out", "clf.ckpt"]);
    assert_ne!(out.status.code(), Some(0));

    let out = w.ok(&[
        "train-classifier", "--fe", "fe.ckpt", "--data", "d", "--mode", "open", "--transmitters", "0,1,2",
        "--receivers", "2", "--out", "clf.ckpt",
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("unchanged"));
    assert_eq!(read(&w.path("fe.ckpt")), fe_before);
    let clf = load_checkpoint(&w.path("clf.ckpt"), CheckpointKind::Classifier).unwrap();
    let meta = clf.classifier.as_ref().unwrap();
    assert_eq!(meta.classes, vec![0, 1, 2]);
    assert!(meta.tau.is_some());

    w.ok(&["evaluate", "--classifier", "clf.ckpt", "--data", "d", "--receivers", "2", "--out", "rep"]);
    for f in ["metrics.csv", "report.json", "roc.csv", "accuracy.svg", "roc.svg"] {
        assert!(w.path("rep").join(f).is_file(), "{f}");
    }
    let csv = fs::read_to_string(w.path("rep/metrics.csv")).unwrap();
    assert!(csv.starts_with("seed,method,mode,accuracy,auc,false_alarm,runtime_s\n"), "{csv}");
    let roc = fs::read_to_string(w.path("rep/roc.csv")).unwrap();
    assert!(roc.starts_with("threshold,fpr,tpr\ninf,"), "{roc}");
    assert!(roc.trim_end().ends_with(",1.000000,1.000000") || roc.contains(",1,1"), "{roc}");

    // a feature-extractor checkpoint is not a classifier
    let out = w.rxa(&["evaluate", "--classifier", "fe.ckpt", "--data", "d", "--out", "rep2"]);
    assert_eq!(out.status.code(), Some(2));

    // tampered feature-extractor weights inside the classifier are detected
    let mut bytes = read(&w.path("clf.ckpt"));
    let header = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    bytes[12 + header + 3] ^= 0x40;
    fs::write(w.path("bad.ckpt"), bytes).unwrap();
    let out = w.rxa(&["evaluate", "--classifier", "bad.ckpt", "--data", "d", "--out", "rep3"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).to_lowercase().contains("digest"), "{}", stderr(&out));
}

#[test]
fn evaluate_needs_test_day_records() {
    let w = Work::new("");
    fs::write(w.path("c.toml"), SMALL.replace("per_cell = 6", "per_cell = 6\ndays = [1, 2, 3]")).unwrap();
    w.ok(&["generate", "--out", "d"]);
    w.ok(&["train-fe", "--method", "basic", "--data", "d", "--out", "fe.ckpt"]);
    w.ok(&["train-classifier", "--fe", "fe.ckpt", "--data", "d", "--receivers", "2", "--out", "clf.ckpt"]);
    let out = w.rxa(&["evaluate", "--classifier", "clf.ckpt", "--data", "d", "--out", "rep"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exit_codes_and_help() {
    let w = Work::new("");
    let out = Command::new(env!("CARGO_BIN_EXE_rxa")).arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let help = String::from_utf8_lossy(&out.stdout);
    for key in ["generate", "train-fe", "train-classifier", "evaluate", "experiment", "[schedule]", "lr_part2", "target_fa", "RXA_THREADS"] {
        assert!(help.contains(key), "{key} missing from --help");
    }
    assert_eq!(w.rxa(&["bogus"]).status.code(), Some(1));
    assert_eq!(w.rxa(&["train-fe", "--method", "svm", "--out", "x"]).status.code(), Some(1));
    fs::write(w.path("c.toml"), "colour = 1\n").unwrap();
    assert_eq!(w.rxa(&["generate", "--out", "d"]).status.code(), Some(1));
    fs::write(w.path("c.toml"), SMALL).unwrap();
    assert_eq!(w.rxa(&["train-fe", "--method", "basic", "--data", "missing", "--out", "x"]).status.code(), Some(2));
}

#[test]
fn experiment_writes_a_report() {
    let w = Work::new(
        "[plan]\ntx_lab = 3\nrx_lab = 2\ntx_field = 2\nrx_test = 1\nper_cell = 6\ntest_per_cell = 4\nseeds = [1]\n",
    );
    w.ok(&["experiment", "--methods", "naive,basic", "--out", "rep"]);
    let csv = fs::read_to_string(w.path("rep/metrics.csv")).unwrap();
    assert!(csv.contains("\n1,naive,closed,"), "{csv}");
    assert!(csv.contains("\n1,basic,closed,"), "{csv}");
    assert!(w.path("rep/report.json").is_file());
    assert!(!w.path("rep/roc.svg").exists(), "closed set has no outliers to score");

    fs::write(
        w.path("c.toml"),
        format!("{}mode = \"open\"\noutliers = 1\n", fs::read_to_string(w.path("c.toml")).unwrap()),
    )
    .unwrap();
    w.ok(&["experiment", "--methods", "naive,basic", "--out", "open"]);
    for f in ["roc_naive.csv", "roc_basic.csv", "roc.svg"] {
        assert!(w.path("open").join(f).is_file(), "{f}");
    }
}
