use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hinge::hingraph::load_graph_with_warnings;
use tempfile::TempDir;

const SMALL: &str = "\
[train]
hidden_dim = 16
embed_dim = 8
max_epochs = 20
patience = 5
probe_epochs = 100

[synth]
anchors_per_class = 20
num_a = 9
num_s = 6
feature_dim = 8
";

fn hinge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hinge")).args(args).output().expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        fs::write(dir.path().join("small.toml"), SMALL).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn config(&self) -> PathBuf {
        self.path("small.toml")
    }

    fn synth(&self, name: &str) -> PathBuf {
        let out = self.path(name);
        let res = hinge(&["synth", "--config", p(&self.config()), "--out", p(&out)]);
        assert!(res.status.success(), "{}", stderr(&res));
        out
    }

    fn train(&self, graph: &Path, name: &str) -> PathBuf {
        let out = self.path(name);
        let res = hinge(&["train", "--graph", p(graph), "--config", p(&self.config()), "--out", p(&out)]);
        assert!(res.status.success(), "{}", stderr(&res));
        out
    }
}

fn read(path: PathBuf) -> Vec<u8> {
    fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn synth_writes_a_loadable_graph_deterministically() {
    let f = Fixture::new();
    let a = f.synth("a");
    let b = f.synth("b");
    for name in ["nodes.tsv", "edges.tsv", "features.tsv", "labels.tsv", "effective_config.toml"] {
        assert_eq!(read(a.join(name)), read(b.join(name)), "{name}");
    }
    let (g, warnings) = load_graph_with_warnings(&a).unwrap();
    assert!(warnings.is_empty(), "{warnings:?}");
    assert_eq!(g.num_anchors(), 60);
}

#[test]
fn default_synth_config_loads() {
    let f = Fixture::new();
    let out = f.path("default");
    let res = hinge(&["synth", "--out", p(&out)]);
    assert!(res.status.success(), "{}", stderr(&res));
    let (g, warnings) = load_graph_with_warnings(&out).unwrap();
    assert!(warnings.is_empty());
    assert_eq!(g.num_anchors(), 300);
}

#[test]
fn unknown_config_key_is_named() {
    let f = Fixture::new();
    let cfg = f.path("bad.toml");
    fs::write(&cfg, "[synth]\nfoo = 3\n").unwrap();
    let res = hinge(&["synth", "--config", p(&cfg), "--out", p(&f.path("x"))]);
    assert!(!res.status.success());
    let err = stderr(&res);
    let line = err.lines().next().unwrap();
    assert!(line.starts_with("ERROR\tconfig\t"), "{line}");
    assert!(line.contains("foo"), "{line}");
}

#[test]
fn train_is_bounded_and_reproducible() {
    let f = Fixture::new();
    let graph = f.synth("g");
    let a = f.train(&graph, "run_a");
    let b = f.train(&graph, "run_b");
    let log = String::from_utf8(read(a.join("training_log.tsv"))).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert!(!lines.is_empty() && lines.len() <= 20);
    assert!(lines.iter().all(|l| l.split('\t').count() == 5));
    for name in ["training_log.tsv", "best.ckpt", "final.ckpt", "effective_config.toml"] {
        assert_eq!(read(a.join(name)), read(b.join(name)), "{name}");
    }

    // Re-running from the echoed config reproduces the log.
    let echo = a.join("effective_config.toml");
    let c = f.path("run_c");
    let res = hinge(&["train", "--graph", p(&graph), "--config", p(&echo), "--out", p(&c)]);
    assert!(res.status.success(), "{}", stderr(&res));
    assert_eq!(read(a.join("training_log.tsv")), read(c.join("training_log.tsv")));
}

#[test]
fn corrupt_features_fail_with_format_error() {
    let f = Fixture::new();
    let graph = f.synth("g");
    let path = graph.join("features.tsv");
    let mut text = fs::read_to_string(&path).unwrap();
    text.push_str("0\t1.0,2.0\n");
    fs::write(&path, text).unwrap();
    let res = hinge(&["train", "--graph", p(&graph), "--config", p(&f.config()), "--out", p(&f.path("t"))]);
    assert!(!res.status.success());
    let err = stderr(&res);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("ERROR\tformat\t"), "{err}");
}

#[test]
fn eval_reports_each_ratio_and_logs_seeds() {
    let f = Fixture::new();
    let graph = f.synth("g");
    let run = f.train(&graph, "run");
    let out = f.path("eval");
    let ck = run.join("best.ckpt");
    let res = hinge(&[
        "eval", "--graph", p(&graph), "--checkpoint", p(&ck), "--ratios", "20,40,60", "--seeds", "5", "--out", p(&out),
        "--config", p(&f.config()),
    ]);
    assert!(res.status.success(), "{}", stderr(&res));
    let results = String::from_utf8(read(out.join("results.tsv"))).unwrap();
    let rows: Vec<Vec<&str>> = results.lines().skip(1).map(|l| l.split('\t').collect()).collect();
    for model in ["ours", "raw-features"] {
        let settings: Vec<&str> = rows.iter().filter(|r| r[0] == model).map(|r| r[2]).collect();
        assert_eq!(settings, vec!["20%", "40%", "60%"], "{model}");
    }
    let log = String::from_utf8(read(out.join("eval_log.tsv"))).unwrap();
    let ours20: Vec<f64> = log
        .lines()
        .skip(1)
        .map(|l| l.split('\t').collect::<Vec<_>>())
        .filter(|r| r[0] == "ours" && r[1] == "20%")
        .map(|r| r[3].parse().unwrap())
        .collect();
    assert_eq!(ours20.len(), 5);
    let mean = ours20.iter().sum::<f64>() / 5.0;
    let reported: f64 = rows.iter().find(|r| r[0] == "ours" && r[2] == "20%").unwrap()[1].parse().unwrap();
    assert!((reported - (mean * 100.0).round() / 100.0).abs() < 1e-9);
    assert!(out.join("results_bars.tsv").exists());

    // A config asking for a different embedding width is incompatible.
    let wide = f.path("wide.toml");
    fs::write(&wide, SMALL.replace("embed_dim = 8", "embed_dim = 12")).unwrap();
    let res = hinge(&[
        "eval", "--graph", p(&graph), "--checkpoint", p(&ck), "--config", p(&wide), "--out", p(&f.path("e2")),
    ]);
    assert!(!res.status.success());
    let err = stderr(&res);
    assert!(err.starts_with("ERROR\tcompatibility\t") && err.contains("16x8x2") && err.contains("16x12x2"), "{err}");
}

#[test]
fn sweep_grids() {
    let f = Fixture::new();
    let graph = f.synth("g");
    let run = |name: &str, lr: &str, dropout: &str| {
        let out = f.path(name);
        let res = hinge(&[
            "sweep", "--graph", p(&graph), "--config", p(&f.config()), "--lr-grid", lr, "--dropout-grid", dropout,
            "--out", p(&out), "--threads", "2",
        ]);
        (res, out)
    };
    let (res, a) = run("s1", "0.001,0.005", "0.1,0.3");
    assert!(res.status.success(), "{}", stderr(&res));
    let table = String::from_utf8(read(a.join("sweep.tsv"))).unwrap();
    assert_eq!(table.lines().count(), 5);
    let (_, b) = run("s2", "0.001,0.005", "0.1,0.3");
    assert_eq!(read(a.join("sweep.tsv")), read(b.join("sweep.tsv")));

    let (res, c) = run("s3", "0.005", "0.1:0.5:0.05");
    assert!(res.status.success(), "{}", stderr(&res));
    assert_eq!(String::from_utf8(read(c.join("sweep.tsv"))).unwrap().lines().count(), 10);

    let (res, d) = run("s4", "0.001,0.01", "0.1");
    assert!(!res.status.success());
    assert!(stderr(&res).starts_with("ERROR\tconfig\t"));
    assert!(!d.join("sweep.tsv").exists());
}

#[test]
fn usage_errors_are_machine_readable() {
    let res = hinge(&["train"]);
    assert!(!res.status.success());
    assert!(stderr(&res).starts_with("ERROR\tusage\t"));
}
