//! End-to-end runs of the `spanet` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use spanet::checkpoint;
use spanet::RunConfig;
use spanet_core::network::build_network;
use tempfile::TempDir;

fn spanet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spanet")).args(args).output().expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn ok(out: Output) -> Output {
    assert!(out.status.success(), "exit {:?}\n{}", out.status.code(), stderr(&out));
    out
}

/// A small 4-class setup on 32x32 images inside a temp directory.
struct Fixture {
    dir: TempDir,
    config: PathBuf,
}

impl Fixture {
    fn new(extra: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().display();
        let text = format!(
            "[network]\ninput_size = 32\n\n[training]\nepochs = 1\nbatch_size = 4\nseed = 3\n{extra}\n\n\
             [data]\nmanifest = {root}/data/manifest.csv\nclasses = Remain, MultiDots, Scratch, Ball\n\
             per_class = 3\nimage_size = 32\n\n[output]\nrun_dir = {root}/run\n"
        );
        let config = dir.path().join("run.cfg");
        fs::write(&config, text).unwrap();
        Fixture { dir, config }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn run(&self, cmd: &str, extra: &[&str]) -> Output {
        let mut args = vec![cmd, "--config", self.config.to_str().unwrap()];
        args.extend_from_slice(extra);
        spanet(&args)
    }

    fn prepared(extra: &str) -> Self {
        let f = Fixture::new(extra);
        ok(f.run("gen-data", &[]));
        f
    }
}

fn files_in(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn gen_data_writes_images_and_manifest() {
    let gen = |dir: &Path, per_class: &str| {
        let manifest = format!("data.manifest={}", dir.join("manifest.csv").display());
        ok(spanet(&["gen-data", "--set", &manifest, "--set", &format!("data.per_class={per_class}")]))
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let out = gen(a.path(), "10");
    assert!(String::from_utf8_lossy(&out.stdout).contains("generated 110 images"));
    let files = files_in(a.path());
    assert_eq!(files.iter().filter(|(n, _)| n.ends_with(".pgm")).count(), 110);
    let manifest = fs::read_to_string(a.path().join("manifest.csv")).unwrap();
    let mut lines = manifest.lines();
    assert_eq!(lines.next(), Some("path,label,split"));
    assert_eq!(lines.clone().count(), 110);
    assert_eq!(lines.filter(|l| l.ends_with(",test")).count(), 22);
    assert!(files.iter().all(|(n, bytes)| !n.ends_with(".pgm") || bytes.starts_with(b"P5")));

    gen(b.path(), "10");
    assert!(files == files_in(b.path()), "a second run is not byte-identical");

    let empty = tempfile::tempdir().unwrap();
    gen(empty.path(), "0");
    assert_eq!(fs::read_to_string(empty.path().join("manifest.csv")).unwrap(), "path,label,split\n");
}

#[test]
fn train_fills_the_run_directory() {
    let f = Fixture::prepared("");
    let out = ok(f.run("train", &["--plot"]));
    assert!(String::from_utf8_lossy(&out.stdout).contains("trained 1 epochs"));
    for name in ["config.echo", "run.csv", "metrics.csv", "model.spa1", "confusion.txt", "loss.svg", "accuracy.svg"] {
        assert!(f.path("run").join(name).is_file(), "missing {name}");
    }
    let run = fs::read_to_string(f.path("run/run.csv")).unwrap();
    let lines: Vec<&str> = run.lines().collect();
    assert_eq!(lines[0], "epoch,lr,train_loss,train_acc,val_loss,val_acc");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("1,") && lines[1].ends_with(",,"), "{}", lines[1]);
    assert!(fs::read_to_string(f.path("run/loss.svg")).unwrap().starts_with("<svg"));

    // the echo holds the effective config, command-line flag included
    let echo = RunConfig::load(&f.path("run/config.echo")).unwrap();
    let mut expected = RunConfig::load(&f.config).unwrap();
    expected.output.plot = true;
    assert_eq!(echo, expected);

    // loading into a differently seeded network restores every weight
    let mut net = build_network::<f32>(&echo.network_config(), 99).unwrap();
    checkpoint::load_into(&f.path("run/model.spa1"), &mut net.params).unwrap();
    let bytes = fs::read(f.path("run/model.spa1")).unwrap();
    assert_eq!(checkpoint::encode(&net.params), bytes);
}

#[test]
fn zero_learning_rate_keeps_the_initial_weights() {
    let f = Fixture::prepared("lr = 0");
    ok(f.run("train", &[]));
    let cfg = RunConfig::load(&f.config).unwrap();
    let init = build_network::<f32>(&cfg.network_config(), cfg.training.seed).unwrap();
    assert_eq!(fs::read(f.path("run/model.spa1")).unwrap(), checkpoint::encode(&init.params));

    // unchanged weights make the in-epoch accuracy an exact evaluation
    let train_acc: f64 = fs::read_to_string(f.path("run/run.csv")).unwrap().lines().nth(1).unwrap().split(',').nth(3).unwrap().parse().unwrap();
    let ckpt = f.path("run/model.spa1");
    ok(spanet(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--split", "train"]));
    let metrics = fs::read_to_string(f.path("run/eval-train/metrics.csv")).unwrap();
    let macro_row = metrics.lines().last().unwrap();
    let acc: f64 = macro_row.rsplit(',').next().unwrap().parse().unwrap();
    assert_eq!(acc, train_acc);
}

#[test]
fn eval_on_one_sample() {
    let f = Fixture::prepared("");
    ok(f.run("train", &[]));
    let manifest = fs::read_to_string(f.path("data/manifest.csv")).unwrap();
    let row = manifest.lines().nth(1).unwrap();
    let single = f.path("data/single.csv");
    fs::write(&single, format!("path,label,split\n{row}\n")).unwrap();
    let out_dir = f.path("single");
    let ckpt = f.path("run/model.spa1");
    let out = ok(spanet(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--manifest",
        single.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--plot",
    ]));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("accuracy 1.0000") || text.contains("accuracy 0.0000"), "{text}");
    assert!(out_dir.join("metrics.svg").is_file());
    assert!(out_dir.join("confusion.txt").is_file());
}

#[test]
fn missing_manifest_is_a_data_error() {
    let f = Fixture::new("");
    let out = f.run("train", &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("manifest.csv"), "{}", stderr(&out));
}

#[test]
fn unknown_key_is_a_config_error() {
    let f = Fixture::new("learning_rate = 0.1");
    let out = f.run("train", &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("learning_rate"), "{}", stderr(&out));
    let out = spanet(&["profile", "--set", "network.depth=3"]);
    assert_eq!(out.status.code(), Some(1));
    let out = spanet(&["profile", "--set", "training.epochs=zero"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn diverging_training_is_a_numeric_error() {
    let f = Fixture::prepared("loss = cross_entropy\nlr = 1e30");
    let out = f.run("train", &[]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("batch"), "{}", stderr(&out));
}

#[test]
fn damaged_checkpoints_are_data_errors() {
    let f = Fixture::prepared("");
    ok(f.run("train", &[]));
    let ckpt = f.path("run/model.spa1");
    let good = fs::read(&ckpt).unwrap();
    let eval = || spanet(&["eval", "--checkpoint", ckpt.to_str().unwrap()]);
    for bad in [good[..good.len() / 2].to_vec(), good[..6].to_vec(), b"not a checkpoint at all".to_vec(), Vec::new()] {
        fs::write(&ckpt, &bad).unwrap();
        let out = eval();
        assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
        assert!(stderr(&out).contains("invalid checkpoint"), "{}", stderr(&out));
    }
    fs::write(&ckpt, &good).unwrap();
    ok(eval());
}

#[test]
fn profile_prints_and_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("p.csv");
    let out = ok(spanet(&["profile", "--csv", csv.to_str().unwrap()]));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("total"));
    assert!(fs::read_to_string(&csv).unwrap().lines().last().unwrap().starts_with("total,"));

    let sweep = dir.path().join("s.csv");
    ok(spanet(&["profile", "--sweep", "--set", "network.preset=paper", "--csv", sweep.to_str().unwrap()]));
    let rows: Vec<Vec<f64>> = fs::read_to_string(&sweep)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 6);
    assert!(rows.windows(2).all(|w| w[0][1] > w[1][1] && w[0][2] > w[1][2]));
}
