use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use patchcanvas_cli::{Cli, Command as Sub};
use patchcanvas_core::pipeline::SampleTrace;
use patchcanvas_core::{EvalReport, RunConfig};
use clap::Parser;

const BIN: &str = env!("CARGO_BIN_EXE_patchcanvas");

fn tiny_conf() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/tiny.conf")
}

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn patchcanvas")
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn failed(out: &Output) -> String {
    assert_eq!(out.status.code(), Some(1), "stdout: {}", String::from_utf8_lossy(&out.stdout));
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// One tiny pretrain + train run shared by the tests in this file.
struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn out(&self) -> PathBuf {
        self.root.join("run")
    }
    fn ckpt(&self) -> PathBuf {
        self.out().join("ckpt_4")
    }
}

fn fixture() -> &'static Fixture {
    static FIX: OnceLock<Fixture> = OnceLock::new();
    FIX.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let conf = tiny_conf();
        let conf = conf.to_str().unwrap();
        ok(run(&["vse-pretrain", "--config", conf, "--out", "run"], &root));
        ok(run(&["train", "--config", conf, "--out", "run"], &root));
        Fixture { _dir: dir, root }
    })
}

fn listing(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

#[test]
fn pretrain_and_train_artifacts() {
    let fix = fixture();
    assert_eq!(listing(&fix.root), vec!["run"]);
    let out = fix.out();
    assert_eq!(
        listing(&out),
        vec!["ckpt_2", "ckpt_4", "losses.csv", "vse", "vse_losses.csv"]
    );
    assert_eq!(listing(&out.join("vse")), vec!["config.json", "params.safetensors", "vocab.txt"]);
    let vse_csv = fs::read_to_string(out.join("vse_losses.csv")).unwrap();
    assert_eq!(vse_csv.lines().count(), 21);
    let losses = fs::read_to_string(out.join("losses.csv")).unwrap();
    let lines: Vec<&str> = losses.lines().collect();
    assert_eq!(lines[0], "step,g_loss,d_match,d_mismatch,d_relevant");
    assert_eq!(lines.len(), 5);
    assert!(lines[4].starts_with("4,"));
}

#[test]
fn same_seed_same_csvs() {
    let fix = fixture();
    let dir = tempfile::tempdir().unwrap();
    let conf = tiny_conf();
    let conf = conf.to_str().unwrap();
    ok(run(&["vse-pretrain", "--config", conf, "--out", "again"], dir.path()));
    ok(run(&["train", "--config", conf, "--out", "again"], dir.path()));
    for name in ["vse_losses.csv", "losses.csv"] {
        assert_eq!(
            fs::read(fix.out().join(name)).unwrap(),
            fs::read(dir.path().join("again").join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn missing_dataset_fails_without_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "vse-pretrain",
            "--config",
            tiny_conf().to_str().unwrap(),
            "--out",
            "run",
            "--set",
            "data.source=manifest",
            "--set",
            "data.manifest=nowhere/manifest.tsv",
        ],
        dir.path(),
    );
    let err = failed(&out);
    assert!(err.contains("nowhere/manifest.tsv"), "{err}");
    assert!(!dir.path().join("run").join("vse").exists());
}

#[test]
fn train_needs_pretrained_embedding() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["train", "--config", tiny_conf().to_str().unwrap(), "--out", "run"], dir.path());
    let err = failed(&out);
    assert!(err.contains("checkpoint"), "{err}");
    assert!(!dir.path().join("run").join("losses.csv").exists());
}

#[test]
fn bad_config_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.conf"), "generator.timesteps = 4\nvse.unknown = 3\n").unwrap();
    let err = failed(&run(&["vse-pretrain", "--config", "bad.conf"], dir.path()));
    assert!(err.contains("line 2") && err.contains("vse.unknown"), "{err}");
    let err = failed(&run(&["vse-pretrain", "--set", "train.steps"], dir.path()));
    assert!(err.contains("KEY=VALUE"), "{err}");
    assert_eq!(listing(dir.path()), vec!["bad.conf"]);
}

#[test]
fn sample_writes_images_and_traces() {
    let fix = fixture();
    let dir = tempfile::tempdir().unwrap();
    let ckpt = fix.ckpt();
    let args = |out: &'static str| {
        vec![
            "sample".to_string(),
            "--checkpoint".into(),
            ckpt.to_str().unwrap().into(),
            "--caption".into(),
            "a red circle on a gray background".into(),
            "--count".into(),
            "3".into(),
            "--seed".into(),
            "7".into(),
            "--out".into(),
            out.into(),
        ]
    };
    let a: Vec<String> = args("a");
    let b: Vec<String> = args("b");
    ok(run(&a.iter().map(String::as_str).collect::<Vec<_>>(), dir.path()));
    ok(run(&b.iter().map(String::as_str).collect::<Vec<_>>(), dir.path()));
    let names = listing(&dir.path().join("a"));
    assert_eq!(
        names,
        vec!["sample_000.json", "sample_000.png", "sample_001.json", "sample_001.png", "sample_002.json", "sample_002.png"]
    );
    for n in &names {
        assert_eq!(fs::read(dir.path().join("a").join(n)).unwrap(), fs::read(dir.path().join("b").join(n)).unwrap(), "{n}");
    }
    let trace = SampleTrace::load(&dir.path().join("a/sample_000.json")).unwrap();
    assert_eq!(trace.tokens, ["a", "red", "circle", "on", "a", "gray", "background"]);
    assert_eq!(trace.steps.len(), 4);
    let img = image::open(dir.path().join("a/sample_000.png")).unwrap();
    assert_eq!((img.width(), img.height()), (16, 16));

    let err = failed(&run(&["sample", "--checkpoint", ckpt.to_str().unwrap(), "--caption", "  ", "--out", "c"], dir.path()));
    assert!(err.contains("caption"), "{err}");
    assert!(!dir.path().join("c").exists());
}

#[test]
fn attention_map_matches_trace() {
    let fix = fixture();
    let dir = tempfile::tempdir().unwrap();
    let ckpt = fix.ckpt();
    let caption = "a big blue triangle sitting on a white background in the middle";
    ok(run(&["sample", "--checkpoint", ckpt.to_str().unwrap(), "--caption", caption, "--out", "s"], dir.path()));
    ok(run(&["attn-map", "--trace", "s/sample_000.json", "--out", "maps"], dir.path()));
    let trace = SampleTrace::load(&dir.path().join("s/sample_000.json")).unwrap();
    let (t, n) = (trace.steps.len(), trace.tokens.len());
    assert_eq!((t, n), (4, 12));

    let png = image::open(dir.path().join("maps/attention.png")).unwrap().to_rgb8();
    let cell = patchcanvas_core::pipeline::CELL;
    assert_eq!((png.width(), png.height()), (n as u32 * cell, t as u32 * cell));
    for (row, step) in trace.steps.iter().enumerate() {
        assert!((step.beta.iter().sum::<f64>() - 1.0).abs() < 1e-4);
        let brightness = |col: usize| -> u32 {
            let p = png.get_pixel(col as u32 * cell + cell / 2, row as u32 * cell + cell / 2);
            p.0.iter().map(|&c| u32::from(c)).sum()
        };
        let rendered = (0..n).max_by_key(|&c| (brightness(c), std::cmp::Reverse(c))).unwrap();
        let top = step.beta.iter().cloned().fold(f64::MIN, f64::max);
        assert!((step.beta[rendered] - top).abs() < 1e-2, "row {row}: cell {rendered}");
    }
    let svg = fs::read_to_string(dir.path().join("maps/attention.svg")).unwrap();
    assert_eq!(svg.matches("<rect").count(), t * n);
    assert!(svg.contains(">triangle</text>") && svg.contains(">t=4</text>"));

    fs::write(dir.path().join("broken.json"), r#"{"caption":"x","tokens":["x"],"steps":[{"timestep":1,"beta":[0.5],"gamma":0.5,"token_strings":["x"]}]}"#).unwrap();
    let err = failed(&run(&["attn-map", "--trace", "broken.json", "--out", "m2"], dir.path()));
    assert!(err.contains("trace"), "{err}");
}

#[test]
fn eval_report_and_guards() {
    let fix = fixture();
    let dir = tempfile::tempdir().unwrap();
    let ckpt = fix.ckpt();
    let ck = ckpt.to_str().unwrap();
    let out = ok(run(&["eval", "--checkpoint", ck, "--out", "e1"], dir.path()));
    ok(run(&["eval", "--checkpoint", ck, "--out", "e2"], dir.path()));
    let report: EvalReport = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report.inception_mean >= 1.0 && report.inception_mean <= 12.0, "{report:?}");
    assert!(report.recall_at.contains_key("1") && report.recall_at.contains_key("5"));
    let a = fs::read(dir.path().join("e1/eval_report.json")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("e2/eval_report.json")).unwrap());

    let err = failed(&run(&["eval", "--checkpoint", ck, "--set", "metrics.samples=2", "--out", "e3"], dir.path()));
    assert!(err.contains("metrics.samples"), "{err}");
    let err = failed(&run(&["eval", "--checkpoint", "no/such/ckpt", "--out", "e4"], dir.path()));
    assert!(err.contains("no/such/ckpt"), "{err}");
    let err = failed(&run(&["eval", "--checkpoint", ck, "--set", "generator.hidden=9", "--out", "e5"], dir.path()));
    assert!(err.contains("generator.hidden"), "{err}");
    assert_eq!(listing(dir.path()), vec!["e1", "e2"]);
}

#[test]
fn flags_override_file_override_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("c.conf");
    fs::write(&conf, "seed = 5\ntrain.steps = 40\nvse.margin = 0.3\noutput.dir = from_file\n").unwrap();
    let conf = conf.to_str().unwrap();
    let parse = |extra: &[&str]| {
        let mut args = vec!["patchcanvas", "--config", conf];
        args.extend_from_slice(extra);
        args.push("train");
        let cli = Cli::try_parse_from(args).unwrap();
        assert!(matches!(cli.command, Sub::Train));
        cli.common.resolve(RunConfig::default()).unwrap()
    };
    let file_only = parse(&[]);
    assert_eq!((file_only.seed, file_only.train.steps, file_only.vse.margin), (5, 40, 0.3));
    assert_eq!(file_only.train.batch, RunConfig::default().train.batch);
    assert_eq!(file_only.out_dir, PathBuf::from("from_file"));

    let flagged = parse(&["--seed", "9", "--set", "train.steps=7", "--out", "flag_dir"]);
    assert_eq!((flagged.seed, flagged.train.steps, flagged.vse.margin), (9, 7, 0.3));
    assert_eq!(flagged.out_dir, PathBuf::from("flag_dir"));

    let again = RunConfig::from_kv(&flagged.to_kv()).unwrap();
    assert_eq!(again, flagged);
}
