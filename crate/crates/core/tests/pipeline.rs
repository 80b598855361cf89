use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use tada::cli::{cmd_candidates, cmd_evaluate, cmd_prepare, cmd_train, Mode, RunConfig};
use tada::eval::{Phase, Segment};
use tada::model::checkpoint::load_checkpoint;
use tada::synthetic::{generate, SyntheticConfig};

fn write_log(path: &Path, n_users: usize) {
    let log = generate(&SyntheticConfig {
        n_users,
        n_items: 80,
        seed: 2,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let mut text = String::from("user,item,ts\n");
    for i in log {
        text.push_str(&format!("{},{},{}\n", i.user, i.item, i.timestamp));
    }
    fs::write(path, text).unwrap();
}

fn small_config() -> RunConfig {
    RunConfig::resolve(
        None,
        &[
            "has_header=true",
            "k_core=3",
            "max_len=20",
            "dim=8",
            "batch_size=32",
            "stage1_epochs=2",
            "stage2_epochs=2",
            "patience=0",
            "top_k=5",
        ]
        .map(String::from),
    )
    .unwrap()
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tada"))
}

#[test]
fn pipeline_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("log.csv");
    write_log(&input, 120);
    let cfg = small_config();
    let run = |name: &str| {
        let w = dir.path().join(name);
        let started = Instant::now();
        cmd_prepare(&input, &w, &cfg).unwrap();
        cmd_candidates(&w, &cfg, true, false).unwrap();
        let ckpt = cmd_train(&w, &cfg, Mode::Tada, 0, None, false).unwrap();
        cmd_evaluate(&w, &cfg, &[ckpt], Phase::Test, false).unwrap();
        assert!(started.elapsed().as_secs() < 60);
        w
    };
    let a = run("a");
    let b = run("b");
    for f in [
        "store.json",
        "segmentation.json",
        "stats.json",
        "candidates.json",
        "similarity.bin",
        "tada-seed0.ckpt",
        "tada-seed0.loss.jsonl",
        "tada-seed0.report.json",
    ] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn baseline_equals_gated_tada() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("log.csv");
    write_log(&input, 80);
    let cfg = small_config();
    let w = dir.path().join("w");
    cmd_prepare(&input, &w, &cfg).unwrap();
    cmd_candidates(&w, &cfg, false, false).unwrap();
    let base = cmd_train(&w, &cfg, Mode::Baseline, 3, None, false).unwrap();
    let gated = RunConfig {
        operator_loss: false,
        cross_loss: false,
        ..cfg.clone()
    };
    let tada = cmd_train(&w, &gated, Mode::Tada, 3, None, true).unwrap();
    assert_eq!(load_checkpoint(&base).unwrap().1.params, load_checkpoint(&tada).unwrap().1.params);
}

#[test]
fn fresh_model_scores_near_chance() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("log.csv");
    write_log(&input, 400);
    let cfg = RunConfig {
        stage1_epochs: 0,
        stage2_epochs: 0,
        ..small_config()
    };
    let w = dir.path().join("w");
    cmd_prepare(&input, &w, &cfg).unwrap();
    cmd_candidates(&w, &cfg, false, false).unwrap();
    let mut hits = Vec::new();
    let mut n_items = 0;
    for seed in 0..5 {
        let ckpt = cmd_train(&w, &cfg, Mode::Baseline, seed, None, false).unwrap();
        n_items = load_checkpoint(&ckpt).unwrap().1.n_items;
        let reports = cmd_evaluate(&w, &cfg, &[ckpt], Phase::Test, false).unwrap();
        hits.push(reports[0].1.hit(Segment::Overall, 10).unwrap());
    }
    let mean = hits.iter().sum::<f64>() / hits.len() as f64;
    let chance = 10.0 / n_items as f64;
    assert!((mean - chance).abs() < 0.5 * chance, "HR@10 {mean} vs chance {chance}");
}

#[test]
fn cli_exit_codes_and_lineage() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("log.csv");
    write_log(&input, 60);
    let w = dir.path().join("w");
    let w_s = w.to_str().unwrap();
    let conf = dir.path().join("run.conf");
    fs::write(&conf, "has_header = true\nk_core = 3\nmax_len = 20\ndim = 4\nbatch_size = 16\nstage1_epochs = 1\nstage2_epochs = 1\npatience = 0\n").unwrap();
    let conf_s = conf.to_str().unwrap();
    let common = ["--dir", w_s, "--config", conf_s];

    let st = bin().args(["prepare", "--input", input.to_str().unwrap()]).args(common).args(["--set", "beta=1.2"]).status().unwrap();
    assert_eq!(st.code(), Some(2));
    assert!(!w.exists(), "validation must fail before any output");

    let st = bin().args(["candidates"]).args(common).output().unwrap();
    assert_eq!(st.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&st.stderr).contains("run the upstream subcommand"));

    let st = bin().args(["prepare", "--input", "/nonexistent.csv"]).args(common).status().unwrap();
    assert_eq!(st.code(), Some(3));

    assert!(bin().args(["prepare", "--input", input.to_str().unwrap()]).args(common).status().unwrap().success());
    assert!(bin().args(["candidates"]).args(common).status().unwrap().success());
    assert!(bin().args(["train", "--seeds", "0,1"]).args(common).status().unwrap().success());
    let c0 = w.join("tada-seed0.ckpt");
    let c1 = w.join("tada-seed1.ckpt");
    let st = bin()
        .args(["evaluate", "--checkpoint", c0.to_str().unwrap(), "--checkpoint", c1.to_str().unwrap()])
        .args(common)
        .status()
        .unwrap();
    assert!(st.success());
    assert!(w.join("mean.report.json").exists());

    // a checkpoint evaluated against a different segmentation is refused
    let st = bin().args(["evaluate", "--checkpoint", c0.to_str().unwrap()]).args(common).args(["--set", "beta=0.4"]).status().unwrap();
    assert_eq!(st.code(), Some(2));
    let st = bin()
        .args(["evaluate", "--checkpoint", c0.to_str().unwrap(), "--force"])
        .args(common)
        .args(["--set", "top_k=3"])
        .status()
        .unwrap();
    assert!(st.success());

    let out = bin().args(["report", w.join("mean.report.json").to_str().unwrap()]).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("Tail Item"));
}

#[test]
fn report_matches_published_schema() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("log.csv");
    write_log(&input, 60);
    let cfg = small_config();
    let w = dir.path().join("w");
    cmd_prepare(&input, &w, &cfg).unwrap();
    cmd_candidates(&w, &cfg, false, false).unwrap();
    let ckpt = cmd_train(&w, &cfg, Mode::Tada, 0, None, false).unwrap();
    let reports = cmd_evaluate(&w, &cfg, &[ckpt], Phase::Test, false).unwrap();
    let schema: serde_json::Value = serde_json::from_str(tada::cli::METRIC_REPORT_JSON_SCHEMA).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let file: serde_json::Value = serde_json::from_slice(&fs::read(&reports[0].0).unwrap()).unwrap();
    assert!(validator.is_valid(&file["data"]), "{file}");
    let mut broken = file["data"].clone();
    broken["phase"] = "train".into();
    assert!(!validator.is_valid(&broken));
}
