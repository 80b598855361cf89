//! The `tada` command line: `prepare`, `candidates`, `train`, `evaluate`
//! and `report`, each reading and writing artifacts in one work directory.

pub mod artifact;
pub mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::corpus::{
    build_sequences, dataset_stats, k_core_filter, leave_one_out_split, load_interactions, segment,
    subsample_users, DatasetStats, Segmentation, SequenceStore,
};
use crate::eval::{self, render_table, MetricReport, Phase, RankOptions};
use crate::model::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use crate::model::{init_model, run_stage, Stage, TrainData, TrainOutcome};
use crate::simcand::{
    build_cooccurrence, build_interaction_matrix, solve_similarity, top_k_correlation, union_candidates,
    write_similarity, CandidateSets,
};
use crate::{Error, Result};

use artifact::{check_lineage, read_artifact, write_artifact, Envelope, Lineage};
pub use config::RunConfig;

pub const STORE_SCHEMA: &str = "tada.sequence_store.v1";
pub const SEGMENTATION_SCHEMA: &str = "tada.segmentation.v1";
pub const STATS_SCHEMA: &str = "tada.dataset_stats.v1";
pub const CANDIDATES_SCHEMA: &str = "tada.candidates.v1";
pub const REPORT_FILE_SCHEMA: &str = "tada.report.v1";

/// JSON Schema for the `data` member of report files.
pub const METRIC_REPORT_JSON_SCHEMA: &str = include_str!("metric_report.schema.json");

#[derive(Debug, Parser)]
#[command(name = "tada", version, about = "Tail-aware data augmentation for sequential recommendation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Common {
    /// Work directory holding every artifact.
    #[arg(long, default_value = "tada-run")]
    pub dir: PathBuf,
    /// Config file: JSON object or `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Proceed even when upstream artifacts came from a different config.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Stage 1 only, for the total epoch budget.
    Baseline,
    /// Stage 1 then stage 2 with the augmentation losses.
    Tada,
}

impl Mode {
    fn name(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Tada => "tada",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PhaseArg {
    Valid,
    Test,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter, split and segment an interaction log.
    Prepare {
        #[command(flatten)]
        common: Common,
        /// Delimited file with user, item and timestamp columns.
        #[arg(long)]
        input: PathBuf,
    },
    /// Solve the similarity model and build per-item candidate sets.
    Candidates {
        #[command(flatten)]
        common: Common,
        /// Also write the dense similarity matrix as `similarity.bin`.
        #[arg(long)]
        save_similarity: bool,
    },
    /// Train one checkpoint per seed.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "tada")]
        mode: Mode,
        /// Comma-separated seeds; defaults to the config seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Write one JSON line per augmented sequence to this file.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Rank every item for every user and write metric reports.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Checkpoint files; more than one also writes their mean.
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        phase: PhaseArg,
    },
    /// Print report files as tables.
    Report {
        /// Report files written by `evaluate`.
        reports: Vec<PathBuf>,
        /// Print the report JSON Schema and exit.
        #[arg(long)]
        schema: bool,
    },
}

/// Parses arguments and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Prepare { common, input } => {
            let config = RunConfig::resolve(common.config.as_deref(), &common.overrides)?;
            cmd_prepare(&input, &common.dir, &config).map(|stats| {
                println!(
                    "users {} items {} interactions {} avg length {:.2} sparsity {:.4}",
                    stats.n_users, stats.n_items, stats.n_interactions, stats.avg_length, stats.sparsity
                );
            })
        }
        Command::Candidates {
            common,
            save_similarity,
        } => {
            let config = RunConfig::resolve(common.config.as_deref(), &common.overrides)?;
            let sets = cmd_candidates(&common.dir, &config, save_similarity, common.force)?;
            let mean = sets.candidates.iter().map(Vec::len).sum::<usize>() as f64 / sets.n_items().max(1) as f64;
            println!("candidate sets for {} items, mean size {mean:.2}", sets.n_items());
            Ok(())
        }
        Command::Train {
            common,
            mode,
            seeds,
            trace,
        } => {
            let config = RunConfig::resolve(common.config.as_deref(), &common.overrides)?;
            let seeds = if seeds.is_empty() { vec![config.seed] } else { seeds };
            for seed in seeds {
                let started = Instant::now();
                let path = cmd_train(&common.dir, &config, mode, seed, trace.as_deref(), common.force)?;
                println!("{} ({:.1}s)", path.display(), started.elapsed().as_secs_f64());
            }
            Ok(())
        }
        Command::Evaluate {
            common,
            checkpoints,
            phase,
        } => {
            let config = RunConfig::resolve(common.config.as_deref(), &common.overrides)?;
            let phase = match phase {
                PhaseArg::Valid => Phase::Valid,
                PhaseArg::Test => Phase::Test,
            };
            let reports = cmd_evaluate(&common.dir, &config, &checkpoints, phase, common.force)?;
            for (path, report) in &reports {
                println!("{}\n{}", path.display(), render_table(report));
            }
            Ok(())
        }
        Command::Report { reports, schema } => {
            if schema {
                print!("{METRIC_REPORT_JSON_SCHEMA}");
                return Ok(());
            }
            if reports.is_empty() {
                return Err(Error::Config("no report files given".into()));
            }
            for path in reports {
                let env: Envelope<MetricReport> = read_artifact(&path, REPORT_FILE_SCHEMA)?;
                println!("{}\n{}", path.display(), render_table(&env.data));
            }
            Ok(())
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn cmd_prepare(input: &Path, dir: &Path, config: &RunConfig) -> Result<DatasetStats> {
    config.validate()?;
    let log = load_interactions(input, &config.load_options())?;
    let mut log = k_core_filter(&log, config.k_core)?;
    if config.subsample_users > 0 {
        log = subsample_users(&log, config.subsample_users, config.k_core, config.seed)?;
    }
    let store = leave_one_out_split(build_sequences(&log, config.max_len)?)?;
    let seg = segment(&store, config.beta)?;
    let stats = dataset_stats(&store);
    create_dir(dir)?;
    let lineage = Lineage {
        config_hash: config.corpus_hash(),
        parent_hash: String::new(),
    };
    write_artifact(&dir.join("store.json"), STORE_SCHEMA, lineage.clone(), &store)?;
    write_artifact(&dir.join("segmentation.json"), SEGMENTATION_SCHEMA, lineage.clone(), &seg)?;
    write_artifact(&dir.join("stats.json"), STATS_SCHEMA, lineage, &stats)?;
    Ok(stats)
}

/// Loads `store.json` and `segmentation.json`, checking them against the
/// corpus section of `config`.
pub fn load_prepared(dir: &Path, config: &RunConfig, force: bool) -> Result<(SequenceStore, Segmentation)> {
    let expected = config.corpus_hash();
    let sp = dir.join("store.json");
    let store: Envelope<SequenceStore> = read_artifact(&sp, STORE_SCHEMA)?;
    check_lineage(&sp, &expected, &store.lineage.config_hash, force)?;
    let gp = dir.join("segmentation.json");
    let seg: Envelope<Segmentation> = read_artifact(&gp, SEGMENTATION_SCHEMA)?;
    check_lineage(&gp, &expected, &seg.lineage.config_hash, force)?;
    if seg.data.n_items() != store.data.n_items() || seg.data.n_users() != store.data.n_users() {
        return Err(Error::artifact(&gp, "does not match the sequence store"));
    }
    store.data.require_split()?;
    Ok((store.data, seg.data))
}

pub fn cmd_candidates(dir: &Path, config: &RunConfig, save_similarity: bool, force: bool) -> Result<CandidateSets> {
    config.validate()?;
    let (store, seg) = load_prepared(dir, config, force)?;
    if store.n_items() > config.item_warning {
        eprintln!(
            "warning: {} items exceeds item_warning = {}; the dense similarity solve needs O(n^2) memory \
             (consider subsample_users)",
            store.n_items(),
            config.item_warning
        );
    }
    let matrix = build_interaction_matrix(&store);
    let sim = solve_similarity(&matrix, &config.solver())?;
    let correlation = top_k_correlation(&sim, config.top_k, config.score_axis);
    let sets = union_candidates(config.top_k, correlation, build_cooccurrence(&store, &seg));
    let lineage = Lineage {
        config_hash: config.candidates_hash(),
        parent_hash: config.corpus_hash(),
    };
    write_artifact(&dir.join("candidates.json"), CANDIDATES_SCHEMA, lineage, &sets)?;
    if save_similarity {
        write_similarity(&dir.join("similarity.bin"), &sim)?;
    }
    Ok(sets)
}

fn load_candidates(dir: &Path, config: &RunConfig, force: bool) -> Result<CandidateSets> {
    let path = dir.join("candidates.json");
    let env: Envelope<CandidateSets> = read_artifact(&path, CANDIDATES_SCHEMA)?;
    check_lineage(&path, &config.candidates_hash(), &env.lineage.config_hash, force)?;
    Ok(env.data)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointConfig {
    mode: Mode,
    seed: u64,
    run: RunConfig,
}

pub fn checkpoint_path(dir: &Path, mode: Mode, seed: u64) -> PathBuf {
    dir.join(format!("{}-seed{seed}.ckpt", mode.name()))
}

/// Trains one model and returns the checkpoint path. Loss curves go to
/// `<mode>-seed<seed>.loss.jsonl` next to the checkpoint.
pub fn cmd_train(
    dir: &Path,
    config: &RunConfig,
    mode: Mode,
    seed: u64,
    trace: Option<&Path>,
    force: bool,
) -> Result<PathBuf> {
    config.validate()?;
    let (store, seg) = load_prepared(dir, config, force)?;
    let candidates = load_candidates(dir, config, force)?;
    let data = TrainData {
        store: &store,
        segmentation: &seg,
        candidates: &candidates,
        operators: config.operators(),
    };
    let train_cfg = config.train(seed);
    let model = init_model(store.n_items(), config.dim, config.encoder, seed)?;
    let mut trace_out = match trace {
        Some(p) => Some(BufWriter::new(File::create(p).map_err(|e| Error::io(p, e))?)),
        None => None,
    };
    let state = TrainOutcome::new(model);
    let state = match mode {
        Mode::Baseline => {
            let epochs = train_cfg.stage1_epochs + train_cfg.stage2_epochs;
            run_stage(&data, &train_cfg, Stage::Pretrain, epochs, state, None)?
        }
        Mode::Tada => {
            let s1 = run_stage(&data, &train_cfg, Stage::Pretrain, train_cfg.stage1_epochs, state, None)?;
            let out = trace_out.as_mut().map(|w| w as &mut dyn Write);
            run_stage(&data, &train_cfg, Stage::Augmented, train_cfg.stage2_epochs, s1, out)?
        }
    };
    if let Some(mut w) = trace_out {
        w.flush().map_err(|e| Error::io("trace", e))?;
    }

    let loss_path = dir.join(format!("{}-seed{seed}.loss.jsonl", mode.name()));
    let mut lines = Vec::new();
    for rec in &state.history {
        serde_json::to_writer(&mut lines, rec).map_err(|e| Error::artifact(&loss_path, e))?;
        lines.push(b'\n');
    }
    fs::write(&loss_path, lines).map_err(|e| Error::io(&loss_path, e))?;

    let path = checkpoint_path(dir, mode, seed);
    let meta = CheckpointMeta {
        config: serde_json::to_value(CheckpointConfig {
            mode,
            seed,
            run: config.clone(),
        })
        .expect("serialisable"),
        config_hash: config.model_hash(mode.name(), seed),
        parent_hash: config.candidates_hash(),
        epoch: state.best_epoch.unwrap_or(state.epochs_run.saturating_sub(1)),
        metrics: serde_json::json!({ "valid_ndcg10": state.best_valid }),
    };
    save_checkpoint(&path, &state.model, &meta)?;
    Ok(path)
}

/// Writes `<checkpoint stem>.report.json` per checkpoint, plus
/// `mean.report.json` when given several.
pub fn cmd_evaluate(
    dir: &Path,
    config: &RunConfig,
    checkpoints: &[PathBuf],
    phase: Phase,
    force: bool,
) -> Result<Vec<(PathBuf, MetricReport)>> {
    config.validate()?;
    let (store, seg) = load_prepared(dir, config, force)?;
    let options = RankOptions {
        filter_seen: config.filter_seen,
    };
    let mut out = Vec::new();
    let mut hashes = Vec::new();
    for ckpt in checkpoints {
        let (header, model) = load_checkpoint(ckpt)?;
        let meta: CheckpointConfig = serde_json::from_value(header.config.clone())
            .map_err(|e| Error::artifact(ckpt, format!("checkpoint config: {e}")))?;
        check_lineage(ckpt, &config.candidates_hash(), &header.parent_hash, force)?;
        check_lineage(ckpt, &config.model_hash(meta.mode.name(), meta.seed), &header.config_hash, force)?;
        if model.n_items != store.n_items() {
            return Err(Error::artifact(
                ckpt,
                format!("model has {} items, store has {}", model.n_items, store.n_items()),
            ));
        }
        let report = eval::evaluate(&model, &store, &seg, phase, &config.ks, options)?;
        let stem = ckpt.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
        let path = dir.join(format!("{stem}.report.json"));
        let lineage = Lineage {
            config_hash: header.config_hash.clone(),
            parent_hash: header.parent_hash.clone(),
        };
        write_artifact(&path, REPORT_FILE_SCHEMA, lineage, &report)?;
        hashes.push(header.config_hash);
        out.push((path, report));
    }
    if out.len() > 1 {
        let reports: Vec<MetricReport> = out.iter().map(|(_, r)| r.clone()).collect();
        let mean = MetricReport::mean(&reports)?;
        let path = dir.join("mean.report.json");
        let lineage = Lineage {
            config_hash: hashes.join("+"),
            parent_hash: config.candidates_hash(),
        };
        write_artifact(&path, REPORT_FILE_SCHEMA, lineage, &mean)?;
        out.push((path, mean));
    }
    Ok(out)
}
