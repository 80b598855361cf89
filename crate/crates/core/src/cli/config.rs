//! Flat run configuration. Files are either JSON objects or `key = value`
//! lines; `--set key=value` flags apply last.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::augment::{MixupWeights, OperatorConfig, Pairing};
use crate::corpus::LoadOptions;
use crate::model::{AdamConfig, EncoderKind, TrainConfig};
use crate::simcand::{ScoreAxis, SolverConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    // corpus
    pub delimiter: String,
    pub has_header: bool,
    /// Column indices of user, item and timestamp.
    pub columns: Vec<usize>,
    pub k_core: usize,
    pub max_len: usize,
    /// Users kept by sub-sampling before the final k-core; 0 keeps all.
    pub subsample_users: usize,
    pub beta: f64,
    // simcand
    pub ridge_penalty: f64,
    pub diag_cap: f64,
    pub top_k: usize,
    pub score_axis: ScoreAxis,
    /// Item count above which `candidates` warns about the dense solve.
    pub item_warning: usize,
    // augment
    pub rate_low: f64,
    pub rate_high: f64,
    pub alpha: f64,
    // model
    pub encoder: EncoderKind,
    pub dim: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub patience: usize,
    pub operator_loss: bool,
    pub cross_loss: bool,
    // eval
    pub ks: Vec<usize>,
    pub filter_seen: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let op = OperatorConfig::default();
        let solver = SolverConfig::default();
        let adam = AdamConfig::default();
        let train = TrainConfig::default();
        RunConfig {
            seed: 0,
            delimiter: ",".into(),
            has_header: false,
            columns: vec![0, 1, 2],
            k_core: 5,
            max_len: 50,
            subsample_users: 0,
            beta: 0.5,
            ridge_penalty: solver.ridge_penalty,
            diag_cap: solver.diag_cap,
            top_k: 10,
            score_axis: ScoreAxis::Column,
            item_warning: 20_000,
            rate_low: op.rate_low,
            rate_high: op.rate_high,
            alpha: op.alpha,
            encoder: EncoderKind::Gru,
            dim: 64,
            batch_size: train.batch_size,
            learning_rate: adam.learning_rate,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_eps: adam.eps,
            stage1_epochs: train.stage1_epochs,
            stage2_epochs: train.stage2_epochs,
            patience: train.patience,
            operator_loss: true,
            cross_loss: true,
            ks: vec![5, 10, 20],
            filter_seen: false,
        }
    }
}

/// Keys that feed each pipeline step, used for lineage hashes.
const CORPUS_KEYS: &[&str] = &[
    "seed",
    "delimiter",
    "has_header",
    "columns",
    "k_core",
    "max_len",
    "subsample_users",
    "beta",
];
const CANDIDATE_KEYS: &[&str] = &["ridge_penalty", "diag_cap", "top_k", "score_axis"];

impl RunConfig {
    /// Loads `path` (if any) over the defaults, then applies overrides.
    pub fn resolve(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
        let mut map = match serde_json::to_value(RunConfig::default()).expect("serialisable") {
            Value::Object(m) => m,
            _ => unreachable!("struct serialises to an object"),
        };
        if let Some(path) = path {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            if text.trim_start().starts_with('{') {
                let file: Map<String, Value> =
                    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                for (k, v) in file {
                    if !map.contains_key(&k) {
                        return Err(Error::Config(format!("unknown key {k:?}")));
                    }
                    map.insert(k, v);
                }
            } else {
                for (n, line) in text.lines().enumerate() {
                    let line = line.trim();
                    if line.is_empty() || line.starts_with('#') {
                        continue;
                    }
                    let (k, v) = line
                        .split_once('=')
                        .ok_or_else(|| Error::Config(format!("{} line {}: expected key = value", path.display(), n + 1)))?;
                    set_flat(&mut map, k.trim(), v.trim())?;
                }
            }
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            set_flat(&mut map, k.trim(), v.trim())?;
        }
        let config: RunConfig = serde_json::from_value(Value::Object(map)).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.delimiter.chars().count() != 1 {
            return fail(format!("delimiter must be one character, got {:?}", self.delimiter));
        }
        if self.columns.len() != 3 {
            return fail("columns must list user, item and timestamp indices".into());
        }
        if self.k_core == 0 {
            return fail("k_core must be at least 1".into());
        }
        if self.max_len < 3 {
            return fail(format!("max_len must be at least 3, got {}", self.max_len));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return fail(format!("beta must lie in (0, 1), got {}", self.beta));
        }
        if self.top_k == 0 {
            return fail("top_k must be at least 1".into());
        }
        if self.dim == 0 {
            return fail("dim must be at least 1".into());
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return fail("ks must be non-empty and positive".into());
        }
        self.solver().validate()?;
        self.operators().validate()?;
        self.train(self.seed).validate()
    }

    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            delimiter: self.delimiter.chars().next().unwrap_or(','),
            has_header: self.has_header,
            columns: [self.columns[0], self.columns[1], self.columns[2]],
        }
    }

    pub fn solver(&self) -> SolverConfig {
        SolverConfig {
            ridge_penalty: self.ridge_penalty,
            diag_cap: self.diag_cap,
        }
    }

    pub fn operators(&self) -> OperatorConfig {
        OperatorConfig {
            rate_low: self.rate_low,
            rate_high: self.rate_high,
            alpha: self.alpha,
        }
    }

    pub fn train(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            stage1_epochs: self.stage1_epochs,
            stage2_epochs: self.stage2_epochs,
            adam: AdamConfig {
                learning_rate: self.learning_rate,
                beta1: self.adam_beta1,
                beta2: self.adam_beta2,
                eps: self.adam_eps,
            },
            seed,
            operator_loss: self.operator_loss,
            cross_loss: self.cross_loss,
            mixup: Some(MixupWeights::Beta { alpha: self.alpha }),
            pairing: Pairing::Shuffle,
            patience: self.patience,
        }
    }

    fn section_hash(&self, keys: &[&str], parent: &str) -> String {
        let full = serde_json::to_value(self).expect("serialisable");
        let picked: Map<String, Value> = keys.iter().map(|&k| (k.to_string(), full[k].clone())).collect();
        let mut h = Sha256::new();
        h.update(parent.as_bytes());
        h.update(serde_json::to_vec(&picked).expect("serialisable"));
        hex::encode(&h.finalize()[..8])
    }

    pub fn corpus_hash(&self) -> String {
        self.section_hash(CORPUS_KEYS, "")
    }

    pub fn candidates_hash(&self) -> String {
        self.section_hash(CANDIDATE_KEYS, &self.corpus_hash())
    }

    /// Every key outside the eval group, so checkpoints pin the training
    /// setup.
    pub fn model_hash(&self, mode: &str, seed: u64) -> String {
        let mut c = self.clone();
        c.ks.clear();
        c.filter_seen = false;
        c.seed = seed;
        let mut h = Sha256::new();
        h.update(mode.as_bytes());
        h.update(serde_json::to_vec(&c).expect("serialisable"));
        hex::encode(&h.finalize()[..8])
    }
}

fn set_flat(map: &mut Map<String, Value>, key: &str, raw: &str) -> Result<()> {
    let current = map
        .get(key)
        .ok_or_else(|| Error::Config(format!("unknown key {key:?}")))?;
    let bad = || Error::Config(format!("cannot parse {raw:?} for key {key:?}"));
    let value = match current {
        Value::Bool(_) => Value::Bool(raw.parse().map_err(|_| bad())?),
        Value::Number(_) => {
            let n: f64 = raw.parse().map_err(|_| bad())?;
            if let Ok(i) = raw.parse::<u64>() {
                Value::from(i)
            } else {
                serde_json::Number::from_f64(n).map(Value::Number).ok_or_else(bad)?
            }
        }
        Value::Array(_) => Value::Array(
            raw.trim_matches(|c| c == '[' || c == ']')
                .split(',')
                .map(|s| s.trim().parse::<u64>().map(Value::from).map_err(|_| bad()))
                .collect::<Result<_>>()?,
        ),
        _ => Value::String(raw.trim_matches('"').to_string()),
    };
    map.insert(key.to_string(), value);
    Ok(())
}
