//! Two-stage training: plain next-item BCE, then the same objective plus the
//! operator-mixup and cross-mixup terms.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{adam_step, bce_loss, AdamConfig, AdamState, EncoderCache, GradBuffer, ModelState};
use crate::augment::{
    augment_sequence, mix_with_weight, plan_with, write_trace, AugmentedSample, CrossPlan, MixupWeights,
    Operator, OperatorConfig, Pairing, TraceRecord,
};
use crate::corpus::{PreferenceClass, Segmentation, SequenceStore};
use crate::eval::{self, Phase, RankOptions, Segment};
use crate::rng::{self, Purpose};
use crate::simcand::CandidateSets;
use crate::{Error, ItemId, Result, UserId};

/// Sequences per backward chunk. Chunks are reduced in order, so results do
/// not depend on the thread count.
const GRAD_CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Enables the operator-mixup term in stage 2.
    pub operator_loss: bool,
    /// Enables the cross-mixup term in stage 2.
    pub cross_loss: bool,
    /// Overrides `Beta(alpha, alpha)` mixup weights when set.
    pub mixup: Option<MixupWeights>,
    pub pairing: Pairing,
    /// Epochs without validation NDCG@10 improvement before a stage stops.
    /// Zero disables validation and early stopping.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            stage1_epochs: 50,
            stage2_epochs: 150,
            adam: AdamConfig::default(),
            seed: 0,
            operator_loss: true,
            cross_loss: true,
            mixup: None,
            pairing: Pairing::Shuffle,
            patience: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if let Some(MixupWeights::Fixed(w)) = self.mixup {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::Config(format!("fixed mixup weight must lie in [0, 1], got {w}")));
            }
        }
        if let Some(MixupWeights::Beta { alpha }) = self.mixup {
            if !(alpha > 0.0) {
                return Err(Error::Config(format!("alpha must be positive, got {alpha}")));
            }
        }
        self.adam.validate()
    }

    /// Same schedule with both augmentation terms off.
    pub fn baseline(&self) -> Self {
        TrainConfig {
            operator_loss: false,
            cross_loss: false,
            ..self.clone()
        }
    }
}

/// Everything the trainer reads but never changes.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub store: &'a SequenceStore,
    pub segmentation: &'a Segmentation,
    pub candidates: &'a CandidateSets,
    pub operators: OperatorConfig,
}

impl TrainData<'_> {
    fn mixup(&self, config: &TrainConfig) -> MixupWeights {
        config.mixup.unwrap_or(MixupWeights::Beta {
            alpha: self.operators.alpha,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pretrain,
    Augmented,
}

/// Uniform draw from the items `owned_sorted` does not contain.
pub fn sample_negative<R: Rng + ?Sized>(owned_sorted: &[ItemId], n_items: usize, rng: &mut R) -> Result<ItemId> {
    let free = n_items - owned_sorted.len();
    if free == 0 {
        return Err(Error::NoNegative { n_items });
    }
    // the r-th free id: step past every owned id at or below the candidate
    let mut v = rng.random_range(0..free) as ItemId;
    for &o in owned_sorted {
        if o <= v {
            v += 1;
        } else {
            break;
        }
    }
    Ok(v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub user: UserId,
    pub input: Vec<ItemId>,
    pub target: ItemId,
    pub negative: ItemId,
    pub class: PreferenceClass,
    pub augmentation: Option<AugmentedSample>,
    /// Weight on the original in the operator mixup.
    pub mix_weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedBatch {
    pub samples: Vec<PreparedSample>,
    pub operator_loss: bool,
    /// Pool = originals then their augmented views, in sample order.
    pub cross: Option<CrossPlan>,
}

fn owned_items(store: &SequenceStore, user: UserId) -> Vec<ItemId> {
    let mut owned = store.train_prefix(user).to_vec();
    owned.sort_unstable();
    owned.dedup();
    owned
}

/// Samples prefixes, negatives, augmentations and the cross plan for one
/// batch. Every draw comes from a stream keyed by seed, epoch and user (or
/// batch), so a batch can be rebuilt in isolation.
pub fn prepare_batch(
    data: &TrainData<'_>,
    config: &TrainConfig,
    stage: Stage,
    epoch: usize,
    batch_index: usize,
    users: &[UserId],
) -> Result<PreparedBatch> {
    let operator_loss = stage == Stage::Augmented && config.operator_loss;
    let cross_loss = stage == Stage::Augmented && config.cross_loss;
    let weights = data.mixup(config);
    let store = data.store;
    let e = epoch as u64;
    let samples = users
        .iter()
        .map(|&user| {
            let key = [e, user as u64];
            let train = store.train_prefix(user);
            let t = rng::stream(config.seed, Purpose::Prefix, &key).random_range(1..train.len());
            let input = train[..t].to_vec();
            let target = train[t];
            let negative = sample_negative(
                &owned_items(store, user),
                store.n_items(),
                &mut rng::stream(config.seed, Purpose::Negative, &key),
            )?;
            let class = data.segmentation.classify(&input)?;
            let (augmentation, mix_weight) = if operator_loss || cross_loss {
                let aug = augment_sequence(
                    &input,
                    data.segmentation,
                    data.candidates,
                    &data.operators,
                    store.max_len,
                    &mut rng::stream(config.seed, Purpose::Augment, &key),
                )?;
                let w = weights.sample(&mut rng::stream(config.seed, Purpose::Mixup, &key));
                (Some(aug), w)
            } else {
                (None, 1.0)
            };
            Ok(PreparedSample {
                user,
                input,
                target,
                negative,
                class,
                augmentation,
                mix_weight,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let cross = if cross_loss {
        let classes: Vec<PreferenceClass> = samples.iter().chain(&samples).map(|s| s.class).collect();
        let mut rng = rng::stream(config.seed, Purpose::Cross, &[e, batch_index as u64]);
        Some(plan_with(&classes, config.pairing, weights, &mut rng)?)
    } else {
        None
    };
    Ok(PreparedBatch {
        samples,
        operator_loss,
        cross,
    })
}

/// Mean-reduced loss terms of one batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchLoss {
    pub main: f64,
    pub operator: f64,
    pub cross: f64,
}

impl BatchLoss {
    pub fn total(&self) -> f64 {
        self.main + self.operator + self.cross
    }

    /// Loss and gradient of `batch` at `model`. Pure: the model is not
    /// modified.
    pub fn compute(model: &ModelState, batch: &PreparedBatch) -> Result<(BatchLoss, GradBuffer)> {
        let b = batch.samples.len();
        if b == 0 {
            return Err(Error::Empty("training batch"));
        }
        // encode jobs: originals, then augmented views, then extended originals
        let mut jobs: Vec<&[ItemId]> = batch.samples.iter().map(|s| s.input.as_slice()).collect();
        let mut view_job = vec![usize::MAX; b];
        let mut ext_job = vec![usize::MAX; b];
        for (i, s) in batch.samples.iter().enumerate() {
            if let Some(aug) = &s.augmentation {
                view_job[i] = jobs.len();
                jobs.push(&aug.s_prime);
            }
        }
        for (i, s) in batch.samples.iter().enumerate() {
            match &s.augmentation {
                Some(aug) if batch.operator_loss && aug.operator == Operator::Insert => {
                    ext_job[i] = jobs.len();
                    jobs.push(&aug.s_ext);
                }
                _ => ext_job[i] = i,
            }
        }
        for seq in &jobs {
            if seq.is_empty() {
                return Err(Error::EmptyPrefix);
            }
            model.check_items(seq)?;
        }
        let encoded: Vec<(Vec<f64>, EncoderCache)> = jobs.par_iter().map(|seq| model.forward(seq)).collect();
        let dim = model.dim;
        let mut d_h = vec![vec![0.0; dim]; jobs.len()];
        let mut items = GradBuffer::new(model);
        let mut loss = BatchLoss::default();
        let add = |dst: &mut Vec<f64>, scale: f64, g: &[f64]| {
            for (d, x) in dst.iter_mut().zip(g) {
                *d += scale * x;
            }
        };

        let scale = 1.0 / b as f64;
        for (i, s) in batch.samples.iter().enumerate() {
            let (l, g) = bce_loss(&encoded[i].0, model.embedding(s.target), model.embedding(s.negative))?;
            loss.main += scale * l;
            add(&mut d_h[i], scale, &g.h);
            items.add_row(s.target, scale, &g.pos);
            items.add_row(s.negative, scale, &g.neg);
        }

        if batch.operator_loss {
            for (i, s) in batch.samples.iter().enumerate() {
                let (va, ve) = (view_job[i], ext_job[i]);
                if va == usize::MAX {
                    return Err(Error::Config("operator loss needs augmented samples".into()));
                }
                let w = s.mix_weight;
                let h = mix_with_weight(&encoded[ve].0, &encoded[va].0, w)?;
                let (l, g) = bce_loss(&h, model.embedding(s.target), model.embedding(s.negative))?;
                loss.operator += scale * l;
                add(&mut d_h[ve], scale * w, &g.h);
                add(&mut d_h[va], scale * (1.0 - w), &g.h);
                items.add_row(s.target, scale, &g.pos);
                items.add_row(s.negative, scale, &g.neg);
            }
        }

        if let Some(plan) = &batch.cross {
            if plan.len() != 2 * b || view_job.contains(&usize::MAX) {
                return Err(Error::DimensionMismatch {
                    expected: 2 * b,
                    got: plan.len(),
                });
            }
            let pool_job = |p: usize| if p < b { p } else { view_job[p - b] };
            let pool_sample = |p: usize| &batch.samples[p % b];
            let scale = 1.0 / plan.len() as f64;
            for p in 0..plan.len() {
                let q = plan.partner[p];
                let w = plan.weights[p];
                let (sp, sq) = (pool_sample(p), pool_sample(q));
                let h = mix_with_weight(&encoded[pool_job(p)].0, &encoded[pool_job(q)].0, w)?;
                let pos = mix_with_weight(model.embedding(sp.target), model.embedding(sq.target), w)?;
                let neg = mix_with_weight(model.embedding(sp.negative), model.embedding(sq.negative), w)?;
                let (l, g) = bce_loss(&h, &pos, &neg)?;
                loss.cross += scale * l;
                add(&mut d_h[pool_job(p)], scale * w, &g.h);
                add(&mut d_h[pool_job(q)], scale * (1.0 - w), &g.h);
                items.add_row(sp.target, scale * w, &g.pos);
                items.add_row(sq.target, scale * (1.0 - w), &g.pos);
                items.add_row(sp.negative, scale * w, &g.neg);
                items.add_row(sq.negative, scale * (1.0 - w), &g.neg);
            }
        }

        if !loss.total().is_finite() {
            return Err(Error::Numeric(format!("non-finite batch loss {:?}", loss)));
        }
        let order: Vec<usize> = (0..jobs.len()).collect();
        let partials: Vec<GradBuffer> = order
            .par_chunks(GRAD_CHUNK)
            .map(|chunk| {
                let mut g = GradBuffer::new(model);
                for &j in chunk {
                    model.backward(jobs[j], &encoded[j].1, &d_h[j], &mut g);
                }
                g
            })
            .collect();
        for g in &partials {
            items.merge(g);
        }
        Ok((loss, items))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage: Stage,
    pub loss: BatchLoss,
    pub total: f64,
    pub valid_ndcg10: Option<f64>,
}

/// Model, optimiser state and history after one or both stages.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelState,
    pub adam: AdamState,
    pub history: Vec<EpochRecord>,
    /// Next epoch index; stage 2 continues the stage-1 numbering.
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub best_valid: Option<f64>,
}

impl TrainOutcome {
    pub fn new(model: ModelState) -> Self {
        let n = model.params.len();
        TrainOutcome {
            model,
            adam: AdamState::new(n),
            history: Vec::new(),
            epochs_run: 0,
            best_epoch: None,
            best_valid: None,
        }
    }
}

/// Users with at least two training items, in id order.
pub fn trainable_users(store: &SequenceStore) -> Vec<UserId> {
    (0..store.n_users() as UserId)
        .filter(|&u| store.train_prefix(u).len() >= 2)
        .collect()
}

/// Runs up to `epochs` epochs of `stage`, restoring the best validation
/// parameters at the end when validation is on. `trace` receives one JSON
/// line per augmented sequence.
pub fn run_stage(
    data: &TrainData<'_>,
    config: &TrainConfig,
    stage: Stage,
    epochs: usize,
    mut state: TrainOutcome,
    mut trace: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    config.validate()?;
    data.operators.validate()?;
    if data.candidates.n_items() != data.store.n_items() || data.segmentation.n_items() != data.store.n_items() {
        return Err(Error::DimensionMismatch {
            expected: data.store.n_items(),
            got: data.candidates.n_items(),
        });
    }
    let users = trainable_users(data.store);
    if users.is_empty() {
        return Err(Error::Empty("users with at least two training items"));
    }
    let validate = config.patience > 0 && data.store.is_split();
    let mut stage_best: Option<(f64, Vec<f64>, usize)> = None;
    let mut since_best = 0;
    for _ in 0..epochs {
        let epoch = state.epochs_run;
        let mut order = users.clone();
        order.shuffle(&mut rng::stream(config.seed, Purpose::Shuffle, &[epoch as u64]));
        let mut sum = BatchLoss::default();
        let n_batches = order.len().div_ceil(config.batch_size);
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch = prepare_batch(data, config, stage, epoch, bi, chunk)?;
            if let Some(out) = trace.as_deref_mut() {
                emit_trace(out, epoch, &batch)?;
            }
            let (loss, grad) = BatchLoss::compute(&state.model, &batch)?;
            let dense = grad.to_dense(&state.model);
            adam_step(&mut state.model.params, &dense, &mut state.adam, &config.adam)?;
            sum.main += loss.main;
            sum.operator += loss.operator;
            sum.cross += loss.cross;
        }
        let n = n_batches as f64;
        let mean = BatchLoss {
            main: sum.main / n,
            operator: sum.operator / n,
            cross: sum.cross / n,
        };
        if !state.model.params.iter().all(|x| x.is_finite()) {
            return Err(Error::Numeric(format!("parameters diverged at epoch {epoch}")));
        }
        let valid = if validate {
            let report = eval::evaluate(
                &state.model,
                data.store,
                data.segmentation,
                Phase::Valid,
                &[10],
                RankOptions::default(),
            )?;
            report.ndcg(Segment::Overall, 10)
        } else {
            None
        };
        state.history.push(EpochRecord {
            epoch,
            stage,
            loss: mean,
            total: mean.total(),
            valid_ndcg10: valid,
        });
        state.epochs_run += 1;
        if let Some(v) = valid {
            if stage_best.as_ref().is_none_or(|(b, _, _)| v > *b) {
                stage_best = Some((v, state.model.params.clone(), epoch));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= config.patience {
                    break;
                }
            }
        }
    }
    if let Some((v, params, epoch)) = stage_best {
        state.model.params = params;
        state.best_epoch = Some(epoch);
        state.best_valid = Some(v);
    }
    Ok(state)
}

fn emit_trace(out: &mut dyn Write, epoch: usize, batch: &PreparedBatch) -> Result<()> {
    for s in &batch.samples {
        if let Some(aug) = &s.augmentation {
            let record = TraceRecord {
                epoch,
                user: s.user,
                operator: aug.operator,
                rate: aug.rate,
                indices: aug.indices.clone(),
                chosen: aug.chosen.clone(),
                truncated: aug.truncated,
                mixup_weight: s.mix_weight,
            };
            write_trace(out, &record).map_err(|e| Error::io("trace", e))?;
        }
    }
    Ok(())
}

/// Stage 1 from a fresh model: next-item BCE only.
pub fn train_stage1(data: &TrainData<'_>, model: ModelState, config: &TrainConfig) -> Result<TrainOutcome> {
    run_stage(data, config, Stage::Pretrain, config.stage1_epochs, TrainOutcome::new(model), None)
}

/// Stage 2 continuing from `prior`, optimiser state included.
pub fn train_stage2(data: &TrainData<'_>, prior: TrainOutcome, config: &TrainConfig) -> Result<TrainOutcome> {
    run_stage(data, config, Stage::Augmented, config.stage2_epochs, prior, None)
}

/// Both stages back to back.
pub fn train(data: &TrainData<'_>, model: ModelState, config: &TrainConfig) -> Result<TrainOutcome> {
    let prior = train_stage1(data, model, config)?;
    train_stage2(data, prior, config)
}
