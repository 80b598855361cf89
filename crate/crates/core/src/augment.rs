//! Tail-aware sequence operators and representation mixup.
//!
//! Random draws happen in a fixed order so a recorded trace can be replayed
//! step by step:
//!
//! * [`t_substitute`] draws the rate `p`, then walks the sequence. Each head
//!   position draws one selection number; a selected position with a
//!   non-empty candidate set draws one candidate index. Tail positions draw
//!   nothing.
//! * [`t_insert`] does the same over tail positions.
//! * [`plan_cross_batch`] shuffles the head-preferring group, then the
//!   tail-preferring group, then draws one weight per pool position.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::corpus::{PreferenceClass, Segmentation};
use crate::simcand::CandidateSets;
use crate::{Error, ItemId, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatorConfig {
    /// Lower bound `a` of the selection rate.
    pub rate_low: f64,
    /// Upper bound `b` of the selection rate.
    pub rate_high: f64,
    /// Shape of the symmetric Beta distribution for mixup weights.
    pub alpha: f64,
}

impl Default for OperatorConfig {
    fn default() -> Self {
        OperatorConfig {
            rate_low: 0.2,
            rate_high: 0.8,
            alpha: 0.4,
        }
    }
}

impl OperatorConfig {
    pub fn validate(&self) -> Result<()> {
        let (a, b) = (self.rate_low, self.rate_high);
        if !(0.0 < a && a < b && b < 1.0) {
            return Err(Error::Config(format!("rate bounds need 0 < a < b < 1, got a={a}, b={b}")));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operator {
    Substitute,
    Insert,
}

/// Output of one operator call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedSample {
    pub operator: Operator,
    /// Augmented sequence.
    pub s_prime: Vec<ItemId>,
    /// Extended original (insert only; equals the input for substitute).
    pub s_ext: Vec<ItemId>,
    /// Positions in the input sequence that were augmented.
    pub indices: Vec<usize>,
    /// Item placed at each augmented position, aligned with `indices`.
    pub chosen: Vec<ItemId>,
    /// Selection rate drawn for this call.
    pub rate: f64,
    /// Oldest positions dropped from both outputs to respect the maximum length.
    pub truncated: usize,
}

/// Selection rate `p ~ Uniform[a, b)`.
pub fn sample_rate<R: Rng + ?Sized>(config: &OperatorConfig, rng: &mut R) -> f64 {
    rng.random_range(config.rate_low..config.rate_high)
}

/// Picks insert with probability `1 - len/max_len`, substitute otherwise.
pub fn select_operator<R: Rng + ?Sized>(seq_len: usize, max_len: usize, rng: &mut R) -> Result<Operator> {
    if seq_len == 0 || seq_len > max_len {
        return Err(Error::Config(format!(
            "operator selection needs 1 <= len <= {max_len}, got {seq_len}"
        )));
    }
    let p_insert = 1.0 - seq_len as f64 / max_len as f64;
    let u: f64 = rng.random();
    Ok(if u < p_insert { Operator::Insert } else { Operator::Substitute })
}

/// Replaces each selected head item with a random member of its candidate set.
pub fn t_substitute<R: Rng + ?Sized>(
    seq: &[ItemId],
    segmentation: &Segmentation,
    candidates: &CandidateSets,
    config: &OperatorConfig,
    rng: &mut R,
) -> AugmentedSample {
    let rate = sample_rate(config, rng);
    substitute_with_rate(seq, segmentation, candidates, rate, rng)
}

pub(crate) fn substitute_with_rate<R: Rng + ?Sized>(
    seq: &[ItemId],
    segmentation: &Segmentation,
    candidates: &CandidateSets,
    rate: f64,
    rng: &mut R,
) -> AugmentedSample {
    let mut s_prime = seq.to_vec();
    let mut indices = Vec::new();
    let mut chosen = Vec::new();
    for (idx, &item) in seq.iter().enumerate() {
        if !segmentation.is_head_item(item) {
            continue;
        }
        let selected = rng.random::<f64>() < rate;
        let pool = candidates.of(item);
        if selected && !pool.is_empty() {
            let pick = pool[rng.random_range(0..pool.len())];
            s_prime[idx] = pick;
            indices.push(idx);
            chosen.push(pick);
        }
    }
    AugmentedSample {
        operator: Operator::Substitute,
        s_prime,
        s_ext: seq.to_vec(),
        indices,
        chosen,
        rate,
        truncated: 0,
    }
}

/// Inserts a candidate before each selected tail item and duplicates that
/// tail item in the extended original, so both outputs stay aligned.
pub fn t_insert<R: Rng + ?Sized>(
    seq: &[ItemId],
    segmentation: &Segmentation,
    candidates: &CandidateSets,
    config: &OperatorConfig,
    max_len: usize,
    rng: &mut R,
) -> AugmentedSample {
    let rate = sample_rate(config, rng);
    insert_with_rate(seq, segmentation, candidates, rate, max_len, rng)
}

pub(crate) fn insert_with_rate<R: Rng + ?Sized>(
    seq: &[ItemId],
    segmentation: &Segmentation,
    candidates: &CandidateSets,
    rate: f64,
    max_len: usize,
    rng: &mut R,
) -> AugmentedSample {
    let mut s_prime = Vec::with_capacity(seq.len() * 2);
    let mut s_ext = Vec::with_capacity(seq.len() * 2);
    let mut indices = Vec::new();
    let mut chosen = Vec::new();
    for (idx, &item) in seq.iter().enumerate() {
        if segmentation.is_tail_item(item) {
            let selected = rng.random::<f64>() < rate;
            let pool = candidates.of(item);
            if selected && !pool.is_empty() {
                let pick = pool[rng.random_range(0..pool.len())];
                s_prime.push(pick);
                s_ext.push(item);
                indices.push(idx);
                chosen.push(pick);
            }
        }
        s_prime.push(item);
        s_ext.push(item);
    }
    let truncated = s_prime.len().saturating_sub(max_len);
    if truncated > 0 {
        s_prime.drain(..truncated);
        s_ext.drain(..truncated);
    }
    AugmentedSample {
        operator: Operator::Insert,
        s_prime,
        s_ext,
        indices,
        chosen,
        rate,
        truncated,
    }
}

/// Chooses an operator by sequence length and applies it.
pub fn augment_sequence<R: Rng + ?Sized>(
    seq: &[ItemId],
    segmentation: &Segmentation,
    candidates: &CandidateSets,
    config: &OperatorConfig,
    max_len: usize,
    rng: &mut R,
) -> Result<AugmentedSample> {
    Ok(match select_operator(seq.len(), max_len, rng)? {
        Operator::Substitute => t_substitute(seq, segmentation, candidates, config, rng),
        Operator::Insert => t_insert(seq, segmentation, candidates, config, max_len, rng),
    })
}

/// Source of mixup weights. `Fixed` exists for ablations and degenerate
/// equivalence checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixupWeights {
    Beta { alpha: f64 },
    Fixed(f64),
}

impl MixupWeights {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            MixupWeights::Beta { alpha } => Beta::new(alpha, alpha)
                .expect("alpha validated positive")
                .sample(rng),
            MixupWeights::Fixed(w) => w,
        }
    }
}

/// `lambda * h + (1 - lambda) * h_prime`.
pub fn mix_with_weight(h: &[f64], h_prime: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if h.len() != h_prime.len() {
        return Err(Error::DimensionMismatch {
            expected: h.len(),
            got: h_prime.len(),
        });
    }
    Ok(h.iter()
        .zip(h_prime)
        .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
        .collect())
}

/// Mixes two representations with `lambda ~ Beta(alpha, alpha)` and returns
/// the weight alongside the result.
pub fn mix_representations<R: Rng + ?Sized>(
    h: &[f64],
    h_prime: &[f64],
    alpha: f64,
    rng: &mut R,
) -> Result<(Vec<f64>, f64)> {
    if !(alpha > 0.0) {
        return Err(Error::Config(format!("alpha must be positive, got {alpha}")));
    }
    let lambda = MixupWeights::Beta { alpha }.sample(rng);
    Ok((mix_with_weight(h, h_prime, lambda)?, lambda))
}

/// How cross-batch partners are chosen inside each class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    #[default]
    Shuffle,
    Identity,
}

/// Within-class partner assignment and weights for one batch pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossPlan {
    pub classes: Vec<PreferenceClass>,
    /// `partner[i]` is the pool position mixed into position `i`.
    pub partner: Vec<usize>,
    pub weights: Vec<f64>,
}

impl CrossPlan {
    pub fn len(&self) -> usize {
        self.partner.len()
    }

    pub fn is_empty(&self) -> bool {
        self.partner.is_empty()
    }

    pub fn identity(classes: Vec<PreferenceClass>, weight: f64) -> Self {
        let n = classes.len();
        CrossPlan {
            classes,
            partner: (0..n).collect(),
            weights: vec![weight; n],
        }
    }
}

/// Shuffles each preference class independently and draws one weight per
/// position. Positions never pair across classes.
pub fn plan_cross_batch<R: Rng + ?Sized>(classes: &[PreferenceClass], alpha: f64, rng: &mut R) -> Result<CrossPlan> {
    if !(alpha > 0.0) {
        return Err(Error::Config(format!("alpha must be positive, got {alpha}")));
    }
    plan_with(classes, Pairing::Shuffle, MixupWeights::Beta { alpha }, rng)
}

pub(crate) fn plan_with<R: Rng + ?Sized>(
    classes: &[PreferenceClass],
    pairing: Pairing,
    weights: MixupWeights,
    rng: &mut R,
) -> Result<CrossPlan> {
    if classes.is_empty() {
        return Err(Error::Empty("cross augmentation batch"));
    }
    let mut partner: Vec<usize> = (0..classes.len()).collect();
    if pairing == Pairing::Shuffle {
        for class in [PreferenceClass::HeadPreferring, PreferenceClass::TailPreferring] {
            let group: Vec<usize> = (0..classes.len()).filter(|&i| classes[i] == class).collect();
            let mut shuffled = group.clone();
            shuffled.shuffle(rng);
            for (&pos, &mate) in group.iter().zip(&shuffled) {
                partner[pos] = mate;
            }
        }
    }
    let weights = (0..classes.len()).map(|_| weights.sample(rng)).collect();
    Ok(CrossPlan {
        classes: classes.to_vec(),
        partner,
        weights,
    })
}

/// Mixed representations and positive/negative embeddings for a pool.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossMixed {
    pub h: Vec<Vec<f64>>,
    pub pos: Vec<Vec<f64>>,
    pub neg: Vec<Vec<f64>>,
}

/// Applies a plan to representations and to their positive and negative
/// item embeddings with the same partners and weights.
pub fn apply_cross_mixup(
    plan: &CrossPlan,
    h: &[Vec<f64>],
    pos: &[Vec<f64>],
    neg: &[Vec<f64>],
) -> Result<CrossMixed> {
    let n = plan.len();
    for len in [h.len(), pos.len(), neg.len()] {
        if len != n {
            return Err(Error::DimensionMismatch { expected: n, got: len });
        }
    }
    let mix = |rows: &[Vec<f64>]| -> Result<Vec<Vec<f64>>> {
        (0..n)
            .map(|i| mix_with_weight(&rows[i], &rows[plan.partner[i]], plan.weights[i]))
            .collect()
    };
    Ok(CrossMixed {
        h: mix(h)?,
        pos: mix(pos)?,
        neg: mix(neg)?,
    })
}

/// One audit line per augmented sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub epoch: usize,
    pub user: u32,
    pub operator: Operator,
    pub rate: f64,
    pub indices: Vec<usize>,
    pub chosen: Vec<ItemId>,
    pub truncated: usize,
    pub mixup_weight: f64,
}

pub fn write_trace<W: Write + ?Sized>(out: &mut W, record: &TraceRecord) -> std::io::Result<()> {
    serde_json::to_writer(&mut *out, record)?;
    out.write_all(b"\n")
}
