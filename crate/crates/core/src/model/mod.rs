//! Item embeddings, sequence encoders, BCE loss, Adam and the two-stage
//! training loop.

mod adam;
pub mod checkpoint;
mod encoder;
mod loss;
mod train;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng::{self, Purpose};
use crate::{Error, ItemId, Result};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use encoder::{DecayedPooling, EncoderCache, GatedRecurrent, GradBuffer, SequenceEncoder};
pub use loss::{bce_loss, BceGrad};
pub use train::{
    prepare_batch, run_stage, sample_negative, train, trainable_users, train_stage1, train_stage2, BatchLoss, EpochRecord, PreparedBatch,
    PreparedSample, Stage, TrainConfig, TrainData, TrainOutcome,
};

/// Reference encoder choices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    /// Normalised geometric pooling with a learnable decay.
    DecayedPooling,
    /// Single-layer gated recurrent unit; the final hidden state is the output.
    Gru,
}

impl std::str::FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "decayed_pooling" | "pooling" => Ok(EncoderKind::DecayedPooling),
            "gru" => Ok(EncoderKind::Gru),
            _ => Err(Error::Config(format!("unknown encoder {s:?}"))),
        }
    }
}

/// All trainable parameters in one flat vector:
/// `[embeddings ((n_items + 1) x dim, row 0 = padding) | encoder params]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub n_items: usize,
    pub dim: usize,
    pub encoder: EncoderKind,
    pub params: Vec<f64>,
}

impl ModelState {
    pub fn embedding_len(&self) -> usize {
        (self.n_items + 1) * self.dim
    }

    /// Flat offset of the row holding `item`.
    pub fn row_offset(&self, item: ItemId) -> usize {
        (item as usize + 1) * self.dim
    }

    pub fn embedding(&self, item: ItemId) -> &[f64] {
        let o = self.row_offset(item);
        &self.params[o..o + self.dim]
    }

    pub fn padding_row(&self) -> &[f64] {
        &self.params[..self.dim]
    }

    pub fn encoder_params(&self) -> &[f64] {
        &self.params[self.embedding_len()..]
    }

    pub fn check_items(&self, seq: &[ItemId]) -> Result<()> {
        match seq.iter().find(|&&v| v as usize >= self.n_items) {
            Some(&item) => Err(Error::ItemOutOfRange {
                item,
                n_items: self.n_items,
            }),
            None => Ok(()),
        }
    }

    /// Forward pass with the cache needed for backpropagation.
    pub fn forward(&self, seq: &[ItemId]) -> (Vec<f64>, EncoderCache) {
        match self.encoder {
            EncoderKind::DecayedPooling => {
                let (h, c) = DecayedPooling.forward(self, seq);
                (h, EncoderCache::Pooling(c))
            }
            EncoderKind::Gru => {
                let (h, c) = GatedRecurrent.forward(self, seq);
                (h, EncoderCache::Gru(c))
            }
        }
    }

    /// Accumulates parameter gradients for `d_out = dL/dH` into `grad`.
    pub fn backward(&self, seq: &[ItemId], cache: &EncoderCache, d_out: &[f64], grad: &mut GradBuffer) {
        match cache {
            EncoderCache::Pooling(c) => DecayedPooling.backward(self, seq, c, d_out, grad),
            EncoderCache::Gru(c) => GatedRecurrent.backward(self, seq, c, d_out, grad),
        }
    }

    /// Sequence representation `H_u`.
    pub fn encode(&self, seq: &[ItemId]) -> Result<Vec<f64>> {
        if seq.is_empty() {
            return Err(Error::EmptyPrefix);
        }
        self.check_items(seq)?;
        Ok(self.forward(seq).0)
    }

    /// Dot-product scores of `h` against every real item.
    pub fn score_all(&self, h: &[f64]) -> Vec<f64> {
        self.params[self.dim..self.embedding_len()]
            .chunks_exact(self.dim)
            .map(|e| dot(h, e))
            .collect()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Embeddings drawn from `N(0, 1/dim)`, padding row zeroed, encoder
/// parameters initialised by the encoder. Deterministic per seed.
pub fn init_model(n_items: usize, dim: usize, encoder: EncoderKind, seed: u64) -> Result<ModelState> {
    if dim == 0 {
        return Err(Error::Config("embedding dimension must be at least 1".into()));
    }
    if n_items == 0 {
        return Err(Error::Empty("item universe"));
    }
    let mut rng = rng::stream(seed, Purpose::Init, &[0]);
    let normal = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("finite scale");
    let mut params = vec![0.0; dim];
    params.extend((0..n_items * dim).map(|_| normal.sample(&mut rng)));
    let mut enc_rng = rng::stream(seed, Purpose::Init, &[1]);
    match encoder {
        EncoderKind::DecayedPooling => params.extend(DecayedPooling.init_params(dim, &mut enc_rng)),
        EncoderKind::Gru => params.extend(GatedRecurrent.init_params(dim, &mut enc_rng)),
    }
    Ok(ModelState {
        n_items,
        dim,
        encoder,
        params,
    })
}
