//! Tail-aware data augmentation for sequential recommendation.
//!
//! The pipeline runs in four steps:
//!
//! 1. [`corpus`] ingests an interaction log, applies k-core filtering, builds
//!    per-user chronological sequences with a leave-one-out split, and
//!    segments users and items into head and tail groups.
//! 2. [`simcand`] solves a diagonal-constrained ridge regression for an
//!    item-item similarity matrix and combines its top-K neighbours with
//!    first-order co-occurrence into per-item candidate sets.
//! 3. [`augment`] implements the tail-aware substitute/insert operators,
//!    representation mixup, and class-aware cross-batch mixup.
//! 4. [`model`] trains a sequence encoder with BCE in two stages, and
//!    [`eval`] ranks every item to report HR@K, NDCG@K and tail coverage
//!    per head/tail segment.
//!
//! The [`cli`] module wires these steps into the `tada` binary.

pub mod augment;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod model;
pub mod rng;
pub mod simcand;
pub mod synthetic;

pub use error::{Error, Result};

/// Dense item index in `0..n_items`, assigned in ascending raw-id order.
pub type ItemId = u32;
/// Dense user index in `0..n_users`, assigned in ascending raw-id order.
pub type UserId = u32;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/corpus.md")]
    mod corpus {}
    #[doc = include_str!("../../../book/src/similarity.md")]
    mod similarity {}
    #[doc = include_str!("../../../book/src/augmentation.md")]
    mod augmentation {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
