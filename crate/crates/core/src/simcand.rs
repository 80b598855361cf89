//! Item-item similarity from a diagonal-constrained linear autoencoder and
//! per-item augmentation candidate sets.
//!
//! The similarity matrix minimises
//!
//! ```text
//! ||X - X S||_F^2 + ridge * ||S||_F^2   subject to   diag(S) <= cap
//! ```
//!
//! over the binary user-item matrix `X`. The constraint decouples per
//! column, so the KKT conditions give the closed form
//! `S = I - P diag(gamma)` with `P = (X^T X + ridge I)^-1` and
//! `gamma_j = ridge` when `1 - ridge P_jj <= cap`, otherwise
//! `gamma_j = (1 - cap) / P_jj`.
//!
//! `P` is built with an identity ridge term. A variant with `ridge * X`
//! inside the inverse does not typecheck (`|U| x |V|` added to
//! `|V| x |V|`), so the identity is the only consistent reading.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{SequenceStore, Segmentation};
use crate::{Error, ItemId, Result, UserId};

/// Binary user-item matrix over training prefixes, stored as sorted rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryInteractionMatrix {
    n_items: usize,
    rows: Vec<Vec<ItemId>>,
}

impl BinaryInteractionMatrix {
    /// Builds from explicit rows; duplicates collapse to one entry.
    pub fn from_rows(n_items: usize, rows: Vec<Vec<ItemId>>) -> Result<Self> {
        let rows = rows
            .into_iter()
            .map(|mut r| {
                r.sort_unstable();
                r.dedup();
                match r.last() {
                    Some(&v) if v as usize >= n_items => Err(Error::ItemOutOfRange { item: v, n_items }),
                    _ => Ok(r),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BinaryInteractionMatrix { n_items, rows })
    }

    pub fn n_users(&self) -> usize {
        self.rows.len()
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn row(&self, user: UserId) -> &[ItemId] {
        &self.rows[user as usize]
    }

    pub fn get(&self, user: UserId, item: ItemId) -> bool {
        self.rows[user as usize].binary_search(&item).is_ok()
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut x = DMatrix::zeros(self.n_users(), self.n_items);
        for (u, row) in self.rows.iter().enumerate() {
            for &v in row {
                x[(u, v as usize)] = 1.0;
            }
        }
        x
    }

    /// `X^T X`, accumulated from the sparse rows.
    pub fn gram(&self) -> DMatrix<f64> {
        let n = self.n_items;
        let mut g = DMatrix::zeros(n, n);
        for row in &self.rows {
            for &a in row {
                for &b in row {
                    g[(a as usize, b as usize)] += 1.0;
                }
            }
        }
        g
    }
}

pub fn build_interaction_matrix(store: &SequenceStore) -> BinaryInteractionMatrix {
    let rows = (0..store.n_users())
        .map(|u| store.train_prefix(u as UserId).to_vec())
        .collect();
    BinaryInteractionMatrix::from_rows(store.n_items(), rows)
        .expect("store item ids are dense")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub ridge_penalty: f64,
    pub diag_cap: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            ridge_penalty: 10.0,
            diag_cap: 0.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ridge_penalty > 0.0 && self.ridge_penalty.is_finite()) {
            return Err(Error::Config(format!(
                "ridge_penalty must be positive, got {}",
                self.ridge_penalty
            )));
        }
        if !(0.0..1.0).contains(&self.diag_cap) {
            return Err(Error::Config(format!("diag_cap must lie in [0,1), got {}", self.diag_cap)));
        }
        Ok(())
    }
}

/// Which branch of the diagonal rule fixed `gamma_j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaBranch {
    /// The unconstrained solution already satisfies the cap.
    Ridge,
    /// The cap is active and the diagonal sits exactly at it.
    Capped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub gamma: Vec<f64>,
    pub branches: Vec<GammaBranch>,
    pub ridge_count: usize,
    pub capped_count: usize,
    pub max_diagonal: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub values: DMatrix<f64>,
    pub config: SolverConfig,
    pub diagnostics: SolverDiagnostics,
}

impl SimilarityMatrix {
    pub fn n_items(&self) -> usize {
        self.values.nrows()
    }
}

/// Closed-form solve of the diagonal-constrained ridge problem.
pub fn solve_similarity(matrix: &BinaryInteractionMatrix, config: &SolverConfig) -> Result<SimilarityMatrix> {
    config.validate()?;
    let n = matrix.n_items();
    if n == 0 {
        return Err(Error::Empty("interaction matrix has no items"));
    }
    let ridge = config.ridge_penalty;
    let mut a = matrix.gram();
    for j in 0..n {
        a[(j, j)] += ridge;
    }
    let chol = a.clone().cholesky().ok_or_else(|| {
        let diag = a.diagonal();
        Error::Numeric(format!(
            "Cholesky factorisation of X^T X + {ridge} I failed (diagonal range {:.3e}..{:.3e})",
            diag.min(),
            diag.max()
        ))
    })?;
    let p = chol.inverse();

    let mut gamma = Vec::with_capacity(n);
    let mut branches = Vec::with_capacity(n);
    for j in 0..n {
        let pjj = p[(j, j)];
        if !(pjj.is_finite() && pjj > 0.0) {
            return Err(Error::Numeric(format!("non-positive inverse diagonal {pjj} at item {j}")));
        }
        if 1.0 - ridge * pjj <= config.diag_cap {
            gamma.push(ridge);
            branches.push(GammaBranch::Ridge);
        } else {
            gamma.push((1.0 - config.diag_cap) / pjj);
            branches.push(GammaBranch::Capped);
        }
    }

    let mut values = -p;
    for j in 0..n {
        let g = gamma[j];
        values.column_mut(j).iter_mut().for_each(|x| *x *= g);
        values[(j, j)] += 1.0;
    }
    // The capped branch lands on the cap analytically; pin it so rounding
    // cannot push the diagonal above it.
    for j in 0..n {
        if branches[j] == GammaBranch::Capped {
            values[(j, j)] = config.diag_cap;
        }
    }
    if values.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("similarity matrix has non-finite entries".into()));
    }

    let max_diagonal = values.diagonal().max();
    let capped_count = branches.iter().filter(|b| **b == GammaBranch::Capped).count();
    Ok(SimilarityMatrix {
        values,
        config: *config,
        diagnostics: SolverDiagnostics {
            gamma,
            ridge_count: n - capped_count,
            capped_count,
            branches,
            max_diagonal,
        },
    })
}

/// `||X - X S||_F^2 + ridge ||S||_F^2`.
pub fn objective(x: &DMatrix<f64>, s: &DMatrix<f64>, ridge: f64) -> f64 {
    let residual = x - x * s;
    residual.norm_squared() + ridge * s.norm_squared()
}

/// Which slice of the similarity matrix scores "items similar to v".
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreAxis {
    /// `S[., v]`: items whose presence predicts `v`.
    #[default]
    Column,
    /// `S[v, .]`: items predicted by `v`.
    Row,
}

/// The `k` highest-scoring other items for every item. Ties go to the
/// lower id; negative scores stay eligible.
pub fn top_k_correlation(sim: &SimilarityMatrix, k: usize, axis: ScoreAxis) -> Vec<Vec<ItemId>> {
    let n = sim.n_items();
    let m = &sim.values;
    (0..n)
        .into_par_iter()
        .map(|v| {
            let score = |i: usize| match axis {
                ScoreAxis::Column => m[(i, v)],
                ScoreAxis::Row => m[(v, i)],
            };
            let mut cands: Vec<(f64, usize)> = (0..n).filter(|&i| i != v).map(|i| (score(i), i)).collect();
            let cmp = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
            let take = k.min(cands.len());
            if take == 0 {
                return Vec::new();
            }
            if take < cands.len() {
                cands.select_nth_unstable_by(take - 1, cmp);
                cands.truncate(take);
            }
            cands.sort_by(cmp);
            cands.into_iter().map(|(_, i)| i as ItemId).collect()
        })
        .collect()
}

/// First-order co-occurrence sets over training prefixes.
///
/// A head item collects the tail items directly before or after it; a tail
/// item collects every item directly before it. Sets are sorted by id.
pub fn build_cooccurrence(store: &SequenceStore, segmentation: &Segmentation) -> Vec<Vec<ItemId>> {
    let mut sets: Vec<BTreeSet<ItemId>> = vec![BTreeSet::new(); store.n_items()];
    for u in 0..store.n_users() {
        for pair in store.train_prefix(u as UserId).windows(2) {
            let (prev, next) = (pair[0], pair[1]);
            if prev == next {
                continue;
            }
            if segmentation.is_tail_item(next) {
                sets[next as usize].insert(prev);
                if segmentation.is_head_item(prev) {
                    sets[prev as usize].insert(next);
                }
            }
            if segmentation.is_head_item(next) && segmentation.is_tail_item(prev) {
                sets[next as usize].insert(prev);
            }
        }
    }
    sets.into_iter().map(|s| s.into_iter().collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSets {
    pub k: usize,
    pub correlation: Vec<Vec<ItemId>>,
    pub cooccurrence: Vec<Vec<ItemId>>,
    pub candidates: Vec<Vec<ItemId>>,
}

impl CandidateSets {
    pub fn n_items(&self) -> usize {
        self.candidates.len()
    }

    pub fn of(&self, item: ItemId) -> &[ItemId] {
        &self.candidates[item as usize]
    }

    /// Candidate sets with every list empty.
    pub fn empty(n_items: usize, k: usize) -> Self {
        CandidateSets {
            k,
            correlation: vec![Vec::new(); n_items],
            cooccurrence: vec![Vec::new(); n_items],
            candidates: vec![Vec::new(); n_items],
        }
    }
}

/// `c_v = cr_v ∪ cc_v` without `v`, in correlation order followed by new
/// co-occurrence members by id.
pub fn union_candidates(k: usize, correlation: Vec<Vec<ItemId>>, cooccurrence: Vec<Vec<ItemId>>) -> CandidateSets {
    assert_eq!(correlation.len(), cooccurrence.len(), "candidate lists must cover the same items");
    let candidates = correlation
        .iter()
        .zip(&cooccurrence)
        .enumerate()
        .map(|(v, (cr, cc))| {
            let v = v as ItemId;
            let mut seen = BTreeSet::new();
            let mut out = Vec::with_capacity(cr.len() + cc.len());
            for &i in cr {
                if i != v && seen.insert(i) {
                    out.push(i);
                }
            }
            let mut rest: Vec<ItemId> = cc.iter().copied().filter(|&i| i != v && !seen.contains(&i)).collect();
            rest.sort_unstable();
            rest.dedup();
            out.extend(rest);
            out
        })
        .collect();
    CandidateSets {
        k,
        correlation,
        cooccurrence,
        candidates,
    }
}

/// Header of the persisted similarity blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityHeader {
    pub schema: String,
    pub rows: usize,
    pub cols: usize,
    pub layout: String,
    pub config: SolverConfig,
    pub sha256: String,
}

pub const SIMILARITY_SCHEMA: &str = "tada.similarity.v1";

/// Writes `[u64 LE header length][JSON header][row-major f32 LE values]`.
pub fn write_similarity(path: &Path, sim: &SimilarityMatrix) -> Result<()> {
    let n = sim.n_items();
    let mut blob = Vec::with_capacity(n * n * 4);
    for i in 0..n {
        for j in 0..n {
            blob.extend_from_slice(&(sim.values[(i, j)] as f32).to_le_bytes());
        }
    }
    let header = SimilarityHeader {
        schema: SIMILARITY_SCHEMA.into(),
        rows: n,
        cols: n,
        layout: "row_major_f32_le".into(),
        config: sim.config,
        sha256: hex::encode(Sha256::digest(&blob)),
    };
    let header = serde_json::to_vec(&header).map_err(|e| Error::artifact(path, e))?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(&(header.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&header).map_err(io)?;
    w.write_all(&blob).map_err(io)?;
    w.flush().map_err(io)
}

/// Reads a blob written by [`write_similarity`], verifying its checksum.
pub fn read_similarity(path: &Path) -> Result<(SimilarityHeader, Vec<f32>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(|e| Error::io(path, e))?;
    let mut header = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut header).map_err(|e| Error::io(path, e))?;
    let header: SimilarityHeader = serde_json::from_slice(&header).map_err(|e| Error::artifact(path, e))?;
    let mut blob = Vec::new();
    r.read_to_end(&mut blob).map_err(|e| Error::io(path, e))?;
    if blob.len() != header.rows * header.cols * 4 {
        return Err(Error::artifact(path, "blob length does not match header shape"));
    }
    if hex::encode(Sha256::digest(&blob)) != header.sha256 {
        return Err(Error::artifact(path, "checksum mismatch"));
    }
    let values = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, values))
}
