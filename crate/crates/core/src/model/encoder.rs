use std::collections::BTreeMap;

use rand::Rng;

use super::{dot, ModelState};
use crate::rng::StreamRng;
use crate::ItemId;

/// Encoder contract: a non-empty item sequence maps to one `dim`-vector,
/// and `backward` turns `dL/dH` into parameter and embedding gradients.
///
/// Encoder parameters live in `model.encoder_params()`; gradients for them
/// go to `GradBuffer::encoder` at the same offsets.
pub trait SequenceEncoder {
    type Cache;

    fn n_params(&self, dim: usize) -> usize;

    fn init_params(&self, dim: usize, rng: &mut StreamRng) -> Vec<f64>;

    fn forward(&self, model: &ModelState, seq: &[ItemId]) -> (Vec<f64>, Self::Cache);

    fn backward(&self, model: &ModelState, seq: &[ItemId], cache: &Self::Cache, d_out: &[f64], grad: &mut GradBuffer);
}

#[derive(Debug, Clone)]
pub enum EncoderCache {
    Pooling(PoolingCache),
    Gru(GruCache),
}

/// Gradient accumulator: dense for encoder parameters, sparse for
/// embedding rows.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBuffer {
    dim: usize,
    pub encoder: Vec<f64>,
    pub rows: BTreeMap<ItemId, Vec<f64>>,
}

impl GradBuffer {
    pub fn new(model: &ModelState) -> Self {
        GradBuffer {
            dim: model.dim,
            encoder: vec![0.0; model.encoder_params().len()],
            rows: BTreeMap::new(),
        }
    }

    pub fn add_row(&mut self, item: ItemId, scale: f64, v: &[f64]) {
        let dim = self.dim;
        let row = self.rows.entry(item).or_insert_with(|| vec![0.0; dim]);
        for (r, x) in row.iter_mut().zip(v) {
            *r += scale * x;
        }
    }

    /// Adds `other` into `self`, rows in ascending item order.
    pub fn merge(&mut self, other: &GradBuffer) {
        for (a, b) in self.encoder.iter_mut().zip(&other.encoder) {
            *a += b;
        }
        for (&item, row) in &other.rows {
            self.add_row(item, 1.0, row);
        }
    }

    /// Flat gradient in the layout of `ModelState::params`.
    pub fn to_dense(&self, model: &ModelState) -> Vec<f64> {
        let mut out = vec![0.0; model.params.len()];
        for (&item, row) in &self.rows {
            let o = model.row_offset(item);
            out[o..o + self.dim].copy_from_slice(row);
        }
        let e = model.embedding_len();
        out[e..].copy_from_slice(&self.encoder);
        out
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `H = sum_j w_j e_j / sum_j w_j` with `w_j = rho^(n-1-j)` and
/// `rho = sigmoid(theta)`. The most recent item has weight 1.
#[derive(Debug, Clone, Copy, Default)]
pub struct DecayedPooling;

#[derive(Debug, Clone)]
pub struct PoolingCache {
    rho: f64,
    weights: Vec<f64>,
    total: f64,
    out: Vec<f64>,
}

impl SequenceEncoder for DecayedPooling {
    type Cache = PoolingCache;

    fn n_params(&self, _dim: usize) -> usize {
        1
    }

    fn init_params(&self, _dim: usize, _rng: &mut StreamRng) -> Vec<f64> {
        vec![0.0]
    }

    fn forward(&self, model: &ModelState, seq: &[ItemId]) -> (Vec<f64>, PoolingCache) {
        let rho = sigmoid(model.encoder_params()[0]);
        let n = seq.len();
        let weights: Vec<f64> = (0..n).map(|j| rho.powi((n - 1 - j) as i32)).collect();
        let total: f64 = weights.iter().sum();
        let mut out = vec![0.0; model.dim];
        for (&item, &w) in seq.iter().zip(&weights) {
            for (o, e) in out.iter_mut().zip(model.embedding(item)) {
                *o += w * e;
            }
        }
        out.iter_mut().for_each(|o| *o /= total);
        let cache = PoolingCache {
            rho,
            weights,
            total,
            out: out.clone(),
        };
        (out, cache)
    }

    fn backward(&self, model: &ModelState, seq: &[ItemId], cache: &PoolingCache, d_out: &[f64], grad: &mut GradBuffer) {
        let n = seq.len();
        let mut d_rho = 0.0;
        for (j, &item) in seq.iter().enumerate() {
            grad.add_row(item, cache.weights[j] / cache.total, d_out);
            let power = n - 1 - j;
            if power > 0 {
                let dw = power as f64 * cache.rho.powi(power as i32 - 1);
                let e = model.embedding(item);
                let proj: f64 = e.iter().zip(&cache.out).zip(d_out).map(|((e, h), g)| (e - h) * g).sum();
                d_rho += dw / cache.total * proj;
            }
        }
        grad.encoder[0] += d_rho * cache.rho * (1.0 - cache.rho);
    }
}

/// Single-layer GRU with hidden size equal to the embedding size:
///
/// ```text
/// z = sigmoid(Wz x + Uz h + bz)
/// r = sigmoid(Wr x + Ur h + br)
/// n = tanh(Wn x + Un (r * h) + bn)
/// h' = (1 - z) * n + z * h
/// ```
///
/// starting from `h = 0`; the output is the last hidden state.
#[derive(Debug, Clone, Copy, Default)]
pub struct GatedRecurrent;

#[derive(Debug, Clone)]
struct GruStep {
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GruCache {
    steps: Vec<GruStep>,
}

struct GruLayout {
    dim: usize,
}

impl GruLayout {
    fn mat(&self, k: usize) -> std::ops::Range<usize> {
        let d2 = self.dim * self.dim;
        k * d2..(k + 1) * d2
    }

    fn bias(&self, k: usize) -> std::ops::Range<usize> {
        let base = 6 * self.dim * self.dim + k * self.dim;
        base..base + self.dim
    }
}

const WZ: usize = 0;
const WR: usize = 1;
const WN: usize = 2;
const UZ: usize = 3;
const UR: usize = 4;
const UN: usize = 5;
const BZ: usize = 0;
const BR: usize = 1;
const BN: usize = 2;

/// `out += W x` for a row-major square matrix.
fn matvec_add(w: &[f64], x: &[f64], out: &mut [f64]) {
    let d = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        *o += dot(&w[i * d..(i + 1) * d], x);
    }
}

/// `out += W^T g`.
fn matvec_t_add(w: &[f64], g: &[f64], out: &mut [f64]) {
    let d = g.len();
    for (i, &gi) in g.iter().enumerate() {
        if gi == 0.0 {
            continue;
        }
        for (o, wv) in out.iter_mut().zip(&w[i * d..(i + 1) * d]) {
            *o += gi * wv;
        }
    }
}

/// `dW += g x^T`.
fn outer_add(dw: &mut [f64], g: &[f64], x: &[f64]) {
    let d = x.len();
    for (i, &gi) in g.iter().enumerate() {
        if gi == 0.0 {
            continue;
        }
        for (o, xv) in dw[i * d..(i + 1) * d].iter_mut().zip(x) {
            *o += gi * xv;
        }
    }
}

impl SequenceEncoder for GatedRecurrent {
    type Cache = GruCache;

    fn n_params(&self, dim: usize) -> usize {
        6 * dim * dim + 3 * dim
    }

    fn init_params(&self, dim: usize, rng: &mut StreamRng) -> Vec<f64> {
        let bound = 1.0 / (dim as f64).sqrt();
        let mut p: Vec<f64> = (0..6 * dim * dim).map(|_| rng.random_range(-bound..bound)).collect();
        p.extend(std::iter::repeat_n(0.0, 3 * dim));
        p
    }

    fn forward(&self, model: &ModelState, seq: &[ItemId]) -> (Vec<f64>, GruCache) {
        let d = model.dim;
        let p = model.encoder_params();
        let l = GruLayout { dim: d };
        let mut h = vec![0.0; d];
        let mut steps = Vec::with_capacity(seq.len());
        for &item in seq {
            let x = model.embedding(item);
            let mut z = p[l.bias(BZ)].to_vec();
            matvec_add(&p[l.mat(WZ)], x, &mut z);
            matvec_add(&p[l.mat(UZ)], &h, &mut z);
            z.iter_mut().for_each(|v| *v = sigmoid(*v));

            let mut r = p[l.bias(BR)].to_vec();
            matvec_add(&p[l.mat(WR)], x, &mut r);
            matvec_add(&p[l.mat(UR)], &h, &mut r);
            r.iter_mut().for_each(|v| *v = sigmoid(*v));

            let rh: Vec<f64> = r.iter().zip(&h).map(|(a, b)| a * b).collect();
            let mut n = p[l.bias(BN)].to_vec();
            matvec_add(&p[l.mat(WN)], x, &mut n);
            matvec_add(&p[l.mat(UN)], &rh, &mut n);
            n.iter_mut().for_each(|v| *v = v.tanh());

            let h_next: Vec<f64> = (0..d).map(|i| (1.0 - z[i]) * n[i] + z[i] * h[i]).collect();
            steps.push(GruStep { h_prev: h, z, r, n });
            h = h_next;
        }
        (h, GruCache { steps })
    }

    fn backward(&self, model: &ModelState, seq: &[ItemId], cache: &GruCache, d_out: &[f64], grad: &mut GradBuffer) {
        let d = model.dim;
        let p = model.encoder_params();
        let l = GruLayout { dim: d };
        let mut dh = d_out.to_vec();
        for (t, step) in cache.steps.iter().enumerate().rev() {
            let x = model.embedding(seq[t]);
            let GruStep { h_prev, z, r, n } = step;
            let mut dh_prev: Vec<f64> = (0..d).map(|i| dh[i] * z[i]).collect();
            let da_n: Vec<f64> = (0..d).map(|i| dh[i] * (1.0 - z[i]) * (1.0 - n[i] * n[i])).collect();
            let da_z: Vec<f64> = (0..d)
                .map(|i| dh[i] * (h_prev[i] - n[i]) * z[i] * (1.0 - z[i]))
                .collect();

            let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
            let mut d_rh = vec![0.0; d];
            matvec_t_add(&p[l.mat(UN)], &da_n, &mut d_rh);
            let da_r: Vec<f64> = (0..d)
                .map(|i| d_rh[i] * h_prev[i] * r[i] * (1.0 - r[i]))
                .collect();
            for i in 0..d {
                dh_prev[i] += d_rh[i] * r[i];
            }

            let mut dx = vec![0.0; d];
            for (w, u, b, da, h_in) in [
                (WN, UN, BN, &da_n, &rh),
                (WZ, UZ, BZ, &da_z, h_prev),
                (WR, UR, BR, &da_r, h_prev),
            ] {
                outer_add(&mut grad.encoder[l.mat(w)], da, x);
                outer_add(&mut grad.encoder[l.mat(u)], da, h_in);
                for (g, v) in grad.encoder[l.bias(b)].iter_mut().zip(da.iter()) {
                    *g += v;
                }
                matvec_t_add(&p[l.mat(w)], da, &mut dx);
                if u != UN {
                    matvec_t_add(&p[l.mat(u)], da, &mut dh_prev);
                }
            }
            grad.add_row(seq[t], 1.0, &dx);
            dh = dh_prev;
        }
    }
}
