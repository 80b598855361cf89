//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tada::corpus::Interaction;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `||X - X S||_F^2 + ridge ||S||_F^2`, written out element by element.
pub fn objective_naive(x: &DMatrix<f64>, s: &DMatrix<f64>, ridge: f64) -> f64 {
    let (u, v) = x.shape();
    let mut total = 0.0;
    for r in 0..u {
        for c in 0..v {
            let pred: f64 = (0..v).map(|k| x[(r, k)] * s[(k, c)]).sum();
            total += (x[(r, c)] - pred).powi(2);
        }
    }
    total + ridge * s.iter().map(|e| e * e).sum::<f64>()
}

/// FISTA with adaptive restart on the diagonal-capped ridge objective.
/// The feasible set `{S : S_jj <= cap}` has a closed-form projection.
pub fn projected_gradient(x: &DMatrix<f64>, ridge: f64, cap: f64, max_iter: usize) -> DMatrix<f64> {
    let v = x.ncols();
    let g = x.transpose() * x;
    let mut a = g.clone();
    for j in 0..v {
        a[(j, j)] += ridge;
    }
    let lip = 2.0 * a.clone().symmetric_eigenvalues().max();
    let step = 1.0 / lip;
    let project = |mut s: DMatrix<f64>| {
        for j in 0..v {
            if s[(j, j)] > cap {
                s[(j, j)] = cap;
            }
        }
        s
    };
    let grad = |s: &DMatrix<f64>| (&a * s - &g) * 2.0;
    let f = |s: &DMatrix<f64>| objective_naive(x, s, ridge);
    let mut s = DMatrix::zeros(v, v);
    let mut y = s.clone();
    let mut t: f64 = 1.0;
    let mut f_prev = f(&s);
    for _ in 0..max_iter {
        let next = project(&y - grad(&y) * step);
        let f_next = f(&next);
        if f_next > f_prev {
            // restart momentum
            y = s.clone();
            t = 1.0;
            continue;
        }
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        y = &next + (&next - &s) * ((t - 1.0) / t_next);
        let done = (f_prev - f_next).abs() <= 1e-15 * f_prev.max(1.0);
        s = next;
        t = t_next;
        f_prev = f_next;
        if done {
            break;
        }
    }
    s
}

pub fn random_binary(rng: &mut ChaCha8Rng, users: usize, items: usize, density: f64) -> DMatrix<f64> {
    DMatrix::from_fn(users, items, |_, _| if rng.random::<f64>() < density { 1.0 } else { 0.0 })
}

/// Rank by sorting the whole list; ties are placed ahead of the target.
pub fn brute_rank(scores: &[f64], target: usize) -> usize {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap()
            .then_with(|| (a == target).cmp(&(b == target)))
    });
    order.iter().position(|&i| i == target).unwrap() + 1
}

pub fn brute_hit(ranks: &[usize], k: usize) -> f64 {
    let mut hits = 0.0;
    for &r in ranks {
        if r <= k {
            hits += 1.0;
        }
    }
    hits / ranks.len() as f64
}

pub fn brute_ndcg(ranks: &[usize], k: usize) -> f64 {
    let mut total = 0.0;
    for &r in ranks {
        // one relevant item: ideal DCG is 1
        let mut dcg = 0.0;
        for pos in 1..=k {
            if pos == r {
                dcg += 1.0 / (pos as f64 + 1.0).log2();
            }
        }
        total += dcg;
    }
    total / ranks.len() as f64
}

/// Top-k by full sort (descending score, ascending id).
pub fn brute_top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    order.truncate(k);
    order
}

pub fn brute_tcov(lists: &[Vec<usize>], tail: &BTreeSet<usize>) -> f64 {
    let mut seen = BTreeSet::new();
    for l in lists {
        for v in l {
            if tail.contains(v) {
                seen.insert(*v);
            }
        }
    }
    seen.len() as f64 / tail.len() as f64
}

/// Peels one violating user or item at a time until none remain.
pub fn brute_k_core(log: &[Interaction], k: usize) -> Vec<Interaction> {
    let mut cur: Vec<Interaction> = log.to_vec();
    loop {
        let mut users: BTreeMap<&str, usize> = BTreeMap::new();
        let mut items: BTreeMap<&str, usize> = BTreeMap::new();
        for i in &cur {
            *users.entry(&i.user).or_default() += 1;
            *items.entry(&i.item).or_default() += 1;
        }
        let bad_user = users.iter().find(|(_, &c)| c < k).map(|(u, _)| u.to_string());
        let bad_item = items.iter().find(|(_, &c)| c < k).map(|(v, _)| v.to_string());
        match (bad_user, bad_item) {
            (Some(u), _) => cur.retain(|i| i.user != u),
            (None, Some(v)) => cur.retain(|i| i.item != v),
            (None, None) => return cur,
        }
    }
}

pub fn random_log(rng: &mut ChaCha8Rng, users: usize, items: usize, len: std::ops::Range<usize>) -> Vec<Interaction> {
    let mut log = Vec::new();
    for u in 0..users {
        let n = rng.random_range(len.clone());
        for t in 0..n {
            // skewed item popularity
            let x: f64 = rng.random();
            let v = ((x * x * x) * items as f64) as usize;
            log.push(Interaction::new(format!("u{u}"), format!("{v}"), t as i64));
        }
    }
    log
}
