//! Seeded long-tail interaction logs for tests, examples and smoke runs.
//!
//! Items are spread over clusters; a user walks a Markov chain over
//! clusters and draws items inside the current cluster by a Zipf law, with
//! an occasional deterministic "follow-up" item so that order carries
//! signal.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Interaction;
use crate::rng::{self, Purpose};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_clusters: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Zipf exponent of within-cluster popularity.
    pub zipf: f64,
    /// Probability of staying in the current cluster.
    pub stay: f64,
    /// Probability of taking the follow-up of the previous item.
    pub follow: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_users: 200,
            n_items: 120,
            n_clusters: 6,
            min_len: 6,
            max_len: 20,
            zipf: 1.1,
            stay: 0.8,
            follow: 0.5,
            seed: 0,
        }
    }
}

/// Generates a log whose users and items are named by decimal ids.
pub fn generate(config: &SyntheticConfig) -> Result<Vec<Interaction>> {
    let c = config;
    if c.n_clusters == 0 || c.n_items < c.n_clusters || c.min_len == 0 || c.min_len > c.max_len {
        return Err(Error::Config(format!("invalid synthetic config {c:?}")));
    }
    for p in [c.stay, c.follow] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!("probability out of range: {p}")));
        }
    }
    // cluster k owns items k, k + C, k + 2C, ...; lower members are more popular
    let members: Vec<Vec<u32>> = (0..c.n_clusters)
        .map(|k| (k..c.n_items).step_by(c.n_clusters).map(|v| v as u32).collect())
        .collect();
    let pickers: Vec<WeightedIndex<f64>> = members
        .iter()
        .map(|m| {
            WeightedIndex::new((0..m.len()).map(|r| 1.0 / ((r + 1) as f64).powf(c.zipf)))
                .map_err(|e| Error::Config(e.to_string()))
        })
        .collect::<Result<_>>()?;
    let follow_up = |v: u32| -> u32 {
        let k = v as usize % c.n_clusters;
        let m = &members[k];
        let pos = m.iter().position(|&x| x == v).expect("member of own cluster");
        m[(pos + 1) % m.len()]
    };
    let mut log = Vec::new();
    for u in 0..c.n_users {
        let mut rng = rng::stream(c.seed, Purpose::Synthetic, &[u as u64]);
        let len = rng.random_range(c.min_len..=c.max_len);
        let mut cluster = rng.random_range(0..c.n_clusters);
        let mut prev: Option<u32> = None;
        for t in 0..len {
            if rng.random::<f64>() >= c.stay {
                cluster = (cluster + 1) % c.n_clusters;
            }
            let item = match prev {
                Some(p) if rng.random::<f64>() < c.follow => follow_up(p),
                _ => members[cluster][pickers[cluster].sample(&mut rng)],
            };
            cluster = item as usize % c.n_clusters;
            prev = Some(item);
            log.push(Interaction::new(u.to_string(), item.to_string(), t as i64));
        }
    }
    Ok(log)
}
