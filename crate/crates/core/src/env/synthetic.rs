//! Synthetic catalog and logs with planted semantic structure.
//!
//! Items fall into `G` well-separated embedding clusters. Each user prefers
//! one cluster and clicks its items with probability
//! `p_preferred · (0.4 + 0.6·q)`, where `q ∈ [0, 1]` is a per-item quality
//! that is also written faintly into the item's embedding. Items of other
//! clusters are clicked with probability `p_other`. Logged slates come from a
//! popularity-skewed exposure policy, so logged positives over-represent
//! popular items regardless of their quality.

use std::collections::BTreeMap;

use rand::seq::index::sample_weighted;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{ClickModel, EnvError, LogRecord, SessionState, RECORD_HISTORY_LEN};
use crate::tokenizer::ItemEmbedding;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub items: usize,
    pub clusters: usize,
    pub dim: usize,
    pub users: usize,
    pub records_per_user: usize,
    pub slate_len: usize,
    /// Scale of the cluster centers.
    pub separation: f64,
    /// Per-coordinate standard deviation around a center.
    pub spread: f64,
    /// Length of the quality direction written into embeddings.
    pub quality_weight: f64,
    pub p_preferred: f64,
    pub p_other: f64,
    /// Zipf exponent of the logging policy's exposure weights.
    pub popularity_exponent: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            items: 300,
            clusters: 8,
            dim: 16,
            users: 200,
            records_per_user: 10,
            slate_len: 10,
            separation: 4.0,
            spread: 0.3,
            quality_weight: 1.0,
            p_preferred: 0.9,
            p_other: 0.05,
            popularity_exponent: 1.0,
            seed: 0,
        }
    }
}

/// Ground-truth click probabilities of the generator.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedClickModel {
    item_cluster: BTreeMap<u64, usize>,
    item_quality: BTreeMap<u64, f64>,
    user_cluster: BTreeMap<u64, usize>,
    p_preferred: f64,
    p_other: f64,
}

impl PlantedClickModel {
    pub fn prob(&self, user_cluster: usize, item: u64) -> Option<f64> {
        let c = *self.item_cluster.get(&item)?;
        let q = self.item_quality[&item];
        Some(if c == user_cluster {
            self.p_preferred * (0.4 + 0.6 * q)
        } else {
            self.p_other
        })
    }

    pub fn user_cluster(&self, user: u64) -> Option<usize> {
        self.user_cluster.get(&user).copied()
    }

    pub fn item_cluster(&self, item: u64) -> Option<usize> {
        self.item_cluster.get(&item).copied()
    }
}

impl ClickModel for PlantedClickModel {
    fn click_probs(&self, session: &SessionState, slate: &[u64]) -> Result<Vec<f64>, EnvError> {
        let c = self.user_cluster(session.user_id).ok_or_else(|| {
            EnvError::Data(format!(
                "user {} is not in the synthetic population",
                session.user_id
            ))
        })?;
        slate
            .iter()
            .map(|&i| {
                self.prob(c, i)
                    .ok_or_else(|| EnvError::Data(format!("unknown item {i}")))
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub embeddings: Vec<ItemEmbedding>,
    pub records: Vec<LogRecord>,
    pub click_model: PlantedClickModel,
}

impl SyntheticData {
    pub fn features(&self) -> BTreeMap<u64, Vec<f64>> {
        self.embeddings
            .iter()
            .map(|e| (e.item_id, e.vector.clone()))
            .collect()
    }

    pub fn users(&self) -> Vec<u64> {
        self.click_model.user_cluster.keys().copied().collect()
    }
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Generates the catalog, users and logged records for `config`.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticData, EnvError> {
    let c = config;
    if c.clusters == 0 || c.items < c.clusters || c.dim == 0 {
        return Err(EnvError::Contract(format!(
            "need items ≥ clusters ≥ 1 and dim ≥ 1, got {} items, {} clusters, dim {}",
            c.items, c.clusters, c.dim
        )));
    }
    if c.slate_len == 0 || c.slate_len > c.items {
        return Err(EnvError::Contract(format!(
            "logged slate length {} invalid for {} items",
            c.slate_len, c.items
        )));
    }
    for p in [c.p_preferred, c.p_other] {
        if !(0.0..=1.0).contains(&p) {
            return Err(EnvError::Contract(format!(
                "click probability {p} outside [0, 1]"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let centers: Vec<Vec<f64>> = (0..c.clusters)
        .map(|_| {
            (0..c.dim)
                .map(|_| c.separation * gaussian(&mut rng))
                .collect()
        })
        .collect();
    let mut quality_dir: Vec<f64> = (0..c.dim).map(|_| gaussian(&mut rng)).collect();
    let norm = quality_dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    quality_dir.iter_mut().for_each(|v| *v /= norm);

    let mut embeddings = Vec::with_capacity(c.items);
    let mut item_cluster = BTreeMap::new();
    let mut item_quality = BTreeMap::new();
    for i in 0..c.items {
        let id = i as u64;
        let g = i % c.clusters;
        let q: f64 = rng.random();
        let vector = (0..c.dim)
            .map(|j| {
                centers[g][j]
                    + c.spread * gaussian(&mut rng)
                    + c.quality_weight * (q - 0.5) * quality_dir[j]
            })
            .collect();
        embeddings.push(ItemEmbedding {
            item_id: id,
            vector,
        });
        item_cluster.insert(id, g);
        item_quality.insert(id, q);
    }

    let mut ranks: Vec<usize> = (1..=c.items).collect();
    for i in (1..ranks.len()).rev() {
        ranks.swap(i, rng.random_range(0..=i));
    }
    let exposure: Vec<f64> = ranks
        .iter()
        .map(|&r| (r as f64).powf(-c.popularity_exponent))
        .collect();

    let user_cluster: BTreeMap<u64, usize> =
        (0..c.users).map(|u| (u as u64, u % c.clusters)).collect();
    let click_model = PlantedClickModel {
        item_cluster,
        item_quality,
        user_cluster,
        p_preferred: c.p_preferred,
        p_other: c.p_other,
    };

    let mut records = Vec::with_capacity(c.users * c.records_per_user);
    for (&user, &g) in &click_model.user_cluster {
        let mut positives: Vec<u64> = Vec::new();
        for _ in 0..c.records_per_user {
            let picked = sample_weighted(&mut rng, c.items, |i| exposure[i], c.slate_len)
                .map_err(|e| EnvError::Contract(format!("exposure sampling failed: {e}")))?;
            let slate: Vec<u64> = picked.iter().map(|i| i as u64).collect();
            let labels: Vec<bool> = slate
                .iter()
                .map(|&i| rng.random_bool(click_model.prob(g, i).expect("generated item")))
                .collect();
            let start = positives.len().saturating_sub(RECORD_HISTORY_LEN);
            records.push(LogRecord {
                user_id: user,
                history: positives[start..].to_vec(),
                slate: slate.clone(),
                labels: labels.clone(),
            });
            positives.extend(
                slate
                    .iter()
                    .zip(&labels)
                    .filter(|(_, y)| **y)
                    .map(|(i, _)| *i),
            );
        }
    }
    Ok(SyntheticData {
        embeddings,
        records,
        click_model,
    })
}
