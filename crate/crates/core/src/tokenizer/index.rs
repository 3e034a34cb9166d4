use std::collections::BTreeMap;

use super::SemanticId;

/// Bidirectional item ↔ SID lookup. SID buckets partition the catalog;
/// items inside a bucket are kept in ascending id order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SidIndex {
    item_to_sid: BTreeMap<u64, SemanticId>,
    buckets: BTreeMap<SemanticId, Vec<u64>>,
}

/// Collision and token-usage statistics of a [`SidIndex`].
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionReport {
    pub items: usize,
    pub distinct_sids: usize,
    /// SIDs shared by more than one item.
    pub colliding_sids: usize,
    pub max_bucket: usize,
    /// Natural-log entropy of token frequencies, per level.
    pub level_entropy: Vec<f64>,
}

impl SidIndex {
    pub fn from_assignments(pairs: impl IntoIterator<Item = (u64, SemanticId)>) -> Self {
        let mut index = Self::default();
        for (item, sid) in pairs {
            if let Some(old) = index.item_to_sid.insert(item, sid.clone()) {
                let bucket = index
                    .buckets
                    .get_mut(&old)
                    .expect("indexed sid has a bucket");
                bucket.retain(|i| *i != item);
                if bucket.is_empty() {
                    index.buckets.remove(&old);
                }
            }
            let bucket = index.buckets.entry(sid).or_default();
            if let Err(pos) = bucket.binary_search(&item) {
                bucket.insert(pos, item);
            }
        }
        index
    }

    pub fn len(&self) -> usize {
        self.item_to_sid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.item_to_sid.is_empty()
    }

    pub fn sid(&self, item: u64) -> Option<&SemanticId> {
        self.item_to_sid.get(&item)
    }

    /// Items carrying `z`, ascending by id; empty when none do.
    pub fn decode(&self, z: &SemanticId) -> &[u64] {
        self.buckets.get(z).map_or(&[], Vec::as_slice)
    }

    /// `(item, sid)` pairs in ascending item order.
    pub fn iter(&self) -> impl Iterator<Item = (u64, &SemanticId)> {
        self.item_to_sid.iter().map(|(i, z)| (*i, z))
    }

    pub fn buckets(&self) -> impl Iterator<Item = (&SemanticId, &[u64])> {
        self.buckets.iter().map(|(z, items)| (z, items.as_slice()))
    }

    pub fn items(&self) -> impl Iterator<Item = u64> + '_ {
        self.item_to_sid.keys().copied()
    }

    pub fn collision_report(&self) -> CollisionReport {
        let levels = self
            .item_to_sid
            .values()
            .next()
            .map_or(0, SemanticId::levels);
        let n = self.len() as f64;
        let level_entropy = (0..levels)
            .map(|l| {
                let mut counts: BTreeMap<u16, usize> = BTreeMap::new();
                for z in self.item_to_sid.values() {
                    *counts.entry(z.tokens()[l]).or_default() += 1;
                }
                counts
                    .values()
                    .map(|&c| {
                        let p = c as f64 / n;
                        -p * p.ln()
                    })
                    .sum::<f64>()
            })
            .collect();
        CollisionReport {
            items: self.len(),
            distinct_sids: self.buckets.len(),
            colliding_sids: self.buckets.values().filter(|b| b.len() > 1).count(),
            max_bucket: self.buckets.values().map(Vec::len).max().unwrap_or(0),
            level_entropy,
        }
    }
}
