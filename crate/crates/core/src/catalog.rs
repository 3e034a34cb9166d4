use std::collections::BTreeSet;

/// Sorted set of catalog item ids; an item's position is its embedding row.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Catalog {
    ids: Vec<u64>,
}

impl Catalog {
    pub fn new(ids: impl IntoIterator<Item = u64>) -> Self {
        let ids: BTreeSet<u64> = ids.into_iter().collect();
        Self {
            ids: ids.into_iter().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn position(&self, item: u64) -> Option<usize> {
        self.ids.binary_search(&item).ok()
    }

    pub fn contains(&self, item: u64) -> bool {
        self.position(item).is_some()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }
}
