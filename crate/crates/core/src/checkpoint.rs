//! Parameter checkpoint container.
//!
//! Layout (little-endian): magic `HSRLPN1\0`, `u32` format version, `u32`
//! block count, then per block `u32` name length, UTF-8 name, `u32` rank,
//! `u64` per dimension and the `f64` values row-major.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::numerics::{ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"HSRLPN1\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("checkpoint has no blocks under `{0}`")]
    MissingGroup(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Ordered named tensors. Names are grouped as `group/tensor`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    blocks: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends every tensor of `store` under `group/`.
    pub fn add_store(&mut self, group: &str, store: &ParamStore) {
        for (name, t) in store.iter() {
            self.blocks.push((format!("{group}/{name}"), t.clone()));
        }
    }

    pub fn add_tensor(&mut self, name: impl Into<String>, t: Tensor) {
        self.blocks.push((name.into(), t));
    }

    pub fn blocks(&self) -> &[(String, Tensor)] {
        &self.blocks
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.blocks.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Rebuilds the store saved under `group/`, preserving order.
    pub fn store(&self, group: &str) -> Result<ParamStore, CheckpointError> {
        let prefix = format!("{group}/");
        let mut store = ParamStore::new();
        for (name, t) in &self.blocks {
            if let Some(rest) = name.strip_prefix(&prefix) {
                store.add(rest, t.clone());
            }
        }
        if store.is_empty() {
            return Err(CheckpointError::MissingGroup(group.into()));
        }
        Ok(store)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.blocks.len() as u32).to_le_bytes());
        for (name, t) in &self.blocks {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &dim in t.shape() {
                out.extend_from_slice(&(dim as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut pos = 0usize;
        let mut take = |n: usize, what: &str| -> Result<&[u8], CheckpointError> {
            let end = pos
                .checked_add(n)
                .filter(|e| *e <= bytes.len())
                .ok_or_else(|| {
                    CheckpointError::Format(format!("truncated file: missing {what}"))
                })?;
            let s = &bytes[pos..end];
            pos = end;
            Ok(s)
        };
        if take(8, "header magic")? != CHECKPOINT_MAGIC {
            return Err(CheckpointError::Format("bad header magic".into()));
        }
        let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().unwrap());
        let version = u32_at(take(4, "format version")?);
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Format(format!(
                "unsupported version {version}"
            )));
        }
        let count = u32_at(take(4, "block count")?) as usize;
        let mut blocks = Vec::with_capacity(count.min(1 << 16));
        for b in 0..count {
            let what = format!("block {} of {count}", b + 1);
            let len = u32_at(take(4, &what)?) as usize;
            let name = std::str::from_utf8(take(len, &what)?)
                .map_err(|_| CheckpointError::Format(format!("{what}: name is not UTF-8")))?
                .to_string();
            let rank = u32_at(take(4, &what)?) as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(u64::from_le_bytes(take(8, &what)?.try_into().unwrap()) as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, d| acc.checked_mul(*d))
                .ok_or_else(|| CheckpointError::Format(format!("{what}: shape overflows")))?;
            let raw = take(n.saturating_mul(8), &what)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(shape, data)
                .map_err(|e| CheckpointError::Format(format!("{what} `{name}`: {e}")))?;
            blocks.push((name, t));
        }
        if pos != bytes.len() {
            return Err(CheckpointError::Format(
                "trailing bytes after last block".into(),
            ));
        }
        Ok(Self { blocks })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn sample() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        store.add("w", Tensor::uniform(vec![3, 4], 1.0, &mut rng));
        store.add("b", Tensor::uniform(vec![4], 1.0, &mut rng));
        let mut ck = Checkpoint::new();
        ck.add_store("policy", &store);
        ck.add_tensor("meta/step", Tensor::scalar(17.0));
        ck
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let ck = sample();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
        let store = back.store("policy").unwrap();
        assert_eq!(store.find("b"), Some(crate::numerics::ParamId(1)));
        assert_eq!(back.tensor("meta/step").unwrap().data(), &[17.0]);
        assert!(matches!(
            back.store("critic"),
            Err(CheckpointError::MissingGroup(_))
        ));
    }

    #[test]
    fn corruption_is_rejected() {
        let bytes = sample().to_bytes();
        let mut bad = bytes.clone();
        bad[3] = b'?';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let err = Checkpoint::from_bytes(&bytes[..bytes.len() - 4]).unwrap_err();
        assert!(err.to_string().contains("block 3 of 3"), "{err}");
        let mut long = bytes.clone();
        long.push(0);
        assert!(Checkpoint::from_bytes(&long).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.ckpt");
        sample().save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), sample());
    }
}
