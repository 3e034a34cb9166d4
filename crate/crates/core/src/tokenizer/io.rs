//! Codebook container and embeddings text format.
//!
//! Codebook layout (little-endian): magic `HSRLCB1\0`, `u32 L`, `u32 d`,
//! `u32 T_ℓ` for each level, then `L` blocks of `T_ℓ × d` `f64` row-major,
//! then `u64` item count followed by `(u64 item_id, u16 token × L)` records.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::{Codebook, ItemEmbedding, SemanticId, SidIndex, TokenizerError};

pub const CODEBOOK_MAGIC: &[u8; 8] = b"HSRLCB1\0";

fn format_err(msg: impl Into<String>) -> TokenizerError {
    TokenizerError::Format(msg.into())
}

pub fn codebook_to_bytes(codebook: &Codebook, index: &SidIndex) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CODEBOOK_MAGIC);
    out.extend_from_slice(&(codebook.levels() as u32).to_le_bytes());
    out.extend_from_slice(&(codebook.dim() as u32).to_le_bytes());
    for &t in codebook.vocab_sizes() {
        out.extend_from_slice(&(t as u32).to_le_bytes());
    }
    for l in 0..codebook.levels() {
        for v in codebook.centroids(l) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&(index.len() as u64).to_le_bytes());
    for (item, sid) in index.iter() {
        out.extend_from_slice(&item.to_le_bytes());
        for tok in sid.tokens() {
            out.extend_from_slice(&tok.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], TokenizerError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.bytes.len())
            .ok_or_else(|| format_err(format!("truncated file: missing {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16, TokenizerError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, TokenizerError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, TokenizerError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn codebook_from_bytes(bytes: &[u8]) -> Result<(Codebook, SidIndex), TokenizerError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(8, "header magic")?;
    if magic != CODEBOOK_MAGIC {
        return Err(format_err(
            "bad header magic (not a codebook file or unsupported version)",
        ));
    }
    let levels = cur.u32("level count")? as usize;
    let dim = cur.u32("embedding dimension")? as usize;
    if levels == 0 || dim == 0 {
        return Err(format_err(format!("invalid header: L={levels}, d={dim}")));
    }
    let vocab = (0..levels)
        .map(|l| {
            cur.u32(&format!("vocabulary size of level {}", l + 1))
                .map(|t| t as usize)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut tables = Vec::with_capacity(levels);
    for (l, &t) in vocab.iter().enumerate() {
        let what = format!("centroid block {} of {levels}", l + 1);
        let n = t
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| format_err(format!("{what} size overflows")))?;
        let raw = cur.take(n, &what)?;
        let table: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if table.iter().any(|v| !v.is_finite()) {
            return Err(format_err(format!("{what} contains non-finite values")));
        }
        tables.push(table);
    }
    let codebook = Codebook::new(dim, tables)?;
    let count = cur.u64("item count")?;
    let mut pairs = Vec::new();
    for i in 0..count {
        let what = format!("item record {} of {count}", i + 1);
        let item = cur.u64(&what)?;
        let tokens = (0..levels)
            .map(|_| cur.u16(&what))
            .collect::<Result<Vec<_>, _>>()?;
        let sid = SemanticId::new(tokens);
        codebook.validate_sid(&sid)?;
        pairs.push((item, sid));
    }
    if cur.pos != bytes.len() {
        return Err(format_err(format!(
            "{} trailing bytes",
            bytes.len() - cur.pos
        )));
    }
    let index = SidIndex::from_assignments(pairs);
    if index.len() as u64 != count {
        return Err(format_err("duplicate item records"));
    }
    Ok((codebook, index))
}

pub fn save_codebook(
    path: &Path,
    codebook: &Codebook,
    index: &SidIndex,
) -> Result<(), TokenizerError> {
    fs::write(path, codebook_to_bytes(codebook, index))?;
    Ok(())
}

pub fn load_codebook(path: &Path) -> Result<(Codebook, SidIndex), TokenizerError> {
    codebook_from_bytes(&fs::read(path)?)
}

/// Reads the `d=<int>` header followed by `item_id<TAB>v1,…,vd` lines.
pub fn read_embeddings(path: &Path) -> Result<Vec<ItemEmbedding>, TokenizerError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut dim = None;
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let parse_err = |message: String| TokenizerError::Parse {
            line: lineno,
            message,
        };
        if line.trim().is_empty() {
            continue;
        }
        let Some(d) = dim else {
            let d = line
                .trim()
                .strip_prefix("d=")
                .and_then(|v| v.parse::<usize>().ok())
                .filter(|d| *d > 0)
                .ok_or_else(|| parse_err(format!("expected header `d=<int>`, got `{line}`")))?;
            dim = Some(d);
            continue;
        };
        let (id, values) = line
            .split_once('\t')
            .ok_or_else(|| parse_err("expected `item_id<TAB>values`".into()))?;
        let item_id = id
            .trim()
            .parse::<u64>()
            .map_err(|e| parse_err(format!("bad item id `{id}`: {e}")))?;
        let vector = values
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| parse_err(format!("bad value: {e}")))?;
        if vector.len() != d {
            return Err(parse_err(format!(
                "expected {d} values, got {}",
                vector.len()
            )));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(parse_err("non-finite value".into()));
        }
        out.push(ItemEmbedding { item_id, vector });
    }
    if dim.is_none() {
        return Err(TokenizerError::Parse {
            line: 1,
            message: "missing `d=<int>` header".into(),
        });
    }
    Ok(out)
}

pub fn write_embeddings(path: &Path, embeddings: &[ItemEmbedding]) -> Result<(), TokenizerError> {
    let dim = embeddings.first().map_or(0, |e| e.vector.len());
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "d={dim}")?;
    for e in embeddings {
        let values: Vec<String> = e.vector.iter().map(f64::to_string).collect();
        writeln!(out, "{}\t{}", e.item_id, values.join(","))?;
    }
    out.flush()?;
    Ok(())
}
