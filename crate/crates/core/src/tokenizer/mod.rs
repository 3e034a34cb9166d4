//! Offline semantic-ID construction by residual-quantization k-means.
//!
//! Each level clusters the residuals left by the previous levels, so an
//! item's semantic ID reads coarse-to-fine. Centroids are sorted
//! lexicographically after fitting; together with fitting in ascending
//! item-id order this makes token indices independent of input order.

mod index;
mod io;
pub mod kmeans;

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use index::{CollisionReport, SidIndex};
pub use io::{
    codebook_from_bytes, codebook_to_bytes, load_codebook, read_embeddings, save_codebook,
    write_embeddings, CODEBOOK_MAGIC,
};

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("empty catalog")]
    EmptyCatalog,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("item {0} has a non-finite embedding")]
    NonFinite(u64),
    #[error("item {0} appears more than once")]
    DuplicateItem(u64),
    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),
    #[error("vocabulary too large at level {level}: {requested} tokens requested but only {distinct} distinct residual points")]
    VocabularyTooLarge {
        level: usize,
        requested: usize,
        distinct: usize,
    },
    #[error("token {token} out of range at level {level} (vocabulary {vocab})")]
    TokenOutOfRange {
        level: usize,
        token: u16,
        vocab: usize,
    },
    #[error("codebook format error: {0}")]
    Format(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItemEmbedding {
    pub item_id: u64,
    pub vector: Vec<f64>,
}

/// Token sequence `[z_1, …, z_L]`, one token per level.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SemanticId(Vec<u16>);

impl SemanticId {
    pub fn new(tokens: Vec<u16>) -> Self {
        Self(tokens)
    }

    pub fn tokens(&self) -> &[u16] {
        &self.0
    }

    pub fn levels(&self) -> usize {
        self.0.len()
    }

    pub fn token(&self, level: usize) -> usize {
        usize::from(self.0[level])
    }
}

impl std::fmt::Display for SemanticId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(u16::to_string).collect();
        write!(f, "[{}]", parts.join(","))
    }
}

/// Level-wise centroid tables of the fixed semantic action space.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    dim: usize,
    vocab_sizes: Vec<usize>,
    /// Per level, a `T_ℓ × dim` row-major centroid matrix.
    centroids: Vec<Vec<f64>>,
}

impl Codebook {
    pub fn new(dim: usize, centroids: Vec<Vec<f64>>) -> Result<Self, TokenizerError> {
        if dim == 0 || centroids.is_empty() {
            return Err(TokenizerError::InvalidVocab("need d ≥ 1 and L ≥ 1".into()));
        }
        let mut vocab_sizes = Vec::with_capacity(centroids.len());
        for (l, table) in centroids.iter().enumerate() {
            if table.is_empty() || table.len() % dim != 0 {
                return Err(TokenizerError::Format(format!(
                    "level {} centroid table has {} values, not a multiple of d={dim}",
                    l + 1,
                    table.len()
                )));
            }
            let t = table.len() / dim;
            if t > usize::from(u16::MAX) + 1 {
                return Err(TokenizerError::InvalidVocab(format!(
                    "level {} has {t} tokens",
                    l + 1
                )));
            }
            vocab_sizes.push(t);
        }
        Ok(Self {
            dim,
            vocab_sizes,
            centroids,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn levels(&self) -> usize {
        self.vocab_sizes.len()
    }

    pub fn vocab_sizes(&self) -> &[usize] {
        &self.vocab_sizes
    }

    /// Row-major `T_ℓ × d` centroid matrix for zero-based `level`.
    pub fn centroids(&self, level: usize) -> &[f64] {
        &self.centroids[level]
    }

    pub fn centroid(&self, level: usize, token: usize) -> &[f64] {
        &self.centroids[level][token * self.dim..(token + 1) * self.dim]
    }

    /// Nearest-centroid token per level over successive residuals.
    pub fn assign_sid(&self, x: &[f64]) -> Result<SemanticId, TokenizerError> {
        Ok(self.assign_with_residual(x)?.0)
    }

    /// Like [`Codebook::assign_sid`], also returning the final residual.
    pub fn assign_with_residual(
        &self,
        x: &[f64],
    ) -> Result<(SemanticId, Vec<f64>), TokenizerError> {
        if x.len() != self.dim {
            return Err(TokenizerError::Dimension {
                expected: self.dim,
                got: x.len(),
            });
        }
        let mut residual = x.to_vec();
        let mut tokens = Vec::with_capacity(self.levels());
        for level in 0..self.levels() {
            let (tok, _) = kmeans::nearest(&self.centroids[level], self.dim, &residual);
            for (r, c) in residual.iter_mut().zip(self.centroid(level, tok)) {
                *r -= c;
            }
            tokens.push(tok as u16);
        }
        Ok((SemanticId(tokens), residual))
    }

    pub fn validate_sid(&self, z: &SemanticId) -> Result<(), TokenizerError> {
        if z.levels() != self.levels() {
            return Err(TokenizerError::Dimension {
                expected: self.levels(),
                got: z.levels(),
            });
        }
        for (l, (&tok, &vocab)) in z.tokens().iter().zip(&self.vocab_sizes).enumerate() {
            if usize::from(tok) >= vocab {
                return Err(TokenizerError::TokenOutOfRange {
                    level: l + 1,
                    token: tok,
                    vocab,
                });
            }
        }
        Ok(())
    }
}

/// Result of fitting: the codebook, the SID of every catalog item, and the
/// mean squared residual norm left after each level.
#[derive(Debug, Clone)]
pub struct RqFit {
    pub codebook: Codebook,
    pub index: SidIndex,
    pub level_errors: Vec<f64>,
}

/// Learns `vocab_sizes.len()` codebooks by residual k-means.
pub fn fit_codebook(
    embeddings: &[ItemEmbedding],
    vocab_sizes: &[usize],
    seed: u64,
) -> Result<RqFit, TokenizerError> {
    let first = embeddings.first().ok_or(TokenizerError::EmptyCatalog)?;
    let dim = first.vector.len();
    if dim == 0 {
        return Err(TokenizerError::Dimension {
            expected: 1,
            got: 0,
        });
    }
    if vocab_sizes.is_empty() || vocab_sizes.contains(&0) {
        return Err(TokenizerError::InvalidVocab(format!("{vocab_sizes:?}")));
    }
    let mut seen = BTreeSet::new();
    for e in embeddings {
        if e.vector.len() != dim {
            return Err(TokenizerError::Dimension {
                expected: dim,
                got: e.vector.len(),
            });
        }
        if e.vector.iter().any(|v| !v.is_finite()) {
            return Err(TokenizerError::NonFinite(e.item_id));
        }
        if !seen.insert(e.item_id) {
            return Err(TokenizerError::DuplicateItem(e.item_id));
        }
    }

    let mut sorted: Vec<&ItemEmbedding> = embeddings.iter().collect();
    sorted.sort_by_key(|e| e.item_id);
    let n = sorted.len();
    let mut residuals: Vec<f64> = sorted
        .iter()
        .flat_map(|e| e.vector.iter().copied())
        .collect();
    let mut tokens: Vec<Vec<u16>> = vec![Vec::with_capacity(vocab_sizes.len()); n];
    let mut tables = Vec::with_capacity(vocab_sizes.len());
    let mut level_errors = Vec::with_capacity(vocab_sizes.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    for (l, &t) in vocab_sizes.iter().enumerate() {
        let distinct = kmeans::count_distinct(&residuals, dim);
        if distinct < t {
            return Err(TokenizerError::VocabularyTooLarge {
                level: l + 1,
                requested: t,
                distinct,
            });
        }
        let table = kmeans::canonical_sort(&kmeans::kmeans(&residuals, dim, t, &mut rng), dim);
        let mut err = 0.0;
        for (r, toks) in residuals.chunks_exact_mut(dim).zip(tokens.iter_mut()) {
            let (tok, _) = kmeans::nearest(&table, dim, r);
            for (v, c) in r.iter_mut().zip(&table[tok * dim..(tok + 1) * dim]) {
                *v -= c;
            }
            err += r.iter().map(|v| v * v).sum::<f64>();
            toks.push(tok as u16);
        }
        level_errors.push(err / n as f64);
        tables.push(table);
    }

    let codebook = Codebook::new(dim, tables)?;
    let index = SidIndex::from_assignments(
        sorted
            .iter()
            .zip(tokens)
            .map(|(e, toks)| (e.item_id, SemanticId(toks))),
    );
    Ok(RqFit {
        codebook,
        index,
        level_errors,
    })
}

/// Assigns every embedding through `codebook` and indexes the result.
pub fn build_index(
    codebook: &Codebook,
    embeddings: &[ItemEmbedding],
) -> Result<SidIndex, TokenizerError> {
    let pairs = embeddings
        .iter()
        .map(|e| Ok((e.item_id, codebook.assign_sid(&e.vector)?)))
        .collect::<Result<Vec<_>, TokenizerError>>()?;
    Ok(SidIndex::from_assignments(pairs))
}
