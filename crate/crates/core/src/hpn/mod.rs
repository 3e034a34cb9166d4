//! Hierarchical policy network.
//!
//! The user state is encoded once into `c_0`. Level `ℓ` then predicts
//! `p_ℓ = softmax(W_ℓ c_{ℓ-1})`, forms the expected token embedding
//! `e_ℓ = p_ℓᵀ E_ℓ`, and refines the context as
//! `c_ℓ = LayerNorm(c_{ℓ-1} − e_ℓ)`. Because `e_ℓ` is an expectation rather
//! than a sampled token's row, one pass yields every level distribution and
//! the SID likelihood factorizes over levels.

mod encoder;
mod output;

use std::collections::BTreeMap;

use rand::Rng;
use thiserror::Error;

pub use encoder::{projected_item_rows, EncoderShape, SequenceEncoder};
pub use output::{ContextTrajectory, PolicyOutput, SlateMode};

use crate::catalog::Catalog;
use crate::numerics::{Bound, Graph, NumericsError, ParamId, ParamStore, Tensor, Var};

#[derive(Debug, Error)]
pub enum HpnError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("item {0} is not in the catalog")]
    UnknownItem(u64),
    #[error("item {0} has no semantic id")]
    MissingSid(u64),
    #[error("contract violation: {0}")]
    Contract(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interaction {
    pub item: u64,
    pub clicked: bool,
}

/// Profile features plus the most recent interactions, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct UserState {
    pub profile: Vec<f64>,
    history: Vec<Interaction>,
    window: usize,
}

impl UserState {
    pub fn new(profile: Vec<f64>, window: usize) -> Self {
        Self {
            profile,
            history: Vec::with_capacity(window),
            window,
        }
    }

    pub fn with_history(
        profile: Vec<f64>,
        window: usize,
        history: impl IntoIterator<Item = Interaction>,
    ) -> Self {
        let mut s = Self::new(profile, window);
        for h in history {
            s.push(h);
        }
        s
    }

    /// Appends an interaction, dropping the oldest beyond the window.
    pub fn push(&mut self, step: Interaction) {
        if self.window == 0 {
            return;
        }
        if self.history.len() == self.window {
            self.history.remove(0);
        }
        self.history.push(step);
    }

    pub fn history(&self) -> &[Interaction] {
        &self.history
    }

    pub fn window(&self) -> usize {
        self.window
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyConfig {
    pub d_model: usize,
    pub history_window: usize,
    pub profile_dim: usize,
    pub vocab_sizes: Vec<usize>,
    /// Independent heads all reading `c_0`, without residual refinement.
    pub flat: bool,
}

impl PolicyConfig {
    pub fn new(vocab_sizes: Vec<usize>) -> Self {
        Self {
            d_model: 32,
            history_window: 10,
            profile_dim: 0,
            vocab_sizes,
            flat: false,
        }
    }

    pub fn levels(&self) -> usize {
        self.vocab_sizes.len()
    }
}

#[derive(Debug, Clone)]
struct Head {
    w: ParamId,
    emb: ParamId,
    ln_gain: ParamId,
    ln_bias: ParamId,
}

/// Graph handles produced by one policy forward pass.
#[derive(Debug, Clone)]
pub struct PolicyTrace {
    pub probs: Vec<Var>,
    pub log_probs: Vec<Var>,
    /// `c_0 … c_L`.
    pub contexts: Vec<Var>,
}

impl PolicyTrace {
    /// `Σ_ℓ log p_ℓ[z_ℓ]` as a graph node.
    pub fn sid_log_prob(&self, g: &mut Graph, tokens: &[u16]) -> Result<Var, HpnError> {
        if tokens.len() != self.log_probs.len() {
            return Err(HpnError::Contract(format!(
                "SID has {} levels, policy has {}",
                tokens.len(),
                self.log_probs.len()
            )));
        }
        let picks = tokens
            .iter()
            .zip(&self.log_probs)
            .map(|(&t, &lp)| g.index(lp, usize::from(t)))
            .collect::<Result<Vec<_>, _>>()?;
        let joined = g.concat(&picks)?;
        Ok(g.sum(joined)?)
    }
}

#[derive(Debug, Clone)]
pub struct PolicyNetwork {
    config: PolicyConfig,
    catalog: Catalog,
    params: ParamStore,
    encoder: SequenceEncoder,
    heads: Vec<Head>,
}

fn head_names(level: usize) -> [String; 4] {
    ["w", "emb", "ln_gain", "ln_bias"].map(|n| format!("head{level}.{n}"))
}

impl PolicyNetwork {
    /// Randomly initialized policy. When `item_features` covers the catalog,
    /// the encoder's item table starts from a random projection of them.
    pub fn new(
        config: PolicyConfig,
        catalog: Catalog,
        item_features: Option<&BTreeMap<u64, Vec<f64>>>,
        rng: &mut impl Rng,
    ) -> Result<Self, HpnError> {
        if config.vocab_sizes.is_empty() || config.vocab_sizes.contains(&0) || config.d_model < 2 {
            return Err(HpnError::Contract(format!(
                "invalid policy config {config:?}"
            )));
        }
        if catalog.is_empty() {
            return Err(HpnError::Contract("empty catalog".into()));
        }
        let d = config.d_model;
        let mut params = ParamStore::new();
        let shape = EncoderShape {
            d_model: d,
            history_window: config.history_window.max(1),
            profile_dim: config.profile_dim,
        };
        let rows = item_features.and_then(|f| projected_item_rows(&catalog, f, d, rng));
        let encoder = SequenceEncoder::init(&mut params, "enc", shape, catalog.len(), rows, rng);
        let lin = 1.0 / (d as f64).sqrt();
        let heads = config
            .vocab_sizes
            .iter()
            .enumerate()
            .map(|(l, &t)| {
                let [w, emb, g, b] = head_names(l);
                Head {
                    w: params.add(w, Tensor::uniform(vec![t, d], lin, rng)),
                    emb: params.add(emb, Tensor::uniform(vec![t, d], 0.5, rng)),
                    ln_gain: params.add(g, Tensor::vector(vec![1.0; d])),
                    ln_bias: params.add(b, Tensor::zeros(vec![d])),
                }
            })
            .collect();
        Ok(Self {
            config,
            catalog,
            params,
            encoder,
            heads,
        })
    }

    /// Rebuilds a policy around stored parameters, validating their shapes.
    pub fn from_params(
        config: PolicyConfig,
        catalog: Catalog,
        params: ParamStore,
    ) -> Result<Self, HpnError> {
        let encoder = SequenceEncoder::locate(&params, "enc")?;
        let shape = encoder.shape();
        if shape.d_model != config.d_model
            || shape.profile_dim != config.profile_dim
            || shape.history_window != config.history_window.max(1)
        {
            return Err(HpnError::Contract(format!(
                "stored encoder {shape:?} does not match config {config:?}"
            )));
        }
        if params.get(encoder.item_table()).rows() != catalog.len() {
            return Err(HpnError::Contract(
                "item table size differs from catalog".into(),
            ));
        }
        let mut heads = Vec::with_capacity(config.levels());
        for (l, &t) in config.vocab_sizes.iter().enumerate() {
            let names = head_names(l);
            let find = |i: usize| {
                params
                    .find(&names[i])
                    .ok_or_else(|| HpnError::Contract(format!("missing parameter `{}`", names[i])))
            };
            let head = Head {
                w: find(0)?,
                emb: find(1)?,
                ln_gain: find(2)?,
                ln_bias: find(3)?,
            };
            for id in [head.w, head.emb] {
                if params.get(id).shape() != [t, config.d_model] {
                    return Err(HpnError::Contract(format!(
                        "level {} expects {t}x{} tables, found {:?}",
                        l + 1,
                        config.d_model,
                        params.get(id).shape()
                    )));
                }
            }
            heads.push(head);
        }
        if params.find(&head_names(config.levels())[0]).is_some() {
            return Err(HpnError::Contract(
                "stored policy has more levels than config".into(),
            ));
        }
        Ok(Self {
            config,
            catalog,
            params,
            encoder,
            heads,
        })
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn levels(&self) -> usize {
        self.heads.len()
    }

    /// Parameters of the level heads (projection, token embedding, norm).
    pub fn head_param_ids(&self) -> Vec<ParamId> {
        self.heads
            .iter()
            .flat_map(|h| [h.w, h.emb, h.ln_gain, h.ln_bias])
            .collect()
    }

    pub fn head_matrix(&self, level: usize) -> ParamId {
        self.heads[level].w
    }

    pub fn token_embedding(&self, level: usize) -> ParamId {
        self.heads[level].emb
    }

    pub fn encode_graph(
        &self,
        g: &mut Graph,
        p: &Bound,
        state: &UserState,
    ) -> Result<Var, HpnError> {
        self.encoder.encode(g, p, &self.catalog, state)
    }

    /// One residual refinement: `e = pᵀE_ℓ`, `c_ℓ = LayerNorm(c_{ℓ-1} − e)`.
    pub fn hrsm_step(
        &self,
        g: &mut Graph,
        p: &Bound,
        level: usize,
        context: Var,
        probs: Var,
    ) -> Result<(Var, Var), HpnError> {
        let head = &self.heads[level];
        let expected = g.mat_t_vec(p.var(head.emb), probs)?;
        let diff = g.sub(context, expected)?;
        let next = g.layer_norm(diff, p.var(head.ln_gain), p.var(head.ln_bias))?;
        Ok((expected, next))
    }

    /// All level distributions and the context trajectory from `c_0`.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        p: &Bound,
        c0: Var,
    ) -> Result<PolicyTrace, HpnError> {
        if g.shape(c0) != [self.config.d_model] {
            return Err(HpnError::Contract(format!(
                "context has shape {:?}, expected [{}]",
                g.shape(c0),
                self.config.d_model
            )));
        }
        let levels = self.levels();
        let mut trace = PolicyTrace {
            probs: Vec::with_capacity(levels),
            log_probs: Vec::with_capacity(levels),
            contexts: vec![c0],
        };
        let mut context = c0;
        for level in 0..levels {
            let reads = if self.config.flat { c0 } else { context };
            let logits = g.matvec(p.var(self.heads[level].w), reads)?;
            let probs = g.softmax(logits)?;
            trace.log_probs.push(g.log_softmax(logits)?);
            trace.probs.push(probs);
            if !self.config.flat {
                context = self.hrsm_step(g, p, level, context, probs)?.1;
            }
            trace.contexts.push(context);
        }
        Ok(trace)
    }

    /// Context trajectory recomputed from `c_0` with frozen head parameters,
    /// so gradients reach `c_0` but not the heads.
    pub fn frozen_trajectory(
        &self,
        g: &mut Graph,
        frozen: &Bound,
        c0: Var,
    ) -> Result<Vec<Var>, HpnError> {
        Ok(self.forward_graph(g, frozen, c0)?.contexts)
    }

    pub fn encode_state(&self, state: &UserState) -> Result<Vec<f64>, HpnError> {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let c0 = self.encode_graph(&mut g, &p, state)?;
        Ok(g.value(c0).to_vec())
    }

    pub fn forward(&self, c0: &[f64]) -> Result<PolicyOutput, HpnError> {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let c = g.vector(c0.to_vec())?;
        let trace = self.forward_graph(&mut g, &p, c)?;
        Ok(PolicyOutput::from_trace(&g, &trace))
    }

    /// Encode and forward without recording gradients.
    pub fn infer(&self, state: &UserState) -> Result<PolicyOutput, HpnError> {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let c0 = self.encode_graph(&mut g, &p, state)?;
        let trace = self.forward_graph(&mut g, &p, c0)?;
        Ok(PolicyOutput::from_trace(&g, &trace))
    }
}
