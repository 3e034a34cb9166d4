//! Single-layer self-attention encoder over the recent interaction window.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{HpnError, UserState};
use crate::catalog::Catalog;
use crate::numerics::{Bound, Graph, ParamId, ParamStore, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderShape {
    pub d_model: usize,
    pub history_window: usize,
    pub profile_dim: usize,
}

/// Parameter handles of one encoder inside a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct SequenceEncoder {
    shape: EncoderShape,
    item_emb: ParamId,
    feedback_emb: ParamId,
    pos_emb: ParamId,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    start: ParamId,
    proj_w: ParamId,
    proj_b: ParamId,
    profile_w: Option<ParamId>,
}

fn names(prefix: &str) -> [String; 10] {
    [
        "item_emb",
        "feedback_emb",
        "pos_emb",
        "wq",
        "wk",
        "wv",
        "start",
        "proj_w",
        "proj_b",
        "profile_w",
    ]
    .map(|n| format!("{prefix}.{n}"))
}

/// Item-table rows projected from content features through a fixed random
/// Gaussian map, rescaled to unit mean row norm.
pub fn projected_item_rows(
    catalog: &Catalog,
    features: &BTreeMap<u64, Vec<f64>>,
    d_model: usize,
    rng: &mut impl Rng,
) -> Option<Tensor> {
    let dim = features.values().next()?.len();
    let proj: Vec<f64> = (0..d_model * dim)
        .map(|_| StandardNormal.sample(rng))
        .collect::<Vec<f64>>();
    let mut rows = Vec::with_capacity(catalog.len() * d_model);
    for id in catalog.ids() {
        let x = features.get(id)?;
        for r in proj.chunks_exact(dim) {
            rows.push(r.iter().zip(x).map(|(a, b)| a * b).sum::<f64>());
        }
    }
    let mean_norm = rows
        .chunks_exact(d_model)
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .sum::<f64>()
        / catalog.len() as f64;
    if mean_norm > 0.0 {
        rows.iter_mut().for_each(|v| *v /= mean_norm);
    }
    Tensor::new(vec![catalog.len(), d_model], rows).ok()
}

impl SequenceEncoder {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        shape: EncoderShape,
        num_items: usize,
        item_rows: Option<Tensor>,
        rng: &mut impl Rng,
    ) -> Self {
        let d = shape.d_model;
        let n = names(prefix);
        let lin = 1.0 / (d as f64).sqrt();
        let item_rows = item_rows.unwrap_or_else(|| Tensor::uniform(vec![num_items, d], 0.5, rng));
        assert_eq!(item_rows.shape(), &[num_items, d], "item table shape");
        let item_emb = store.add(n[0].clone(), item_rows);
        let feedback_emb = store.add(n[1].clone(), Tensor::uniform(vec![2, d], 0.1, rng));
        let pos_emb = store.add(
            n[2].clone(),
            Tensor::uniform(vec![shape.history_window, d], 0.1, rng),
        );
        let wq = store.add(n[3].clone(), Tensor::uniform(vec![d, d], lin, rng));
        let wk = store.add(n[4].clone(), Tensor::uniform(vec![d, d], lin, rng));
        let wv = store.add(n[5].clone(), Tensor::uniform(vec![d, d], lin, rng));
        let start = store.add(n[6].clone(), Tensor::uniform(vec![d], 0.5, rng));
        let proj_w = store.add(n[7].clone(), Tensor::uniform(vec![d, d], lin, rng));
        let proj_b = store.add(n[8].clone(), Tensor::zeros(vec![d]));
        let profile_w = (shape.profile_dim > 0).then(|| {
            let s = 1.0 / (shape.profile_dim as f64).sqrt();
            store.add(
                n[9].clone(),
                Tensor::uniform(vec![d, shape.profile_dim], s, rng),
            )
        });
        Self {
            shape,
            item_emb,
            feedback_emb,
            pos_emb,
            wq,
            wk,
            wv,
            start,
            proj_w,
            proj_b,
            profile_w,
        }
    }

    /// Recovers handles from a store written by [`SequenceEncoder::init`].
    pub fn locate(store: &ParamStore, prefix: &str) -> Result<Self, HpnError> {
        let n = names(prefix);
        let find = |name: &String| {
            store
                .find(name)
                .ok_or_else(|| HpnError::Contract(format!("missing parameter `{name}`")))
        };
        let item_emb = find(&n[0])?;
        let pos_emb = find(&n[2])?;
        let profile_w = store.find(&n[9]);
        let d_model = store.get(item_emb).cols();
        let shape = EncoderShape {
            d_model,
            history_window: store.get(pos_emb).rows(),
            profile_dim: profile_w.map_or(0, |p| store.get(p).cols()),
        };
        Ok(Self {
            shape,
            item_emb,
            feedback_emb: find(&n[1])?,
            pos_emb,
            wq: find(&n[3])?,
            wk: find(&n[4])?,
            wv: find(&n[5])?,
            start: find(&n[6])?,
            proj_w: find(&n[7])?,
            proj_b: find(&n[8])?,
            profile_w,
        })
    }

    pub fn shape(&self) -> EncoderShape {
        self.shape
    }

    pub fn item_table(&self) -> ParamId {
        self.item_emb
    }

    /// Encodes `state` into a `d_model` context vector.
    pub fn encode(
        &self,
        g: &mut Graph,
        p: &Bound,
        catalog: &Catalog,
        state: &UserState,
    ) -> Result<Var, HpnError> {
        let d = self.shape.d_model;
        let history = state.history();
        let hidden = if history.is_empty() {
            p.var(self.start)
        } else {
            let n = history.len();
            let mut xs = Vec::with_capacity(n);
            for (i, step) in history.iter().enumerate() {
                let row = catalog
                    .position(step.item)
                    .ok_or(HpnError::UnknownItem(step.item))?;
                let item = g.row(p.var(self.item_emb), row)?;
                let fb = g.row(p.var(self.feedback_emb), usize::from(step.clicked))?;
                let pos = g.row(p.var(self.pos_emb), n - 1 - i)?;
                let x = g.add(item, fb)?;
                xs.push(g.add(x, pos)?);
            }
            let mut qs = Vec::with_capacity(n);
            let mut ks = Vec::with_capacity(n);
            let mut vs = Vec::with_capacity(n);
            for &x in &xs {
                qs.push(g.matvec(p.var(self.wq), x)?);
                ks.push(g.matvec(p.var(self.wk), x)?);
                vs.push(g.matvec(p.var(self.wv), x)?);
            }
            let keys = g.stack_rows(&ks)?;
            let values = g.stack_rows(&vs)?;
            let inv_sqrt_d = 1.0 / (d as f64).sqrt();
            let mut outs = Vec::with_capacity(n);
            for (&q, &x) in qs.iter().zip(&xs) {
                let scores = g.matvec(keys, q)?;
                let scores = g.scale(scores, inv_sqrt_d)?;
                let attn = g.softmax(scores)?;
                let mixed = g.mat_t_vec(values, attn)?;
                outs.push(g.add(mixed, x)?);
            }
            let stacked = g.stack_rows(&outs)?;
            let uniform = g.vector(vec![1.0 / n as f64; n])?;
            let pooled = g.mat_t_vec(stacked, uniform)?;
            let h = g.matvec(p.var(self.proj_w), pooled)?;
            g.add(h, p.var(self.proj_b))?
        };
        match self.profile_w {
            Some(w) => {
                if state.profile.len() != self.shape.profile_dim {
                    return Err(HpnError::Contract(format!(
                        "profile has {} features, encoder expects {}",
                        state.profile.len(),
                        self.shape.profile_dim
                    )));
                }
                let prof = g.vector(state.profile.clone())?;
                let contrib = g.matvec(p.var(w), prof)?;
                Ok(g.add(hidden, contrib)?)
            }
            None if !state.profile.is_empty() => Err(HpnError::Contract(
                "encoder has no profile projection but the state carries features".into(),
            )),
            None => Ok(hidden),
        }
    }
}
