//! Multi-level critic: a value head applied to every context of the policy's
//! trajectory, fused by softmax-normalized learnable weights.

use rand::Rng;
use thiserror::Error;

use crate::hpn::ContextTrajectory;
use crate::numerics::{
    softmax_values, Bound, Graph, NumericsError, ParamId, ParamStore, Tensor, Var,
};

#[derive(Debug, Error)]
pub enum MlcError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("contract violation: {0}")]
    Contract(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticConfig {
    pub d_model: usize,
    pub hidden: usize,
    /// Policy depth `L`; the critic reads `L + 1` contexts.
    pub levels: usize,
    /// One value head per context instead of a shared one.
    pub per_level_heads: bool,
    /// Value of `c_0` only, without aggregation.
    pub single_level: bool,
}

impl CriticConfig {
    pub fn new(d_model: usize, levels: usize) -> Self {
        Self {
            d_model,
            hidden: 64,
            levels,
            per_level_heads: false,
            single_level: false,
        }
    }

    /// Number of contexts actually scored.
    pub fn scored_levels(&self) -> usize {
        if self.single_level {
            1
        } else {
            self.levels + 1
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ValueHead {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone)]
pub struct Critic {
    config: CriticConfig,
    params: ParamStore,
    heads: Vec<ValueHead>,
    weights: ParamId,
}

fn head_names(i: Option<usize>) -> [String; 4] {
    let prefix = i.map_or_else(|| "value".to_string(), |i| format!("value{i}"));
    ["w1", "b1", "w2", "b2"].map(|n| format!("{prefix}.{n}"))
}

impl Critic {
    pub fn new(config: CriticConfig, rng: &mut impl Rng) -> Result<Self, MlcError> {
        if config.hidden == 0 || config.d_model == 0 || config.levels == 0 {
            return Err(MlcError::Contract(format!(
                "invalid critic config {config:?}"
            )));
        }
        let mut params = ParamStore::new();
        let n_heads = if config.per_level_heads {
            config.scored_levels()
        } else {
            1
        };
        let (d, h) = (config.d_model, config.hidden);
        let heads = (0..n_heads)
            .map(|i| {
                let [w1, b1, w2, b2] = head_names(config.per_level_heads.then_some(i));
                ValueHead {
                    w1: params.add(
                        w1,
                        Tensor::uniform(vec![h, d], 1.0 / (d as f64).sqrt(), rng),
                    ),
                    b1: params.add(b1, Tensor::zeros(vec![h])),
                    w2: params.add(w2, Tensor::uniform(vec![h], 1.0 / (h as f64).sqrt(), rng)),
                    b2: params.add(b2, Tensor::zeros(vec![1])),
                }
            })
            .collect();
        let weights = params.add("mix.w", Tensor::zeros(vec![config.scored_levels()]));
        Ok(Self {
            config,
            params,
            heads,
            weights,
        })
    }

    /// Rebuilds a critic around stored parameters, validating their shapes.
    pub fn from_params(config: CriticConfig, params: ParamStore) -> Result<Self, MlcError> {
        let find = |name: &str, shape: &[usize]| {
            let id = params
                .find(name)
                .ok_or_else(|| MlcError::Contract(format!("missing parameter `{name}`")))?;
            if params.get(id).shape() != shape {
                return Err(MlcError::Contract(format!(
                    "`{name}` has shape {:?}, config needs {shape:?}",
                    params.get(id).shape()
                )));
            }
            Ok(id)
        };
        let n_heads = if config.per_level_heads {
            config.scored_levels()
        } else {
            1
        };
        let (d, h) = (config.d_model, config.hidden);
        let heads = (0..n_heads)
            .map(|i| {
                let [w1, b1, w2, b2] = head_names(config.per_level_heads.then_some(i));
                Ok(ValueHead {
                    w1: find(&w1, &[h, d])?,
                    b1: find(&b1, &[h])?,
                    w2: find(&w2, &[h])?,
                    b2: find(&b2, &[1])?,
                })
            })
            .collect::<Result<Vec<_>, MlcError>>()?;
        let weights = find("mix.w", &[config.scored_levels()])?;
        if params.len() != 4 * n_heads + 1 {
            return Err(MlcError::Contract(
                "stored critic has extra parameters".into(),
            ));
        }
        Ok(Self {
            config,
            params,
            heads,
            weights,
        })
    }

    pub fn config(&self) -> &CriticConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn mix_weights(&self) -> ParamId {
        self.weights
    }

    fn head(&self, level: usize) -> ValueHead {
        if self.config.per_level_heads {
            self.heads[level]
        } else {
            self.heads[0]
        }
    }

    fn check_len(&self, n: usize) -> Result<(), MlcError> {
        if n != self.config.levels + 1 {
            return Err(MlcError::Contract(format!(
                "trajectory has {n} contexts, critic expects {}",
                self.config.levels + 1
            )));
        }
        Ok(())
    }

    /// `f_φ(c)` for one context, as a length-1 node.
    fn head_value(&self, g: &mut Graph, p: &Bound, level: usize, c: Var) -> Result<Var, MlcError> {
        let h = self.head(level);
        let z = g.matvec(p.var(h.w1), c)?;
        let z = g.add(z, p.var(h.b1))?;
        let a = g.tanh(z)?;
        let out = g.dot(p.var(h.w2), a)?;
        let out = g.concat(&[out])?;
        Ok(g.add(out, p.var(h.b2))?)
    }

    /// `[f_φ(c_0), …, f_φ(c_L)]` (only `c_0` for a single-level critic).
    pub fn per_level_values_graph(
        &self,
        g: &mut Graph,
        p: &Bound,
        contexts: &[Var],
    ) -> Result<Var, MlcError> {
        self.check_len(contexts.len())?;
        let values = contexts[..self.config.scored_levels()]
            .iter()
            .enumerate()
            .map(|(l, &c)| self.head_value(g, p, l, c))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(g.concat(&values)?)
    }

    /// `Σ_l softmax(w)_l · V[l]`.
    pub fn aggregate_graph(&self, g: &mut Graph, p: &Bound, values: Var) -> Result<Var, MlcError> {
        let weights = g.softmax(p.var(self.weights))?;
        Ok(g.dot(weights, values)?)
    }

    pub fn value_graph(&self, g: &mut Graph, p: &Bound, contexts: &[Var]) -> Result<Var, MlcError> {
        let values = self.per_level_values_graph(g, p, contexts)?;
        self.aggregate_graph(g, p, values)
    }

    pub fn per_level_values(&self, traj: &ContextTrajectory) -> Result<Vec<f64>, MlcError> {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let contexts = traj
            .0
            .iter()
            .map(|c| g.vector(c.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let v = self.per_level_values_graph(&mut g, &p, &contexts)?;
        Ok(g.value(v).to_vec())
    }

    pub fn aggregate(&self, values: &[f64]) -> Result<f64, MlcError> {
        if values.len() != self.config.scored_levels() {
            return Err(MlcError::Contract(format!(
                "{} values for {} weights",
                values.len(),
                self.config.scored_levels()
            )));
        }
        Ok(self
            .weight_snapshot()
            .iter()
            .zip(values)
            .map(|(w, v)| w * v)
            .sum())
    }

    /// `V̂(s)` for a recorded trajectory.
    pub fn value(&self, traj: &ContextTrajectory) -> Result<f64, MlcError> {
        self.aggregate(&self.per_level_values(traj)?)
    }

    /// Current normalized level weights.
    pub fn weight_snapshot(&self) -> Vec<f64> {
        softmax_values(self.params.get(self.weights).data())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SyncMode {
    /// `θ' ← τθ + (1−τ)θ'` on every call.
    Soft { tau: f64 },
    /// Full copy once every `period` calls.
    Hard { period: usize },
}

impl Default for SyncMode {
    fn default() -> Self {
        SyncMode::Soft { tau: 0.005 }
    }
}

/// Slowly tracking copy of a live critic used for bootstrapped targets.
#[derive(Debug, Clone)]
pub struct TargetCritic {
    critic: Critic,
    staleness: usize,
}

impl TargetCritic {
    pub fn new(live: &Critic) -> Self {
        Self {
            critic: live.clone(),
            staleness: 0,
        }
    }

    pub fn critic(&self) -> &Critic {
        &self.critic
    }

    /// Calls since the last full copy (always 0 in soft mode).
    pub fn staleness(&self) -> usize {
        self.staleness
    }

    /// Advances the schedule by one step. Returns whether the target changed.
    pub fn sync(&mut self, live: &Critic, mode: SyncMode) -> Result<bool, MlcError> {
        if !self.critic.params.same_layout(&live.params) || self.critic.config != live.config {
            return Err(MlcError::Contract(
                "target and live critic differ in structure".into(),
            ));
        }
        match mode {
            SyncMode::Soft { tau } => {
                if !(0.0..=1.0).contains(&tau) {
                    return Err(MlcError::Contract(format!(
                        "soft update rate {tau} outside [0, 1]"
                    )));
                }
                if tau == 1.0 {
                    self.critic.params = live.params.clone();
                } else {
                    self.critic.params.blend_from(&live.params, tau)?;
                }
                Ok(tau > 0.0)
            }
            SyncMode::Hard { period } => {
                if period == 0 {
                    return Err(MlcError::Contract(
                        "hard sync period must be positive".into(),
                    ));
                }
                self.staleness += 1;
                if self.staleness >= period {
                    self.critic.params = live.params.clone();
                    self.staleness = 0;
                    Ok(true)
                } else {
                    Ok(false)
                }
            }
        }
    }
}
