use std::collections::BTreeMap;

use rand::Rng;

use super::losses::{bc_graph, clipped_advantage, entropy_graph, slate_log_prob_graph, td_target};
use super::{TrainConfig, TrainError};
use crate::catalog::Catalog;
use crate::checkpoint::Checkpoint;
use crate::hpn::{HpnError, PolicyConfig, PolicyNetwork, PolicyOutput, SlateMode, UserState};
use crate::mlc::{Critic, CriticConfig, TargetCritic};
use crate::numerics::{Bound, Graph, Optimizer, ParamGrads, Var};
use crate::tokenizer::{SemanticId, SidIndex};

/// Architecture and optimization settings of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSpec {
    pub d_model: usize,
    pub history_window: usize,
    pub critic_hidden: usize,
    pub flat_policy: bool,
    pub single_critic: bool,
    pub train: TrainConfig,
}

impl Default for AgentSpec {
    fn default() -> Self {
        Self {
            d_model: 32,
            history_window: 10,
            critic_hidden: 64,
            flat_policy: false,
            single_critic: false,
            train: TrainConfig::default(),
        }
    }
}

impl AgentSpec {
    pub fn policy_config(&self, vocab_sizes: &[usize]) -> PolicyConfig {
        PolicyConfig {
            d_model: self.d_model,
            history_window: self.history_window,
            profile_dim: 0,
            vocab_sizes: vocab_sizes.to_vec(),
            flat: self.flat_policy,
        }
    }

    pub fn critic_config(&self, levels: usize) -> CriticConfig {
        CriticConfig {
            hidden: self.critic_hidden,
            single_level: self.single_critic,
            ..CriticConfig::new(self.d_model, levels)
        }
    }
}

/// One environment step together with the policy output that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: UserState,
    pub output: PolicyOutput,
    pub slate: Vec<u64>,
    pub sids: Vec<SemanticId>,
    pub feedback: Vec<bool>,
    pub reward: f64,
    pub next_state: UserState,
    pub done: bool,
}

/// A logged state with the slate shown and the clicks it received.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub state: UserState,
    pub sids: Vec<SemanticId>,
    pub feedback: Vec<bool>,
}

/// Batch means of every loss component after one update.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub critic: f64,
    pub policy_gradient: f64,
    pub entropy: f64,
    pub bc: f64,
    pub total: f64,
    pub mean_advantage: f64,
    /// Critic level weights after the update.
    pub weights: Vec<f64>,
}

/// Policy, live critic, target critic and their optimizers.
#[derive(Debug, Clone)]
pub struct Agent {
    spec: AgentSpec,
    policy: PolicyNetwork,
    critic: Critic,
    target: TargetCritic,
    policy_opt: Optimizer,
    critic_opt: Optimizer,
    index: SidIndex,
    candidates: Vec<u64>,
}

struct LossNodes {
    critic: Var,
    pg: Var,
    entropy: Var,
    bc: Var,
    total: Var,
    advantages: Vec<f64>,
}

impl Agent {
    pub fn new(
        spec: AgentSpec,
        vocab_sizes: &[usize],
        catalog: Catalog,
        index: SidIndex,
        features: Option<&BTreeMap<u64, Vec<f64>>>,
        rng: &mut impl Rng,
    ) -> Result<Self, TrainError> {
        spec.train.validate()?;
        let policy = PolicyNetwork::new(spec.policy_config(vocab_sizes), catalog, features, rng)?;
        let critic = Critic::new(spec.critic_config(vocab_sizes.len()), rng)?;
        Self::assemble(spec, policy, critic, None, index)
    }

    fn assemble(
        spec: AgentSpec,
        policy: PolicyNetwork,
        critic: Critic,
        target: Option<Critic>,
        index: SidIndex,
    ) -> Result<Self, TrainError> {
        let candidates: Vec<u64> = policy
            .catalog()
            .ids()
            .iter()
            .copied()
            .filter(|&i| index.sid(i).is_some())
            .collect();
        if candidates.is_empty() {
            return Err(TrainError::Config(
                "no catalog item has a semantic ID".into(),
            ));
        }
        for (item, z) in index.iter() {
            if z.levels() != policy.levels() {
                return Err(TrainError::Config(format!(
                    "item {item} has a {}-level SID, policy has {} levels",
                    z.levels(),
                    policy.levels()
                )));
            }
            for (l, &t) in policy.config().vocab_sizes.iter().enumerate() {
                if z.token(l) >= t {
                    return Err(TrainError::Config(format!(
                        "item {item} uses token {} at level {} beyond vocabulary {t}",
                        z.token(l),
                        l + 1
                    )));
                }
            }
        }
        let lr = spec.train.learning_rate;
        let target = TargetCritic::new(target.as_ref().unwrap_or(&critic));
        Ok(Self {
            policy_opt: Optimizer::adam(lr, policy.params()),
            critic_opt: Optimizer::adam(lr, critic.params()),
            spec,
            policy,
            critic,
            target,
            index,
            candidates,
        })
    }

    pub fn spec(&self) -> &AgentSpec {
        &self.spec
    }

    pub fn config(&self) -> &TrainConfig {
        &self.spec.train
    }

    pub fn policy(&self) -> &PolicyNetwork {
        &self.policy
    }

    pub fn policy_mut(&mut self) -> &mut PolicyNetwork {
        &mut self.policy
    }

    pub fn critic(&self) -> &Critic {
        &self.critic
    }

    pub fn critic_mut(&mut self) -> &mut Critic {
        &mut self.critic
    }

    pub fn target(&self) -> &TargetCritic {
        &self.target
    }

    pub fn index(&self) -> &SidIndex {
        &self.index
    }

    pub fn candidates(&self) -> &[u64] {
        &self.candidates
    }

    /// Chooses a slate of `k` items for `state`.
    pub fn act(
        &self,
        state: &UserState,
        k: usize,
        mode: SlateMode,
        rng: &mut impl Rng,
    ) -> Result<(PolicyOutput, Vec<u64>, Vec<SemanticId>), TrainError> {
        let output = self.policy.infer(state)?;
        let slate = output.select_slate(&self.index, &self.candidates, k, mode, rng)?;
        let sids = self.sids(&slate)?;
        Ok((output, slate, sids))
    }

    pub fn sids(&self, items: &[u64]) -> Result<Vec<SemanticId>, TrainError> {
        items
            .iter()
            .map(|&i| {
                self.index
                    .sid(i)
                    .cloned()
                    .ok_or(TrainError::Policy(HpnError::MissingSid(i)))
            })
            .collect()
    }

    /// Bootstrapped targets `Q` from the target critic.
    pub fn td_targets(&self, batch: &[Transition]) -> Result<Vec<f64>, TrainError> {
        batch
            .iter()
            .map(|t| {
                let next_value = if t.done {
                    0.0
                } else {
                    let traj = self.policy.infer(&t.next_state)?.trajectory;
                    self.target.critic().value(&traj)?
                };
                Ok(td_target(
                    t.reward,
                    t.done,
                    next_value,
                    self.spec.train.gamma,
                ))
            })
            .collect()
    }

    fn loss_graph(
        &self,
        g: &mut Graph,
        batch: &[Transition],
        targets: &[f64],
        logged: &[Demonstration],
    ) -> Result<(LossNodes, Bound, Bound), TrainError> {
        let cfg = &self.spec.train;
        let pb = self.policy.params().bind(g);
        let pf = self.policy.params().bind_frozen(g);
        let cb = self.critic.params().bind(g);
        let mut sq = Vec::with_capacity(batch.len());
        let mut pg = Vec::with_capacity(batch.len());
        let mut en = Vec::with_capacity(batch.len());
        let mut bc = Vec::new();
        let mut advantages = Vec::with_capacity(batch.len());
        for (t, &q) in batch.iter().zip(targets) {
            let c0 = self.policy.encode_graph(g, &pb, &t.state)?;
            let trace = self.policy.forward_graph(g, &pb, c0)?;
            let critic_input = if cfg.detach_critic_encoder {
                g.detach(c0)
            } else {
                c0
            };
            let contexts = self.policy.frozen_trajectory(g, &pf, critic_input)?;
            let v = self.critic.value_graph(g, &cb, &contexts)?;
            let adv = clipped_advantage(q, g.scalar(v), cfg.advantage_clip);
            advantages.push(adv);
            let q_node = g.scalar_const(q)?;
            let diff = g.sub(v, q_node)?;
            sq.push(g.mul(diff, diff)?);
            let lp = slate_log_prob_graph(g, &trace, &t.sids)?;
            pg.push(g.scale(lp, -adv)?);
            en.push(entropy_graph(g, &trace)?);
            if let Some(b) = bc_graph(g, &trace, &t.sids, &t.feedback)? {
                bc.push(b);
            }
        }
        for d in logged {
            let c0 = self.policy.encode_graph(g, &pb, &d.state)?;
            let trace = self.policy.forward_graph(g, &pb, c0)?;
            if let Some(b) = bc_graph(g, &trace, &d.sids, &d.feedback)? {
                bc.push(b);
            }
        }
        let n = (batch.len() + logged.len()) as f64;
        let mean_of = |g: &mut Graph, parts: &[Var]| -> Result<Var, TrainError> {
            let joined = g.concat(parts)?;
            Ok(g.mean(joined)?)
        };
        let critic = mean_of(g, &sq)?;
        let pg = mean_of(g, &pg)?;
        let entropy = mean_of(g, &en)?;
        let bc = if bc.is_empty() {
            g.scalar_const(0.0)?
        } else {
            let joined = g.concat(&bc)?;
            let s = g.sum(joined)?;
            g.scale(s, 1.0 / n)?
        };
        let weighted_en = g.scale(entropy, cfg.lambda_en)?;
        let weighted_bc = g.scale(bc, cfg.lambda_bc)?;
        let total = g.add(critic, pg)?;
        let total = g.add(total, weighted_en)?;
        let total = g.add(total, weighted_bc)?;
        Ok((
            LossNodes {
                critic,
                pg,
                entropy,
                bc,
                total,
                advantages,
            },
            pb,
            cb,
        ))
    }

    /// Gradients of the joint loss for policy and critic without applying them.
    pub fn gradients(
        &self,
        batch: &[Transition],
    ) -> Result<(LossReport, ParamGrads, ParamGrads), TrainError> {
        self.gradients_with(batch, &[])
    }

    /// As [`Agent::gradients`], with logged demonstrations added to the
    /// behavioral-cloning term.
    pub fn gradients_with(
        &self,
        batch: &[Transition],
        logged: &[Demonstration],
    ) -> Result<(LossReport, ParamGrads, ParamGrads), TrainError> {
        if batch.is_empty() {
            return Err(TrainError::Config("empty batch".into()));
        }
        let targets = self.td_targets(batch)?;
        let mut g = Graph::new();
        let (nodes, pb, cb) = self.loss_graph(&mut g, batch, &targets, logged)?;
        let report = LossReport {
            critic: g.scalar(nodes.critic),
            policy_gradient: g.scalar(nodes.pg),
            entropy: g.scalar(nodes.entropy),
            bc: g.scalar(nodes.bc),
            total: g.scalar(nodes.total),
            mean_advantage: nodes.advantages.iter().sum::<f64>() / batch.len() as f64,
            weights: self.critic.weight_snapshot(),
        };
        if !report.total.is_finite() {
            return Err(TrainError::NonFinite(format!(
                "critic {} pg {} entropy {} bc {}",
                report.critic, report.policy_gradient, report.entropy, report.bc
            )));
        }
        let grads = g.backward(nodes.total)?;
        let policy_grads = pb.gradients(self.policy.params(), &grads);
        let critic_grads = cb.gradients(self.critic.params(), &grads);
        if !policy_grads.is_finite() || !critic_grads.is_finite() {
            return Err(TrainError::NonFinite("gradient".into()));
        }
        Ok((report, policy_grads, critic_grads))
    }

    /// One joint update of policy and critic followed by a target sync.
    /// On error no parameter is modified.
    pub fn train_step(&mut self, batch: &[Transition]) -> Result<LossReport, TrainError> {
        self.train_step_with(batch, &[])
    }

    pub fn train_step_with(
        &mut self,
        batch: &[Transition],
        logged: &[Demonstration],
    ) -> Result<LossReport, TrainError> {
        let (mut report, policy_grads, critic_grads) = self.gradients_with(batch, logged)?;
        self.policy_opt
            .step(self.policy.params_mut(), &policy_grads)?;
        self.critic_opt
            .step(self.critic.params_mut(), &critic_grads)?;
        self.target.sync(&self.critic, self.spec.train.sync)?;
        report.weights = self.critic.weight_snapshot();
        Ok(report)
    }

    /// One behavioral-cloning update on logged positives. States are the
    /// logged histories; transitions without positives contribute nothing.
    pub fn bc_step(&mut self, batch: &[Demonstration]) -> Result<f64, TrainError> {
        if batch.is_empty() {
            return Err(TrainError::Config("empty batch".into()));
        }
        let mut g = Graph::new();
        let pb = self.policy.params().bind(&mut g);
        let mut parts = Vec::new();
        for t in batch {
            let c0 = self.policy.encode_graph(&mut g, &pb, &t.state)?;
            let trace = self.policy.forward_graph(&mut g, &pb, c0)?;
            if let Some(b) = bc_graph(&mut g, &trace, &t.sids, &t.feedback)? {
                parts.push(b);
            }
        }
        if parts.is_empty() {
            return Ok(0.0);
        }
        let joined = g.concat(&parts)?;
        let s = g.sum(joined)?;
        let loss = g.scale(s, 1.0 / batch.len() as f64)?;
        let value = g.scalar(loss);
        if !value.is_finite() {
            return Err(TrainError::NonFinite(format!("bc {value}")));
        }
        let grads = pb.gradients(self.policy.params(), &g.backward(loss)?);
        self.policy_opt.step(self.policy.params_mut(), &grads)?;
        Ok(value)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::new();
        ckpt.add_store("policy", self.policy.params());
        ckpt.add_store("critic", self.critic.params());
        ckpt.add_store("target", self.target.critic().params());
        ckpt
    }

    /// Restores parameters saved by [`Agent::to_checkpoint`]. Optimizer
    /// moments start fresh.
    pub fn from_checkpoint(
        spec: AgentSpec,
        vocab_sizes: &[usize],
        catalog: Catalog,
        index: SidIndex,
        ckpt: &Checkpoint,
    ) -> Result<Self, TrainError> {
        spec.train.validate()?;
        let policy = PolicyNetwork::from_params(
            spec.policy_config(vocab_sizes),
            catalog,
            ckpt.store("policy")?,
        )?;
        let critic_cfg = spec.critic_config(vocab_sizes.len());
        let critic = Critic::from_params(critic_cfg.clone(), ckpt.store("critic")?)?;
        let target = Critic::from_params(critic_cfg, ckpt.store("target")?)?;
        Self::assemble(spec, policy, critic, Some(target), index)
    }
}
