//! Joint actor-critic training of the hierarchical policy and the
//! multi-level critic against a slate environment.

mod agent;
mod losses;
mod rollout;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub use agent::{Agent, AgentSpec, Demonstration, LossReport, Transition};
pub use losses::{
    bc_graph, bc_loss, clipped_advantage, critic_loss, entropy_graph, entropy_term, slate_log_prob,
    slate_log_prob_graph, td_target,
};
pub use rollout::{
    demonstrations, evaluate, rollout, run_variant, train, train_supervised, training_rng, Episode,
    EvalSummary, IterationReport, SessionBatch, Setup,
};

use crate::checkpoint::CheckpointError;
use crate::env::EnvError;
use crate::hpn::HpnError;
use crate::mlc::{MlcError, SyncMode};
use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite loss, step aborted: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Policy(#[from] HpnError),
    #[error(transparent)]
    Critic(#[from] MlcError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub gamma: f64,
    pub lambda_en: f64,
    pub lambda_bc: f64,
    pub advantage_clip: f64,
    /// Transitions per update, one from each concurrently running session.
    pub batch_size: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub sync: SyncMode,
    /// Stop critic gradients at the encoder output.
    pub detach_critic_encoder: bool,
    /// Logged demonstrations added to the behavioral-cloning term of every
    /// update, on top of the rollout feedback.
    pub logged_bc_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            lambda_en: 0.1,
            lambda_bc: 0.5,
            advantage_clip: 1.0,
            batch_size: 8,
            iterations: 20_000,
            learning_rate: 1e-3,
            sync: SyncMode::default(),
            detach_critic_encoder: false,
            logged_bc_batch: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: String| Err(TrainError::Config(m));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return fail(format!("discount {} outside (0, 1)", self.gamma));
        }
        if !(self.lambda_en >= 0.0 && self.lambda_bc >= 0.0) {
            return fail(format!(
                "loss weights must be non-negative, got {} and {}",
                self.lambda_en, self.lambda_bc
            ));
        }
        if self.advantage_clip.is_nan() || self.advantage_clip <= 0.0 {
            return fail(format!(
                "advantage clip {} must be positive",
                self.advantage_clip
            ));
        }
        if self.batch_size == 0 {
            return fail("batch size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!(
                "learning rate {} must be positive",
                self.learning_rate
            ));
        }
        match self.sync {
            SyncMode::Soft { tau } if !(0.0..=1.0).contains(&tau) => {
                fail(format!("soft update rate {tau} outside [0, 1]"))
            }
            SyncMode::Hard { period: 0 } => fail("hard sync period must be positive".into()),
            _ => Ok(()),
        }
    }
}

/// Ablated configurations compared against the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variant {
    Full,
    NoEntropy,
    FlatPolicy,
    NoBc,
    SingleCritic,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoEntropy,
        Variant::FlatPolicy,
        Variant::NoBc,
        Variant::SingleCritic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoEntropy => "no_entropy",
            Variant::FlatPolicy => "flat_policy",
            Variant::NoBc => "no_bc",
            Variant::SingleCritic => "single_critic",
        }
    }

    /// A copy of `spec` with this variant's component removed.
    pub fn apply(self, spec: &AgentSpec) -> AgentSpec {
        let mut spec = spec.clone();
        match self {
            Variant::Full => {}
            Variant::NoEntropy => spec.train.lambda_en = 0.0,
            Variant::FlatPolicy => spec.flat_policy = true,
            Variant::NoBc => spec.train.lambda_bc = 0.0,
            Variant::SingleCritic => spec.single_critic = true,
        }
        spec
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| TrainError::Config(format!("unknown ablation variant `{s}`")))
    }
}
