//! The run configuration: one TOML document holding every tunable.

use std::path::{Path, PathBuf};

use hsrl_core::env::{EnvConfig, ResponseConfig, SyntheticConfig};
use hsrl_core::mlc::SyncMode;
use hsrl_core::trainer::{AgentSpec, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct Seeds {
    pub tokenizer: u64,
    pub simulator: u64,
    pub agent: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Generated catalog with planted clusters.
    Synthetic,
    /// Records and embeddings read from files.
    Files,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub source: DataSource,
    /// Records file, used when `source = "files"` and no ratings file is given.
    pub records: Option<PathBuf>,
    /// Ratings file to ingest into records.
    pub ratings: Option<PathBuf>,
    /// Item embeddings file, required when `source = "files"`.
    pub embeddings: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            records: None,
            ratings: None,
            embeddings: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSection {
    pub items: usize,
    pub clusters: usize,
    pub dim: usize,
    pub users: usize,
    pub records_per_user: usize,
    pub slate_len: usize,
    pub separation: f64,
    pub spread: f64,
    pub quality_weight: f64,
    pub p_preferred: f64,
    pub p_other: f64,
    pub popularity_exponent: f64,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        let d = SyntheticConfig::default();
        Self {
            items: d.items,
            clusters: d.clusters,
            dim: d.dim,
            users: d.users,
            records_per_user: d.records_per_user,
            slate_len: d.slate_len,
            separation: d.separation,
            spread: d.spread,
            quality_weight: d.quality_weight,
            p_preferred: d.p_preferred,
            p_other: d.p_other,
            popularity_exponent: d.popularity_exponent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TokenizerSection {
    /// `T_ℓ` per level; its length is `L`.
    pub vocab_sizes: Vec<usize>,
}

impl Default for TokenizerSection {
    fn default() -> Self {
        Self {
            vocab_sizes: vec![16, 16, 16],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimulatorKind {
    /// Response models fitted to the logs: one on the training split drives
    /// training, one on all records drives evaluation.
    Learned,
    /// The generator's ground-truth click model for both roles.
    Planted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulatorSection {
    pub kind: SimulatorKind,
    pub d_model: usize,
    pub history_window: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Slate size `k`.
    pub slate_size: usize,
    /// Initial patience `P0`.
    pub patience: usize,
    /// Horizon `T_max`.
    pub horizon: usize,
}

impl Default for SimulatorSection {
    fn default() -> Self {
        let r = ResponseConfig::default();
        let e = EnvConfig::default();
        Self {
            kind: SimulatorKind::Learned,
            d_model: r.d_model,
            history_window: r.history_window,
            epochs: r.epochs,
            batch_size: r.batch_size,
            learning_rate: r.learning_rate,
            slate_size: e.slate_size,
            patience: e.patience,
            horizon: e.horizon,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncKind {
    Soft,
    Hard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentSection {
    pub d_model: usize,
    pub history_window: usize,
    pub critic_hidden: usize,
    pub gamma: f64,
    pub lambda_en: f64,
    pub lambda_bc: f64,
    pub advantage_clip: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub sync: SyncKind,
    pub tau: f64,
    pub sync_period: usize,
    pub detach_critic_encoder: bool,
    pub logged_bc_batch: usize,
}

impl Default for AgentSection {
    fn default() -> Self {
        let s = AgentSpec::default();
        let t = TrainConfig::default();
        Self {
            d_model: s.d_model,
            history_window: s.history_window,
            critic_hidden: s.critic_hidden,
            gamma: t.gamma,
            lambda_en: t.lambda_en,
            lambda_bc: t.lambda_bc,
            advantage_clip: t.advantage_clip,
            batch_size: t.batch_size,
            iterations: t.iterations,
            learning_rate: t.learning_rate,
            sync: SyncKind::Soft,
            tau: 0.005,
            sync_period: 100,
            detach_critic_encoder: t.detach_critic_encoder,
            logged_bc_batch: t.logged_bc_batch,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Greedy episodes per evaluation.
    pub episodes: usize,
    /// Iterations between periodic evaluations during training; 0 disables them.
    pub every: usize,
    /// Iterations aggregated into one metrics row.
    pub log_every: usize,
    /// Agent seeds per grid point in sweeps and ablations, counting up from
    /// `seeds.agent`.
    pub runs: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            episodes: 100,
            every: 1000,
            log_every: 100,
            runs: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seeds: Seeds,
    pub data: DataSection,
    pub synthetic: SyntheticSection,
    pub tokenizer: TokenizerSection,
    pub simulator: SimulatorSection,
    pub agent: AgentSection,
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let fail = |m: String| Err(CliError::Config(m));
        let v = &self.tokenizer.vocab_sizes;
        if v.is_empty() || v.contains(&0) || v.iter().any(|&t| t > usize::from(u16::MAX) + 1) {
            return fail(format!(
                "tokenizer.vocab_sizes must be non-empty positive sizes, got {v:?}"
            ));
        }
        if self.data.source == DataSource::Files {
            if self.data.embeddings.is_none() {
                return fail("data.embeddings is required when data.source = \"files\"".into());
            }
            if self.data.records.is_none() && self.data.ratings.is_none() {
                return fail(
                    "data.records or data.ratings is required when data.source = \"files\"".into(),
                );
            }
            if self.simulator.kind == SimulatorKind::Planted {
                return fail("the planted simulator exists only for synthetic data".into());
            }
        }
        let s = &self.simulator;
        if s.slate_size == 0 || s.patience == 0 || s.horizon == 0 {
            return fail("simulator.slate_size, patience and horizon must be positive".into());
        }
        if s.d_model < 2
            || s.history_window == 0
            || s.batch_size == 0
            || s.learning_rate.is_nan()
            || s.learning_rate <= 0.0
        {
            return fail("simulator model settings out of range".into());
        }
        let a = &self.agent;
        if a.d_model < 2 || a.history_window == 0 || a.critic_hidden == 0 {
            return fail("agent.d_model, history_window and critic_hidden out of range".into());
        }
        if self.eval.log_every == 0 {
            return fail("eval.log_every must be positive".into());
        }
        if self.eval.runs == 0 {
            return fail("eval.runs must be positive".into());
        }
        self.agent_spec()
            .train
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn synthetic_config(&self) -> SyntheticConfig {
        let s = &self.synthetic;
        SyntheticConfig {
            items: s.items,
            clusters: s.clusters,
            dim: s.dim,
            users: s.users,
            records_per_user: s.records_per_user,
            slate_len: s.slate_len,
            separation: s.separation,
            spread: s.spread,
            quality_weight: s.quality_weight,
            p_preferred: s.p_preferred,
            p_other: s.p_other,
            popularity_exponent: s.popularity_exponent,
            seed: self.seeds.simulator,
        }
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            slate_size: self.simulator.slate_size,
            patience: self.simulator.patience,
            horizon: self.simulator.horizon,
            history_window: self.agent.history_window,
        }
    }

    /// Response-model settings; the evaluation model gets the next seed.
    pub fn response_config(&self, seed_offset: u64) -> ResponseConfig {
        let s = &self.simulator;
        ResponseConfig {
            d_model: s.d_model,
            history_window: s.history_window,
            epochs: s.epochs,
            batch_size: s.batch_size,
            learning_rate: s.learning_rate,
            seed: self.seeds.simulator.wrapping_add(seed_offset),
        }
    }

    pub fn agent_spec(&self) -> AgentSpec {
        let a = &self.agent;
        AgentSpec {
            d_model: a.d_model,
            history_window: a.history_window,
            critic_hidden: a.critic_hidden,
            flat_policy: false,
            single_critic: false,
            train: TrainConfig {
                gamma: a.gamma,
                lambda_en: a.lambda_en,
                lambda_bc: a.lambda_bc,
                advantage_clip: a.advantage_clip,
                batch_size: a.batch_size,
                iterations: a.iterations,
                learning_rate: a.learning_rate,
                sync: match a.sync {
                    SyncKind::Soft => SyncMode::Soft { tau: a.tau },
                    SyncKind::Hard => SyncMode::Hard {
                        period: a.sync_period,
                    },
                },
                detach_critic_encoder: a.detach_critic_encoder,
                logged_bc_batch: a.logged_bc_batch,
            },
        }
    }
}
