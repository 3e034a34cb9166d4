//! Simulated users: click models, patience-limited sessions and the data
//! they are fitted from.

mod records;
mod response;
mod synthetic;

use rand::Rng;
use thiserror::Error;

pub use records::{
    format_record, ingest_ratings, parse_record, read_records, records_catalog, split_records,
    write_records, LogRecord, RECORD_HISTORY_LEN, RECORD_SLATE_LEN,
};
pub use response::{fit_response_model, ResponseConfig, ResponseModel, SimulatorPreset};
pub use synthetic::{generate_synthetic, PlantedClickModel, SyntheticConfig, SyntheticData};

use crate::hpn::{HpnError, Interaction, UserState};
use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("data error: {0}")]
    Data(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Policy(#[from] HpnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-item signal for a click.
pub const CLICK_SIGNAL: f64 = 1.0;
/// Per-item signal for an ignored item.
pub const SKIP_SIGNAL: f64 = -0.2;

/// Mean per-item signal of one slate's feedback.
pub fn slate_reward(feedback: &[bool]) -> f64 {
    if feedback.is_empty() {
        return 0.0;
    }
    let clicks = feedback.iter().filter(|y| **y).count() as f64;
    let rate = clicks / feedback.len() as f64;
    (SKIP_SIGNAL + (CLICK_SIGNAL - SKIP_SIGNAL) * rate).clamp(SKIP_SIGNAL, CLICK_SIGNAL)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnvConfig {
    pub slate_size: usize,
    pub patience: usize,
    pub horizon: usize,
    pub history_window: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            slate_size: 5,
            patience: 3,
            horizon: 20,
            history_window: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    pub user_id: u64,
    pub user: UserState,
    pub patience: usize,
    pub step: usize,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub feedback: Vec<bool>,
    pub reward: f64,
    pub next: SessionState,
    pub done: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpisodeMetrics {
    pub total_reward: f64,
    pub depth: usize,
}

/// Maps a session and a slate to per-item click probabilities.
pub trait ClickModel {
    fn click_probs(&self, session: &SessionState, slate: &[u64]) -> Result<Vec<f64>, EnvError>;
}

impl<M: ClickModel + ?Sized> ClickModel for &M {
    fn click_probs(&self, session: &SessionState, slate: &[u64]) -> Result<Vec<f64>, EnvError> {
        (**self).click_probs(session, slate)
    }
}

/// Episodic environment over slates.
pub trait Environment {
    fn config(&self) -> &EnvConfig;
    fn reset<R: Rng>(&self, rng: &mut R) -> Result<SessionState, EnvError>;
    fn step<R: Rng>(
        &self,
        session: &SessionState,
        slate: &[u64],
        rng: &mut R,
    ) -> Result<StepOutcome, EnvError>;
}

/// Starting points for sessions: a user and the interactions they bring.
#[derive(Debug, Clone, PartialEq)]
pub struct UserPool {
    entries: Vec<(u64, Vec<Interaction>)>,
}

impl UserPool {
    pub fn new(entries: Vec<(u64, Vec<Interaction>)>) -> Self {
        Self { entries }
    }

    /// One entry per record: the user with the record's logged positives.
    pub fn from_records(records: &[LogRecord]) -> Self {
        Self::new(
            records
                .iter()
                .map(|r| {
                    let history = r
                        .history
                        .iter()
                        .map(|&item| Interaction {
                            item,
                            clicked: true,
                        })
                        .collect();
                    (r.user_id, history)
                })
                .collect(),
        )
    }

    /// Users starting with an empty history.
    pub fn cold_start(users: impl IntoIterator<Item = u64>) -> Self {
        Self::new(users.into_iter().map(|u| (u, Vec::new())).collect())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(u64, Vec<Interaction>)] {
        &self.entries
    }
}

/// Patience-limited sessions against a click model.
#[derive(Debug, Clone)]
pub struct Simulator<M> {
    model: M,
    config: EnvConfig,
    pool: UserPool,
}

impl<M: ClickModel> Simulator<M> {
    pub fn new(model: M, config: EnvConfig, pool: UserPool) -> Result<Self, EnvError> {
        if pool.is_empty() {
            return Err(EnvError::Data("empty user pool".into()));
        }
        if config.slate_size == 0 || config.patience == 0 || config.horizon == 0 {
            return Err(EnvError::Contract(format!(
                "invalid environment config {config:?}"
            )));
        }
        Ok(Self {
            model,
            config,
            pool,
        })
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn pool(&self) -> &UserPool {
        &self.pool
    }
}

impl<M: ClickModel> Environment for Simulator<M> {
    fn config(&self) -> &EnvConfig {
        &self.config
    }

    fn reset<R: Rng>(&self, rng: &mut R) -> Result<SessionState, EnvError> {
        let (user_id, history) = &self.pool.entries[rng.random_range(0..self.pool.len())];
        Ok(SessionState {
            user_id: *user_id,
            user: UserState::with_history(
                Vec::new(),
                self.config.history_window,
                history.iter().copied(),
            ),
            patience: self.config.patience,
            step: 0,
            done: false,
        })
    }

    fn step<R: Rng>(
        &self,
        session: &SessionState,
        slate: &[u64],
        rng: &mut R,
    ) -> Result<StepOutcome, EnvError> {
        if session.done {
            return Err(EnvError::Contract("cannot step a finished session".into()));
        }
        if slate.len() != self.config.slate_size {
            return Err(EnvError::Contract(format!(
                "slate has {} items, environment expects {}",
                slate.len(),
                self.config.slate_size
            )));
        }
        let probs = self.model.click_probs(session, slate)?;
        if probs.len() != slate.len() || probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(EnvError::Contract(format!(
                "click model returned invalid probabilities {probs:?}"
            )));
        }
        let feedback: Vec<bool> = probs.iter().map(|&p| rng.random_bool(p)).collect();
        Ok(advance(&self.config, session, slate, feedback))
    }
}

/// Applies observed feedback to a session: reward, history, patience and the
/// horizon cap.
pub fn advance(
    config: &EnvConfig,
    session: &SessionState,
    slate: &[u64],
    feedback: Vec<bool>,
) -> StepOutcome {
    let reward = slate_reward(&feedback);
    let mut next = session.clone();
    for (&item, &clicked) in slate.iter().zip(&feedback) {
        next.user.push(Interaction { item, clicked });
    }
    if feedback.iter().any(|y| *y) {
        next.patience = config.patience;
    } else {
        next.patience = next.patience.saturating_sub(1);
    }
    next.step += 1;
    next.done = next.patience == 0 || next.step >= config.horizon;
    StepOutcome {
        done: next.done,
        feedback,
        reward,
        next,
    }
}
