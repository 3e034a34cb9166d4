use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::agent::{Agent, AgentSpec, Demonstration, LossReport, Transition};
use super::{TrainError, Variant};
use crate::catalog::Catalog;
use crate::env::{EnvError, Environment, EpisodeMetrics, LogRecord, SessionState};
use crate::hpn::{Interaction, SlateMode, UserState};
use crate::tokenizer::SidIndex;

/// A finished session.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub transitions: Vec<Transition>,
    pub metrics: EpisodeMetrics,
}

fn step_session<E: Environment, R: Rng>(
    env: &E,
    agent: &Agent,
    session: &SessionState,
    mode: SlateMode,
    rng: &mut R,
) -> Result<(Transition, SessionState), TrainError> {
    let k = env.config().slate_size;
    let (output, slate, sids) = agent.act(&session.user, k, mode, rng)?;
    let outcome = env.step(session, &slate, rng)?;
    let transition = Transition {
        state: session.user.clone(),
        output,
        slate,
        sids,
        feedback: outcome.feedback,
        reward: outcome.reward,
        next_state: outcome.next.user.clone(),
        done: outcome.done,
    };
    Ok((transition, outcome.next))
}

/// Runs one session to termination. Sample mode draws slates from the
/// policy; greedy mode takes the top-scored items.
pub fn rollout<E: Environment, R: Rng>(
    env: &E,
    agent: &Agent,
    mode: SlateMode,
    rng: &mut R,
) -> Result<Episode, TrainError> {
    let mut session = env.reset(rng)?;
    let mut transitions = Vec::new();
    let mut metrics = EpisodeMetrics::default();
    while !session.done {
        if metrics.depth >= env.config().horizon {
            return Err(EnvError::Contract(format!(
                "environment kept the session open past the horizon of {}",
                env.config().horizon
            ))
            .into());
        }
        let (t, next) = step_session(env, agent, &session, mode, rng)?;
        metrics.total_reward += t.reward;
        metrics.depth += 1;
        transitions.push(t);
        session = next;
    }
    Ok(Episode {
        transitions,
        metrics,
    })
}

/// Concurrently running training sessions, each contributing one transition
/// per iteration and restarting when it ends.
#[derive(Debug, Clone)]
pub struct SessionBatch {
    slots: Vec<Option<(SessionState, EpisodeMetrics)>>,
}

impl SessionBatch {
    pub fn new(size: usize) -> Self {
        Self {
            slots: vec![None; size],
        }
    }

    /// Advances every session by one sampled step. Returns the transitions
    /// and the metrics of sessions that ended.
    pub fn collect<E: Environment, R: Rng>(
        &mut self,
        env: &E,
        agent: &Agent,
        rng: &mut R,
    ) -> Result<(Vec<Transition>, Vec<EpisodeMetrics>), TrainError> {
        let mut batch = Vec::with_capacity(self.slots.len());
        let mut finished = Vec::new();
        for slot in &mut self.slots {
            let (session, mut metrics) = match slot.take() {
                Some(s) => s,
                None => (env.reset(rng)?, EpisodeMetrics::default()),
            };
            let (t, next) = step_session(env, agent, &session, SlateMode::Sample, rng)?;
            metrics.total_reward += t.reward;
            metrics.depth += 1;
            if next.done {
                finished.push(metrics);
            } else {
                *slot = Some((next, metrics));
            }
            batch.push(t);
        }
        Ok((batch, finished))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationReport {
    /// 1-based update count.
    pub iteration: usize,
    pub loss: LossReport,
    pub finished: Vec<EpisodeMetrics>,
}

/// Mean, median and population standard deviation.
fn summarize(values: &[f64]) -> (f64, f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len().is_multiple_of(2) {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    } else {
        sorted[mid]
    };
    (mean, median, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub episodes: Vec<EpisodeMetrics>,
    pub reward_mean: f64,
    pub reward_median: f64,
    pub reward_std: f64,
    pub depth_mean: f64,
    pub depth_median: f64,
    pub depth_std: f64,
}

impl EvalSummary {
    pub fn from_episodes(episodes: Vec<EpisodeMetrics>) -> Self {
        let rewards: Vec<f64> = episodes.iter().map(|m| m.total_reward).collect();
        let depths: Vec<f64> = episodes.iter().map(|m| m.depth as f64).collect();
        let (reward_mean, reward_median, reward_std) = summarize(&rewards);
        let (depth_mean, depth_median, depth_std) = summarize(&depths);
        Self {
            episodes,
            reward_mean,
            reward_median,
            reward_std,
            depth_mean,
            depth_median,
            depth_std,
        }
    }
}

/// `episodes` greedy sessions; episode `e` draws its randomness from stream
/// `e` of `seed`, so results do not depend on how many were run before it.
pub fn evaluate<E: Environment>(
    env: &E,
    agent: &Agent,
    episodes: usize,
    seed: u64,
) -> Result<EvalSummary, TrainError> {
    let mut metrics = Vec::with_capacity(episodes);
    for e in 0..episodes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(e as u64);
        metrics.push(rollout(env, agent, SlateMode::Greedy, &mut rng)?.metrics);
    }
    Ok(EvalSummary::from_episodes(metrics))
}

/// Logged records as policy states paired with the shown slate's clicks.
/// States hold the logged positives only.
pub fn demonstrations(
    agent: &Agent,
    records: &[LogRecord],
) -> Result<Vec<Demonstration>, TrainError> {
    let window = agent.spec().history_window;
    records
        .iter()
        .map(|r| {
            Ok(Demonstration {
                state: UserState::with_history(
                    Vec::new(),
                    window,
                    r.history.iter().map(|&item| Interaction {
                        item,
                        clicked: true,
                    }),
                ),
                sids: agent.sids(&r.slate)?,
                feedback: r.labels.clone(),
            })
        })
        .collect()
}

fn draw_demos<R: Rng>(demos: &[Demonstration], n: usize, rng: &mut R) -> Vec<Demonstration> {
    (0..n)
        .map(|_| demos[rng.random_range(0..demos.len())].clone())
        .collect()
}

/// Behavioral cloning on logged records only: each update imitates the
/// clicked items of `batch_size` uniformly drawn records.
pub fn train_supervised<R: Rng>(
    agent: &mut Agent,
    records: &[LogRecord],
    iterations: usize,
    rng: &mut R,
) -> Result<Vec<f64>, TrainError> {
    if records.is_empty() {
        return Err(EnvError::Data("no logged records for behavioral cloning".into()).into());
    }
    let demos = demonstrations(agent, records)?;
    let b = agent.config().batch_size;
    let mut losses = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let batch = draw_demos(&demos, b, rng);
        losses.push(agent.bc_step(&batch)?);
    }
    Ok(losses)
}

/// Inputs shared by every agent trained in one experiment.
#[derive(Debug, Clone, Copy)]
pub struct Setup<'a> {
    pub vocab_sizes: &'a [usize],
    pub catalog: &'a Catalog,
    pub index: &'a SidIndex,
    pub features: Option<&'a BTreeMap<u64, Vec<f64>>>,
}

impl Setup<'_> {
    /// Fresh agent whose initialization depends only on `seed`.
    pub fn agent(&self, spec: AgentSpec, seed: u64) -> Result<Agent, TrainError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Agent::new(
            spec,
            self.vocab_sizes,
            self.catalog.clone(),
            self.index.clone(),
            self.features,
            &mut rng,
        )
    }
}

/// Random stream for rollouts during training, separate from the one used to
/// initialize the agent.
pub fn training_rng(agent_seed: u64, sim_seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(agent_seed ^ 0x5DEE_CE66_D1A4_F87B);
    rng.set_stream(sim_seed);
    rng
}

/// Trains for `agent.config().iterations` updates, calling `observe` after
/// every update.
pub fn train<E: Environment, R: Rng>(
    agent: &mut Agent,
    env: &E,
    logged: &[Demonstration],
    rng: &mut R,
    mut observe: impl FnMut(&IterationReport, &Agent) -> Result<(), TrainError>,
) -> Result<(), TrainError> {
    let extra = agent.config().logged_bc_batch;
    if extra > 0 && logged.is_empty() {
        return Err(TrainError::Config(
            "logged behavioral cloning requested without logged records".into(),
        ));
    }
    let mut sessions = SessionBatch::new(agent.config().batch_size);
    for iteration in 1..=agent.config().iterations {
        let (batch, finished) = sessions.collect(env, agent, rng)?;
        let demos = draw_demos(logged, extra, rng);
        let loss = agent.train_step_with(&batch, &demos)?;
        observe(
            &IterationReport {
                iteration,
                loss,
                finished,
            },
            agent,
        )?;
    }
    Ok(())
}

/// Trains one ablation variant and evaluates it greedily.
#[allow(clippy::too_many_arguments)]
pub fn run_variant<E: Environment, F: Environment>(
    variant: Variant,
    spec: &AgentSpec,
    setup: Setup<'_>,
    train_env: &E,
    eval_env: &F,
    logged: &[Demonstration],
    agent_seed: u64,
    sim_seed: u64,
    eval_episodes: usize,
) -> Result<(Agent, EvalSummary), TrainError> {
    let mut agent = setup.agent(variant.apply(spec), agent_seed)?;
    let mut rng = training_rng(agent_seed, sim_seed);
    train(&mut agent, train_env, logged, &mut rng, |_, _| Ok(()))?;
    let summary = evaluate(eval_env, &agent, eval_episodes, sim_seed)?;
    Ok((agent, summary))
}
