//! Builds every stage of a run from its config: data, codebook, simulators
//! and agents.

use std::collections::BTreeMap;

use hsrl_core::catalog::Catalog;
use hsrl_core::env::{
    fit_response_model, generate_synthetic, ingest_ratings, read_records, ClickModel, EnvError,
    LogRecord, PlantedClickModel, ResponseModel, SessionState, Simulator, SimulatorPreset,
    UserPool,
};
use hsrl_core::tokenizer::{fit_codebook, read_embeddings, ItemEmbedding, RqFit};
use hsrl_core::trainer::{
    demonstrations, evaluate, run_variant, train_supervised, training_rng, Agent, EvalSummary,
    Setup, Variant,
};

use crate::config::{DataSource, RunConfig, SimulatorKind};
use crate::error::CliError;

/// Logged records, item embeddings and, for synthetic data, the true click
/// model.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<LogRecord>,
    pub embeddings: Vec<ItemEmbedding>,
    pub catalog: Catalog,
    pub planted: Option<PlantedClickModel>,
}

impl Dataset {
    pub fn features(&self) -> BTreeMap<u64, Vec<f64>> {
        self.embeddings
            .iter()
            .map(|e| (e.item_id, e.vector.clone()))
            .collect()
    }

    /// Records the agent may learn from: the chronological training split.
    pub fn training_records(&self) -> Vec<LogRecord> {
        SimulatorPreset::TrainSplit.select(&self.records)
    }
}

pub fn load_dataset(config: &RunConfig) -> Result<Dataset, CliError> {
    match config.data.source {
        DataSource::Synthetic => {
            let data = generate_synthetic(&config.synthetic_config())?;
            let catalog = Catalog::new(data.embeddings.iter().map(|e| e.item_id));
            Ok(Dataset {
                records: data.records,
                embeddings: data.embeddings,
                catalog,
                planted: Some(data.click_model),
            })
        }
        DataSource::Files => {
            let path = config.data.embeddings.as_ref().expect("validated");
            let embeddings = read_embeddings(path)?;
            let records = match (&config.data.ratings, &config.data.records) {
                (Some(ratings), _) => ingest_ratings(ratings)?.0,
                (None, Some(records)) => read_records(records)?,
                (None, None) => unreachable!("validated"),
            };
            let catalog = Catalog::new(embeddings.iter().map(|e| e.item_id));
            for r in &records {
                if let Some(item) = r
                    .history
                    .iter()
                    .chain(&r.slate)
                    .find(|i| !catalog.contains(**i))
                {
                    return Err(CliError::Data(format!(
                        "record of user {} mentions item {item}, which has no embedding",
                        r.user_id
                    )));
                }
            }
            if records.is_empty() {
                return Err(CliError::Data("no records".into()));
            }
            Ok(Dataset {
                records,
                embeddings,
                catalog,
                planted: None,
            })
        }
    }
}

pub fn tokenize(config: &RunConfig, data: &Dataset) -> Result<RqFit, CliError> {
    Ok(fit_codebook(
        &data.embeddings,
        &config.tokenizer.vocab_sizes,
        config.seeds.tokenizer,
    )?)
}

/// Click model behind a simulator.
#[derive(Debug, Clone)]
pub enum UserModel {
    Learned(Box<ResponseModel>),
    Planted(PlantedClickModel),
}

impl ClickModel for UserModel {
    fn click_probs(&self, session: &SessionState, slate: &[u64]) -> Result<Vec<f64>, EnvError> {
        match self {
            UserModel::Learned(m) => m.click_probs(session, slate),
            UserModel::Planted(m) => m.click_probs(session, slate),
        }
    }
}

/// Separate simulators for training and evaluation.
#[derive(Debug, Clone)]
pub struct Simulators {
    pub train: Simulator<UserModel>,
    pub eval: Simulator<UserModel>,
}

/// Response models fitted on the training split and on every record.
pub fn fit_simulators(
    config: &RunConfig,
    data: &Dataset,
) -> Result<(ResponseModel, ResponseModel), CliError> {
    let features = data.features();
    let train = fit_response_model(
        &data.training_records(),
        data.catalog.clone(),
        Some(&features),
        &config.response_config(0),
    )?;
    let eval = fit_response_model(
        &SimulatorPreset::FullData.select(&data.records),
        data.catalog.clone(),
        Some(&features),
        &config.response_config(1),
    )?;
    Ok((train, eval))
}

pub fn build_simulators(config: &RunConfig, data: &Dataset) -> Result<Simulators, CliError> {
    let (train_model, eval_model) = match config.simulator.kind {
        SimulatorKind::Learned => {
            let (t, e) = fit_simulators(config, data)?;
            (
                UserModel::Learned(Box::new(t)),
                UserModel::Learned(Box::new(e)),
            )
        }
        SimulatorKind::Planted => {
            let planted = data.planted.clone().ok_or_else(|| {
                CliError::Config("the planted simulator needs synthetic data".into())
            })?;
            (
                UserModel::Planted(planted.clone()),
                UserModel::Planted(planted),
            )
        }
    };
    let env = config.env_config();
    Ok(Simulators {
        train: Simulator::new(
            train_model,
            env,
            UserPool::from_records(&data.training_records()),
        )?,
        eval: Simulator::new(eval_model, env, UserPool::from_records(&data.records))?,
    })
}

/// Everything an experiment needs, built once and shared across seeds.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: RunConfig,
    pub data: Dataset,
    pub fit: RqFit,
    pub simulators: Simulators,
    pub features: BTreeMap<u64, Vec<f64>>,
}

impl Prepared {
    pub fn new(config: &RunConfig) -> Result<Self, CliError> {
        let data = load_dataset(config)?;
        let fit = tokenize(config, &data)?;
        let simulators = build_simulators(config, &data)?;
        Ok(Self {
            config: config.clone(),
            features: data.features(),
            data,
            fit,
            simulators,
        })
    }

    pub fn setup(&self) -> Setup<'_> {
        Setup {
            vocab_sizes: &self.config.tokenizer.vocab_sizes,
            catalog: &self.data.catalog,
            index: &self.fit.index,
            features: Some(&self.features),
        }
    }

    pub fn agent(&self, agent_seed: u64) -> Result<Agent, CliError> {
        Ok(self.setup().agent(self.config.agent_spec(), agent_seed)?)
    }
}

/// What is trained in one experiment run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Rl(Variant),
    /// Behavioral cloning on the logged training split.
    Supervised,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Rl(v) => v.name(),
            Method::Supervised => "bc_only",
        }
    }
}

/// Trains one agent with `method` and evaluates it greedily on the
/// evaluation simulator.
pub fn run_method(
    prepared: &Prepared,
    method: Method,
    agent_seed: u64,
) -> Result<(Agent, EvalSummary), CliError> {
    let config = &prepared.config;
    let sims = &prepared.simulators;
    let sim_seed = config.seeds.simulator;
    let episodes = config.eval.episodes;
    match method {
        Method::Rl(variant) => {
            let spec = config.agent_spec();
            let probe = prepared.agent(agent_seed)?;
            let logged = if spec.train.logged_bc_batch > 0 {
                demonstrations(&probe, &prepared.data.training_records())?
            } else {
                Vec::new()
            };
            Ok(run_variant(
                variant,
                &spec,
                prepared.setup(),
                &sims.train,
                &sims.eval,
                &logged,
                agent_seed,
                sim_seed,
                episodes,
            )?)
        }
        Method::Supervised => {
            let mut agent = prepared.agent(agent_seed)?;
            let mut rng = training_rng(agent_seed, sim_seed);
            train_supervised(
                &mut agent,
                &prepared.data.training_records(),
                config.agent.iterations,
                &mut rng,
            )?;
            let summary = evaluate(&sims.eval, &agent, episodes, sim_seed)?;
            Ok((agent, summary))
        }
    }
}

/// Median of the values, `NaN` when empty.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len().is_multiple_of(2) {
        (v[mid - 1] + v[mid]) / 2.0
    } else {
        v[mid]
    }
}
