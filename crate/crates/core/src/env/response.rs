//! Learned user-response model Ψ: state × slate → click probabilities.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{split_records, ClickModel, EnvError, LogRecord, SessionState};
use crate::catalog::Catalog;
use crate::hpn::{projected_item_rows, EncoderShape, Interaction, SequenceEncoder, UserState};
use crate::numerics::{sigmoid, Bound, Graph, Optimizer, ParamId, ParamStore, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseConfig {
    pub d_model: usize,
    pub history_window: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ResponseConfig {
    fn default() -> Self {
        Self {
            d_model: 16,
            history_window: 10,
            epochs: 20,
            batch_size: 16,
            learning_rate: 0.003,
            seed: 0,
        }
    }
}

/// Which logs a simulator is fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimulatorPreset {
    /// Chronologically first 80% of every user's records; drives training.
    TrainSplit,
    /// Every record; used only for evaluation.
    FullData,
}

impl SimulatorPreset {
    pub fn select(self, records: &[LogRecord]) -> Vec<LogRecord> {
        match self {
            SimulatorPreset::TrainSplit => split_records(records, 0.8).0,
            SimulatorPreset::FullData => records.to_vec(),
        }
    }
}

/// Sequence encoder over the user's clicked items followed by a bilinear
/// item scorer. Only positive interactions enter the state, matching logged
/// histories, which record positives only.
#[derive(Debug, Clone)]
pub struct ResponseModel {
    catalog: Catalog,
    params: ParamStore,
    encoder: SequenceEncoder,
    candidates: ParamId,
    item_bias: ParamId,
    window: usize,
    /// Item tables come from content features and stay fixed during fitting.
    content_tables: bool,
}

impl ResponseModel {
    pub fn new(
        catalog: Catalog,
        features: Option<&BTreeMap<u64, Vec<f64>>>,
        config: &ResponseConfig,
        rng: &mut impl Rng,
    ) -> Result<Self, EnvError> {
        if catalog.is_empty() || config.d_model < 2 || config.history_window == 0 {
            return Err(EnvError::Contract(format!(
                "invalid response model setup {config:?}"
            )));
        }
        let d = config.d_model;
        let rows = features.and_then(|f| projected_item_rows(&catalog, f, d, rng));
        let content_tables = rows.is_some();
        let mut params = ParamStore::new();
        let shape = EncoderShape {
            d_model: d,
            history_window: config.history_window,
            profile_dim: 0,
        };
        let encoder =
            SequenceEncoder::init(&mut params, "psi", shape, catalog.len(), rows.clone(), rng);
        let cand = rows.unwrap_or_else(|| Tensor::uniform(vec![catalog.len(), d], 0.5, rng));
        let candidates = params.add("psi.candidates", cand);
        let item_bias = params.add("psi.item_bias", Tensor::zeros(vec![catalog.len()]));
        Ok(Self {
            catalog,
            params,
            encoder,
            candidates,
            item_bias,
            window: config.history_window,
            content_tables,
        })
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    fn positive_state(&self, history: impl IntoIterator<Item = Interaction>) -> UserState {
        UserState::with_history(
            Vec::new(),
            self.window,
            history.into_iter().filter(|h| h.clicked),
        )
    }

    fn logits(
        &self,
        g: &mut Graph,
        p: &Bound,
        state: &UserState,
        slate: &[u64],
    ) -> Result<Var, EnvError> {
        let u = self.encoder.encode(g, p, &self.catalog, state)?;
        let mut rows = Vec::with_capacity(slate.len());
        let mut biases = Vec::with_capacity(slate.len());
        for &item in slate {
            let pos = self.catalog.position(item).ok_or_else(|| {
                EnvError::Data(format!("item {item} is not in the simulator catalog"))
            })?;
            rows.push(g.row(p.var(self.candidates), pos)?);
            biases.push(g.index(p.var(self.item_bias), pos)?);
        }
        let m = g.stack_rows(&rows)?;
        let scores = g.matvec(m, u)?;
        let b = g.concat(&biases)?;
        Ok(g.add(scores, b)?)
    }

    /// Click probabilities for `slate` after the given interactions.
    pub fn predict(&self, history: &[Interaction], slate: &[u64]) -> Result<Vec<f64>, EnvError> {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let state = self.positive_state(history.iter().copied());
        let logits = self.logits(&mut g, &p, &state, slate)?;
        Ok(g.value(logits).iter().map(|&x| sigmoid(x)).collect())
    }

    fn record_state(&self, r: &LogRecord) -> UserState {
        self.positive_state(r.history.iter().map(|&item| Interaction {
            item,
            clicked: true,
        }))
    }

    /// Mean per-item binary cross-entropy over `records`.
    pub fn log_loss(&self, records: &[LogRecord]) -> Result<f64, EnvError> {
        let mut total = 0.0;
        let mut n = 0usize;
        for r in records {
            let probs = self.predict(
                &r.history
                    .iter()
                    .map(|&item| Interaction {
                        item,
                        clicked: true,
                    })
                    .collect::<Vec<_>>(),
                &r.slate,
            )?;
            for (p, y) in probs.iter().zip(&r.labels) {
                let p = p.clamp(1e-12, 1.0 - 1e-12);
                total -= if *y { p.ln() } else { (1.0 - p).ln() };
                n += 1;
            }
        }
        Ok(total / n.max(1) as f64)
    }
}

impl ClickModel for ResponseModel {
    fn click_probs(&self, session: &SessionState, slate: &[u64]) -> Result<Vec<f64>, EnvError> {
        self.predict(session.user.history(), slate)
    }
}

/// Fits Ψ to logged labels by minibatch binary cross-entropy.
pub fn fit_response_model(
    records: &[LogRecord],
    catalog: Catalog,
    features: Option<&BTreeMap<u64, Vec<f64>>>,
    config: &ResponseConfig,
) -> Result<ResponseModel, EnvError> {
    if records.is_empty() {
        return Err(EnvError::Data(
            "no records to fit the response model on".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = ResponseModel::new(catalog, features, config, &mut rng)?;
    let mut opt = Optimizer::adam(config.learning_rate, &model.params);
    let mut order: Vec<usize> = (0..records.len()).collect();
    let batch = config.batch_size.max(1);
    for _ in 0..config.epochs {
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        for chunk in order.chunks(batch) {
            let mut g = Graph::new();
            let p = model.params.bind(&mut g);
            let mut losses = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let r = &records[i];
                let state = model.record_state(r);
                let logits = model.logits(&mut g, &p, &state, &r.slate)?;
                let targets: Vec<f64> = r.labels.iter().map(|&y| f64::from(u8::from(y))).collect();
                losses.push(g.bce_with_logits(logits, &targets)?);
            }
            let joined = g.concat(&losses)?;
            let loss = g.mean(joined)?;
            let mut grads = p.gradients(&model.params, &g.backward(loss)?);
            if model.content_tables {
                for id in [model.encoder.item_table(), model.candidates] {
                    grads.0[id.0].fill(0.0);
                }
            }
            opt.step(&mut model.params, &grads)?;
        }
    }
    Ok(model)
}
