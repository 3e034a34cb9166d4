use super::{NumericsError, ParamGrads, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    /// Adaptive moments with bias correction.
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
    Sgd,
}

impl OptimizerKind {
    pub fn adam() -> Self {
        Self::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First-order optimizer for one [`ParamStore`].
///
/// A tensor whose gradient is exactly zero is skipped: neither its values
/// nor its moment estimates change on that step.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    tensor_steps: Vec<u64>,
    steps: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, store: &ParamStore) -> Self {
        assert!(learning_rate > 0.0, "learning rate must be positive");
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self {
            kind,
            learning_rate,
            first: zeros.clone(),
            second: zeros,
            tensor_steps: vec![0; store.len()],
            steps: 0,
        }
    }

    pub fn adam(learning_rate: f64, store: &ParamStore) -> Self {
        Self::new(OptimizerKind::adam(), learning_rate, store)
    }

    pub fn sgd(learning_rate: f64, store: &ParamStore) -> Self {
        Self::new(OptimizerKind::Sgd, learning_rate, store)
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    /// Applies one update. Non-finite gradients abort the step before any
    /// parameter is touched.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &ParamGrads,
    ) -> Result<(), NumericsError> {
        if grads.0.len() != store.len() {
            return Err(NumericsError::Contract(format!(
                "{} gradient buffers for {} parameters",
                grads.0.len(),
                store.len()
            )));
        }
        if !grads.is_finite() {
            return Err(NumericsError::NonFinite {
                op: "optimizer step",
            });
        }
        let lr = self.learning_rate;
        for (i, g) in grads.0.iter().enumerate() {
            if g.iter().all(|v| *v == 0.0) {
                continue;
            }
            let data = store.get_mut(ParamId(i)).data_mut();
            match self.kind {
                OptimizerKind::Sgd => {
                    for (p, gi) in data.iter_mut().zip(g) {
                        *p -= lr * gi;
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    self.tensor_steps[i] += 1;
                    let t = self.tensor_steps[i] as i32;
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    let (m, v) = (&mut self.first[i], &mut self.second[i]);
                    for (((p, gi), mi), vi) in
                        data.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut())
                    {
                        *mi = beta1 * *mi + (1.0 - beta1) * gi;
                        *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                        let mhat = *mi / c1;
                        let vhat = *vi / c2;
                        *p -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        self.steps += 1;
        Ok(())
    }
}
