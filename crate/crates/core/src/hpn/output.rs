use rand::Rng;

use super::{HpnError, PolicyTrace};
use crate::numerics::Graph;
use crate::tokenizer::{SemanticId, SidIndex};

/// Refined contexts `c_0 … c_L` of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextTrajectory(pub Vec<Vec<f64>>);

impl ContextTrajectory {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Level distributions and contexts of one forward pass, as plain values.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub probs: Vec<Vec<f64>>,
    pub log_probs: Vec<Vec<f64>>,
    pub trajectory: ContextTrajectory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlateMode {
    /// Top-k by score.
    Greedy,
    /// k draws without replacement, proportional to score.
    Sample,
}

fn draw(weights: &[f64], rng: &mut impl Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, w) in weights.iter().enumerate() {
        if *w > 0.0 {
            last = i;
            if u < *w {
                return i;
            }
            u -= w;
        }
    }
    last
}

impl PolicyOutput {
    pub fn from_trace(g: &Graph, trace: &PolicyTrace) -> Self {
        Self {
            probs: trace.probs.iter().map(|v| g.value(*v).to_vec()).collect(),
            log_probs: trace
                .log_probs
                .iter()
                .map(|v| g.value(*v).to_vec())
                .collect(),
            trajectory: ContextTrajectory(
                trace
                    .contexts
                    .iter()
                    .map(|v| g.value(*v).to_vec())
                    .collect(),
            ),
        }
    }

    pub fn levels(&self) -> usize {
        self.probs.len()
    }

    fn check(&self, z: &SemanticId) -> Result<(), HpnError> {
        if z.levels() != self.levels() {
            return Err(HpnError::Contract(format!(
                "SID {z} has {} levels, policy has {}",
                z.levels(),
                self.levels()
            )));
        }
        for (l, p) in self.probs.iter().enumerate() {
            if z.token(l) >= p.len() {
                return Err(HpnError::Contract(format!(
                    "token {} out of range at level {} (vocabulary {})",
                    z.token(l),
                    l + 1,
                    p.len()
                )));
            }
        }
        Ok(())
    }

    /// `Σ_ℓ log p_ℓ[z_ℓ]`.
    pub fn sid_log_prob(&self, z: &SemanticId) -> Result<f64, HpnError> {
        self.check(z)?;
        Ok(self
            .log_probs
            .iter()
            .enumerate()
            .map(|(l, lp)| lp[z.token(l)])
            .sum())
    }

    /// `Π_ℓ p_ℓ[z_ℓ]`.
    pub fn sid_prob(&self, z: &SemanticId) -> Result<f64, HpnError> {
        self.check(z)?;
        Ok(self
            .probs
            .iter()
            .enumerate()
            .map(|(l, p)| p[z.token(l)])
            .product())
    }

    /// Draws `z_ℓ ~ p_ℓ` independently per level.
    pub fn sample_sid(&self, rng: &mut impl Rng) -> SemanticId {
        SemanticId::new(self.probs.iter().map(|p| draw(p, rng) as u16).collect())
    }

    /// Per-level argmax tokens.
    pub fn argmax_sid(&self) -> SemanticId {
        SemanticId::new(
            self.probs
                .iter()
                .map(|p| {
                    p.iter()
                        .enumerate()
                        .fold((0, f64::NEG_INFINITY), |best, (i, v)| {
                            if *v > best.1 {
                                (i, *v)
                            } else {
                                best
                            }
                        })
                        .0 as u16
                })
                .collect(),
        )
    }

    /// Candidates scored by SID probability, descending, ties by ascending id.
    pub fn score_candidates(
        &self,
        index: &SidIndex,
        candidates: &[u64],
    ) -> Result<Vec<(u64, f64)>, HpnError> {
        let mut scored = candidates
            .iter()
            .map(|&item| {
                let z = index.sid(item).ok_or(HpnError::MissingSid(item))?;
                Ok((item, self.sid_prob(z)?))
            })
            .collect::<Result<Vec<_>, HpnError>>()?;
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(scored)
    }

    /// Chooses `k` distinct candidates.
    pub fn select_slate(
        &self,
        index: &SidIndex,
        candidates: &[u64],
        k: usize,
        mode: SlateMode,
        rng: &mut impl Rng,
    ) -> Result<Vec<u64>, HpnError> {
        if k > candidates.len() {
            return Err(HpnError::Contract(format!(
                "slate size {k} exceeds {} candidates",
                candidates.len()
            )));
        }
        let mut scored = self.score_candidates(index, candidates)?;
        match mode {
            SlateMode::Greedy => Ok(scored.into_iter().take(k).map(|(i, _)| i).collect()),
            SlateMode::Sample => {
                let mut slate = Vec::with_capacity(k);
                for _ in 0..k {
                    let weights: Vec<f64> = scored.iter().map(|(_, s)| *s).collect();
                    let pick = if weights.iter().sum::<f64>() > 0.0 {
                        draw(&weights, rng)
                    } else {
                        0
                    };
                    slate.push(scored.remove(pick).0);
                }
                Ok(slate)
            }
        }
    }
}
