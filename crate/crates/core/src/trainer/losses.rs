//! Actor-critic loss terms, as plain values and as graph nodes.

use crate::hpn::{HpnError, PolicyOutput, PolicyTrace};
use crate::numerics::{Graph, Var};
use crate::tokenizer::SemanticId;

/// `r + γ(1−d)·V̂'`.
pub fn td_target(reward: f64, done: bool, next_value: f64, gamma: f64) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * next_value
    }
}

/// `clip(Q − V̂, −c, c)`.
pub fn clipped_advantage(q: f64, value: f64, clip: f64) -> f64 {
    (q - value).clamp(-clip, clip)
}

/// Mean over the slate of each item's SID log-likelihood.
pub fn slate_log_prob(output: &PolicyOutput, sids: &[SemanticId]) -> Result<f64, HpnError> {
    if sids.is_empty() {
        return Err(HpnError::Contract("empty slate".into()));
    }
    let mut total = 0.0;
    for z in sids {
        total += output.sid_log_prob(z)?;
    }
    Ok(total / sids.len() as f64)
}

/// `Σ_ℓ Σ_z p log p`, the negative entropy summed over levels.
pub fn entropy_term(output: &PolicyOutput) -> f64 {
    output
        .probs
        .iter()
        .flatten()
        .filter(|p| **p > 0.0)
        .map(|p| p * p.ln())
        .sum()
}

/// `−(1/Σy) Σ y_a log π(z_a)`; zero when nothing was clicked.
pub fn bc_loss(
    output: &PolicyOutput,
    sids: &[SemanticId],
    feedback: &[bool],
) -> Result<f64, HpnError> {
    if sids.len() != feedback.len() {
        return Err(HpnError::Contract(format!(
            "{} SIDs but {} feedback bits",
            sids.len(),
            feedback.len()
        )));
    }
    let positives = feedback.iter().filter(|y| **y).count();
    if positives == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (z, _) in sids.iter().zip(feedback).filter(|(_, y)| **y) {
        total -= output.sid_log_prob(z)?;
    }
    Ok(total / positives as f64)
}

/// Mean squared error between predicted values and fixed targets.
pub fn critic_loss(values: &[f64], targets: &[f64]) -> f64 {
    values
        .iter()
        .zip(targets)
        .map(|(v, q)| (v - q) * (v - q))
        .sum::<f64>()
        / values.len().max(1) as f64
}

fn tokens(z: &SemanticId) -> &[u16] {
    z.tokens()
}

/// Mean SID log-likelihood over the slate, as a graph node.
pub fn slate_log_prob_graph(
    g: &mut Graph,
    trace: &PolicyTrace,
    sids: &[SemanticId],
) -> Result<Var, HpnError> {
    let parts = sids
        .iter()
        .map(|z| trace.sid_log_prob(g, tokens(z)))
        .collect::<Result<Vec<_>, _>>()?;
    let joined = g.concat(&parts)?;
    Ok(g.mean(joined)?)
}

/// `Σ_ℓ Σ_i p_ℓ[i] log p_ℓ[i]` as a graph node.
pub fn entropy_graph(g: &mut Graph, trace: &PolicyTrace) -> Result<Var, HpnError> {
    let parts = trace
        .probs
        .iter()
        .zip(&trace.log_probs)
        .map(|(&p, &lp)| g.dot(p, lp))
        .collect::<Result<Vec<_>, _>>()?;
    let joined = g.concat(&parts)?;
    Ok(g.sum(joined)?)
}

/// `None` when the slate has no positives; the term then contributes nothing.
pub fn bc_graph(
    g: &mut Graph,
    trace: &PolicyTrace,
    sids: &[SemanticId],
    feedback: &[bool],
) -> Result<Option<Var>, HpnError> {
    let parts = sids
        .iter()
        .zip(feedback)
        .filter(|(_, y)| **y)
        .map(|(z, _)| trace.sid_log_prob(g, tokens(z)))
        .collect::<Result<Vec<_>, _>>()?;
    if parts.is_empty() {
        return Ok(None);
    }
    let joined = g.concat(&parts)?;
    let mean = g.mean(joined)?;
    Ok(Some(g.scale(mean, -1.0)?))
}
