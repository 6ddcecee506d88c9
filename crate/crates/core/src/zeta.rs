//! From penalties to constraint probabilities.
//!
//! A penalty is scored against a logistic distribution whose location and
//! scale both equal the pooled standard deviation of the nominal and learned
//! constrained rewards, so a zero penalty maps to `sigmoid(-1)`.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::irl::ResidualModel;
use crate::mdp::{Step, TabularMdp, N_ACTIONS};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Population standard deviation of `R = ω·φ` over all feasible transitions.
pub fn reward_std(mdp: &TabularMdp, weights: &[f64]) -> f64 {
    let rewards: Vec<f64> = mdp
        .feasible_transitions()
        .map(|(st, _)| mdp.reward_with(weights, st.state, st.action, st.next))
        .collect();
    if rewards.is_empty() {
        return 0.0;
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt()
}

pub fn pool(sigma_nominal: f64, sigma_constrained: f64) -> f64 {
    ((sigma_nominal.powi(2) + sigma_constrained.powi(2)) / 2.0).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PooledStd {
    pub nominal: f64,
    pub constrained: f64,
    pub pooled: f64,
}

/// σ_N from `ω_N`, σ_C from `ω_N − ω_R`, and their pooled value.
pub fn pooled_std(nominal: &TabularMdp, model: &ResidualModel) -> Result<PooledStd> {
    if model.omega_r.len() != nominal.n_features() {
        return Err(Error::Dimension { expected: nominal.n_features(), got: model.omega_r.len() });
    }
    let sigma_n = reward_std(nominal, &model.omega_n);
    let sigma_c = reward_std(nominal, &model.omega_c());
    let pooled = pool(sigma_n, sigma_c);
    if !(pooled > 0.0) {
        return Err(Error::DegenerateDistribution);
    }
    Ok(PooledStd { nominal: sigma_n, constrained: sigma_c, pooled })
}

/// `ζ = sigmoid((penalty − σ) / σ)`.
pub fn transition_constraint_prob(penalty: f64, sigma_pooled: f64) -> Result<f64> {
    if !(sigma_pooled > 0.0) {
        return Err(Error::domain(format!("pooled std must be positive, got {sigma_pooled}")));
    }
    Ok(sigmoid((penalty - sigma_pooled) / sigma_pooled))
}

/// One probability per one-hot value of the feature subset, in subset order.
/// Indices are zero-based positions in the feature vector.
pub fn feature_constraint_prob(
    model: &ResidualModel,
    subset: &[usize],
    sigma_pooled: f64,
) -> Result<Vec<f64>> {
    if subset.is_empty() {
        return Err(Error::domain("feature subset is empty"));
    }
    subset
        .iter()
        .map(|&i| {
            let w = *model.omega_r.get(i).ok_or_else(|| {
                Error::domain(format!("feature index {i} out of range 0..{}", model.omega_r.len()))
            })?;
            transition_constraint_prob(w, sigma_pooled)
        })
        .collect()
}

pub fn hard_threshold(zeta: f64, cutoff: f64) -> bool {
    zeta >= cutoff
}

/// Feature subsets of a grid world.
pub fn state_features(mdp: &TabularMdp) -> Vec<usize> {
    (0..mdp.n_states()).collect()
}

pub fn action_features(mdp: &TabularMdp) -> Vec<usize> {
    (mdp.n_states()..mdp.n_states() + N_ACTIONS).collect()
}

pub fn color_features(mdp: &TabularMdp) -> Vec<usize> {
    (mdp.n_states() + N_ACTIONS..mdp.n_features()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConstraintEstimate {
    pub sigma: PooledStd,
    /// ζ for every feasible transition.
    pub zeta: BTreeMap<Step, f64>,
    /// ζ_f for every single feature.
    pub zeta_f: BTreeMap<usize, f64>,
}

impl ConstraintEstimate {
    pub fn from_model(nominal: &TabularMdp, model: &ResidualModel) -> Result<Self> {
        let sigma = pooled_std(nominal, model)?;
        let mut zeta = BTreeMap::new();
        for (st, _) in nominal.feasible_transitions() {
            let pen = model.penalty(nominal, st.state, st.action, st.next);
            zeta.insert(st, transition_constraint_prob(pen, sigma.pooled)?);
        }
        let all: Vec<usize> = (0..nominal.n_features()).collect();
        let zeta_f = all
            .iter()
            .copied()
            .zip(feature_constraint_prob(model, &all, sigma.pooled)?)
            .collect();
        Ok(ConstraintEstimate { sigma, zeta, zeta_f })
    }
}
