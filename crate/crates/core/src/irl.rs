//! Learning residual penalties from demonstrations.
//!
//! Trajectories are modeled as `P(τ | ω) ∝ exp(ω·φ(τ)) ∏ P(s'|s, a)` over all
//! trajectories that start from `D_0` and stop at the goal or after `horizon`
//! transitions. A backward pass computes log-partition functions over the
//! remaining horizon, and a forward pass pushes occupancy through the induced
//! local `(a, s')` distribution to obtain expected transition visitation.
//!
//! The residual `ω_R ≥ 0` is fit by projected gradient ascent on the mean
//! demonstration log-likelihood, evaluated at `ω_C = ω_N − ω_R`. Its gradient
//! is expected minus empirical feature counts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Action, Step, TabularMdp, Trajectory, N_ACTIONS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualModel {
    pub omega_r: Vec<f64>,
    pub omega_n: Vec<f64>,
}

impl ResidualModel {
    pub fn zero(nominal: &TabularMdp) -> Self {
        ResidualModel {
            omega_r: vec![0.0; nominal.n_features()],
            omega_n: nominal.weights().to_vec(),
        }
    }

    /// Residual that turns `nominal` into `constrained`: `ω_N − ω_C`.
    pub fn between(nominal: &TabularMdp, constrained: &TabularMdp) -> Result<Self> {
        if nominal.n_features() != constrained.n_features() {
            return Err(Error::Dimension {
                expected: nominal.n_features(),
                got: constrained.n_features(),
            });
        }
        let omega_r = nominal
            .weights()
            .iter()
            .zip(constrained.weights())
            .map(|(n, c)| n - c)
            .collect::<Vec<_>>();
        if omega_r.iter().any(|v| *v < 0.0) {
            return Err(Error::domain("constrained world rewards some transition above nominal"));
        }
        Ok(ResidualModel { omega_r, omega_n: nominal.weights().to_vec() })
    }

    /// `ω_C = ω_N − ω_R`.
    pub fn omega_c(&self) -> Vec<f64> {
        self.omega_n.iter().zip(&self.omega_r).map(|(n, r)| n - r).collect()
    }

    /// `R^R(s, a, s')`.
    pub fn penalty(&self, mdp: &TabularMdp, s: usize, a: Action, next: usize) -> f64 {
        mdp.reward_with(&self.omega_r, s, a, next)
    }

    /// The learned constrained world.
    pub fn constrained_world(&self, nominal: &TabularMdp) -> Result<TabularMdp> {
        nominal.apply_residual(&self.omega_r)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IrlHyperparams {
    pub learning_rate: f64,
    /// Multiplicative learning-rate decay per iteration.
    pub lr_decay: f64,
    pub iterations: usize,
    pub horizon: usize,
    pub convergence_tol: f64,
}

impl Default for IrlHyperparams {
    fn default() -> Self {
        IrlHyperparams {
            learning_rate: 0.1,
            lr_decay: 0.99,
            iterations: 300,
            horizon: 50,
            convergence_tol: 1e-4,
        }
    }
}

impl IrlHyperparams {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.convergence_tol > 0.0 && self.horizon > 0) {
            return Err(Error::domain("learning rate, tolerance and horizon must be positive"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::domain("lr_decay must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Expected visitation of every transition under the max-entropy model.
#[derive(Clone, Debug)]
pub struct VisitationCounts {
    /// Indexed like [`TabularMdp::outcomes`]: `counts[s * 8 + a][k]`.
    counts: Vec<Vec<f64>>,
    /// Probability mass still in play at each time step.
    step_mass: Vec<f64>,
    log_z: f64,
}

impl VisitationCounts {
    pub fn get(&self, mdp: &TabularMdp, s: usize, a: Action, next: usize) -> f64 {
        mdp.outcomes(s, a)
            .iter()
            .zip(&self.counts[s * N_ACTIONS + a.index()])
            .filter(|(o, _)| o.next == next)
            .map(|(_, d)| *d)
            .sum()
    }

    pub fn iter<'a>(&'a self, mdp: &'a TabularMdp) -> impl Iterator<Item = (Step, f64)> + 'a {
        (0..mdp.n_states()).flat_map(move |s| {
            mdp.available(s).iter().flat_map(move |&a| {
                mdp.outcomes(s, a)
                    .iter()
                    .zip(&self.counts[s * N_ACTIONS + a.index()])
                    .map(move |(o, d)| (Step::new(s, a, o.next), *d))
            })
        })
    }

    pub fn step_mass(&self) -> &[f64] {
        &self.step_mass
    }

    /// `log Z(ω)`.
    pub fn log_partition(&self) -> f64 {
        self.log_z
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Precomputed `ln P + ω·φ` for every outcome.
fn outcome_scores(mdp: &TabularMdp, weights: &[f64]) -> Vec<Vec<f64>> {
    let mut scores = vec![Vec::new(); mdp.n_states() * N_ACTIONS];
    for s in 0..mdp.n_states() {
        for &a in mdp.available(s) {
            scores[s * N_ACTIONS + a.index()] = mdp
                .outcomes(s, a)
                .iter()
                .map(|o| o.prob.ln() + mdp.reward_with(weights, s, a, o.next))
                .collect();
        }
    }
    scores
}

fn terminal(mdp: &TabularMdp, s: usize) -> bool {
    mdp.is_goal(s) || mdp.available(s).is_empty()
}

/// `log_z[h][s]`: log-partition over trajectories from `s` with `h` steps left.
fn backward(mdp: &TabularMdp, scores: &[Vec<f64>], horizon: usize) -> Vec<Vec<f64>> {
    let n = mdp.n_states();
    let mut log_z = vec![vec![0.0; n]; horizon + 1];
    let mut terms = Vec::with_capacity(N_ACTIONS * N_ACTIONS);
    for h in 1..=horizon {
        for s in 0..n {
            if terminal(mdp, s) {
                continue;
            }
            terms.clear();
            for &a in mdp.available(s) {
                let idx = s * N_ACTIONS + a.index();
                for (o, sc) in mdp.outcomes(s, a).iter().zip(&scores[idx]) {
                    terms.push(sc + log_z[h - 1][o.next]);
                }
            }
            log_z[h][s] = log_sum_exp(&terms);
        }
    }
    log_z
}

fn maxent_pass(mdp: &TabularMdp, weights: &[f64], horizon: usize) -> Result<VisitationCounts> {
    if weights.len() != mdp.n_features() {
        return Err(Error::Dimension { expected: mdp.n_features(), got: weights.len() });
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::domain("reward weights must be finite"));
    }
    let n = mdp.n_states();
    let scores = outcome_scores(mdp, weights);
    let log_z = backward(mdp, &scores, horizon);

    let start_terms: Vec<f64> = mdp
        .start_dist()
        .iter()
        .enumerate()
        .filter(|(_, p)| **p > 0.0)
        .map(|(s, p)| p.ln() + log_z[horizon][s])
        .collect();
    let total_log_z = log_sum_exp(&start_terms);

    // Posterior start distribution, then push forward.
    let mut occupancy: Vec<f64> = (0..n)
        .map(|s| {
            let p = mdp.start_dist()[s];
            if p > 0.0 {
                (p.ln() + log_z[horizon][s] - total_log_z).exp()
            } else {
                0.0
            }
        })
        .collect();
    let mut counts: Vec<Vec<f64>> = (0..n * N_ACTIONS).map(|i| vec![0.0; scores[i].len()]).collect();
    let mut step_mass = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let h = horizon - t;
        let mut next = vec![0.0; n];
        let mut mass = 0.0;
        for s in 0..n {
            let d = occupancy[s];
            if d == 0.0 || terminal(mdp, s) {
                continue;
            }
            mass += d;
            for &a in mdp.available(s) {
                let idx = s * N_ACTIONS + a.index();
                for (k, (o, sc)) in mdp.outcomes(s, a).iter().zip(&scores[idx]).enumerate() {
                    let p = (sc + log_z[h - 1][o.next] - log_z[h][s]).exp();
                    counts[idx][k] += d * p;
                    next[o.next] += d * p;
                }
            }
        }
        step_mass.push(mass);
        occupancy = next;
    }
    Ok(VisitationCounts { counts, step_mass, log_z: total_log_z })
}

/// Expected visitation `D` and expected features `Σ D φ` under weights `ω`,
/// over the world's own horizon.
pub fn expected_feature_counts(
    mdp: &TabularMdp,
    weights: &[f64],
) -> Result<(VisitationCounts, Vec<f64>)> {
    expected_feature_counts_with_horizon(mdp, weights, mdp.horizon())
}

pub fn expected_feature_counts_with_horizon(
    mdp: &TabularMdp,
    weights: &[f64],
    horizon: usize,
) -> Result<(VisitationCounts, Vec<f64>)> {
    let visits = maxent_pass(mdp, weights, horizon)?;
    let mut phi = vec![0.0; mdp.n_features()];
    for (st, d) in visits.iter(mdp) {
        if let Some(f) = mdp.features(st.state, st.action, st.next) {
            for i in f.iter() {
                phi[i] += d;
            }
        }
    }
    Ok((visits, phi))
}

/// `E_D[φ(τ)]`.
pub fn empirical_feature_expectation(mdp: &TabularMdp, demos: &[Trajectory]) -> Result<Vec<f64>> {
    if demos.is_empty() {
        return Err(Error::Empty("demonstration set"));
    }
    let mut phi = vec![0.0; mdp.n_features()];
    for tau in demos {
        mdp.validate_trajectory(tau)?;
        mdp.accumulate_features(tau, &mut phi);
    }
    let n = demos.len() as f64;
    phi.iter_mut().for_each(|v| *v /= n);
    Ok(phi)
}

/// Mean log-likelihood of `demos` under the max-entropy model at residual `ω_R`.
pub fn log_likelihood(
    mdp: &TabularMdp,
    demos: &[Trajectory],
    omega_r: &[f64],
    horizon: usize,
) -> Result<f64> {
    if demos.is_empty() {
        return Err(Error::Empty("demonstration set"));
    }
    let omega_c = residual_weights(mdp, omega_r)?;
    let scores = outcome_scores(mdp, &omega_c);
    let log_z = backward(mdp, &scores, horizon);
    let start_terms: Vec<f64> = mdp
        .start_dist()
        .iter()
        .enumerate()
        .filter(|(_, p)| **p > 0.0)
        .map(|(s, p)| p.ln() + log_z[horizon][s])
        .collect();
    let total = log_sum_exp(&start_terms);

    let mut sum = 0.0;
    for tau in demos {
        let first = tau.steps.first().map_or_else(|| mdp.start_state(), |s| s.state);
        let mut ll = mdp.start_dist()[first].ln();
        for st in &tau.steps {
            ll += mdp.prob(st.state, st.action, st.next).ln()
                + mdp.reward_with(&omega_c, st.state, st.action, st.next);
        }
        sum += ll - total;
    }
    Ok(sum / demos.len() as f64)
}

fn residual_weights(mdp: &TabularMdp, omega_r: &[f64]) -> Result<Vec<f64>> {
    if omega_r.len() != mdp.n_features() {
        return Err(Error::Dimension { expected: mdp.n_features(), got: omega_r.len() });
    }
    Ok(mdp.weights().iter().zip(omega_r).map(|(n, r)| n - r).collect())
}

/// `∇_{ω_R} L = Σ D φ − E_D[φ]` at `ω_C = ω_N − ω_R`, where `ω_N` are the
/// weights of `mdp`.
pub fn mesc_irl_gradient(
    mdp: &TabularMdp,
    demos: &[Trajectory],
    omega_r: &[f64],
) -> Result<Vec<f64>> {
    let empirical = empirical_feature_expectation(mdp, demos)?;
    gradient_with(mdp, &empirical, omega_r, mdp.horizon())
}

fn gradient_with(
    mdp: &TabularMdp,
    empirical: &[f64],
    omega_r: &[f64],
    horizon: usize,
) -> Result<Vec<f64>> {
    let omega_c = residual_weights(mdp, omega_r)?;
    let (_, expected) = expected_feature_counts_with_horizon(mdp, &omega_c, horizon)?;
    Ok(expected.iter().zip(empirical).map(|(e, d)| e - d).collect())
}

/// Per-iteration diagnostics of a training run.
#[derive(Clone, Debug, Default)]
pub struct TrainingTrace {
    /// Sup-norm of the projected gradient before each step.
    pub grad_norms: Vec<f64>,
    pub converged: bool,
}

pub fn mesc_irl_learn(
    nominal: &TabularMdp,
    demos: &[Trajectory],
    hp: &IrlHyperparams,
) -> Result<ResidualModel> {
    mesc_irl_learn_traced(nominal, demos, hp).map(|(m, _)| m)
}

/// Projected gradient ascent from `ω_R = 0`.
pub fn mesc_irl_learn_traced(
    nominal: &TabularMdp,
    demos: &[Trajectory],
    hp: &IrlHyperparams,
) -> Result<(ResidualModel, TrainingTrace)> {
    hp.validate()?;
    let empirical = empirical_feature_expectation(nominal, demos)?;
    let mut model = ResidualModel::zero(nominal);
    let mut trace = TrainingTrace::default();
    let mut lr = hp.learning_rate;
    for iteration in 0..hp.iterations {
        let grad = gradient_with(nominal, &empirical, &model.omega_r, hp.horizon)?;
        // Components pinned at zero with a pushing-down gradient are stationary.
        let projected = model
            .omega_r
            .iter()
            .zip(&grad)
            .map(|(w, g)| if *w <= 0.0 && *g < 0.0 { 0.0 } else { g.abs() })
            .fold(0.0, f64::max);
        trace.grad_norms.push(projected);
        if !projected.is_finite() {
            return Err(Error::Divergence {
                iteration,
                detail: "non-finite gradient".into(),
            });
        }
        if projected < hp.convergence_tol {
            trace.converged = true;
            break;
        }
        for (w, g) in model.omega_r.iter_mut().zip(&grad) {
            *w = (*w + lr * g).max(0.0);
        }
        if let Some(i) = model.omega_r.iter().position(|w| !w.is_finite()) {
            return Err(Error::Divergence {
                iteration,
                detail: format!("residual component {i} is not finite"),
            });
        }
        lr *= hp.lr_decay;
    }
    Ok((model, trace))
}
