//! Per-state arbitration between a nominal and a constrained policy.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdft::{MdftModel, StopRule, DEFAULT_PHI1, DEFAULT_PHI2};
use crate::mdp::{Action, TabularMdp, Trajectory};
use crate::planner::{argmax_lowest, sample_trajectories, softmax, value_iteration, ActionSelector};
use crate::rng::sample_index;

pub const DEFAULT_MDFT_STEPS: usize = 25;
const WEIGHT_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrchestratorKind {
    Greedy,
    WeightedAverage,
    Mdft,
}

impl OrchestratorKind {
    pub const ALL: [OrchestratorKind; 3] =
        [OrchestratorKind::Greedy, OrchestratorKind::WeightedAverage, OrchestratorKind::Mdft];

    pub fn name(self) -> &'static str {
        match self {
            OrchestratorKind::Greedy => "greedy",
            OrchestratorKind::WeightedAverage => "weighted_average",
            OrchestratorKind::Mdft => "mdft",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrchestratorConfig {
    pub kind: OrchestratorKind,
    pub w_n: f64,
    pub w_c: f64,
    #[serde(default = "default_mdft_steps")]
    pub mdft_steps: usize,
}

fn default_mdft_steps() -> usize {
    DEFAULT_MDFT_STEPS
}

impl OrchestratorConfig {
    /// Config with `w_c = 1 − w_n`.
    pub fn new(kind: OrchestratorKind, w_n: f64) -> Result<Self> {
        let cfg = OrchestratorConfig { kind, w_n, w_c: 1.0 - w_n, mdft_steps: DEFAULT_MDFT_STEPS };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check_weights(self.w_n, self.w_c)?;
        if self.mdft_steps == 0 {
            return Err(Error::domain("mdft_steps must be at least 1"));
        }
        Ok(())
    }
}

fn single_attribute(w_n: f64, w_c: f64) -> bool {
    w_n >= 1.0 - WEIGHT_TOL || w_c >= 1.0 - WEIGHT_TOL
}

fn check_weights(w_n: f64, w_c: f64) -> Result<()> {
    let in_unit = |w: f64| (0.0..=1.0).contains(&w);
    if !in_unit(w_n) || !in_unit(w_c) || (w_n + w_c - 1.0).abs() > WEIGHT_TOL {
        return Err(Error::domain(format!("weights ({w_n}, {w_c}) must lie in [0,1] and sum to 1")));
    }
    Ok(())
}

/// Weight pairs from `(0, 1)` to `(1, 0)` in `steps` equal increments.
pub fn weight_sweep(steps: usize) -> Vec<(f64, f64)> {
    (0..=steps)
        .map(|i| {
            let w_n = i as f64 / steps.max(1) as f64;
            (w_n, 1.0 - w_n)
        })
        .collect()
}

/// Scores of one state, aligned with its available actions.
#[derive(Clone, Debug, PartialEq)]
pub struct StateActionScores {
    pub actions: Vec<Action>,
    pub sq_n: Vec<f64>,
    pub sq_c: Vec<f64>,
    pub q_n: Vec<f64>,
    pub q_c: Vec<f64>,
}

impl StateActionScores {
    pub fn new(actions: Vec<Action>, q_n: Vec<f64>, q_c: Vec<f64>, temperature: f64) -> Result<Self> {
        if actions.is_empty() {
            return Err(Error::Empty("action set"));
        }
        if q_n.len() != actions.len() || q_c.len() != actions.len() {
            return Err(Error::Dimension { expected: actions.len(), got: q_n.len().min(q_c.len()) });
        }
        if !(temperature > 0.0) {
            return Err(Error::domain(format!("temperature must be positive, got {temperature}")));
        }
        let sq_n = softmax(&q_n, temperature);
        let sq_c = softmax(&q_c, temperature);
        Ok(StateActionScores { actions, sq_n, sq_c, q_n, q_c })
    }

    /// Scores given directly as probability vectors. Q rows are set to the
    /// probabilities.
    pub fn from_probabilities(actions: Vec<Action>, sq_n: Vec<f64>, sq_c: Vec<f64>) -> Result<Self> {
        for sq in [&sq_n, &sq_c] {
            if sq.len() != actions.len() {
                return Err(Error::Dimension { expected: actions.len(), got: sq.len() });
            }
            if sq.iter().any(|p| !(*p >= 0.0)) || (sq.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::domain("score rows must be probability vectors"));
            }
        }
        if actions.is_empty() {
            return Err(Error::Empty("action set"));
        }
        Ok(StateActionScores { q_n: sq_n.clone(), q_c: sq_c.clone(), actions, sq_n, sq_c })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Scores for every non-goal state of a world.
#[derive(Clone, Debug)]
pub struct ScoreTable {
    rows: Vec<Option<StateActionScores>>,
}

impl ScoreTable {
    /// Softmax scores from value iteration on the nominal world and on the
    /// constrained world (learned or true).
    pub fn from_worlds(
        nominal: &TabularMdp,
        constrained: &TabularMdp,
        temperature: f64,
        vi_tol: f64,
    ) -> Result<Self> {
        if nominal.n_states() != constrained.n_states() {
            return Err(Error::Dimension { expected: nominal.n_states(), got: constrained.n_states() });
        }
        let qn = value_iteration(nominal, vi_tol)?;
        let qc = value_iteration(constrained, vi_tol)?;
        let rows = (0..nominal.n_states())
            .map(|s| {
                let acts = nominal.available(s);
                if nominal.is_goal(s) || acts.is_empty() {
                    return Ok(None);
                }
                let q_n = acts.iter().map(|&a| qn.q(s, a)).collect();
                let q_c = acts.iter().map(|&a| qc.q(s, a)).collect();
                StateActionScores::new(acts.to_vec(), q_n, q_c, temperature).map(Some)
            })
            .collect::<Result<_>>()?;
        Ok(ScoreTable { rows })
    }

    pub fn get(&self, s: usize) -> Option<&StateActionScores> {
        self.rows.get(s).and_then(Option::as_ref)
    }

    pub fn n_states(&self) -> usize {
        self.rows.len()
    }
}

/// `argmax_a max(q_n(s,a), q_c(s,a))`, ties to the lowest index.
pub fn greedy_select(scores: &StateActionScores) -> Action {
    let best = argmax_lowest(scores.q_n.iter().zip(&scores.q_c).map(|(n, c)| n.max(*c)))
        .expect("nonempty action set");
    scores.actions[best]
}

/// `w_n·sq_n + w_c·sq_c`.
pub fn wa_distribution(scores: &StateActionScores, w_n: f64, w_c: f64) -> Vec<f64> {
    scores.sq_n.iter().zip(&scores.sq_c).map(|(n, c)| w_n * n + w_c * c).collect()
}

pub fn wa_select(scores: &StateActionScores, w_n: f64, w_c: f64, rng: &mut dyn RngCore) -> Action {
    let p = wa_distribution(scores, w_n, w_c);
    scores.actions[sample_index(&p, rng.gen::<f64>())]
}

/// With all attention on one policy the deliberation never switches
/// attribute; the choice is then the highest-Q action of that policy, ties to
/// the lowest index.
pub fn mdft_single_attribute_choice(scores: &StateActionScores, w_n: f64, w_c: f64) -> Option<Action> {
    if !single_attribute(w_n, w_c) {
        return None;
    }
    let q = if w_n > w_c { &scores.q_n } else { &scores.q_c };
    argmax_lowest(q.iter().copied()).map(|i| scores.actions[i])
}

/// MDFT model over the state's actions with attributes `(sq_n, sq_c)`.
/// `None` for a single available action.
pub fn mdft_model(scores: &StateActionScores, w_n: f64, w_c: f64, steps: usize) -> Result<Option<MdftModel>> {
    if scores.len() < 2 {
        return Ok(None);
    }
    let m = scores.sq_n.iter().zip(&scores.sq_c).map(|(n, c)| vec![*n, *c]).collect();
    MdftModel::new(m, vec![w_n, w_c], DEFAULT_PHI1, DEFAULT_PHI2, StopRule::FixedSteps { steps }).map(Some)
}

pub fn mdft_select(
    scores: &StateActionScores,
    w_n: f64,
    w_c: f64,
    steps: usize,
    rng: &mut dyn RngCore,
) -> Result<Action> {
    check_weights(w_n, w_c)?;
    if let Some(a) = mdft_single_attribute_choice(scores, w_n, w_c) {
        return Ok(a);
    }
    Ok(match mdft_model(scores, w_n, w_c, steps)? {
        Some(model) => scores.actions[model.deliberate_with(rng)],
        None => scores.actions[0],
    })
}

/// An orchestrated agent. MDFT models are built once per state.
#[derive(Clone, Debug)]
pub struct Orchestrator {
    config: OrchestratorConfig,
    scores: ScoreTable,
    models: Vec<Option<MdftModel>>,
}

impl Orchestrator {
    pub fn new(config: OrchestratorConfig, scores: ScoreTable) -> Result<Self> {
        config.validate()?;
        let single = single_attribute(config.w_n, config.w_c);
        let models = if config.kind == OrchestratorKind::Mdft && !single {
            scores
                .rows
                .iter()
                .map(|row| match row {
                    Some(sc) => mdft_model(sc, config.w_n, config.w_c, config.mdft_steps),
                    None => Ok(None),
                })
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        Ok(Orchestrator { config, scores, models })
    }

    pub fn config(&self) -> &OrchestratorConfig {
        &self.config
    }

    pub fn scores(&self) -> &ScoreTable {
        &self.scores
    }

    /// Per-state action distribution, estimated by `n` draws for MDFT.
    pub fn choice_distribution(&self, s: usize, n: usize, seed: u64) -> Result<Vec<f64>> {
        let sc = self.scores.get(s).ok_or_else(|| Error::domain(format!("no scores for state {s}")))?;
        match self.config.kind {
            OrchestratorKind::WeightedAverage => Ok(wa_distribution(sc, self.config.w_n, self.config.w_c)),
            OrchestratorKind::Greedy => {
                let a = greedy_select(sc);
                Ok(sc.actions.iter().map(|&b| if a == b { 1.0 } else { 0.0 }).collect())
            }
            OrchestratorKind::Mdft => {
                if let Some(a) = mdft_single_attribute_choice(sc, self.config.w_n, self.config.w_c) {
                    return Ok(sc.actions.iter().map(|&b| if a == b { 1.0 } else { 0.0 }).collect());
                }
                match &self.models[s] {
                    Some(model) => model.choice_distribution(n, seed),
                    None => Ok(vec![1.0]),
                }
            }
        }
    }
}

impl ActionSelector for Orchestrator {
    fn select(&self, _mdp: &TabularMdp, state: usize, rng: &mut dyn RngCore) -> Action {
        let sc = self.scores.get(state).expect("orchestrator queried in a state without scores");
        match self.config.kind {
            OrchestratorKind::Greedy => greedy_select(sc),
            OrchestratorKind::WeightedAverage => wa_select(sc, self.config.w_n, self.config.w_c, rng),
            OrchestratorKind::Mdft => {
                if let Some(a) = mdft_single_attribute_choice(sc, self.config.w_n, self.config.w_c) {
                    return a;
                }
                match &self.models[state] {
                    Some(model) => sc.actions[model.deliberate_with(rng)],
                    None => sc.actions[0],
                }
            }
        }
    }
}

/// `n` seeded episodes of the orchestrated agent in `env`.
pub fn run_agent(env: &TabularMdp, agent: &Orchestrator, n: usize, seed: u64) -> Result<Vec<Trajectory>> {
    if agent.scores.n_states() != env.n_states() {
        return Err(Error::Dimension { expected: env.n_states(), got: agent.scores.n_states() });
    }
    Ok(sample_trajectories(env, agent, n, seed))
}

/// True iff no weight on the grid `{0, step, …, 1}` makes the middle option
/// strictly more likely than both others under the weighted average.
pub fn wa_unrepresentability_check(sq_n: &[f64], sq_c: &[f64], grid_step: f64) -> Result<bool> {
    if sq_n.len() != 3 || sq_c.len() != 3 {
        return Err(Error::domain("the check is defined for exactly three options"));
    }
    if !(grid_step > 0.0 && grid_step <= 1.0) {
        return Err(Error::domain(format!("grid step must lie in (0, 1], got {grid_step}")));
    }
    let n = (1.0 / grid_step).round().max(1.0) as usize;
    Ok((0..=n).all(|i| {
        let w_n = i as f64 / n as f64;
        let w_c = 1.0 - w_n;
        let p: Vec<f64> = (0..3).map(|j| w_n * sq_n[j] + w_c * sq_c[j]).collect();
        p[1] <= p[0].max(p[2]) + WEIGHT_TOL
    }))
}
