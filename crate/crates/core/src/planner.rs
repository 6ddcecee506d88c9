//! Finite-horizon value iteration, policy extraction and rollouts.

use rand::{Rng, RngCore};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mdp::{Action, Step, TabularMdp, Trajectory, N_ACTIONS};
use crate::rng::{episode_rngs, sample_index};

/// Relative tolerance under which two Q-values count as tied.
pub const TIE_TOL: f64 = 1e-9;

/// `q(s, a)` for every state; unavailable actions hold `-inf`.
#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    values: Vec<[f64; N_ACTIONS]>,
    sweeps: usize,
}

impl QTable {
    pub fn q(&self, s: usize, a: Action) -> f64 {
        self.values[s][a.index()]
    }

    pub fn row(&self, s: usize) -> &[f64; N_ACTIONS] {
        &self.values[s]
    }

    pub fn n_states(&self) -> usize {
        self.values.len()
    }

    /// Number of Bellman backups performed.
    pub fn sweeps(&self) -> usize {
        self.sweeps
    }

    pub fn value(&self, s: usize) -> f64 {
        let best = self.values[s].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if best.is_finite() {
            best
        } else {
            0.0
        }
    }

    /// Highest-valued available action; near-ties go to the lowest index.
    pub fn greedy_action(&self, mdp: &TabularMdp, s: usize) -> Option<Action> {
        argmax_lowest(mdp.available(s).iter().map(|&a| self.q(s, a)))
            .map(|i| mdp.available(s)[i])
    }
}

/// Index of the maximum, preferring the earliest of values within
/// [`TIE_TOL`] of it.
pub fn argmax_lowest(values: impl Iterator<Item = f64>) -> Option<usize> {
    let values: Vec<f64> = values.collect();
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() {
        return None;
    }
    let tol = TIE_TOL * best.abs().max(1.0);
    values.iter().position(|&v| v >= best - tol)
}

/// Bellman backups from `V = 0`, at most `horizon` of them, stopping early once
/// successive Q tables agree within `tol` in sup-norm.
pub fn value_iteration(mdp: &TabularMdp, tol: f64) -> Result<QTable> {
    if !(tol > 0.0) {
        return Err(Error::domain(format!("tolerance must be positive, got {tol}")));
    }
    let n = mdp.n_states();
    let gamma = mdp.discount();
    let mut v = vec![0.0; n];
    let mut q = vec![[f64::NEG_INFINITY; N_ACTIONS]; n];
    let mut sweeps = 0;
    for _ in 0..mdp.horizon() {
        let mut next_q = vec![[f64::NEG_INFINITY; N_ACTIONS]; n];
        for (s, row) in next_q.iter_mut().enumerate() {
            for &a in mdp.available(s) {
                row[a.index()] = if mdp.is_goal(s) {
                    0.0
                } else {
                    mdp.outcomes(s, a)
                        .iter()
                        .map(|o| o.prob * (mdp.reward(s, a, o.next) + gamma * v[o.next]))
                        .sum()
                };
            }
        }
        let delta = q
            .iter()
            .zip(&next_q)
            .flat_map(|(old, new)| old.iter().zip(new))
            .filter(|(_, new)| new.is_finite())
            .map(|(old, new)| (old - new).abs())
            .fold(0.0, f64::max);
        q = next_q;
        sweeps += 1;
        for s in 0..n {
            v[s] = if mdp.is_goal(s) {
                0.0
            } else {
                let best = q[s].iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if best.is_finite() {
                    best
                } else {
                    0.0
                }
            };
        }
        if delta < tol {
            break;
        }
    }
    Ok(QTable { values: q, sweeps })
}

/// Row-stochastic action probabilities, zero outside `A_s`.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    probs: Vec<[f64; N_ACTIONS]>,
}

impl Policy {
    pub fn prob(&self, s: usize, a: Action) -> f64 {
        self.probs[s][a.index()]
    }

    pub fn row(&self, s: usize) -> &[f64; N_ACTIONS] {
        &self.probs[s]
    }

    /// Probabilities over `A_s` in availability order.
    pub fn over_available(&self, mdp: &TabularMdp, s: usize) -> Vec<f64> {
        mdp.available(s).iter().map(|&a| self.prob(s, a)).collect()
    }
}

/// Softmax over the available actions' Q-values, in availability order.
pub fn softmax(values: &[f64], temperature: f64) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|&q| ((q - max) / temperature).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

pub fn softmax_policy(mdp: &TabularMdp, q: &QTable, temperature: f64) -> Result<Policy> {
    if !(temperature > 0.0) {
        return Err(Error::domain(format!("temperature must be positive, got {temperature}")));
    }
    let probs = (0..mdp.n_states())
        .map(|s| {
            let acts = mdp.available(s);
            let qs: Vec<f64> = acts.iter().map(|&a| q.q(s, a)).collect();
            let mut row = [0.0; N_ACTIONS];
            for (&a, p) in acts.iter().zip(softmax(&qs, temperature)) {
                row[a.index()] = p;
            }
            row
        })
        .collect();
    Ok(Policy { probs })
}

/// Deterministic argmax policy.
pub fn greedy_policy(mdp: &TabularMdp, q: &QTable) -> Policy {
    let probs = (0..mdp.n_states())
        .map(|s| {
            let mut row = [0.0; N_ACTIONS];
            if let Some(a) = q.greedy_action(mdp, s) {
                row[a.index()] = 1.0;
            }
            row
        })
        .collect();
    Policy { probs }
}

/// Anything that picks an action in a non-terminal state.
pub trait ActionSelector: Sync {
    fn select(&self, mdp: &TabularMdp, state: usize, rng: &mut dyn RngCore) -> Action;
}

impl ActionSelector for Policy {
    fn select(&self, mdp: &TabularMdp, state: usize, rng: &mut dyn RngCore) -> Action {
        let acts = mdp.available(state);
        let probs: Vec<f64> = acts.iter().map(|&a| self.prob(state, a)).collect();
        acts[sample_index(&probs, rng.gen::<f64>())]
    }
}

/// One episode from the start distribution until the goal or the horizon.
pub fn rollout(
    mdp: &TabularMdp,
    agent: &dyn ActionSelector,
    env_rng: &mut dyn RngCore,
    agent_rng: &mut dyn RngCore,
) -> Trajectory {
    let mut s = sample_index(mdp.start_dist(), env_rng.gen::<f64>());
    let mut steps = Vec::new();
    while steps.len() < mdp.horizon() && !mdp.is_goal(s) && !mdp.available(s).is_empty() {
        let a = agent.select(mdp, s, agent_rng);
        let outcomes = mdp.outcomes(s, a);
        let probs: Vec<f64> = outcomes.iter().map(|o| o.prob).collect();
        let next = outcomes[sample_index(&probs, env_rng.gen::<f64>())].next;
        steps.push(Step::new(s, a, next));
        s = next;
    }
    Trajectory::new(steps)
}

/// `n` seeded episodes. Episode `i` depends only on `(seed, i)`.
pub fn sample_trajectories(
    mdp: &TabularMdp,
    agent: &dyn ActionSelector,
    n: usize,
    seed: u64,
) -> Vec<Trajectory> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let (mut env, mut ag) = episode_rngs(seed, i as u64);
            rollout(mdp, agent, &mut env, &mut ag)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{build_grid, GridSpec};
    use approx::assert_abs_diff_eq;

    fn deterministic(w: usize, h: usize, start: (usize, usize), goal: (usize, usize)) -> TabularMdp {
        let mut spec = GridSpec::new(w, h, start, goal);
        spec.slip_prob = 0.0;
        spec.discount = 1.0;
        build_grid(&spec).unwrap()
    }

    #[test]
    fn goal_adjacent_q() {
        let mdp = deterministic(3, 3, (0, 0), (1, 2));
        let q = value_iteration(&mdp, 1e-12).unwrap();
        // state (1,1) = 4, east into goal
        assert_abs_diff_eq!(q.q(4, Action::E), 6.0, epsilon = 1e-12);
        assert!(q.row(5).iter().filter(|v| v.is_finite()).all(|v| *v == 0.0));
    }

    #[test]
    fn zero_rewards_give_zero_q() {
        let mut spec = GridSpec::new(4, 4, (0, 0), (3, 3));
        spec.goal_reward = 0.0;
        spec.cardinal_penalty = 0.0;
        spec.diagonal_penalty = 0.0;
        let mdp = build_grid(&spec).unwrap();
        let q = value_iteration(&mdp, 1e-9).unwrap();
        for s in 0..mdp.n_states() {
            for &a in mdp.available(s) {
                assert_eq!(q.q(s, a), 0.0);
            }
        }
    }

    #[test]
    fn rejects_bad_tolerance_and_temperature() {
        let mdp = deterministic(2, 2, (0, 0), (1, 1));
        assert!(value_iteration(&mdp, 0.0).is_err());
        let q = value_iteration(&mdp, 1e-9).unwrap();
        assert!(softmax_policy(&mdp, &q, 0.0).is_err());
        assert!(softmax_policy(&mdp, &q, -1.0).is_err());
    }

    #[test]
    fn softmax_values() {
        assert_eq!(softmax(&[2.0; 4], 1.0), vec![0.25; 4]);
        let p = softmax(&[1.0, 0.0], 1.0);
        let e = std::f64::consts::E;
        assert_abs_diff_eq!(p[0], e / (1.0 + e), epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 1.0 / (1.0 + e), epsilon = 1e-15);
        assert_abs_diff_eq!(p[0], 0.7311, epsilon = 1e-4);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mdp = build_grid(&GridSpec::new(5, 5, (0, 0), (4, 4))).unwrap();
        let q = value_iteration(&mdp, 1e-9).unwrap();
        let pi = softmax_policy(&mdp, &q, 1.0).unwrap();
        for s in 0..mdp.n_states() {
            assert_abs_diff_eq!(pi.row(s).iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            for a in Action::ALL {
                if !mdp.is_available(s, a) {
                    assert_eq!(pi.prob(s, a), 0.0);
                }
            }
        }
    }

    #[test]
    fn cold_softmax_approaches_greedy() {
        let mdp = build_grid(&GridSpec::new(5, 5, (0, 0), (4, 2))).unwrap();
        let q = value_iteration(&mdp, 1e-9).unwrap();
        let cold = softmax_policy(&mdp, &q, 1e-6).unwrap();
        let greedy = greedy_policy(&mdp, &q);
        for s in 0..mdp.n_states() {
            let vals: Vec<f64> = mdp.available(s).iter().map(|&a| q.q(s, a)).collect();
            let mut sorted = vals.clone();
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            if sorted.len() > 1 && sorted[0] - sorted[1] < 1e-3 {
                continue;
            }
            for a in Action::ALL {
                assert_abs_diff_eq!(cold.prob(s, a), greedy.prob(s, a), epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn ties_break_to_lowest_index() {
        assert_eq!(argmax_lowest([1.0, 3.0, 3.0].into_iter()), Some(1));
        assert_eq!(argmax_lowest([3.0, 3.0 - 1e-13, 1.0].into_iter()), Some(0));
        assert_eq!(argmax_lowest(std::iter::empty()), None);
    }

    #[test]
    fn sampling_is_reproducible() {
        let mdp = build_grid(&GridSpec::new(5, 5, (0, 0), (4, 4))).unwrap();
        let q = value_iteration(&mdp, 1e-9).unwrap();
        let pi = softmax_policy(&mdp, &q, 1.0).unwrap();
        assert!(sample_trajectories(&mdp, &pi, 0, 3).is_empty());
        let a = sample_trajectories(&mdp, &pi, 20, 3);
        let b = sample_trajectories(&mdp, &pi, 20, 3);
        assert_eq!(a, b);
        for t in &a {
            mdp.validate_trajectory(t).unwrap();
            assert!(t.len() == mdp.horizon() || t.steps.last().unwrap().next == mdp.goal());
        }
    }

    #[test]
    fn deterministic_greedy_rollouts_coincide() {
        let mdp = deterministic(6, 6, (0, 1), (5, 4));
        let q = value_iteration(&mdp, 1e-9).unwrap();
        let pi = greedy_policy(&mdp, &q);
        let trajs = sample_trajectories(&mdp, &pi, 10, 9);
        assert!(trajs.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(trajs[0].len(), mdp.shortest_path_len(1, 34).unwrap());
    }

    #[test]
    fn empirical_successors_match_slip_model() {
        struct Fixed(Action);
        impl ActionSelector for Fixed {
            fn select(&self, _: &TabularMdp, _: usize, _: &mut dyn RngCore) -> Action {
                self.0
            }
        }
        let mut spec = GridSpec::new(3, 3, (1, 1), (0, 0));
        spec.horizon = 1;
        let mdp = build_grid(&spec).unwrap();
        let n = 20_000;
        let trajs = sample_trajectories(&mdp, &Fixed(Action::S), n, 11);
        let mut counts = vec![0.0; mdp.n_states()];
        for t in &trajs {
            counts[t.steps[0].next] += 1.0;
        }
        let expected = mdp.transition_dist(4, Action::S).unwrap();
        let chi2: f64 = expected
            .iter()
            .zip(&counts)
            .filter(|(p, _)| **p > 0.0)
            .map(|(p, c)| (c - p * n as f64).powi(2) / (p * n as f64))
            .sum();
        // 7 degrees of freedom; 99.9th percentile is about 24.3
        assert!(chi2 < 24.3, "chi2 = {chi2}");
    }

    #[test]
    fn raising_a_reward_never_lowers_q() {
        let spec = GridSpec::new(4, 4, (0, 0), (3, 3));
        let mdp = build_grid(&spec).unwrap();
        let q0 = value_iteration(&mdp, 1e-12).unwrap();
        for bump in [0usize, 5, 10, 16 + 2, 16 + 8] {
            let mut w = mdp.weights().to_vec();
            w[bump] += 3.0;
            let q1 = value_iteration(&mdp.with_weights(w).unwrap(), 1e-12).unwrap();
            for s in 0..mdp.n_states() {
                for &a in mdp.available(s) {
                    assert!(q1.q(s, a) >= q0.q(s, a) - 1e-9);
                }
            }
        }
    }
}
