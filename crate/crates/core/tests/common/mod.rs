//! Independent reference computations shared by the integration suites.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use softcon_core::mdp::{build_grid, Action, GridSpec, Step, TabularMdp, Trajectory};

/// Expected transition counts, expected features and partition function of
/// the max-entropy trajectory distribution, by listing every trajectory.
pub struct Enumerated {
    pub visits: std::collections::BTreeMap<Step, f64>,
    pub features: Vec<f64>,
    pub z: f64,
}

pub fn enumerate_maxent(mdp: &TabularMdp, weights: &[f64], horizon: usize) -> Enumerated {
    let n = mdp.n_states();
    let mut dense = vec![0.0; n * 8 * n];
    let mut z = 0.0;
    let mut path = Vec::new();
    for (s, &p0) in mdp.start_dist().iter().enumerate() {
        if p0 > 0.0 {
            walk(mdp, weights, horizon, s, p0, 0.0, &mut path, &mut dense, &mut z);
        }
    }
    let mut visits = std::collections::BTreeMap::new();
    let mut features = vec![0.0; mdp.n_features()];
    for s in 0..n {
        for &a in mdp.available(s) {
            for o in mdp.outcomes(s, a) {
                let v = dense[(s * 8 + a.index()) * n + o.next] / z;
                if v > 0.0 {
                    visits.insert(Step::new(s, a, o.next), v);
                    for (i, f) in mdp.feature_vector(s, a, o.next).iter().enumerate() {
                        features[i] += v * f;
                    }
                }
            }
        }
    }
    Enumerated { visits, features, z }
}

#[allow(clippy::too_many_arguments)]
fn walk(
    mdp: &TabularMdp,
    w: &[f64],
    left: usize,
    s: usize,
    prob: f64,
    score: f64,
    path: &mut Vec<usize>,
    dense: &mut [f64],
    z: &mut f64,
) {
    if left == 0 || mdp.is_goal(s) {
        let weight = prob * score.exp();
        *z += weight;
        for &k in path.iter() {
            dense[k] += weight;
        }
        return;
    }
    let n = mdp.n_states();
    for &a in mdp.available(s) {
        for o in mdp.outcomes(s, a) {
            path.push((s * 8 + a.index()) * n + o.next);
            let r = mdp.reward_with(w, s, a, o.next);
            walk(mdp, w, left - 1, o.next, prob * o.prob, score + r, path, dense, z);
            path.pop();
        }
    }
}

/// Finite-horizon optimal value by plain expectimax recursion.
pub fn expectimax_value(mdp: &TabularMdp, s: usize, h: usize) -> f64 {
    if h == 0 || mdp.is_goal(s) {
        return 0.0;
    }
    mdp.available(s)
        .iter()
        .map(|&a| expectimax_q(mdp, s, a, h))
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn expectimax_q(mdp: &TabularMdp, s: usize, a: Action, h: usize) -> f64 {
    if mdp.is_goal(s) {
        return 0.0;
    }
    mdp.outcomes(s, a)
        .iter()
        .map(|o| o.prob * (mdp.reward(s, a, o.next) + mdp.discount() * expectimax_value(mdp, o.next, h - 1)))
        .sum()
}

/// Every grid shape with between two and `max_states` cells.
pub fn small_shapes(max_states: usize) -> Vec<(usize, usize)> {
    let mut v = Vec::new();
    for w in 1..=max_states {
        for h in 1..=max_states {
            if w * h >= 2 && w * h <= max_states {
                v.push((w, h));
            }
        }
    }
    v
}

/// A small world with random colors, a random constrained cell and the given
/// slip and horizon.
pub fn random_small_world(w: usize, h: usize, horizon: usize, slip: f64, rng: &mut ChaCha8Rng) -> TabularMdp {
    let n = w * h;
    let cell = |i: usize| (i / w, i % w);
    let start = rng.gen_range(0..n);
    let mut goal = rng.gen_range(0..n - 1);
    if goal >= start {
        goal += 1;
    }
    let mut spec = GridSpec::new(w, h, cell(start), cell(goal));
    spec.slip_prob = slip;
    spec.horizon = horizon;
    spec.discount = rng.gen_range(0.8..1.0);
    let colors = softcon_core::mdp::Color::ALL;
    for i in 0..n {
        if rng.gen_bool(0.4) {
            spec.colors.push((cell(i), colors[rng.gen_range(0..colors.len())]));
        }
    }
    if rng.gen_bool(0.5) {
        spec.constrained_cells.push(cell(rng.gen_range(0..n)));
    }
    build_grid(&spec).unwrap()
}

pub fn random_weights(n: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Central finite differences of `f` at `x`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut up = x.to_vec();
            let mut down = x.to_vec();
            up[i] += step;
            down[i] -= step;
            (f(&up) - f(&down)) / (2.0 * step)
        })
        .collect()
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

pub fn demo_set(mdp: &TabularMdp, n: usize, seed: u64) -> Vec<Trajectory> {
    let q = softcon_core::planner::value_iteration(mdp, 1e-12).unwrap();
    let pi = softcon_core::planner::softmax_policy(mdp, &q, 1.0).unwrap();
    softcon_core::planner::sample_trajectories(mdp, &pi, n, seed)
}
