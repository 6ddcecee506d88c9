//! Constraint recovery rates, trajectory divergences and trajectory quality.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::irl::ResidualModel;
use crate::mdp::{Step, TabularMdp, Trajectory};
use crate::zeta::ConstraintEstimate;

/// Additive smoothing applied before every divergence.
pub const SMOOTHING: f64 = 1e-9;

/// True costs and constraint probabilities over some keyed population
/// (features or transitions).
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintGroundTruth<K: Ord> {
    pub cost: BTreeMap<K, f64>,
    pub zeta: BTreeMap<K, f64>,
    pub num_constraints: usize,
}

impl<K: Ord + Clone> ConstraintGroundTruth<K> {
    pub fn new(cost: BTreeMap<K, f64>, zeta: BTreeMap<K, f64>, num_constraints: usize) -> Result<Self> {
        if num_constraints == 0 {
            return Err(Error::domain("num_constraints must be positive"));
        }
        if zeta.values().any(|z| !(0.0..=1.0).contains(z)) {
            return Err(Error::domain("true constraint probabilities must lie in [0, 1]"));
        }
        if cost.len() != zeta.len() || cost.keys().any(|k| !zeta.contains_key(k)) {
            return Err(Error::domain("cost and zeta must cover the same keys"));
        }
        Ok(ConstraintGroundTruth { cost, zeta, num_constraints })
    }
}

/// True residual and its ζ values between a nominal world and its ground truth.
fn true_estimate(nominal: &TabularMdp, truth: &TabularMdp) -> Result<ConstraintEstimate> {
    ConstraintEstimate::from_model(nominal, &ResidualModel::between(nominal, truth)?)
}

impl ConstraintGroundTruth<usize> {
    /// One entry per feature. The constraint count is the number of features
    /// carrying a nonzero cost.
    pub fn per_feature(nominal: &TabularMdp, truth: &TabularMdp) -> Result<Self> {
        let est = true_estimate(nominal, truth)?;
        let cost: BTreeMap<usize, f64> = (0..nominal.n_features())
            .map(|i| (i, truth.weights()[i] - nominal.weights()[i]))
            .collect();
        let n = cost.values().filter(|c| **c != 0.0).count();
        Self::new(cost, est.zeta_f, n)
    }
}

impl ConstraintGroundTruth<Step> {
    /// One entry per feasible transition, with the given constraint count.
    pub fn per_transition(nominal: &TabularMdp, truth: &TabularMdp, num_constraints: usize) -> Result<Self> {
        let est = true_estimate(nominal, truth)?;
        let cost = est
            .zeta
            .keys()
            .map(|st| (*st, truth.constraint_cost(st.state, st.action, st.next)))
            .collect();
        Self::new(cost, est.zeta, num_constraints)
    }
}

fn check_chi(chi: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&chi) {
        return Err(Error::domain(format!("chi must lie in [0, 1], got {chi}")));
    }
    Ok(())
}

fn soft_rate<K: Ord>(
    pred: &BTreeMap<K, f64>,
    truth: &ConstraintGroundTruth<K>,
    chi: f64,
    constrained: bool,
) -> Result<f64> {
    check_chi(chi)?;
    let mut count = 0usize;
    for (k, c) in &truth.cost {
        if (*c != 0.0) != constrained {
            continue;
        }
        let z_pred = *pred
            .get(k)
            .ok_or_else(|| Error::domain("prediction is missing a ground-truth key"))?;
        let z_true = truth.zeta[k];
        let gap = if constrained { z_true - z_pred } else { z_pred - z_true };
        if gap > chi {
            count += 1;
        }
    }
    Ok(count as f64 / truth.num_constraints as f64)
}

/// Unconstrained items whose predicted ζ exceeds the true ζ by more than χ,
/// over the number of constraints.
pub fn soft_fp_rate<K: Ord>(pred: &BTreeMap<K, f64>, truth: &ConstraintGroundTruth<K>, chi: f64) -> Result<f64> {
    soft_rate(pred, truth, chi, false)
}

/// Constrained items whose true ζ exceeds the predicted ζ by more than χ,
/// over the number of constraints.
pub fn soft_fn_rate<K: Ord>(pred: &BTreeMap<K, f64>, truth: &ConstraintGroundTruth<K>, chi: f64) -> Result<f64> {
    soft_rate(pred, truth, chi, true)
}

fn binarized<K: Ord + Clone>(pred: &BTreeMap<K, f64>, truth: &ConstraintGroundTruth<K>, cutoff: f64) -> (BTreeMap<K, f64>, ConstraintGroundTruth<K>) {
    let hard_pred = pred.iter().map(|(k, z)| (k.clone(), if *z >= cutoff { 1.0 } else { 0.0 })).collect();
    let hard_truth = ConstraintGroundTruth {
        cost: truth.cost.clone(),
        zeta: truth.cost.iter().map(|(k, c)| (k.clone(), if *c != 0.0 { 1.0 } else { 0.0 })).collect(),
        num_constraints: truth.num_constraints,
    };
    (hard_pred, hard_truth)
}

/// Items predicted as constraints (`ζ ≥ cutoff`) that carry no cost, over the
/// number of constraints.
pub fn hard_fp_rate<K: Ord + Clone>(pred: &BTreeMap<K, f64>, truth: &ConstraintGroundTruth<K>, cutoff: f64) -> Result<f64> {
    let (p, t) = binarized(pred, truth, cutoff);
    soft_fp_rate(&p, &t, 0.5)
}

pub fn hard_fn_rate<K: Ord + Clone>(pred: &BTreeMap<K, f64>, truth: &ConstraintGroundTruth<K>, cutoff: f64) -> Result<f64> {
    let (p, t) = binarized(pred, truth, cutoff);
    soft_fn_rate(&p, &t, 0.5)
}

fn smoothed(p: &[f64]) -> Vec<f64> {
    let z: f64 = p.iter().sum::<f64>() + SMOOTHING * p.len() as f64;
    p.iter().map(|x| (x + SMOOTHING) / z).collect()
}

fn kl_raw(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi).ln())
        .sum::<f64>()
        .max(0.0)
}

fn check_pair(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::Dimension { expected: p.len(), got: q.len() });
    }
    if p.is_empty() {
        return Err(Error::Empty("distribution"));
    }
    if p.iter().chain(q).any(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err(Error::domain("distributions must be nonnegative and finite"));
    }
    Ok(())
}

/// `KL(P‖Q)` in nats after smoothing both sides.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    check_pair(p, q)?;
    Ok(kl_raw(&smoothed(p), &smoothed(q)))
}

/// Jensen-Shannon divergence in nats after smoothing, bounded by `ln 2`.
pub fn js_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    check_pair(p, q)?;
    let (p, q) = (smoothed(p), smoothed(q));
    let m: Vec<f64> = p.iter().zip(&q).map(|(a, b)| 0.5 * (a + b)).collect();
    Ok((0.5 * kl_raw(&p, &m) + 0.5 * kl_raw(&q, &m)).min(std::f64::consts::LN_2))
}

/// Empirical frequency of each distinct trajectory.
pub fn trajectory_distribution(trajs: &[Trajectory]) -> Result<BTreeMap<Trajectory, f64>> {
    if trajs.is_empty() {
        return Err(Error::Empty("trajectory set"));
    }
    let mut counts: BTreeMap<Trajectory, usize> = BTreeMap::new();
    for t in trajs {
        *counts.entry(t.clone()).or_default() += 1;
    }
    let n = trajs.len() as f64;
    Ok(counts.into_iter().map(|(t, c)| (t, c as f64 / n)).collect())
}

/// The two empirical distributions laid out over their union support.
pub fn aligned_distributions(a: &[Trajectory], b: &[Trajectory]) -> Result<(Vec<f64>, Vec<f64>)> {
    let pa = trajectory_distribution(a)?;
    let pb = trajectory_distribution(b)?;
    let support: BTreeSet<&Trajectory> = pa.keys().chain(pb.keys()).collect();
    let get = |d: &BTreeMap<Trajectory, f64>, t: &Trajectory| d.get(t).copied().unwrap_or(0.0);
    Ok(support.iter().map(|t| (get(&pa, t), get(&pb, t))).unzip())
}

pub fn trajectory_kl(p: &[Trajectory], q: &[Trajectory]) -> Result<f64> {
    let (a, b) = aligned_distributions(p, q)?;
    kl_divergence(&a, &b)
}

pub fn trajectory_js(p: &[Trajectory], q: &[Trajectory]) -> Result<f64> {
    let (a, b) = aligned_distributions(p, q)?;
    js_divergence(&a, &b)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TrajectoryQuality {
    pub avg_norm_length: f64,
    /// Mean `c(τ)` over the reference penalty, or the raw mean when the
    /// reference is zero.
    pub avg_norm_penalty: f64,
    pub avg_violations: f64,
    pub penalty_is_raw: bool,
}

/// Mean `c(τ)` under the true costs of `env`.
pub fn mean_cost(trajs: &[Trajectory], env: &TabularMdp) -> Result<f64> {
    if trajs.is_empty() {
        return Err(Error::Empty("trajectory set"));
    }
    Ok(trajs.iter().map(|t| env.trajectory_cost(t)).sum::<f64>() / trajs.len() as f64)
}

pub fn trajectory_quality(
    trajs: &[Trajectory],
    env: &TabularMdp,
    shortest_len: usize,
    ref_penalty: f64,
) -> Result<TrajectoryQuality> {
    if trajs.is_empty() {
        return Err(Error::Empty("trajectory set"));
    }
    if shortest_len == 0 {
        return Err(Error::domain("shortest path length must be at least 1"));
    }
    let n = trajs.len() as f64;
    let avg_len = trajs.iter().map(|t| t.len() as f64).sum::<f64>() / n;
    let penalty = mean_cost(trajs, env)?;
    let violations = trajs
        .iter()
        .flat_map(|t| &t.steps)
        .filter(|st| env.constraint_cost(st.state, st.action, st.next) != 0.0)
        .count() as f64
        / n;
    let penalty_is_raw = ref_penalty == 0.0 || !ref_penalty.is_finite();
    Ok(TrajectoryQuality {
        avg_norm_length: avg_len / shortest_len as f64,
        avg_norm_penalty: if penalty_is_raw { penalty } else { penalty / ref_penalty },
        avg_violations: violations,
        penalty_is_raw,
    })
}

/// One row of `results.csv`. Cells that do not apply to a method stay empty.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub world_id: usize,
    pub method: String,
    pub w_n: Option<f64>,
    pub n_demos: Option<usize>,
    pub chi: Option<f64>,
    pub fp: Option<f64>,
    #[serde(rename = "fn")]
    pub fn_: Option<f64>,
    pub kl: Option<f64>,
    pub js: Option<f64>,
    pub norm_len: Option<f64>,
    pub norm_penalty: Option<f64>,
    pub violations: Option<f64>,
    pub seed: u64,
    pub flag: String,
}

pub const RESULT_COLUMNS: [&str; 14] = [
    "world_id", "method", "w_n", "n_demos", "chi", "fp", "fn", "kl", "js", "norm_len", "norm_penalty",
    "violations", "seed", "flag",
];
