//! Finite-horizon tabular grid worlds.
//!
//! States are grid cells indexed row-major from the top-left corner. Each
//! state offers the in-bounds subset of the eight compass moves. Transition
//! features are the concatenation of three one-hot blocks
//! `[states | actions | colors]`, where the state and color blocks describe the
//! cell being entered. Rewards are linear in those features.

use std::collections::BTreeSet;
use std::f64::consts::SQRT_2;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_ACTIONS: usize = 8;
pub const N_COLORS: usize = 3;

/// `[row, col]`
pub type Cell = (usize, usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    N,
    E,
    S,
    W,
    NE,
    SE,
    SW,
    NW,
}

impl Action {
    pub const ALL: [Action; N_ACTIONS] = [
        Action::N,
        Action::E,
        Action::S,
        Action::W,
        Action::NE,
        Action::SE,
        Action::SW,
        Action::NW,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    /// `(d_row, d_col)`; north decreases the row.
    pub fn delta(self) -> (isize, isize) {
        match self {
            Action::N => (-1, 0),
            Action::E => (0, 1),
            Action::S => (1, 0),
            Action::W => (0, -1),
            Action::NE => (-1, 1),
            Action::SE => (1, 1),
            Action::SW => (1, -1),
            Action::NW => (-1, -1),
        }
    }

    pub fn is_diagonal(self) -> bool {
        let (dr, dc) = self.delta();
        dr != 0 && dc != 0
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Cell color tags. Random worlds only paint blue and green; the third tag
/// fills out the 3-wide color block of the feature vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Blue,
    Green,
    Red,
}

impl Color {
    pub const ALL: [Color; N_COLORS] = [Color::Blue, Color::Green, Color::Red];

    pub fn index(self) -> usize {
        self as usize
    }
}

fn default_size() -> usize {
    9
}
fn default_slip() -> f64 {
    0.1
}
fn default_goal_reward() -> f64 {
    10.0
}
fn default_cardinal() -> f64 {
    -4.0
}
fn default_diagonal() -> f64 {
    -4.0 * SQRT_2
}
fn default_discount() -> f64 {
    0.99
}
fn default_horizon() -> usize {
    50
}
fn default_constraint_cost() -> f64 {
    -50.0
}

/// Declarative description of a grid world. Serializes to JSON with keys equal
/// to the field names; cells are `[row, col]` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    #[serde(default = "default_size")]
    pub width: usize,
    #[serde(default = "default_size")]
    pub height: usize,
    pub start: Cell,
    pub goal: Cell,
    #[serde(default)]
    pub colors: Vec<(Cell, Color)>,
    #[serde(default = "default_slip")]
    pub slip_prob: f64,
    #[serde(default = "default_goal_reward")]
    pub goal_reward: f64,
    #[serde(default = "default_cardinal")]
    pub cardinal_penalty: f64,
    #[serde(default = "default_diagonal")]
    pub diagonal_penalty: f64,
    #[serde(default = "default_discount")]
    pub discount: f64,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub constrained_cells: Vec<Cell>,
    #[serde(default = "default_constraint_cost")]
    pub constraint_cost: f64,
    #[serde(default)]
    pub constrained_actions: Vec<Action>,
    #[serde(default)]
    pub constrained_features: Vec<Color>,
}

impl GridSpec {
    /// Unconstrained, uncolored grid with default dynamics and rewards.
    pub fn new(width: usize, height: usize, start: Cell, goal: Cell) -> Self {
        GridSpec {
            width,
            height,
            start,
            goal,
            colors: Vec::new(),
            slip_prob: default_slip(),
            goal_reward: default_goal_reward(),
            cardinal_penalty: default_cardinal(),
            diagonal_penalty: default_diagonal(),
            discount: default_discount(),
            horizon: default_horizon(),
            constrained_cells: Vec::new(),
            constraint_cost: default_constraint_cost(),
            constrained_actions: Vec::new(),
            constrained_features: Vec::new(),
        }
    }

    pub fn n_states(&self) -> usize {
        self.width * self.height
    }

    pub fn state_of(&self, cell: Cell) -> usize {
        cell.0 * self.width + cell.1
    }

    pub fn cell_of(&self, state: usize) -> Cell {
        (state / self.width, state % self.width)
    }

    fn in_bounds(&self, cell: Cell) -> bool {
        cell.0 < self.height && cell.1 < self.width
    }

    /// Same world without any constraint costs.
    pub fn nominal(&self) -> GridSpec {
        GridSpec {
            constrained_cells: Vec::new(),
            constrained_actions: Vec::new(),
            constrained_features: Vec::new(),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidGrid(msg));
        if self.width == 0 || self.height == 0 {
            return bad("width and height must be positive".into());
        }
        if !self.in_bounds(self.start) {
            return bad(format!("start {:?} out of bounds", self.start));
        }
        if !self.in_bounds(self.goal) {
            return bad(format!("goal {:?} out of bounds", self.goal));
        }
        if self.start == self.goal && self.n_states() > 1 {
            return bad("start and goal coincide".into());
        }
        if !(0.0..=1.0).contains(&self.slip_prob) {
            return bad(format!("slip_prob {} outside [0, 1]", self.slip_prob));
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return bad(format!("discount {} outside [0, 1]", self.discount));
        }
        if self.horizon == 0 {
            return bad("horizon must be positive".into());
        }
        for v in [
            self.goal_reward,
            self.cardinal_penalty,
            self.diagonal_penalty,
            self.constraint_cost,
        ] {
            if !v.is_finite() {
                return bad("reward parameters must be finite".into());
            }
        }
        let mut painted = BTreeSet::new();
        for &(cell, _) in &self.colors {
            if !self.in_bounds(cell) {
                return bad(format!("colored cell {cell:?} out of bounds"));
            }
            if !painted.insert(cell) {
                return bad(format!("cell {cell:?} has more than one color"));
            }
        }
        let mut constrained = BTreeSet::new();
        for &cell in &self.constrained_cells {
            if !self.in_bounds(cell) {
                return bad(format!("constrained cell {cell:?} out of bounds"));
            }
            if !constrained.insert(cell) {
                return bad(format!("cell {cell:?} constrained twice"));
            }
        }
        if self.constrained_actions.iter().collect::<BTreeSet<_>>().len()
            != self.constrained_actions.len()
        {
            return bad("duplicate constrained action".into());
        }
        if self.constrained_features.iter().collect::<BTreeSet<_>>().len()
            != self.constrained_features.len()
        {
            return bad("duplicate constrained color".into());
        }
        Ok(())
    }
}

/// One possible successor of a state-action pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Outcome {
    pub next: usize,
    pub prob: f64,
}

/// Sparse form of the transition feature vector: exactly one state bit, one
/// action bit and at most one color bit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureIndices {
    pub state: usize,
    pub action: usize,
    pub color: Option<usize>,
}

impl FeatureIndices {
    pub fn iter(self) -> impl Iterator<Item = usize> {
        [Some(self.state), Some(self.action), self.color]
            .into_iter()
            .flatten()
    }

    pub fn dot(self, weights: &[f64]) -> f64 {
        self.iter().map(|i| weights[i]).sum()
    }
}

/// Transition `(s, a, s')`, serialized as an integer triple.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "(usize, usize, usize)", try_from = "(usize, usize, usize)")]
pub struct Step {
    pub state: usize,
    pub action: Action,
    pub next: usize,
}

impl Step {
    pub fn new(state: usize, action: Action, next: usize) -> Self {
        Step { state, action, next }
    }
}

impl From<Step> for (usize, usize, usize) {
    fn from(s: Step) -> Self {
        (s.state, s.action.index(), s.next)
    }
}

impl TryFrom<(usize, usize, usize)> for Step {
    type Error = String;

    fn try_from((s, a, n): (usize, usize, usize)) -> std::result::Result<Self, String> {
        let action = Action::from_index(a).ok_or_else(|| format!("action index {a} out of range"))?;
        Ok(Step::new(s, action, n))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Trajectory {
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn new(steps: Vec<Step>) -> Self {
        Trajectory { steps }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// A grid world compiled into tables. Immutable once built.
#[derive(Clone, Debug)]
pub struct TabularMdp {
    width: usize,
    height: usize,
    goal: usize,
    start_dist: Vec<f64>,
    discount: f64,
    horizon: usize,
    slip: f64,
    available: Vec<Vec<Action>>,
    targets: Vec<[Option<usize>; N_ACTIONS]>,
    outcomes: Vec<Vec<Outcome>>,
    colors: Vec<Option<Color>>,
    nominal_weights: Vec<f64>,
    weights: Vec<f64>,
}

pub fn build_grid(spec: &GridSpec) -> Result<TabularMdp> {
    spec.validate()?;
    let n = spec.n_states();
    let goal = spec.state_of(spec.goal);

    let mut targets = vec![[None; N_ACTIONS]; n];
    let mut available = vec![Vec::new(); n];
    for s in 0..n {
        let (r, c) = spec.cell_of(s);
        for a in Action::ALL {
            let (dr, dc) = a.delta();
            let (nr, nc) = (r as isize + dr, c as isize + dc);
            if nr >= 0 && nc >= 0 && (nr as usize) < spec.height && (nc as usize) < spec.width {
                targets[s][a.index()] = Some(spec.state_of((nr as usize, nc as usize)));
                available[s].push(a);
            }
        }
    }

    // A slip replaces the intended action with a uniform draw from A_s.
    let mut outcomes = vec![Vec::new(); n * N_ACTIONS];
    for s in 0..n {
        let k = available[s].len() as f64;
        for &a in &available[s] {
            let list = available[s]
                .iter()
                .map(|&b| {
                    let mut prob = spec.slip_prob / k;
                    if b == a {
                        prob += 1.0 - spec.slip_prob;
                    }
                    Outcome {
                        next: targets[s][b.index()].expect("available action has a target"),
                        prob,
                    }
                })
                .filter(|o| o.prob > 0.0)
                .collect();
            outcomes[s * N_ACTIONS + a.index()] = list;
        }
    }

    let mut colors = vec![None; n];
    for &(cell, color) in &spec.colors {
        colors[spec.state_of(cell)] = Some(color);
    }

    let k = n + N_ACTIONS + N_COLORS;
    let mut nominal = vec![0.0; k];
    nominal[goal] = spec.goal_reward;
    for a in Action::ALL {
        nominal[n + a.index()] = if a.is_diagonal() {
            spec.diagonal_penalty
        } else {
            spec.cardinal_penalty
        };
    }
    let mut weights = nominal.clone();
    for &cell in &spec.constrained_cells {
        weights[spec.state_of(cell)] += spec.constraint_cost;
    }
    for &a in &spec.constrained_actions {
        weights[n + a.index()] += spec.constraint_cost;
    }
    for &c in &spec.constrained_features {
        weights[n + N_ACTIONS + c.index()] += spec.constraint_cost;
    }

    let mut start_dist = vec![0.0; n];
    start_dist[spec.state_of(spec.start)] = 1.0;

    Ok(TabularMdp {
        width: spec.width,
        height: spec.height,
        goal,
        start_dist,
        discount: spec.discount,
        horizon: spec.horizon,
        slip: spec.slip_prob,
        available,
        targets,
        outcomes,
        colors,
        nominal_weights: nominal,
        weights,
    })
}

impl TabularMdp {
    pub fn n_states(&self) -> usize {
        self.start_dist.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_states() + N_ACTIONS + N_COLORS
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn goal(&self) -> usize {
        self.goal
    }

    pub fn is_goal(&self, s: usize) -> bool {
        s == self.goal
    }

    pub fn start_dist(&self) -> &[f64] {
        &self.start_dist
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn slip(&self) -> f64 {
        self.slip
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn nominal_weights(&self) -> &[f64] {
        &self.nominal_weights
    }

    pub fn color(&self, s: usize) -> Option<Color> {
        self.colors[s]
    }

    /// `A_s`, in [`Action::ALL`] order.
    pub fn available(&self, s: usize) -> &[Action] {
        &self.available[s]
    }

    pub fn is_available(&self, s: usize, a: Action) -> bool {
        self.targets[s][a.index()].is_some()
    }

    /// Cell reached by `a` from `s` when the move does not slip.
    pub fn target(&self, s: usize, a: Action) -> Option<usize> {
        self.targets[s][a.index()]
    }

    /// Successors of `(s, a)` with positive probability. Empty if `a` is not
    /// available.
    pub fn outcomes(&self, s: usize, a: Action) -> &[Outcome] {
        &self.outcomes[s * N_ACTIONS + a.index()]
    }

    pub fn prob(&self, s: usize, a: Action, next: usize) -> f64 {
        self.outcomes(s, a)
            .iter()
            .find(|o| o.next == next)
            .map_or(0.0, |o| o.prob)
    }

    /// Dense `P(· | s, a)`.
    pub fn transition_dist(&self, s: usize, a: Action) -> Result<Vec<f64>> {
        if s >= self.n_states() || !self.is_available(s, a) {
            return Err(Error::InvalidAction { state: s, action: a.index() });
        }
        let mut dist = vec![0.0; self.n_states()];
        for o in self.outcomes(s, a) {
            dist[o.next] += o.prob;
        }
        Ok(dist)
    }

    /// Sparse features of `(s, a, s')`; `None` for transitions out of the
    /// absorbing goal, which carry the zero vector.
    pub fn features(&self, s: usize, a: Action, next: usize) -> Option<FeatureIndices> {
        if self.is_goal(s) {
            return None;
        }
        let n = self.n_states();
        Some(FeatureIndices {
            state: next,
            action: n + a.index(),
            color: self.colors[next].map(|c| n + N_ACTIONS + c.index()),
        })
    }

    /// Dense `φ(s, a, s')`.
    pub fn feature_vector(&self, s: usize, a: Action, next: usize) -> Vec<f64> {
        let mut phi = vec![0.0; self.n_features()];
        if let Some(f) = self.features(s, a, next) {
            for i in f.iter() {
                phi[i] += 1.0;
            }
        }
        phi
    }

    pub fn reward_with(&self, weights: &[f64], s: usize, a: Action, next: usize) -> f64 {
        self.features(s, a, next).map_or(0.0, |f| f.dot(weights))
    }

    pub fn reward(&self, s: usize, a: Action, next: usize) -> f64 {
        self.reward_with(&self.weights, s, a, next)
    }

    /// Constraint part of the reward: `(ω − ω^N)·φ`. Zero in a nominal world.
    pub fn constraint_cost(&self, s: usize, a: Action, next: usize) -> f64 {
        self.features(s, a, next).map_or(0.0, |f| {
            f.iter().map(|i| self.weights[i] - self.nominal_weights[i]).sum()
        })
    }

    /// Every `(s, a, s')` with `a ∈ A_s` and positive probability, excluding
    /// the absorbing goal.
    pub fn feasible_transitions(&self) -> impl Iterator<Item = (Step, f64)> + '_ {
        (0..self.n_states())
            .filter(move |&s| !self.is_goal(s))
            .flat_map(move |s| {
                self.available[s].iter().flat_map(move |&a| {
                    self.outcomes(s, a)
                        .iter()
                        .map(move |o| (Step::new(s, a, o.next), o.prob))
                })
            })
    }

    pub fn validate_trajectory(&self, tau: &Trajectory) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidTrajectory(msg));
        if tau.len() > self.horizon {
            return bad(format!("length {} exceeds horizon {}", tau.len(), self.horizon));
        }
        for (i, step) in tau.steps.iter().enumerate() {
            if step.state >= self.n_states() || step.next >= self.n_states() {
                return bad(format!("step {i} references a state out of range"));
            }
            if !self.is_available(step.state, step.action) {
                return bad(format!(
                    "step {i}: action {} not available in state {}",
                    step.action, step.state
                ));
            }
            if self.prob(step.state, step.action, step.next) <= 0.0 {
                return bad(format!("step {i}: successor {} has zero probability", step.next));
            }
            if let Some(prev) = i.checked_sub(1).map(|j| tau.steps[j]) {
                if prev.next != step.state {
                    return bad(format!("step {i} does not continue from step {j}", j = i - 1));
                }
            }
        }
        Ok(())
    }

    /// Discounted return with the first transition undiscounted.
    pub fn trajectory_reward(&self, tau: &Trajectory) -> Result<f64> {
        self.validate_trajectory(tau)?;
        let mut total = 0.0;
        let mut g = 1.0;
        for st in &tau.steps {
            total += g * self.reward(st.state, st.action, st.next);
            g *= self.discount;
        }
        Ok(total)
    }

    /// Accumulated ground-truth constraint cost `c(τ)`.
    pub fn trajectory_cost(&self, tau: &Trajectory) -> f64 {
        tau.steps
            .iter()
            .map(|st| self.constraint_cost(st.state, st.action, st.next))
            .sum()
    }

    /// `φ(τ)`, the sum of transition features.
    pub fn trajectory_features(&self, tau: &Trajectory) -> Result<Vec<f64>> {
        self.validate_trajectory(tau)?;
        let mut phi = vec![0.0; self.n_features()];
        self.accumulate_features(tau, &mut phi);
        Ok(phi)
    }

    pub(crate) fn accumulate_features(&self, tau: &Trajectory, into: &mut [f64]) {
        for st in &tau.steps {
            if let Some(f) = self.features(st.state, st.action, st.next) {
                for i in f.iter() {
                    into[i] += 1.0;
                }
            }
        }
    }

    /// Copy of this world with reward weights `ω − ω_R`.
    pub fn apply_residual(&self, omega_r: &[f64]) -> Result<TabularMdp> {
        if omega_r.len() != self.n_features() {
            return Err(Error::Dimension { expected: self.n_features(), got: omega_r.len() });
        }
        if let Some((i, v)) = omega_r.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
            return Err(Error::domain(format!(
                "residual weights must be nonnegative (component {i} is {v})"
            )));
        }
        let mut out = self.clone();
        for (w, r) in out.weights.iter_mut().zip(omega_r) {
            *w -= r;
        }
        Ok(out)
    }

    /// Copy with the given weights, keeping `ω^N`.
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<TabularMdp> {
        if weights.len() != self.n_features() {
            return Err(Error::Dimension { expected: self.n_features(), got: weights.len() });
        }
        Ok(TabularMdp { weights, ..self.clone() })
    }

    /// Fewest moves between two cells when every move succeeds. Diagonal moves
    /// count as one step.
    pub fn shortest_path_len(&self, from: usize, to: usize) -> Option<usize> {
        let mut dist = vec![usize::MAX; self.n_states()];
        let mut queue = std::collections::VecDeque::from([from]);
        dist[from] = 0;
        while let Some(s) = queue.pop_front() {
            if s == to {
                return Some(dist[s]);
            }
            for &a in &self.available[s] {
                let t = self.targets[s][a.index()].expect("available");
                if dist[t] == usize::MAX {
                    dist[t] = dist[s] + 1;
                    queue.push_back(t);
                }
            }
        }
        None
    }

    pub fn start_state(&self) -> usize {
        self.start_dist
            .iter()
            .position(|&p| p > 0.0)
            .expect("start distribution has support")
    }
}
