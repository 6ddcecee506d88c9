//! Multi-alternative decision field theory.
//!
//! Options are rows of the evaluation matrix `M`, attributes its columns. At
//! each step one attribute is attended (drawn from `w`), the valence
//! `V = C·M·e_j` contrasts each option with the mean of the others, and
//! preferences accumulate as `P ← S·P + V` from `P = 0`.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::planner::argmax_lowest;
use crate::rng::{derive_seed, sample_index};

pub const DEFAULT_PHI1: f64 = 0.022;
pub const DEFAULT_PHI2: f64 = 0.05;
/// Weight of the dominance direction in the feedback distance.
pub const DOMINANCE_WEIGHT: f64 = 10.0;
pub const DUPLICATE_TOL: f64 = 1e-9;
/// Spectral radii up to `1 + RADIUS_TOL` count as marginally stable.
pub const RADIUS_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    FixedSteps { steps: usize },
    Threshold { threshold: f64, max_steps: usize },
}

impl StopRule {
    fn validate(&self) -> Result<()> {
        match *self {
            StopRule::FixedSteps { steps } if steps >= 1 => Ok(()),
            StopRule::Threshold { threshold, max_steps } if max_steps >= 1 && threshold.is_finite() => Ok(()),
            _ => Err(Error::domain(format!("invalid stop rule {self:?}"))),
        }
    }
}

/// `k×k` contrast: 1 on the diagonal, `-1/(k-1)` elsewhere.
pub fn build_contrast(k: usize) -> Result<DMatrix<f64>> {
    if k < 2 {
        return Err(Error::domain(format!("contrast needs at least two options, got {k}")));
    }
    let off = -1.0 / (k as f64 - 1.0);
    Ok(DMatrix::from_fn(k, k, |i, j| if i == j { 1.0 } else { off }))
}

/// Squared psychological distance between two options. With two attributes
/// the difference is rotated onto the indifference and dominance directions
/// and the dominance component is weighted by [`DOMINANCE_WEIGHT`]; otherwise
/// the plain squared Euclidean distance is used.
fn distance_sq(a: &[f64], b: &[f64]) -> f64 {
    if a.len() == 2 {
        let d0 = a[0] - b[0];
        let d1 = a[1] - b[1];
        let indiff = (d0 - d1) / std::f64::consts::SQRT_2;
        let dom = (d0 + d1) / std::f64::consts::SQRT_2;
        indiff * indiff + DOMINANCE_WEIGHT * dom * dom
    } else {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn feedback_from_rows(rows: &[Vec<f64>], phi1: f64, phi2: f64) -> DMatrix<f64> {
    let k = rows.len();
    DMatrix::from_fn(k, k, |i, j| {
        let eye = if i == j { 1.0 } else { 0.0 };
        eye - phi2 * (-phi1 * distance_sq(&rows[i], &rows[j])).exp()
    })
}

const EIGEN_MAX_ITER: usize = 10_000;

/// Largest eigenvalue modulus. NaN when the eigen solver does not converge.
pub fn spectral_radius(s: &DMatrix<f64>) -> f64 {
    let moduli: Option<Vec<f64>> = if *s == s.transpose() {
        SymmetricEigen::try_new(s.clone(), f64::EPSILON, EIGEN_MAX_ITER)
            .map(|e| e.eigenvalues.iter().map(|v| v.abs()).collect())
    } else {
        Schur::try_new(s.clone(), f64::EPSILON, EIGEN_MAX_ITER)
            .map(|sc| sc.complex_eigenvalues().iter().map(|z| z.norm()).collect())
    };
    moduli.map_or(f64::NAN, |m| m.into_iter().fold(0.0, f64::max))
}

/// `S = I − φ2·exp(−φ1·D²)`, element-wise over option pairs.
///
/// Stability is judged on the distinct option rows. Duplicates add a unit
/// eigenvalue along their difference, which identical valences never excite.
/// Rows closer than [`DUPLICATE_TOL`] in squared distance count as duplicates.
/// Near-duplicates leave an eigenvalue within rounding of 1, accepted up to
/// [`RADIUS_TOL`].
pub fn build_feedback(m: &DMatrix<f64>, phi1: f64, phi2: f64) -> Result<DMatrix<f64>> {
    if !(phi1 > 0.0) || !(phi2 > 0.0 && phi2 < 1.0) {
        return Err(Error::domain(format!("need phi1 > 0 and 0 < phi2 < 1, got {phi1}, {phi2}")));
    }
    let all = rows(m);
    let mut distinct: Vec<Vec<f64>> = Vec::new();
    for r in &all {
        if !distinct.iter().any(|d| distance_sq(d, r) < DUPLICATE_TOL) {
            distinct.push(r.clone());
        }
    }
    let radius = spectral_radius(&feedback_from_rows(&distinct, phi1, phi2));
    if !(radius <= 1.0 + RADIUS_TOL) {
        return Err(Error::UnstableFeedback { radius });
    }
    Ok(feedback_from_rows(&all, phi1, phi2))
}

/// `C·M·e_j`.
pub fn valence(c: &DMatrix<f64>, m: &DMatrix<f64>, attribute: usize) -> Result<DVector<f64>> {
    if attribute >= m.ncols() {
        return Err(Error::domain(format!("attribute {attribute} out of range 0..{}", m.ncols())));
    }
    if c.ncols() != m.nrows() {
        return Err(Error::Dimension { expected: m.nrows(), got: c.ncols() });
    }
    Ok(c * m.column(attribute))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeliberationState {
    pub preferences: DVector<f64>,
    pub t: usize,
}

impl DeliberationState {
    pub fn new(k: usize) -> Self {
        DeliberationState { preferences: DVector::zeros(k), t: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MdftModel {
    evaluation: DMatrix<f64>,
    attention: Vec<f64>,
    contrast: DMatrix<f64>,
    feedback: DMatrix<f64>,
    phi1: f64,
    phi2: f64,
    stop: StopRule,
    /// `C·M`, one column per attribute.
    valences: DMatrix<f64>,
}

/// JSON form: the evaluation matrix as rows, attention weights, feedback
/// parameters and stop rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdftModelSpec {
    #[serde(rename = "M")]
    pub m: Vec<Vec<f64>>,
    pub w: Vec<f64>,
    pub phi1: f64,
    pub phi2: f64,
    pub stop_rule: StopRule,
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let k = rows.len();
    let j = rows.first().map_or(0, Vec::len);
    if k < 2 {
        return Err(Error::domain(format!("need at least two options, got {k}")));
    }
    if j == 0 || rows.iter().any(|r| r.len() != j) {
        return Err(Error::domain("evaluation matrix rows must share a positive length"));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::domain("evaluation matrix must be finite"));
    }
    Ok(DMatrix::from_fn(k, j, |r, c| rows[r][c]))
}

fn validate_distribution(w: &[f64], len: usize, what: &str) -> Result<()> {
    if w.len() != len {
        return Err(Error::Dimension { expected: len, got: w.len() });
    }
    if w.iter().any(|v| !(*v >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::domain(format!("{what} must be a probability vector")));
    }
    Ok(())
}

impl MdftModel {
    /// Model with the standard contrast and distance-based feedback.
    pub fn new(m: Vec<Vec<f64>>, w: Vec<f64>, phi1: f64, phi2: f64, stop: StopRule) -> Result<Self> {
        let evaluation = matrix_from_rows(&m)?;
        let feedback = build_feedback(&evaluation, phi1, phi2)?;
        Self::assemble(evaluation, w, feedback, phi1, phi2, stop)
    }

    /// Model with a caller-supplied feedback matrix. Marginal stability
    /// (spectral radius 1, e.g. `S = I`) is accepted.
    pub fn with_feedback(
        m: Vec<Vec<f64>>,
        w: Vec<f64>,
        feedback: DMatrix<f64>,
        stop: StopRule,
    ) -> Result<Self> {
        let evaluation = matrix_from_rows(&m)?;
        let k = evaluation.nrows();
        if feedback.shape() != (k, k) {
            return Err(Error::Dimension { expected: k, got: feedback.nrows() });
        }
        let radius = spectral_radius(&feedback);
        if !(radius <= 1.0 + RADIUS_TOL) {
            return Err(Error::UnstableFeedback { radius });
        }
        Self::assemble(evaluation, w, feedback, f64::NAN, f64::NAN, stop)
    }

    fn assemble(
        evaluation: DMatrix<f64>,
        w: Vec<f64>,
        feedback: DMatrix<f64>,
        phi1: f64,
        phi2: f64,
        stop: StopRule,
    ) -> Result<Self> {
        validate_distribution(&w, evaluation.ncols(), "attention weights")?;
        stop.validate()?;
        let contrast = build_contrast(evaluation.nrows())?;
        let valences = &contrast * &evaluation;
        Ok(MdftModel { evaluation, attention: w, contrast, feedback, phi1, phi2, stop, valences })
    }

    pub fn from_spec(spec: &MdftModelSpec) -> Result<Self> {
        Self::new(spec.m.clone(), spec.w.clone(), spec.phi1, spec.phi2, spec.stop_rule)
    }

    pub fn to_spec(&self) -> MdftModelSpec {
        MdftModelSpec {
            m: rows(&self.evaluation),
            w: self.attention.clone(),
            phi1: self.phi1,
            phi2: self.phi2,
            stop_rule: self.stop,
        }
    }

    /// Identity evaluation over `k = |p|` attributes, attention `p`, one step.
    /// Each run attends a single attribute, whose option is then the only one
    /// with positive preference, so choices follow `p` exactly.
    pub fn from_distribution(p: &[f64]) -> Result<Self> {
        let k = p.len();
        if k < 2 {
            return Err(Error::domain("distribution needs at least two options"));
        }
        validate_distribution(p, k, "choice distribution")?;
        let m = (0..k).map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        Self::new(m, p.to_vec(), DEFAULT_PHI1, DEFAULT_PHI2, StopRule::FixedSteps { steps: 1 })
    }

    /// Two attributes, all preferences zero except a row of ones for `chosen`,
    /// one step. Attention weights are an arbitrary draw fixed by `(chosen, k)`.
    pub fn from_greedy(chosen: usize, k: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(k as u64, &[chosen as u64]));
        let w0: f64 = rng.gen_range(0.05..0.95);
        Self::from_greedy_with_attention(chosen, k, [w0, 1.0 - w0])
    }

    pub fn from_greedy_with_attention(chosen: usize, k: usize, w: [f64; 2]) -> Result<Self> {
        if chosen >= k {
            return Err(Error::domain(format!("chosen option {chosen} out of range 0..{k}")));
        }
        let m = (0..k)
            .map(|i| if i == chosen { vec![1.0, 1.0] } else { vec![0.0, 0.0] })
            .collect();
        Self::new(m, w.to_vec(), DEFAULT_PHI1, DEFAULT_PHI2, StopRule::FixedSteps { steps: 1 })
    }

    pub fn n_options(&self) -> usize {
        self.evaluation.nrows()
    }

    pub fn evaluation(&self) -> &DMatrix<f64> {
        &self.evaluation
    }

    pub fn attention(&self) -> &[f64] {
        &self.attention
    }

    pub fn contrast(&self) -> &DMatrix<f64> {
        &self.contrast
    }

    pub fn feedback(&self) -> &DMatrix<f64> {
        &self.feedback
    }

    pub fn stop_rule(&self) -> StopRule {
        self.stop
    }

    /// One accumulation step with attribute `j`.
    pub fn step(&self, state: &mut DeliberationState, attribute: usize) {
        let mut next = self.valences.column(attribute).clone_owned();
        next.gemv(1.0, &self.feedback, &state.preferences, 1.0);
        state.preferences = next;
        state.t += 1;
    }

    /// Runs the deliberation and returns the preferred option. Preferences
    /// within [`TIE_TOL`](crate::planner::TIE_TOL) of the maximum tie and go to
    /// the lowest index.
    pub fn deliberate_with(&self, rng: &mut dyn RngCore) -> usize {
        let mut state = DeliberationState::new(self.n_options());
        let (max_steps, threshold) = match self.stop {
            StopRule::FixedSteps { steps } => (steps, None),
            StopRule::Threshold { threshold, max_steps } => (max_steps, Some(threshold)),
        };
        while state.t < max_steps {
            let j = sample_index(&self.attention, rng.gen::<f64>());
            self.step(&mut state, j);
            if let Some(theta) = threshold {
                if state.preferences.max() >= theta {
                    break;
                }
            }
        }
        argmax_lowest(state.preferences.iter().copied()).expect("at least two options")
    }

    pub fn deliberate(&self, seed: u64) -> usize {
        self.deliberate_with(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Empirical choice frequencies over `n_runs` seeded deliberations.
    pub fn choice_distribution(&self, n_runs: usize, seed: u64) -> Result<Vec<f64>> {
        if n_runs == 0 {
            return Err(Error::domain("need at least one run"));
        }
        let mut counts = vec![0usize; self.n_options()];
        for i in 0..n_runs {
            counts[self.deliberate(derive_seed(seed, &[i as u64]))] += 1;
        }
        Ok(counts.into_iter().map(|c| c as f64 / n_runs as f64).collect())
    }
}
