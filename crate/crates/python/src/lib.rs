//! Python bindings: grid worlds, planning, constraint learning, ζ, MDFT,
//! orchestrators and evaluation metrics.

use std::collections::BTreeMap;

use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use softcon_core::error::Error;
use softcon_core::experiment::{self, ExperimentConfig};
use softcon_core::irl::{self, IrlHyperparams, ResidualModel as CoreResidual};
use softcon_core::mdft::{self, MdftModel as CoreMdft, StopRule};
use softcon_core::mdp::{self, Action, Color, GridSpec as CoreSpec, Step, TabularMdp, Trajectory};
use softcon_core::metrics::{self, ConstraintGroundTruth};
use softcon_core::orchestrate::{self, Orchestrator, OrchestratorConfig, OrchestratorKind, ScoreTable, StateActionScores};
use softcon_core::planner;
use softcon_core::zeta::{self, ConstraintEstimate};

create_exception!(softcon, SoftconError, PyValueError, "Raised for invalid inputs and failed computations.");

fn err(e: Error) -> PyErr {
    SoftconError::new_err(e.to_string())
}

type Triple = (usize, usize, usize);

fn to_trajectories(raw: Vec<Vec<Triple>>) -> PyResult<Vec<Trajectory>> {
    raw.into_iter()
        .map(|steps| {
            steps
                .into_iter()
                .map(|t| Step::try_from(t).map_err(SoftconError::new_err))
                .collect::<PyResult<Vec<_>>>()
                .map(Trajectory::new)
        })
        .collect()
}

fn from_trajectories(trajs: &[Trajectory]) -> Vec<Vec<Triple>> {
    trajs.iter().map(|t| t.steps.iter().map(|&s| s.into()).collect()).collect()
}

fn parse_color(name: &str) -> PyResult<Color> {
    match name {
        "blue" => Ok(Color::Blue),
        "green" => Ok(Color::Green),
        "red" => Ok(Color::Red),
        _ => Err(SoftconError::new_err(format!("unknown color {name:?}"))),
    }
}

fn parse_kind(name: &str) -> PyResult<OrchestratorKind> {
    OrchestratorKind::ALL
        .into_iter()
        .find(|k| k.name() == name)
        .ok_or_else(|| SoftconError::new_err(format!("unknown orchestrator {name:?}")))
}

fn action(i: usize) -> PyResult<Action> {
    Action::from_index(i).ok_or_else(|| SoftconError::new_err(format!("action index {i} out of range 0..8")))
}

/// Declarative grid world description.
#[pyclass(module = "softcon", from_py_object)]
#[derive(Clone)]
struct GridSpec {
    inner: CoreSpec,
}

#[pymethods]
impl GridSpec {
    #[new]
    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (width, height, start, goal, *, slip_prob=0.1, horizon=50, colors=None, constrained_cells=None))]
    fn new(
        width: usize,
        height: usize,
        start: (usize, usize),
        goal: (usize, usize),
        slip_prob: f64,
        horizon: usize,
        colors: Option<Vec<((usize, usize), String)>>,
        constrained_cells: Option<Vec<(usize, usize)>>,
    ) -> PyResult<Self> {
        let mut inner = CoreSpec::new(width, height, start, goal);
        inner.slip_prob = slip_prob;
        inner.horizon = horizon;
        inner.colors = colors
            .unwrap_or_default()
            .into_iter()
            .map(|(c, name)| Ok((c, parse_color(&name)?)))
            .collect::<PyResult<_>>()?;
        inner.constrained_cells = constrained_cells.unwrap_or_default();
        inner.validate().map_err(err)?;
        Ok(GridSpec { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: CoreSpec = serde_json::from_str(text).map_err(|e| err(e.into()))?;
        inner.validate().map_err(err)?;
        Ok(GridSpec { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| err(e.into()))
    }

    /// The same grid with every constraint removed.
    fn nominal(&self) -> Self {
        GridSpec { inner: self.inner.nominal() }
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height
    }

    #[getter]
    fn constrained_cells(&self) -> Vec<(usize, usize)> {
        self.inner.constrained_cells.clone()
    }

    fn __repr__(&self) -> String {
        format!(
            "GridSpec({}x{}, start={:?}, goal={:?}, constrained={})",
            self.inner.width,
            self.inner.height,
            self.inner.start,
            self.inner.goal,
            self.inner.constrained_cells.len()
        )
    }
}

/// Compiled tabular world. Actions are indices 0..8 in the order
/// N, E, S, W, NE, SE, SW, NW.
#[pyclass(module = "softcon", frozen)]
struct Mdp {
    inner: TabularMdp,
}

#[pymethods]
impl Mdp {
    #[new]
    fn new(spec: &GridSpec) -> PyResult<Self> {
        Ok(Mdp { inner: mdp::build_grid(&spec.inner).map_err(err)? })
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.inner.n_states()
    }

    #[getter]
    fn n_features(&self) -> usize {
        self.inner.n_features()
    }

    #[getter]
    fn goal(&self) -> usize {
        self.inner.goal()
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.weights().to_vec()
    }

    fn available(&self, s: usize) -> Vec<usize> {
        self.inner.available(s).iter().map(|a| a.index()).collect()
    }

    fn transition(&self, s: usize, a: usize) -> PyResult<Vec<f64>> {
        self.inner.transition_dist(s, action(a)?).map_err(err)
    }

    fn reward(&self, s: usize, a: usize, next: usize) -> PyResult<f64> {
        Ok(self.inner.reward(s, action(a)?, next))
    }

    fn trajectory_cost(&self, trajectory: Vec<Triple>) -> PyResult<f64> {
        let t = to_trajectories(vec![trajectory])?.remove(0);
        Ok(self.inner.trajectory_cost(&t))
    }

    /// Q-values per state, one row of 8 entries (unavailable actions are -inf).
    #[pyo3(signature = (tol=1e-9))]
    fn q_values(&self, tol: f64) -> PyResult<Vec<Vec<f64>>> {
        let q = planner::value_iteration(&self.inner, tol).map_err(err)?;
        Ok((0..q.n_states()).map(|s| q.row(s).to_vec()).collect())
    }

    /// Rollouts of the optimal policy, deterministic (`greedy`) or Boltzmann
    /// (`softmax`) at `temperature`.
    #[pyo3(signature = (n, seed, policy="greedy", temperature=1.0, tol=1e-9))]
    fn sample(&self, n: usize, seed: u64, policy: &str, temperature: f64, tol: f64) -> PyResult<Vec<Vec<Triple>>> {
        let q = planner::value_iteration(&self.inner, tol).map_err(err)?;
        let pi = match policy {
            "greedy" => planner::greedy_policy(&self.inner, &q),
            "softmax" => planner::softmax_policy(&self.inner, &q, temperature).map_err(err)?,
            other => return Err(SoftconError::new_err(format!("unknown policy {other:?}"))),
        };
        Ok(from_trajectories(&planner::sample_trajectories(&self.inner, &pi, n, seed)))
    }

    /// Expected feature counts of the max-entropy trajectory model.
    fn expected_feature_counts(&self, weights: Vec<f64>) -> PyResult<Vec<f64>> {
        irl::expected_feature_counts(&self.inner, &weights).map(|(_, phi)| phi).map_err(err)
    }
}

/// Learned residual reward `ω_R` alongside the nominal weights `ω_N`.
#[pyclass(module = "softcon", frozen)]
struct ResidualModel {
    inner: CoreResidual,
}

#[pymethods]
impl ResidualModel {
    #[getter]
    fn omega_r(&self) -> Vec<f64> {
        self.inner.omega_r.clone()
    }

    #[getter]
    fn omega_n(&self) -> Vec<f64> {
        self.inner.omega_n.clone()
    }

    fn constrained_world(&self, nominal: &Mdp) -> PyResult<Mdp> {
        Ok(Mdp { inner: self.inner.constrained_world(&nominal.inner).map_err(err)? })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| err(e.into()))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(ResidualModel { inner: serde_json::from_str(text).map_err(|e| err(e.into()))? })
    }
}

/// Learns `ω_R` from demonstrations in the nominal world.
#[pyfunction]
#[pyo3(signature = (nominal, demos, learning_rate=0.1, lr_decay=0.99, iterations=300, convergence_tol=1e-4))]
fn learn(
    nominal: &Mdp,
    demos: Vec<Vec<Triple>>,
    learning_rate: f64,
    lr_decay: f64,
    iterations: usize,
    convergence_tol: f64,
) -> PyResult<ResidualModel> {
    let hp = IrlHyperparams { learning_rate, lr_decay, iterations, convergence_tol, ..IrlHyperparams::default() };
    let demos = to_trajectories(demos)?;
    Ok(ResidualModel { inner: irl::mesc_irl_learn(&nominal.inner, &demos, &hp).map_err(err)? })
}

#[pyfunction]
fn gradient(nominal: &Mdp, demos: Vec<Vec<Triple>>, omega_r: Vec<f64>) -> PyResult<Vec<f64>> {
    irl::mesc_irl_gradient(&nominal.inner, &to_trajectories(demos)?, &omega_r).map_err(err)
}

#[pyfunction]
fn transition_constraint_prob(penalty: f64, sigma_pooled: f64) -> PyResult<f64> {
    zeta::transition_constraint_prob(penalty, sigma_pooled).map_err(err)
}

/// `{"sigma_pooled", "zeta": {(s, a, s'): ζ}, "zeta_f": {feature: ζ}}`.
#[pyfunction]
fn constraint_estimate<'py>(
    py: Python<'py>,
    nominal: &Mdp,
    model: &ResidualModel,
) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
    let est = ConstraintEstimate::from_model(&nominal.inner, &model.inner).map_err(err)?;
    let zeta: BTreeMap<Triple, f64> = est.zeta.iter().map(|(st, z)| ((*st).into(), *z)).collect();
    let d = pyo3::types::PyDict::new(py);
    d.set_item("sigma_pooled", est.sigma.pooled)?;
    d.set_item("zeta", zeta)?;
    d.set_item("zeta_f", est.zeta_f)?;
    Ok(d)
}

/// Multi-alternative decision field theory model.
#[pyclass(module = "softcon", frozen)]
struct MdftModel {
    inner: CoreMdft,
}

#[pymethods]
impl MdftModel {
    /// Options are rows of `m`, attributes its columns; `w` is the attention
    /// distribution over attributes.
    #[new]
    #[pyo3(signature = (m, w, steps=25, phi1=mdft::DEFAULT_PHI1, phi2=mdft::DEFAULT_PHI2))]
    fn new(m: Vec<Vec<f64>>, w: Vec<f64>, steps: usize, phi1: f64, phi2: f64) -> PyResult<Self> {
        Ok(MdftModel { inner: CoreMdft::new(m, w, phi1, phi2, StopRule::FixedSteps { steps }).map_err(err)? })
    }

    #[staticmethod]
    fn from_distribution(p: Vec<f64>) -> PyResult<Self> {
        Ok(MdftModel { inner: CoreMdft::from_distribution(&p).map_err(err)? })
    }

    #[staticmethod]
    fn from_greedy(chosen: usize, k: usize) -> PyResult<Self> {
        Ok(MdftModel { inner: CoreMdft::from_greedy(chosen, k).map_err(err)? })
    }

    #[getter]
    fn n_options(&self) -> usize {
        self.inner.n_options()
    }

    fn feedback(&self) -> Vec<Vec<f64>> {
        let s = self.inner.feedback();
        (0..s.nrows()).map(|i| s.row(i).iter().copied().collect()).collect()
    }

    fn valence(&self, attribute: usize) -> PyResult<Vec<f64>> {
        let v = mdft::valence(self.inner.contrast(), self.inner.evaluation(), attribute).map_err(err)?;
        Ok(v.iter().copied().collect())
    }

    fn deliberate(&self, seed: u64) -> usize {
        self.inner.deliberate(seed)
    }

    fn choice_distribution(&self, n_runs: usize, seed: u64) -> PyResult<Vec<f64>> {
        self.inner.choice_distribution(n_runs, seed).map_err(err)
    }
}

fn scores(q_n: Vec<f64>, q_c: Vec<f64>, temperature: f64) -> PyResult<StateActionScores> {
    let actions = (0..q_n.len()).map(action).collect::<PyResult<Vec<_>>>()?;
    StateActionScores::new(actions, q_n, q_c, temperature).map_err(err)
}

/// Index of the action with the largest element-wise max of the two Q rows.
#[pyfunction]
fn greedy_select(q_n: Vec<f64>, q_c: Vec<f64>) -> PyResult<usize> {
    Ok(orchestrate::greedy_select(&scores(q_n, q_c, 1.0)?).index())
}

/// `w_n·sq_n + (1 − w_n)·sq_c`.
#[pyfunction]
fn wa_distribution(sq_n: Vec<f64>, sq_c: Vec<f64>, w_n: f64) -> PyResult<Vec<f64>> {
    let actions = (0..sq_n.len()).map(action).collect::<PyResult<Vec<_>>>()?;
    let sc = StateActionScores::from_probabilities(actions, sq_n, sq_c).map_err(err)?;
    let cfg = OrchestratorConfig::new(OrchestratorKind::WeightedAverage, w_n).map_err(err)?;
    Ok(orchestrate::wa_distribution(&sc, cfg.w_n, cfg.w_c))
}

#[pyfunction]
fn wa_unrepresentability_check(sq_n: Vec<f64>, sq_c: Vec<f64>, grid_step: f64) -> PyResult<bool> {
    orchestrate::wa_unrepresentability_check(&sq_n, &sq_c, grid_step).map_err(err)
}

/// Rollouts in `env` of an orchestrator combining the optimal policies of
/// `nominal` and `constrained`.
#[pyfunction]
#[pyo3(signature = (kind, w_n, nominal, constrained, env, n, seed, temperature=1.0, mdft_steps=25))]
#[allow(clippy::too_many_arguments)]
fn run_orchestrator(
    kind: &str,
    w_n: f64,
    nominal: &Mdp,
    constrained: &Mdp,
    env: &Mdp,
    n: usize,
    seed: u64,
    temperature: f64,
    mdft_steps: usize,
) -> PyResult<Vec<Vec<Triple>>> {
    let table = ScoreTable::from_worlds(&nominal.inner, &constrained.inner, temperature, 1e-9).map_err(err)?;
    let config = OrchestratorConfig { mdft_steps, ..OrchestratorConfig::new(parse_kind(kind)?, w_n).map_err(err)? };
    let agent = Orchestrator::new(config, table).map_err(err)?;
    Ok(from_trajectories(&orchestrate::run_agent(&env.inner, &agent, n, seed).map_err(err)?))
}

#[pyfunction]
fn kl_divergence(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    metrics::kl_divergence(&p, &q).map_err(err)
}

#[pyfunction]
fn js_divergence(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    metrics::js_divergence(&p, &q).map_err(err)
}

#[pyfunction]
fn trajectory_kl(p: Vec<Vec<Triple>>, q: Vec<Vec<Triple>>) -> PyResult<f64> {
    metrics::trajectory_kl(&to_trajectories(p)?, &to_trajectories(q)?).map_err(err)
}

#[pyfunction]
fn trajectory_js(p: Vec<Vec<Triple>>, q: Vec<Vec<Triple>>) -> PyResult<f64> {
    metrics::trajectory_js(&to_trajectories(p)?, &to_trajectories(q)?).map_err(err)
}

/// Soft `(fp, fn)` rates of feature constraint probabilities against the
/// constraints of `truth`.
#[pyfunction]
fn recovery_rates(nominal: &Mdp, truth: &Mdp, zeta_f: BTreeMap<usize, f64>, chi: f64) -> PyResult<(f64, f64)> {
    let gt = ConstraintGroundTruth::per_feature(&nominal.inner, &truth.inner).map_err(err)?;
    Ok((
        metrics::soft_fp_rate(&zeta_f, &gt, chi).map_err(err)?,
        metrics::soft_fn_rate(&zeta_f, &gt, chi).map_err(err)?,
    ))
}

/// Random 9×9 world pair `(nominal, truth)`.
#[pyfunction]
fn gen_random_world(seed: u64) -> PyResult<(GridSpec, GridSpec)> {
    let (n, t) = experiment::gen_random_world(seed).map_err(err)?;
    Ok((GridSpec { inner: n }, GridSpec { inner: t }))
}

/// Runs the full pipeline with a JSON configuration and returns the path of
/// the results file.
#[pyfunction]
#[pyo3(signature = (out, config_json="{}"))]
fn run_pipeline(out: std::path::PathBuf, config_json: &str) -> PyResult<String> {
    let cfg: ExperimentConfig = serde_json::from_str(config_json).map_err(|e| err(e.into()))?;
    let summary = experiment::cmd_pipeline(&cfg, &out).map_err(err)?;
    Ok(summary.results_path.display().to_string())
}


#[pymodule]
fn softcon(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SoftconError", m.py().get_type::<SoftconError>())?;
    m.add_class::<GridSpec>()?;
    m.add_class::<Mdp>()?;
    m.add_class::<ResidualModel>()?;
    m.add_class::<MdftModel>()?;
    for f in [
        wrap_pyfunction!(learn, m)?,
        wrap_pyfunction!(gradient, m)?,
        wrap_pyfunction!(transition_constraint_prob, m)?,
        wrap_pyfunction!(constraint_estimate, m)?,
        wrap_pyfunction!(greedy_select, m)?,
        wrap_pyfunction!(wa_distribution, m)?,
        wrap_pyfunction!(wa_unrepresentability_check, m)?,
        wrap_pyfunction!(run_orchestrator, m)?,
        wrap_pyfunction!(kl_divergence, m)?,
        wrap_pyfunction!(js_divergence, m)?,
        wrap_pyfunction!(trajectory_kl, m)?,
        wrap_pyfunction!(trajectory_js, m)?,
        wrap_pyfunction!(recovery_rates, m)?,
        wrap_pyfunction!(gen_random_world, m)?,
        wrap_pyfunction!(run_pipeline, m)?,
    ] {
        m.add_function(f)?;
    }
    Ok(())
}
