//! Random worlds and the end-to-end experiment pipeline.
//!
//! Per world: generate, plan on the ground truth, sample demonstrations,
//! learn the residual, extract ζ, score recovery at each demonstration count,
//! then sweep the orchestrators over the weight grid.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::irl::{mesc_irl_learn, IrlHyperparams, ResidualModel};
use crate::metrics::{
    hard_fn_rate, hard_fp_rate, mean_cost, soft_fn_rate, soft_fp_rate, trajectory_js, trajectory_kl,
    trajectory_quality, ConstraintGroundTruth, ResultRow,
};
use crate::mdp::{build_grid, Cell, Color, GridSpec, TabularMdp, Trajectory};
use crate::orchestrate::{run_agent, weight_sweep, Orchestrator, OrchestratorConfig, OrchestratorKind, ScoreTable};
use crate::planner::{greedy_policy, sample_trajectories, softmax_policy, value_iteration};
use crate::rng::{derive_seed, rng_from};
use crate::zeta::ConstraintEstimate;

pub const GRID_SIZE: usize = 9;
pub const MIN_START_GOAL_MOVES: usize = 8;
pub const CELLS_PER_COLOR: usize = 6;
pub const CONSTRAINED_CELLS: usize = 6;

const LABEL_WORLD: u64 = 1;
const LABEL_DEMOS: u64 = 2;
const LABEL_EVAL: u64 = 3;
const LABEL_ORCH: u64 = 4;
const LABEL_REF: u64 = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub n_worlds: usize,
    pub demos_per_world: Vec<usize>,
    pub seed: u64,
    pub chi_values: Vec<f64>,
    pub zeta_cutoffs: Vec<f64>,
    /// Number of increments between `(0, 1)` and `(1, 0)`.
    pub weight_steps: usize,
    pub orchestrators: Vec<OrchestratorKind>,
    pub rollouts: usize,
    pub eval_rollouts: usize,
    pub mdft_steps: usize,
    pub temperature: f64,
    pub vi_tol: f64,
    pub slip_prob: f64,
    pub rejection_budget: usize,
    pub irl: IrlHyperparams,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n_worlds: 10,
            demos_per_world: vec![10, 25, 50, 100, 200],
            seed: 0,
            chi_values: vec![0.1, 0.2, 0.3],
            zeta_cutoffs: vec![0.5, 0.6, 0.7],
            weight_steps: 10,
            orchestrators: OrchestratorKind::ALL.to_vec(),
            rollouts: 200,
            eval_rollouts: 200,
            mdft_steps: crate::orchestrate::DEFAULT_MDFT_STEPS,
            temperature: 1.0,
            vi_tol: 1e-9,
            slip_prob: 0.1,
            rejection_budget: 10_000,
            irl: IrlHyperparams::default(),
            output_dir: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_worlds", self.n_worlds),
            ("weight_steps", self.weight_steps),
            ("rollouts", self.rollouts),
            ("eval_rollouts", self.eval_rollouts),
            ("mdft_steps", self.mdft_steps),
            ("rejection_budget", self.rejection_budget),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::domain(format!("{name} must be positive")));
        }
        if self.demos_per_world.is_empty() || self.demos_per_world.contains(&0) {
            return Err(Error::domain("demos_per_world must list positive counts"));
        }
        if self.chi_values.iter().chain(&self.zeta_cutoffs).any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::domain("chi values and zeta cutoffs must lie in [0, 1]"));
        }
        if !(self.temperature > 0.0 && self.vi_tol > 0.0) {
            return Err(Error::domain("temperature and vi_tol must be positive"));
        }
        if !(0.0..=1.0).contains(&self.slip_prob) {
            return Err(Error::domain("slip_prob must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn world_seed(&self, world_id: usize) -> u64 {
        derive_seed(self.seed, &[LABEL_WORLD, world_id as u64])
    }
}

fn chebyshev(a: Cell, b: Cell) -> usize {
    a.0.abs_diff(b.0).max(a.1.abs_diff(b.1))
}

/// A 9×9 world pair: start and goal at least eight moves apart, six blue,
/// six green and six constrained cells drawn from the remaining cells.
/// Colors and constraints are drawn independently and may overlap.
pub fn gen_random_world(seed: u64) -> Result<(GridSpec, GridSpec)> {
    gen_random_world_with(seed, 0.1, 10_000)
}

pub fn gen_random_world_with(seed: u64, slip_prob: f64, budget: usize) -> Result<(GridSpec, GridSpec)> {
    let mut rng = rng_from(seed, &[]);
    let n = GRID_SIZE * GRID_SIZE;
    let cell = |i: usize| (i / GRID_SIZE, i % GRID_SIZE);
    let (start, goal) = (0..budget)
        .map(|_| (cell(rng.gen_range(0..n)), cell(rng.gen_range(0..n))))
        .find(|(s, g)| chebyshev(*s, *g) >= MIN_START_GOAL_MOVES)
        .ok_or(Error::RejectionBudget { seed, attempts: budget })?;
    let free: Vec<Cell> = (0..n).map(cell).filter(|c| *c != start && *c != goal).collect();

    let painted = sample(&mut rng, free.len(), 2 * CELLS_PER_COLOR);
    let colors = painted
        .iter()
        .enumerate()
        .map(|(k, i)| (free[i], if k < CELLS_PER_COLOR { Color::Blue } else { Color::Green }))
        .collect();
    let mut constrained: Vec<Cell> =
        sample(&mut rng, free.len(), CONSTRAINED_CELLS).iter().map(|i| free[i]).collect();
    constrained.sort_unstable();

    let mut nominal = GridSpec::new(GRID_SIZE, GRID_SIZE, start, goal);
    nominal.colors = colors;
    nominal.slip_prob = slip_prob;
    let truth = GridSpec { constrained_cells: constrained, ..nominal.clone() };
    Ok((nominal, truth))
}

/// A generated world, compiled.
#[derive(Clone, Debug)]
pub struct World {
    pub id: usize,
    pub seed: u64,
    pub nominal_spec: GridSpec,
    pub truth_spec: GridSpec,
    pub nominal: TabularMdp,
    pub truth: TabularMdp,
}

impl World {
    pub fn generate(cfg: &ExperimentConfig, id: usize) -> Result<Self> {
        let seed = cfg.world_seed(id);
        let (nominal_spec, truth_spec) = gen_random_world_with(seed, cfg.slip_prob, cfg.rejection_budget)?;
        Self::from_specs(id, seed, nominal_spec, truth_spec)
    }

    pub fn from_specs(id: usize, seed: u64, nominal_spec: GridSpec, truth_spec: GridSpec) -> Result<Self> {
        Ok(World {
            id,
            seed,
            nominal: build_grid(&nominal_spec)?,
            truth: build_grid(&truth_spec)?,
            nominal_spec,
            truth_spec,
        })
    }

    /// Demonstrations from the optimal deterministic policy of the ground truth.
    pub fn demonstrations(&self, n: usize, vi_tol: f64) -> Result<Vec<Trajectory>> {
        demonstrations(&self.truth, n, derive_seed(self.seed, &[LABEL_DEMOS, n as u64]), vi_tol)
    }

    pub fn shortest_path(&self) -> usize {
        self.nominal
            .shortest_path_len(self.nominal.start_state(), self.nominal.goal())
            .expect("open grids are connected")
    }
}

pub fn demonstrations(truth: &TabularMdp, n: usize, seed: u64, vi_tol: f64) -> Result<Vec<Trajectory>> {
    let pi = greedy_policy(truth, &value_iteration(truth, vi_tol)?);
    Ok(sample_trajectories(truth, &pi, n, seed))
}

/// Rollouts of the optimal deterministic policy of the learned world,
/// executed in `env`.
pub fn learned_policy_rollouts(
    nominal: &TabularMdp,
    env: &TabularMdp,
    model: &ResidualModel,
    n: usize,
    seed: u64,
    vi_tol: f64,
) -> Result<Vec<Trajectory>> {
    let learned = model.constrained_world(nominal)?;
    let pi = greedy_policy(&learned, &value_iteration(&learned, vi_tol)?);
    Ok(sample_trajectories(env, &pi, n, seed))
}

/// Outcome of learning from one demonstration set.
#[derive(Clone, Debug)]
pub struct LearnedSet {
    pub n_demos: usize,
    pub demos: Vec<Trajectory>,
    pub model: ResidualModel,
    pub estimate: ConstraintEstimate,
    pub kl: f64,
    pub js: f64,
}

pub fn learn_set(cfg: &ExperimentConfig, world: &World, n_demos: usize) -> Result<LearnedSet> {
    let demos = world.demonstrations(n_demos, cfg.vi_tol)?;
    let model = mesc_irl_learn(&world.nominal, &demos, &cfg.irl)?;
    let estimate = ConstraintEstimate::from_model(&world.nominal, &model)?;
    let eval_seed = derive_seed(world.seed, &[LABEL_EVAL, n_demos as u64]);
    let rollouts =
        learned_policy_rollouts(&world.nominal, &world.truth, &model, cfg.eval_rollouts, eval_seed, cfg.vi_tol)?;
    Ok(LearnedSet {
        n_demos,
        kl: trajectory_kl(&demos, &rollouts)?,
        js: trajectory_js(&demos, &rollouts)?,
        demos,
        model,
        estimate,
    })
}

/// Recovery rows for feature constraint probabilities `zeta_f`: soft rates
/// at every χ, hard rates at every cutoff (reported in the `chi` column).
pub fn recovery_rows_from(
    cfg: &ExperimentConfig,
    world: &World,
    zeta_f: &BTreeMap<usize, f64>,
    n_demos: Option<usize>,
) -> Result<Vec<ResultRow>> {
    let truth = ConstraintGroundTruth::per_feature(&world.nominal, &world.truth)?;
    let base = ResultRow { world_id: world.id, n_demos, seed: world.seed, ..Default::default() };
    let mut rows = Vec::new();
    for &chi in &cfg.chi_values {
        rows.push(ResultRow {
            method: "mesc_irl".into(),
            chi: Some(chi),
            fp: Some(soft_fp_rate(zeta_f, &truth, chi)?),
            fn_: Some(soft_fn_rate(zeta_f, &truth, chi)?),
            ..base.clone()
        });
    }
    for &cut in &cfg.zeta_cutoffs {
        rows.push(ResultRow {
            method: "mesc_irl_hard".into(),
            chi: Some(cut),
            fp: Some(hard_fp_rate(zeta_f, &truth, cut)?),
            fn_: Some(hard_fn_rate(zeta_f, &truth, cut)?),
            ..base.clone()
        });
    }
    Ok(rows)
}

/// Recovery rows for one learned set, carrying its behavior divergences.
pub fn recovery_rows(cfg: &ExperimentConfig, world: &World, set: &LearnedSet) -> Result<Vec<ResultRow>> {
    let mut rows = recovery_rows_from(cfg, world, &set.estimate.zeta_f, Some(set.n_demos))?;
    for r in &mut rows {
        r.kl = Some(set.kl);
        r.js = Some(set.js);
    }
    Ok(rows)
}

/// One orchestrator configuration and its rollouts in the ground truth.
#[derive(Clone, Debug)]
pub struct OrchestratedRun {
    pub config: OrchestratorConfig,
    pub rollouts: Vec<Trajectory>,
    pub row: ResultRow,
}

/// Rollouts of every configured orchestrator at each `w_n`, executed in the
/// ground truth. All orchestrators share the episode seeds of a weight.
/// Divergences are measured against `reference` when given.
pub fn orchestrate_world(
    cfg: &ExperimentConfig,
    world: &World,
    model: &ResidualModel,
    weights: &[f64],
    reference: Option<&[Trajectory]>,
    n_demos: Option<usize>,
) -> Result<Vec<OrchestratedRun>> {
    let learned = model.constrained_world(&world.nominal)?;
    let scores = ScoreTable::from_worlds(&world.nominal, &learned, cfg.temperature, cfg.vi_tol)?;
    let pi_c = softmax_policy(&learned, &value_iteration(&learned, cfg.vi_tol)?, cfg.temperature)?;
    let ref_runs = sample_trajectories(&world.truth, &pi_c, cfg.rollouts, derive_seed(world.seed, &[LABEL_REF]));
    let ref_penalty = mean_cost(&ref_runs, &world.truth)?;
    let shortest = world.shortest_path();

    let mut out = Vec::new();
    for (step, &w_n) in weights.iter().enumerate() {
        let seed = derive_seed(world.seed, &[LABEL_ORCH, step as u64]);
        for &kind in &cfg.orchestrators {
            let config = OrchestratorConfig { mdft_steps: cfg.mdft_steps, ..OrchestratorConfig::new(kind, w_n)? };
            let agent = Orchestrator::new(config, scores.clone())?;
            let rollouts = run_agent(&world.truth, &agent, cfg.rollouts, seed)?;
            let q = trajectory_quality(&rollouts, &world.truth, shortest, ref_penalty)?;
            let (kl, js) = match reference {
                Some(r) => (Some(trajectory_kl(r, &rollouts)?), Some(trajectory_js(r, &rollouts)?)),
                None => (None, None),
            };
            let row = ResultRow {
                world_id: world.id,
                method: kind.name().into(),
                w_n: Some(config.w_n),
                n_demos,
                kl,
                js,
                norm_len: Some(q.avg_norm_length),
                norm_penalty: Some(q.avg_norm_penalty),
                violations: Some(q.avg_violations),
                seed: world.seed,
                flag: if q.penalty_is_raw { "raw_penalty".into() } else { String::new() },
                ..Default::default()
            };
            out.push(OrchestratedRun { config, rollouts, row });
        }
    }
    Ok(out)
}

/// Orchestrator rows over the full weight sweep, compared against the
/// demonstrations the model was learned from.
pub fn orchestration_rows(
    cfg: &ExperimentConfig,
    world: &World,
    model: &ResidualModel,
    reference: &[Trajectory],
    n_demos: usize,
) -> Result<Vec<ResultRow>> {
    let weights: Vec<f64> = weight_sweep(cfg.weight_steps).into_iter().map(|(w_n, _)| w_n).collect();
    Ok(orchestrate_world(cfg, world, model, &weights, Some(reference), Some(n_demos))?
        .into_iter()
        .map(|r| r.row)
        .collect())
}

/// Everything produced for one world.
#[derive(Clone, Debug)]
pub struct WorldRun {
    pub world: World,
    pub sets: Vec<LearnedSet>,
    pub rows: Vec<ResultRow>,
}

/// Full per-world pipeline. Orchestrators use the model learned from the
/// largest demonstration set and are compared against those demonstrations.
pub fn run_world(cfg: &ExperimentConfig, id: usize) -> Result<WorldRun> {
    let world = World::generate(cfg, id)?;
    let sets = cfg
        .demos_per_world
        .par_iter()
        .map(|&n| learn_set(cfg, &world, n))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for set in &sets {
        rows.extend(recovery_rows(cfg, &world, set)?);
    }
    if !cfg.orchestrators.is_empty() {
        let last = sets.iter().max_by_key(|s| s.n_demos).expect("at least one demo count");
        rows.extend(orchestration_rows(cfg, &world, &last.model, &last.demos, last.n_demos)?);
    }
    Ok(WorldRun { world, sets, rows })
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub package: &'static str,
    pub version: &'static str,
    pub config: ExperimentConfig,
    pub world_seeds: BTreeMap<usize, u64>,
    pub demo_sets: &'static str,
    pub failures: BTreeMap<usize, String>,
}

#[derive(Clone, Debug)]
pub struct PipelineSummary {
    pub rows: usize,
    pub failures: BTreeMap<usize, String>,
    pub results_path: PathBuf,
}

/// Runs every world and writes `results.csv`, `manifest.json` and the
/// per-world grids, demonstrations and models under `out`. A failing world
/// is recorded as a `failed` row and in the manifest; the others still run.
pub fn cmd_pipeline(cfg: &ExperimentConfig, out: &Path) -> Result<PipelineSummary> {
    cfg.validate()?;
    for sub in ["grids", "demos", "models"] {
        std::fs::create_dir_all(out.join(sub))?;
    }
    let runs: Vec<Result<WorldRun>> = (0..cfg.n_worlds).into_par_iter().map(|id| run_world(cfg, id)).collect();

    let mut rows = Vec::new();
    let mut failures = BTreeMap::new();
    for (id, run) in runs.into_iter().enumerate() {
        match run.and_then(|r| write_world_artifacts(out, &r).map(|_| r)) {
            Ok(r) => rows.extend(r.rows),
            Err(e) => {
                failures.insert(id, e.to_string());
                rows.push(ResultRow {
                    world_id: id,
                    method: "failed".into(),
                    seed: cfg.world_seed(id),
                    flag: format!("error: {e}"),
                    ..Default::default()
                });
            }
        }
    }
    let results_path = out.join("results.csv");
    io::write_results(&results_path, &rows)?;
    io::write_json(
        &out.join("manifest.json"),
        &Manifest {
            package: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            config: cfg.clone(),
            world_seeds: (0..cfg.n_worlds).map(|i| (i, cfg.world_seed(i))).collect(),
            demo_sets: "independent sample per demonstration count",
            failures: failures.clone(),
        },
    )?;
    Ok(PipelineSummary { rows: rows.len(), failures, results_path })
}

fn write_world_artifacts(out: &Path, run: &WorldRun) -> Result<()> {
    let id = run.world.id;
    io::write_json(&out.join(format!("grids/world_{id:03}_nominal.json")), &run.world.nominal_spec)?;
    io::write_json(&out.join(format!("grids/world_{id:03}_truth.json")), &run.world.truth_spec)?;
    for set in &run.sets {
        let n = set.n_demos;
        io::write_trajectories(&out.join(format!("demos/world_{id:03}_n{n}.jsonl")), &set.demos)?;
        io::write_json(&out.join(format!("models/world_{id:03}_n{n}.json")), &set.model)?;
    }
    Ok(())
}

/// Mean and standard error of a sample.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

type GroupKey = (String, Option<u64>, Option<u64>);

fn bits(x: Option<f64>) -> Option<u64> {
    x.map(f64::to_bits)
}

type MetricColumn<'a> = (&'a str, fn(&ResultRow) -> Option<f64>);
type Group<'a> = (Option<f64>, Option<f64>, Vec<&'a ResultRow>);

/// Writes one summary CSV: rows of `methods` grouped by method and the two
/// key columns, with mean and standard error of each metric.
fn summarize(
    rows: &[ResultRow],
    methods: &[&str],
    keys: (&str, &str),
    key_of: impl Fn(&ResultRow) -> (Option<f64>, Option<f64>),
    metrics: &[MetricColumn],
    path: &Path,
) -> Result<()> {
    let mut groups: BTreeMap<GroupKey, Group> = BTreeMap::new();
    for r in rows.iter().filter(|r| methods.contains(&r.method.as_str())) {
        let (a, b) = key_of(r);
        groups.entry((r.method.clone(), bits(a), bits(b))).or_insert((a, b, Vec::new())).2.push(r);
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["method".to_string(), keys.0.into(), keys.1.into(), "n".into()];
    for (name, _) in metrics {
        header.push(format!("{name}_mean"));
        header.push(format!("{name}_se"));
    }
    w.write_record(&header)?;
    let fmt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
    let mut ordered: Vec<_> = groups.into_iter().collect();
    ordered.sort_by(|(ka, (a1, a2, _)), (kb, (b1, b2, _))| {
        ka.0.cmp(&kb.0).then(a1.partial_cmp(b1).unwrap()).then(a2.partial_cmp(b2).unwrap())
    });
    for ((method, _, _), (a, b, members)) in ordered {
        let mut rec = vec![method, fmt(a), fmt(b), members.len().to_string()];
        for (_, get) in metrics {
            let xs: Vec<f64> = members.iter().filter_map(|r| get(r)).collect();
            let (m, se) = mean_se(&xs);
            rec.push(if xs.is_empty() { String::new() } else { m.to_string() });
            rec.push(if xs.is_empty() { String::new() } else { se.to_string() });
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Plot-ready summaries of a results file: constraint recovery by demo
/// count and χ, hard-threshold recovery by cutoff, and orchestrator
/// trajectory metrics and divergences by weight.
pub fn cmd_report(results: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let rows = io::read_results(results)?;
    std::fs::create_dir_all(out)?;
    let paths: Vec<PathBuf> = ["recovery.csv", "recovery_hard.csv", "orchestration.csv", "orchestration_divergence.csv"]
        .iter()
        .map(|f| out.join(f))
        .collect();
    let demo_chi = |r: &ResultRow| (r.n_demos.map(|n| n as f64), r.chi);
    let weight = |r: &ResultRow| (r.w_n, r.w_n.map(|w| 1.0 - w));
    summarize(
        &rows,
        &["mesc_irl"],
        ("n_demos", "chi"),
        demo_chi,
        &[("fp", |r| r.fp), ("fn", |r| r.fn_), ("kl", |r| r.kl), ("js", |r| r.js)],
        &paths[0],
    )?;
    summarize(
        &rows,
        &["mesc_irl_hard"],
        ("n_demos", "cutoff"),
        demo_chi,
        &[("fp", |r| r.fp), ("fn", |r| r.fn_)],
        &paths[1],
    )?;
    let kinds: Vec<&str> = OrchestratorKind::ALL.iter().map(|k| k.name()).collect();
    summarize(
        &rows,
        &kinds,
        ("w_n", "w_c"),
        weight,
        &[
            ("norm_len", |r| r.norm_len),
            ("norm_penalty", |r| if r.flag.is_empty() { r.norm_penalty } else { None }),
            ("violations", |r| r.violations),
        ],
        &paths[2],
    )?;
    summarize(
        &rows,
        &kinds,
        ("w_n", "w_c"),
        weight,
        &[("js", |r| r.js), ("kl", |r| r.kl)],
        &paths[3],
    )?;
    Ok(paths)
}
