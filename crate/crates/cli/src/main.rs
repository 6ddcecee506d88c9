//! `softcon`: generate worlds, learn soft constraints from demonstrations and
//! evaluate orchestrated agents.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use softcon_core::experiment::{cmd_pipeline, cmd_report, orchestrate_world, recovery_rows_from, ExperimentConfig, World};
use softcon_core::io;
use softcon_core::irl::{mesc_irl_learn_traced, ResidualModel};
use softcon_core::mdp::{build_grid, GridSpec};
use softcon_core::metrics::{trajectory_js, trajectory_kl, ResultRow};
use softcon_core::orchestrate::{weight_sweep, OrchestratorKind};
use softcon_core::planner::{greedy_policy, sample_trajectories, softmax_policy, value_iteration};
use softcon_core::zeta::ConstraintEstimate;

#[derive(Parser)]
#[command(name = "softcon", version, about = "Soft-constraint learning and orchestration experiments")]
struct Cli {
    /// Base seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Experiment configuration as JSON. Missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyKind {
    Greedy,
    Softmax,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Greedy,
    WeightedAverage,
    Mdft,
}

impl From<Kind> for OrchestratorKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Greedy => OrchestratorKind::Greedy,
            Kind::WeightedAverage => OrchestratorKind::WeightedAverage,
            Kind::Mdft => OrchestratorKind::Mdft,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate random world pairs into grids/.
    Gen {
        /// Number of worlds; defaults to the configured count.
        #[arg(long)]
        worlds: Option<usize>,
    },
    /// Sample demonstrations from the optimal policy of a world into demos.jsonl.
    Demos {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, value_enum, default_value = "greedy")]
        policy: PolicyKind,
    },
    /// Learn a residual reward from demonstrations into model.json.
    Learn {
        #[arg(long)]
        nominal: PathBuf,
        #[arg(long)]
        demos: PathBuf,
    },
    /// Constraint probabilities of a learned model into zeta.csv, zeta_f.csv and sigma.json.
    Zeta {
        #[arg(long)]
        nominal: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Roll out orchestrated agents in the ground truth into orchestration.csv and rollouts/.
    Orchestrate {
        #[arg(long)]
        nominal: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Orchestrators to run; defaults to the configured set.
        #[arg(long, value_enum)]
        kind: Vec<Kind>,
        /// Nominal weight; defaults to the configured sweep.
        #[arg(long)]
        w_n: Option<f64>,
        /// Demonstrations to measure divergences against.
        #[arg(long)]
        demos: Option<PathBuf>,
    },
    /// Recovery rates and trajectory divergences into metrics.csv.
    Metrics {
        #[arg(long)]
        nominal: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Feature constraint probabilities from `zeta`.
        #[arg(long)]
        zeta_f: Option<PathBuf>,
        #[arg(long)]
        demos: Option<PathBuf>,
        #[arg(long)]
        rollouts: Option<PathBuf>,
    },
    /// Run every stage over all configured worlds.
    Pipeline,
    /// Summarize a results file into plot-ready tables.
    Report {
        /// Defaults to results.csv in the output directory.
        #[arg(long)]
        results: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = match &cli.config {
        Some(p) => io::read_json(p).with_context(|| format!("reading config {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_spec(path: &Path) -> Result<GridSpec> {
    io::read_json(path).with_context(|| format!("reading grid {}", path.display()))
}

fn read_model(path: &Path) -> Result<ResidualModel> {
    io::read_json(path).with_context(|| format!("reading model {}", path.display()))
}

fn world_from(cfg: &ExperimentConfig, nominal: &Path, truth: &Path) -> Result<World> {
    Ok(World::from_specs(0, cfg.seed, read_spec(nominal)?, read_spec(truth)?)?)
}

fn run(cli: &Cli) -> Result<bool> {
    let cfg = load_config(cli)?;
    let out = cfg.output_dir.clone();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    match &cli.command {
        Command::Gen { worlds } => {
            fs::create_dir_all(out.join("grids"))?;
            for id in 0..worlds.unwrap_or(cfg.n_worlds) {
                let w = World::generate(&cfg, id)?;
                io::write_json(&out.join(format!("grids/world_{id:03}_nominal.json")), &w.nominal_spec)?;
                io::write_json(&out.join(format!("grids/world_{id:03}_truth.json")), &w.truth_spec)?;
                println!("world {id}: seed {} shortest path {}", w.seed, w.shortest_path());
            }
        }
        Command::Demos { grid, n, policy } => {
            let mdp = build_grid(&read_spec(grid)?)?;
            let q = value_iteration(&mdp, cfg.vi_tol)?;
            let pi = match policy {
                PolicyKind::Greedy => greedy_policy(&mdp, &q),
                PolicyKind::Softmax => softmax_policy(&mdp, &q, cfg.temperature)?,
            };
            let demos = sample_trajectories(&mdp, &pi, *n, cfg.seed);
            io::write_trajectories(&out.join("demos.jsonl"), &demos)?;
            println!("wrote {} demonstrations", demos.len());
        }
        Command::Learn { nominal, demos } => {
            let mdp = build_grid(&read_spec(nominal)?)?;
            let demos = io::read_trajectories(demos)?;
            let (model, trace) = mesc_irl_learn_traced(&mdp, &demos, &cfg.irl)?;
            io::write_json(&out.join("model.json"), &model)?;
            println!(
                "{} iterations, converged: {}, final gradient norm {:.3e}",
                trace.grad_norms.len(),
                trace.converged,
                trace.grad_norms.last().copied().unwrap_or(0.0)
            );
        }
        Command::Zeta { nominal, model } => {
            let mdp = build_grid(&read_spec(nominal)?)?;
            let est = ConstraintEstimate::from_model(&mdp, &read_model(model)?)?;
            io::write_transition_zeta(&out.join("zeta.csv"), &est.zeta)?;
            io::write_feature_zeta(&out.join("zeta_f.csv"), &est.zeta_f)?;
            io::write_json(&out.join("sigma.json"), &est.sigma)?;
            println!("sigma_pooled {:.6}", est.sigma.pooled);
        }
        Command::Orchestrate { nominal, truth, model, kind, w_n, demos } => {
            let world = world_from(&cfg, nominal, truth)?;
            let mut cfg = cfg.clone();
            if !kind.is_empty() {
                cfg.orchestrators = kind.iter().map(|&k| k.into()).collect();
            }
            let weights: Vec<f64> = match w_n {
                Some(w) => vec![*w],
                None => weight_sweep(cfg.weight_steps).into_iter().map(|(w, _)| w).collect(),
            };
            let reference = demos.as_deref().map(io::read_trajectories).transpose()?;
            let runs = orchestrate_world(&cfg, &world, &read_model(model)?, &weights, reference.as_deref(), None)?;
            fs::create_dir_all(out.join("rollouts"))?;
            for r in &runs {
                let name = format!("rollouts/{}_w{:.2}.jsonl", r.config.kind.name(), r.config.w_n);
                io::write_trajectories(&out.join(name), &r.rollouts)?;
            }
            let rows: Vec<ResultRow> = runs.into_iter().map(|r| r.row).collect();
            io::write_results(&out.join("orchestration.csv"), &rows)?;
            println!("wrote {} orchestrator rows", rows.len());
        }
        Command::Metrics { nominal, truth, zeta_f, demos, rollouts } => {
            if zeta_f.is_none() && demos.is_none() && rollouts.is_none() {
                bail!("nothing to measure: give --zeta-f and/or --demos with --rollouts");
            }
            let world = world_from(&cfg, nominal, truth)?;
            let divergence = match (demos, rollouts) {
                (Some(d), Some(r)) => {
                    let (d, r) = (io::read_trajectories(d)?, io::read_trajectories(r)?);
                    Some((trajectory_kl(&d, &r)?, trajectory_js(&d, &r)?))
                }
                (None, None) => None,
                _ => bail!("--demos and --rollouts must be given together"),
            };
            let mut rows = match zeta_f {
                Some(p) => recovery_rows_from(&cfg, &world, &io::read_feature_zeta(p)?, None)?,
                None => Vec::new(),
            };
            if rows.is_empty() {
                rows.push(ResultRow { method: "divergence".into(), seed: cfg.seed, ..Default::default() });
            }
            for row in &mut rows {
                row.kl = divergence.map(|d| d.0);
                row.js = divergence.map(|d| d.1);
            }
            io::write_results(&out.join("metrics.csv"), &rows)?;
            println!("wrote {} metric rows", rows.len());
        }
        Command::Pipeline => {
            let summary = cmd_pipeline(&cfg, &out)?;
            println!("wrote {} rows to {}", summary.rows, summary.results_path.display());
            for (id, err) in &summary.failures {
                eprintln!("world {id} failed: {err}");
            }
            return Ok(summary.failures.is_empty());
        }
        Command::Report { results } => {
            let results = results.clone().unwrap_or_else(|| out.join("results.csv"));
            for p in cmd_report(&results, &out)? {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
