//! Running one experiment end to end and replaying it from its artifacts.

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use smt_core::baselines::{adapt_mtl, adapt_tl, train_mtl, train_tl_source};
use smt_core::meta::{adapt_smt, meta_model, train_smt, MetaLearnerState};
use smt_core::physics::TaskSpec;
use smt_core::sequential::{
    derive_seed, train_bcpinn, train_pinn, train_tm, train_tm_adaptive, Seeds, StitchedModel,
    TrainReport,
};
use smt_core::solver::{cache_key, solve_cached, SolutionField};

use crate::config::{ExperimentConfig, Method, Target};
use crate::error::{BenchError, Result, StageExt};
use crate::metrics::{write_curve, Comparison, FieldErrors};

/// Label of the evaluation of a non-adapting method on its training task.
pub const TRAIN_LABEL: &str = "train";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub label: String,
    pub h_top: f64,
    pub h_bottom: f64,
    /// `None` for the trained model itself.
    pub adapt_epochs: Option<u64>,
    pub full: FieldErrors,
    /// Along `x = L/2`.
    pub midpoint: FieldErrors,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub segments: usize,
    pub boundaries: Vec<f64>,
    pub added_boundaries: Vec<f64>,
    pub split_warnings: usize,
    /// Optimizer steps summed over segments; for `smt`, outer steps plus
    /// the warm-up.
    pub epochs: u64,
    pub final_losses: Vec<f64>,
}

/// Everything hardware-dependent; left out of [`MetricsReport::content_hash`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub train_wall_ms: f64,
    pub epochs_per_s: f64,
    /// Parallel to `evaluations`.
    pub adapt_wall_ms: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: Method,
    pub seed: u64,
    pub config_hash: String,
    pub training: TrainingSummary,
    pub evaluations: Vec<Evaluation>,
    pub timing: Timing,
}

impl MetricsReport {
    /// SHA-256 of the report without its timing section.
    pub fn content_hash(&self) -> Result<String> {
        let mut r = self.clone();
        r.timing = Timing::default();
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(&r)?)))
    }

    pub fn evaluation(&self, label: &str) -> Option<&Evaluation> {
        self.evaluations.iter().find(|e| e.label == label)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub method: Method,
    pub seed: u64,
    pub seeds: Seeds,
    pub adapt_seed: u64,
    pub config_hash: String,
    pub report_hash: String,
    pub oracle_keys: Vec<String>,
    /// Model directories relative to the run directory.
    pub models: Vec<String>,
}

/// Trained state of a run, before any adaptation.
#[derive(Clone, Debug, PartialEq)]
pub enum Trained {
    Model(StitchedModel),
    Meta(Vec<MetaLearnerState>),
}

const META_STATES: &str = "meta-states.json";

impl Trained {
    pub fn save(&self, dir: &Path) -> Result<()> {
        match self {
            Trained::Model(m) => m.save(dir)?,
            Trained::Meta(states) => {
                meta_model(states)?.save(dir)?;
                std::fs::write(dir.join(META_STATES), serde_json::to_vec(states)?)?;
            }
        }
        Ok(())
    }

    pub fn load(dir: &Path, method: Method) -> Result<Self> {
        Ok(match method {
            Method::Smt => Trained::Meta(serde_json::from_slice(&std::fs::read(
                dir.join(META_STATES),
            )?)?),
            _ => Trained::Model(StitchedModel::load(dir)?),
        })
    }
}

pub fn adapt_seed(cfg: &ExperimentConfig) -> u64 {
    derive_seed(cfg.seed, 7)
}

pub fn model_dir(run_dir: &Path, label: &str) -> PathBuf {
    run_dir.join("models").join(label)
}

pub fn adapted_label(target: &Target, epochs: u64) -> String {
    format!("{}-e{epochs}", target.label)
}

fn summarize(report: &TrainReport, model: &StitchedModel) -> TrainingSummary {
    TrainingSummary {
        segments: model.schedule.len(),
        boundaries: model.schedule.boundaries.clone(),
        added_boundaries: model.schedule.added_boundaries(),
        split_warnings: report.warnings.len(),
        epochs: report.segments.iter().map(|s| s.epochs).sum(),
        final_losses: report.segments.iter().map(|s| s.final_loss.total).collect(),
    }
}

/// Train the method's model(s); timing is the returned wall time in ms.
pub fn train(cfg: &ExperimentConfig) -> Result<(Trained, TrainingSummary, f64)> {
    let seeds = Seeds::new(cfg.seed);
    let task = &cfg.task;
    let start = Instant::now();
    let (trained, summary) = match cfg.method {
        Method::Tm => {
            let (model, report) = if cfg.schedule.adaptive && cfg.schedule.boundaries.is_none() {
                train_tm_adaptive(
                    task,
                    cfg.schedule.initial_n,
                    cfg.schedule.adaptive_config(),
                    &cfg.budget,
                    seeds,
                )
            } else {
                train_tm(task, &cfg.schedule.fixed(task.t_end())?, &cfg.budget, seeds)
            }
            .stage("train")?;
            let s = summarize(&report, &model);
            (Trained::Model(model), s)
        }
        Method::Pinn => {
            let segments = cfg.schedule.fixed(task.t_end())?.len() as u64;
            let mut budget = cfg.budget.clone();
            budget.epochs = cfg.pinn_epochs.unwrap_or(segments * cfg.budget.epochs);
            let (model, report) = train_pinn(task, &budget, seeds).stage("train")?;
            let s = summarize(&report, &model);
            (Trained::Model(model), s)
        }
        Method::Bcpinn => {
            let schedule = cfg.schedule.fixed(task.t_end())?;
            let (model, report, _) =
                train_bcpinn(task, &schedule, &cfg.budget, cfg.bcpinn_memory, seeds)
                    .stage("train")?;
            let mut s = summarize(&report, &model);
            // one global network, but trained segment by segment
            s.segments = schedule.len();
            s.boundaries = schedule.boundaries.clone();
            (Trained::Model(model), s)
        }
        Method::Tl => {
            let schedule = cfg.schedule.fixed(task.t_end())?;
            let (model, report) =
                train_tl_source(task, &schedule, &cfg.budget, seeds).stage("train")?;
            let s = summarize(&report, &model);
            (Trained::Model(model), s)
        }
        Method::Mtl => {
            let schedule = cfg.schedule.fixed(task.t_end())?;
            let (model, report) =
                train_mtl(task, &cfg.mtl, &schedule, &cfg.budget, seeds).stage("train")?;
            let s = summarize(&report, &model);
            (Trained::Model(model), s)
        }
        Method::Smt => {
            let schedule = cfg.schedule.fixed(task.t_end())?;
            let support = cfg.distribution.sample(task).stage("train")?;
            let (states, report) =
                train_smt(&support, &schedule, &cfg.meta, seeds).stage("train")?;
            let s = TrainingSummary {
                segments: schedule.len(),
                boundaries: schedule.boundaries.clone(),
                epochs: cfg.meta.warmup_epochs
                    + report.segments.iter().map(|s| s.epochs).sum::<u64>(),
                final_losses: report.segments.iter().map(|s| s.final_meta_loss).collect(),
                ..Default::default()
            };
            (Trained::Meta(states), s)
        }
    };
    Ok((trained, summary, start.elapsed().as_secs_f64() * 1e3))
}

/// Adapt a trained model to `task` for `epochs` epochs.
pub fn adapt(
    cfg: &ExperimentConfig,
    trained: &Trained,
    task: &TaskSpec,
    epochs: u64,
) -> Result<StitchedModel> {
    let seed = adapt_seed(cfg);
    let out = match (cfg.method, trained) {
        (Method::Smt, Trained::Meta(states)) => adapt_smt(states, task, &cfg.meta, epochs, seed),
        (Method::Tl, Trained::Model(m)) => adapt_tl(m, task, &cfg.budget, epochs, seed),
        (Method::Mtl, Trained::Model(m)) => adapt_mtl(m, &cfg.mtl, task, &cfg.budget, epochs, seed),
        (method, _) => {
            return Err(BenchError::Config(format!(
                "{} does not adapt",
                method.name()
            )))
        }
    };
    Ok(out.stage("adapt")?.0)
}

fn oracle(cfg: &ExperimentConfig, task: &TaskSpec) -> Result<(SolutionField, String)> {
    let grid = cfg.oracle.grid(task).stage("oracle")?;
    let field = solve_cached(task, &grid, &cfg.oracle_dir()).stage("oracle")?;
    Ok((field, cache_key(task, &grid)))
}

/// Error metrics of `model` on `task`; writes its curves when `run_dir` is set.
pub fn evaluate(
    cfg: &ExperimentConfig,
    model: &StitchedModel,
    task: &TaskSpec,
    label: &str,
    run_dir: Option<&Path>,
) -> Result<(FieldErrors, FieldErrors)> {
    let (field, _) = oracle(cfg, task)?;
    let cmp = Comparison::new(model, 0, &field, task.material.length, cfg.eval)?;
    if let Some(dir) = run_dir {
        let curves = dir.join("curves");
        std::fs::create_dir_all(&curves)?;
        write_curve(
            &curves.join(format!("{label}.csv")),
            &cmp.pred,
            &cmp.reference,
        )?;
        write_curve(
            &curves.join(format!("{label}-mid.csv")),
            &cmp.mid_pred,
            &cmp.mid_reference,
        )?;
    }
    cmp.errors()
}

/// Oracle, training, adaptation sweep and evaluation. Artifacts written
/// before a failure stay in place, with `error.json` naming the stage.
pub fn run(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    std::fs::create_dir_all(dir.join("models"))?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    let result = run_stages(cfg, &dir);
    if let Err(e) = &result {
        let stage = match e {
            BenchError::Stage { stage, .. } => *stage,
            _ => "run",
        };
        let record = serde_json::json!({ "stage": stage, "error": e.to_string() });
        std::fs::write(dir.join("error.json"), serde_json::to_vec_pretty(&record)?)?;
    }
    result
}

fn run_stages(cfg: &ExperimentConfig, dir: &Path) -> Result<MetricsReport> {
    let tasks: Vec<(String, TaskSpec, Option<u64>)> = if cfg.method.adapts() {
        cfg.adapt
            .targets
            .iter()
            .flat_map(|t| {
                cfg.adapt
                    .epochs
                    .iter()
                    .map(move |&e| (adapted_label(t, e), t.task(&cfg.task), Some(e)))
            })
            .collect()
    } else {
        vec![(TRAIN_LABEL.to_string(), cfg.task.clone(), None)]
    };
    let mut oracle_keys = Vec::new();
    for (_, task, _) in &tasks {
        let key = oracle(cfg, task)?.1;
        if !oracle_keys.contains(&key) {
            oracle_keys.push(key);
        }
    }

    info!("{}: training (seed {})", cfg.method.name(), cfg.seed);
    let (trained, training, train_wall_ms) = train(cfg)?;
    trained.save(&model_dir(dir, TRAIN_LABEL))?;
    let mut models = vec![format!("models/{TRAIN_LABEL}")];

    let mut evaluations = Vec::new();
    let mut adapt_wall_ms = Vec::new();
    for (label, task, epochs) in tasks {
        let start = Instant::now();
        let model = match (epochs, &trained) {
            (Some(e), _) => adapt(cfg, &trained, &task, e)?,
            (None, Trained::Model(m)) => m.clone(),
            (None, Trained::Meta(_)) => unreachable!("smt always adapts"),
        };
        adapt_wall_ms.push(if epochs.is_some() {
            start.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        });
        if epochs.is_some() {
            model.save(&model_dir(dir, &label))?;
            models.push(format!("models/{label}"));
        }
        let (full, midpoint) = evaluate(cfg, &model, &task, &label, Some(dir))?;
        info!(
            "{label}: rel L2 T {:.3e}, max |dT| {:.2}",
            full.rel_l2_temp, full.max_abs_temp
        );
        evaluations.push(Evaluation {
            label,
            h_top: task.h_top,
            h_bottom: task.h_bottom,
            adapt_epochs: epochs,
            full,
            midpoint,
        });
    }

    let report = MetricsReport {
        method: cfg.method,
        seed: cfg.seed,
        config_hash: cfg.hash()?,
        timing: Timing {
            train_wall_ms,
            epochs_per_s: training.epochs as f64 / (train_wall_ms / 1e3).max(1e-9),
            adapt_wall_ms,
        },
        training,
        evaluations,
    };
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        method: cfg.method,
        seed: cfg.seed,
        seeds: Seeds::new(cfg.seed),
        adapt_seed: adapt_seed(cfg),
        config_hash: report.config_hash.clone(),
        report_hash: report.content_hash()?,
        oracle_keys,
        models,
    };
    std::fs::write(dir.join("report.json"), serde_json::to_vec_pretty(&report)?)?;
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_vec_pretty(&manifest)?,
    )?;
    Ok(report)
}

/// Config of a finished run, pointed at `run_dir`.
pub fn load_run_config(run_dir: &Path) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&run_dir.join("config.toml"))?;
    if cfg.oracle.cache_dir.is_none() {
        cfg.oracle.cache_dir = Some(run_dir.join("oracle"));
    }
    cfg.output_dir = run_dir.to_path_buf();
    Ok(cfg)
}

pub fn load_report(run_dir: &Path) -> Result<MetricsReport> {
    Ok(serde_json::from_slice(&std::fs::read(
        run_dir.join("report.json"),
    )?)?)
}

/// Recompute every evaluation from the stored checkpoints and oracle cache
/// and check it against `report.json`.
pub fn replay(run_dir: &Path) -> Result<MetricsReport> {
    let cfg = load_run_config(run_dir)?;
    let stored = load_report(run_dir)?;
    let mut replayed = stored.clone();
    for e in &mut replayed.evaluations {
        let model = StitchedModel::load(&model_dir(run_dir, &e.label)).stage("evaluate")?;
        let mut task = cfg.task.clone();
        task.h_top = e.h_top;
        task.h_bottom = e.h_bottom;
        (e.full, e.midpoint) = evaluate(&cfg, &model, &task, &e.label, None)?;
    }
    if replayed != stored {
        for (a, b) in replayed.evaluations.iter().zip(&stored.evaluations) {
            if a != b {
                return Err(BenchError::Replay(format!(
                    "{}: replayed {:?}, stored {:?}",
                    a.label, a.full, b.full
                )));
            }
        }
    }
    Ok(replayed)
}

/// Adapt the trained model of a finished run to a new target; the adapted
/// model and curves go into the run directory under the returned label.
pub fn adapt_run(run_dir: &Path, target: &Target, epochs: u64) -> Result<Evaluation> {
    let cfg = load_run_config(run_dir)?;
    if !cfg.method.adapts() {
        return Err(BenchError::Config(format!(
            "{} does not adapt",
            cfg.method.name()
        )));
    }
    let trained = Trained::load(&model_dir(run_dir, TRAIN_LABEL), cfg.method)?;
    let task = target.task(&cfg.task);
    let label = adapted_label(target, epochs);
    let model = adapt(&cfg, &trained, &task, epochs)?;
    model.save(&model_dir(run_dir, &label))?;
    let (full, midpoint) = evaluate(&cfg, &model, &task, &label, Some(run_dir))?;
    Ok(Evaluation {
        label,
        h_top: task.h_top,
        h_bottom: task.h_bottom,
        adapt_epochs: Some(epochs),
        full,
        midpoint,
    })
}
