//! Model-agnostic meta-learning per segment, chained across segments, and
//! few-step adaptation of the meta-learned initializations.

use std::time::Instant;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::jet::{self, JetOrder, C_VAL};
use crate::net::{grad_and_hvp, grad_params, init_params, NetworkArch, NetworkParams, Objective};
use crate::physics::TaskSpec;
use crate::sequential::{
    adapt_chain, derive_seed, sum_breakdowns, AdaptSpec, Finetune, Seeds, SegmentNet,
    SegmentSchedule, StitchedModel, TrainReport,
};
use crate::training::{
    fit_adam, sample_points, AdamState, FitSpec, IcTargets, LogRow, LossBreakdown, LossWeights,
    LrSchedule, Normalization, PinnProblem, PointCounts, PointSet, ResidualScaling, StepAnneal,
    TrainLog,
};

/// Support tasks: top and bottom HTCs drawn independently and uniformly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskDistribution {
    pub htc_range: (f64, f64),
    pub n_support: usize,
    pub seed: u64,
}

impl Default for TaskDistribution {
    fn default() -> Self {
        Self {
            htc_range: (40.0, 120.0),
            n_support: 20,
            seed: 0,
        }
    }
}

impl TaskDistribution {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.htc_range;
        if !(lo < hi && lo >= 0.0 && hi.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "bad HTC range [{lo}, {hi}]"
            )));
        }
        if self.n_support == 0 {
            return Err(Error::InvalidArgument("support set is empty".into()));
        }
        Ok(())
    }

    /// Copies of `base` with sampled HTC pairs.
    pub fn sample(&self, base: &TaskSpec) -> Result<Vec<TaskSpec>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let (lo, hi) = self.htc_range;
        Ok((0..self.n_support)
            .map(|_| {
                let mut t = base.clone();
                t.h_top = rng.gen_range(lo..=hi);
                t.h_bottom = rng.gen_range(lo..=hi);
                t
            })
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetaConfig {
    pub arch: NetworkArch,
    /// Per-task point counts, used for both the train and the test sample.
    pub counts: PointCounts,
    pub weights: LossWeights,
    pub scaling: ResidualScaling,
    /// Inner gradient-descent rate at the start of every segment.
    pub inner_lr: f64,
    pub inner_steps: usize,
    pub outer_lr: LrSchedule,
    /// Outer steps per segment.
    pub epochs: u64,
    /// Initial/boundary-only epochs before the first segment.
    pub warmup_epochs: u64,
    /// Outer steps without improvement before the inner rate drops.
    pub anneal_patience: u64,
    pub anneal_factor: f64,
    pub log_every: u64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            arch: NetworkArch::default(),
            counts: PointCounts::new(2000, 400, 200),
            weights: LossWeights::default(),
            scaling: ResidualScaling::default(),
            inner_lr: 1e-4,
            inner_steps: 1,
            outer_lr: LrSchedule::default(),
            epochs: 5000,
            warmup_epochs: 1000,
            anneal_patience: 500,
            anneal_factor: 10.0,
            log_every: 100,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.weights.validate()?;
        if self.inner_steps == 0 {
            return Err(Error::InvalidArgument("inner_steps must be >= 1".into()));
        }
        if !(self.inner_lr >= 0.0 && self.inner_lr.is_finite()) || !self.outer_lr.is_valid() {
            return Err(Error::InvalidArgument(
                "learning rates must be finite and non-negative".into(),
            ));
        }
        if !(self.anneal_factor > 1.0) || self.anneal_patience == 0 {
            return Err(Error::InvalidArgument(
                "annealing needs factor > 1 and patience >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Meta-learner of one segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaLearnerState {
    pub segment: usize,
    pub params: NetworkParams,
    pub norm: Normalization,
    pub adam: AdamState,
    /// Current inner rate lives in `anneal.lr`.
    pub anneal: StepAnneal,
}

impl MetaLearnerState {
    pub fn new(
        segment: usize,
        params: NetworkParams,
        norm: Normalization,
        cfg: &MetaConfig,
    ) -> Self {
        let mut anneal = StepAnneal::new(cfg.inner_lr, cfg.anneal_patience);
        anneal.factor = cfg.anneal_factor;
        Self {
            segment,
            adam: AdamState::new(params.values.len()),
            params,
            norm,
            anneal,
        }
    }

    pub fn inner_lr(&self) -> f64 {
        self.anneal.lr
    }
}

/// Train and test objectives of one support task.
pub struct MetaTask<O> {
    pub train: O,
    pub test: O,
}

/// `steps` plain gradient-descent steps on `obj` from `theta`.
pub fn inner_update<O: Objective + ?Sized>(
    obj: &O,
    theta: &[f64],
    lr: f64,
    steps: usize,
) -> Result<Vec<f64>> {
    let mut p = theta.to_vec();
    for _ in 0..steps {
        let (_, g) = grad_params(obj, &p)?;
        for (a, b) in p.iter_mut().zip(&g) {
            *a -= lr * b;
        }
    }
    Ok(p)
}

/// Meta-objective `Σ_i L_test_i(θ_i')` and its exact gradient, where `θ_i'`
/// comes from `steps` inner steps on task `i`'s train objective. The
/// gradient is pulled back through every inner step with Hessian-vector
/// products, `g ← g − lr·H_train(θ_k)·g`.
pub fn meta_gradient<O: Objective>(
    tasks: &[MetaTask<O>],
    theta: &[f64],
    lr: f64,
    steps: usize,
    segment: usize,
) -> Result<(f64, Vec<f64>)> {
    let mut total = 0.0;
    let mut grad = vec![0.0; theta.len()];
    for (i, task) in tasks.iter().enumerate() {
        let wrap = |e: Error| e.in_task(segment, i);
        let mut path = Vec::with_capacity(steps);
        let mut p = theta.to_vec();
        for _ in 0..steps {
            let (_, g) = grad_params(&task.train, &p).map_err(wrap)?;
            let next: Vec<f64> = p.iter().zip(&g).map(|(a, b)| a - lr * b).collect();
            path.push(std::mem::replace(&mut p, next));
        }
        let (loss, mut g) = grad_params(&task.test, &p).map_err(wrap)?;
        if lr != 0.0 {
            for at in path.iter().rev() {
                let (_, hv) = grad_and_hvp(&task.train, at, &g).map_err(wrap)?;
                for (a, b) in g.iter_mut().zip(&hv) {
                    *a -= lr * b;
                }
            }
        }
        total += loss;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    if !total.is_finite() {
        return Err(Error::NonFiniteLoss {
            term: "meta".into(),
        });
    }
    Ok((total, grad))
}

/// One outer Adam step on the meta-objective; the inner rate is annealed
/// on the returned meta-loss.
pub fn outer_update<O: Objective>(
    state: &mut MetaLearnerState,
    tasks: &[MetaTask<O>],
    outer_lr: &LrSchedule,
    inner_steps: usize,
) -> Result<f64> {
    let (loss, g) = meta_gradient(
        tasks,
        &state.params.values,
        state.anneal.lr,
        inner_steps,
        state.segment,
    )?;
    let lr = outer_lr.lr(state.adam.step);
    state.adam.step(&mut state.params.values, &g, lr)?;
    state.anneal.observe(loss);
    Ok(loss)
}

/// Train and test point samples of support task `task` in segment `segment`.
pub fn support_points(
    counts: PointCounts,
    (lo, hi): (f64, f64),
    length: f64,
    seeds: Seeds,
    segment: usize,
    task: usize,
) -> Result<(PointSet, PointSet)> {
    let base = derive_seed(seeds.points, segment as u64);
    Ok((
        sample_points(lo, hi, length, counts, derive_seed(base, 2 * task as u64))?,
        sample_points(
            lo,
            hi,
            length,
            counts,
            derive_seed(base, 2 * task as u64 + 1),
        )?,
    ))
}

/// Adam on the summed initial and boundary losses only.
pub fn warmup(
    params: &mut NetworkParams,
    probs: &[PinnProblem<'_>],
    epochs: u64,
    lr: LrSchedule,
) -> Result<Option<LossBreakdown>> {
    if epochs == 0 {
        return Ok(None);
    }
    let probs: Vec<PinnProblem<'_>> = probs
        .iter()
        .map(|p| p.with_weights(p.weights.without_residuals()))
        .collect();
    let spec = FitSpec {
        method: "smt-warmup".into(),
        segment: 0,
        epochs,
        schedule: lr,
        log_every: 0,
    };
    let mut adam = AdamState::new(params.values.len());
    let fit = fit_adam(&mut params.values, &mut adam, &spec, |p| {
        let mut grad = vec![0.0; p.len()];
        let mut parts = Vec::with_capacity(probs.len());
        for prob in &probs {
            let (b, g) = prob.loss_and_grad(p)?;
            for (a, v) in grad.iter_mut().zip(g) {
                *a += v;
            }
            parts.push(b);
        }
        Ok((sum_breakdowns(&parts), grad))
    })?;
    Ok(Some(fit.last))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaSegmentRecord {
    pub index: usize,
    pub t_lo: f64,
    pub t_hi: f64,
    pub epochs: u64,
    pub warmup: Option<LossBreakdown>,
    pub final_meta_loss: f64,
    pub inner_lr: f64,
    pub anneal_drops: u32,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetaReport {
    pub segments: Vec<MetaSegmentRecord>,
    #[serde(skip)]
    pub log: TrainLog,
    pub wall_ms: f64,
}

struct TaskData {
    train: PointSet,
    test: PointSet,
    ic_train: IcTargets,
    ic_test: IcTargets,
}

fn meta_tasks<'a>(
    tasks: &'a [TaskSpec],
    data: &'a [TaskData],
    cfg: &MetaConfig,
    norm: Normalization,
) -> Vec<MetaTask<PinnProblem<'a>>> {
    tasks
        .iter()
        .zip(data)
        .map(|(task, d)| MetaTask {
            train: PinnProblem::new(cfg.arch, task, &d.train, &d.ic_train, cfg.weights, norm)
                .with_scaling(cfg.scaling),
            test: PinnProblem::new(cfg.arch, task, &d.test, &d.ic_test, cfg.weights, norm)
                .with_scaling(cfg.scaling),
        })
        .collect()
}

fn ic_from(
    params: &[f64],
    arch: NetworkArch,
    norm: &Normalization,
    t_lo: f64,
    xs: &[f64],
) -> Result<IcTargets> {
    let tn = vec![norm.t_n(t_lo); xs.len()];
    let xn: Vec<f64> = xs.iter().map(|&x| norm.x_n(x)).collect();
    let tape = jet::forward(&arch, params, &tn, &xn, JetOrder::Value)?;
    Ok(IcTargets::Values(
        (0..xs.len())
            .map(|p| norm.denormalize(tape.get(0, C_VAL, p), tape.get(1, C_VAL, p)))
            .collect(),
    ))
}

/// Meta-learn one initialization per segment of `schedule` on the support
/// tasks. The first segment starts from scratch after a warm-up; later
/// segments start from the previous segment's meta-parameters. Each task's
/// initial condition in segment `k > 0` is its own adapted network of
/// segment `k - 1` (one inner update from that segment's meta-parameters).
pub fn train_smt(
    tasks: &[TaskSpec],
    schedule: &SegmentSchedule,
    cfg: &MetaConfig,
    seeds: Seeds,
) -> Result<(Vec<MetaLearnerState>, MetaReport)> {
    cfg.validate()?;
    schedule.validate()?;
    let first = tasks
        .first()
        .ok_or_else(|| Error::InvalidArgument("no support tasks".into()))?;
    if cfg.arch.output_dim != 2 {
        return Err(Error::InvalidArgument(
            "meta-learner needs a two-output network".into(),
        ));
    }
    for t in tasks {
        t.validate()?;
        if t.material.length != first.material.length || t.t_end() != first.t_end() {
            return Err(Error::InvalidArgument(
                "tasks must share part length and time domain".into(),
            ));
        }
    }
    let length = first.material.length;
    let start = Instant::now();
    let mut states: Vec<MetaLearnerState> = Vec::with_capacity(schedule.len());
    let mut report = MetaReport::default();
    let mut prev_data: Vec<TaskData> = Vec::new();

    for index in 0..schedule.len() {
        let (lo, hi) = schedule.segment(index);
        let norm = Normalization::new(lo, hi, length)?;
        let mut data = Vec::with_capacity(tasks.len());
        for (i, task) in tasks.iter().enumerate() {
            let (train, test) = support_points(cfg.counts, (lo, hi), length, seeds, index, i)?;
            let (ic_train, ic_test) = match states.last() {
                None => (IcTargets::from_task(task), IcTargets::from_task(task)),
                Some(prev) => {
                    let probs = meta_tasks(
                        std::slice::from_ref(task),
                        &prev_data[i..=i],
                        cfg,
                        prev.norm,
                    );
                    let adapted = inner_update(
                        &probs[0].train,
                        &prev.params.values,
                        prev.inner_lr(),
                        cfg.inner_steps,
                    )
                    .map_err(|e| e.in_task(index - 1, i))?;
                    (
                        ic_from(&adapted, cfg.arch, &prev.norm, lo, &train.initial)?,
                        ic_from(&adapted, cfg.arch, &prev.norm, lo, &test.initial)?,
                    )
                }
            };
            data.push(TaskData {
                train,
                test,
                ic_train,
                ic_test,
            });
        }
        let mtasks = meta_tasks(tasks, &data, cfg, norm);

        let seg_start = Instant::now();
        let mut warm = None;
        let params = match states.last() {
            None => {
                let mut p = init_params(cfg.arch, seeds.init)?;
                let train: Vec<_> = mtasks.iter().map(|t| t.train).collect();
                warm = warmup(&mut p, &train, cfg.warmup_epochs, cfg.outer_lr)
                    .map_err(|e| e.in_segment(index))?;
                p
            }
            Some(prev) => {
                let mut p = prev.params.clone();
                prev.norm.transfer(&mut p, &norm);
                p
            }
        };
        let mut state = MetaLearnerState::new(index, params, norm, cfg);
        let mut last = f64::NAN;
        for epoch in 0..cfg.epochs {
            let lr = cfg.outer_lr.lr(state.adam.step);
            last = outer_update(&mut state, &mtasks, &cfg.outer_lr, cfg.inner_steps)?;
            if cfg.log_every > 0 && (epoch % cfg.log_every == 0 || epoch + 1 == cfg.epochs) {
                report.log.push(LogRow {
                    method: "smt".into(),
                    segment: index,
                    epoch,
                    loss: LossBreakdown {
                        total: last,
                        ..Default::default()
                    },
                    lr,
                    wall_ms: seg_start.elapsed().as_secs_f64() * 1e3,
                });
            }
        }
        info!(
            "smt segment {index} [{lo}, {hi}] meta loss {last:e}, inner lr {:e}",
            state.inner_lr()
        );
        report.segments.push(MetaSegmentRecord {
            index,
            t_lo: lo,
            t_hi: hi,
            epochs: cfg.epochs,
            warmup: warm,
            final_meta_loss: last,
            inner_lr: state.inner_lr(),
            anneal_drops: state.anneal.drops,
            wall_ms: seg_start.elapsed().as_secs_f64() * 1e3,
        });
        drop(mtasks);
        prev_data = data;
        states.push(state);
    }
    report.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok((states, report))
}

/// Plain gradient descent from the meta-parameters of `state` on one new
/// task's objective.
pub fn adapt<O: Objective + ?Sized>(
    state: &MetaLearnerState,
    obj: &O,
    epochs: u64,
    lr: f64,
) -> Result<NetworkParams> {
    let values = inner_update(obj, &state.params.values, lr, epochs as usize)?;
    NetworkParams::from_values(state.params.arch, values)
}

/// The meta-initializations as a stitched model (segment `k` predicts with
/// the meta-parameters of segment `k`).
pub fn meta_model(states: &[MetaLearnerState]) -> Result<StitchedModel> {
    let mut boundaries = vec![
        states
            .first()
            .ok_or_else(|| Error::InvalidArgument("no meta-learners".into()))?
            .norm
            .t_lo,
    ];
    boundaries.extend(states.iter().map(|s| s.norm.t_hi));
    Ok(StitchedModel {
        schedule: SegmentSchedule::from_boundaries(boundaries)?,
        segments: states
            .iter()
            .map(|s| SegmentNet {
                params: s.params.clone(),
                norm: s.norm,
            })
            .collect(),
    })
}

/// Adapt every segment's meta-initialization to `task` with `epochs`
/// gradient-descent steps at that segment's final inner rate.
pub fn adapt_smt(
    states: &[MetaLearnerState],
    task: &TaskSpec,
    cfg: &MetaConfig,
    epochs: u64,
    seed: u64,
) -> Result<(StitchedModel, TrainReport)> {
    let model = meta_model(states)?;
    let spec = AdaptSpec {
        counts: cfg.counts,
        weights: cfg.weights,
        scaling: cfg.scaling,
        epochs,
        optimizers: states
            .iter()
            .map(|s| Finetune::Gd { lr: s.inner_lr() })
            .collect(),
        trainable: None,
    };
    adapt_chain(&model, task, &spec, seed, "smt")
}
