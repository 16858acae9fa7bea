//! Time-marching drivers: one network per segment (TM), one network with a
//! memory of earlier segments (bcPINN), adaptive halving of segments, and
//! prediction from the stitched result.

use std::collections::VecDeque;
use std::ops::Range;
use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::jet::{self, JetOrder, C_VAL};
use crate::net::{checkpoint, init_params, NetworkArch, NetworkParams};
use crate::physics::TaskSpec;
use crate::solver::SolutionField;
use crate::training::{
    fit_adam, fit_gd, sample_points, AdamState, FitSpec, IcTargets, LossBreakdown, LossWeights,
    LrSchedule, MemoryPoint, Normalization, PinnProblem, PointCounts, PointSet, ResidualScaling,
    TrainLog,
};

/// Mix a base seed with a stream index (splitmix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryOrigin {
    Initial,
    Split,
}

/// Ordered segment boundaries `0 = t_0 < … < t_n = t_end`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentSchedule {
    pub boundaries: Vec<f64>,
    pub provenance: Vec<BoundaryOrigin>,
}

impl SegmentSchedule {
    pub fn uniform(t_end: f64, n: usize) -> Result<Self> {
        if n == 0 || !(t_end > 0.0) {
            return Err(Error::InvalidArgument(
                "schedule needs n >= 1 and t_end > 0".into(),
            ));
        }
        let boundaries: Vec<f64> = (0..=n)
            .map(|i| {
                if i == n {
                    t_end
                } else {
                    t_end * i as f64 / n as f64
                }
            })
            .collect();
        Self::from_boundaries(boundaries)
    }

    pub fn from_boundaries(boundaries: Vec<f64>) -> Result<Self> {
        let s = Self {
            provenance: vec![BoundaryOrigin::Initial; boundaries.len()],
            boundaries,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.boundaries;
        if b.len() < 2 || b[0] != 0.0 || b.len() != self.provenance.len() {
            return Err(Error::InvalidArgument(
                "schedule must start at 0 and have >= 1 segment".into(),
            ));
        }
        if b.windows(2).any(|w| !(w[1] > w[0])) || !b.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument(
                "schedule boundaries must be strictly increasing".into(),
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn t_end(&self) -> f64 {
        *self.boundaries.last().expect("validated")
    }

    pub fn segment(&self, i: usize) -> (f64, f64) {
        (self.boundaries[i], self.boundaries[i + 1])
    }

    /// Segment owning `t`; interior boundaries belong to the later segment
    /// and `t_end` to the last one.
    pub fn owner(&self, t: f64) -> Result<usize> {
        let t_end = self.t_end();
        if !(0.0..=t_end).contains(&t) {
            return Err(Error::OutOfDomain {
                what: "time",
                value: t,
                lo: 0.0,
                hi: t_end,
            });
        }
        let i = self.boundaries.partition_point(|&b| b <= t);
        Ok((i - 1).min(self.len() - 1))
    }

    /// Boundaries created by halving.
    pub fn added_boundaries(&self) -> Vec<f64> {
        self.boundaries
            .iter()
            .zip(&self.provenance)
            .filter(|(_, p)| **p == BoundaryOrigin::Split)
            .map(|(b, _)| *b)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentNet {
    pub params: NetworkParams,
    pub norm: Normalization,
}

/// One network per segment; a single network is the one-segment case.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StitchedModel {
    pub schedule: SegmentSchedule,
    pub segments: Vec<SegmentNet>,
}

#[derive(Serialize, Deserialize)]
struct ModelIndex {
    schedule: SegmentSchedule,
    norms: Vec<Normalization>,
    checkpoints: Vec<String>,
}

impl StitchedModel {
    pub fn single(params: NetworkParams, norm: Normalization) -> Result<Self> {
        Ok(Self {
            schedule: SegmentSchedule::from_boundaries(vec![0.0, norm.t_hi])?,
            segments: vec![SegmentNet { params, norm }],
        })
    }

    pub fn arch(&self) -> NetworkArch {
        self.segments[0].params.arch
    }

    pub fn heads(&self) -> usize {
        self.arch().output_dim / 2
    }

    /// `(T °C, α)` at `(t, x)` from the owning segment.
    pub fn predict(&self, t: f64, x: f64) -> Result<(f64, f64)> {
        Ok(self.predict_batch(&[t], &[x], 0)?[0])
    }

    /// Batched prediction for output pair `head`.
    pub fn predict_batch(&self, ts: &[f64], xs: &[f64], head: usize) -> Result<Vec<(f64, f64)>> {
        if ts.len() != xs.len() {
            return Err(Error::InvalidArgument(
                "time and position lists differ in length".into(),
            ));
        }
        if head >= self.heads() {
            return Err(Error::InvalidArgument(format!("head {head} out of range")));
        }
        let mut owner = Vec::with_capacity(ts.len());
        for (&t, &x) in ts.iter().zip(xs) {
            let len = self.segments[0].norm.x_scale;
            if !(0.0..=len).contains(&x) {
                return Err(Error::OutOfDomain {
                    what: "position",
                    value: x,
                    lo: 0.0,
                    hi: len,
                });
            }
            owner.push(self.schedule.owner(t)?);
        }
        let mut out = vec![(0.0, 0.0); ts.len()];
        for (s, seg) in self.segments.iter().enumerate() {
            let idx: Vec<usize> = (0..ts.len()).filter(|&i| owner[i] == s).collect();
            if idx.is_empty() {
                continue;
            }
            let tn: Vec<f64> = idx.iter().map(|&i| seg.norm.t_n(ts[i])).collect();
            let xn: Vec<f64> = idx.iter().map(|&i| seg.norm.x_n(xs[i])).collect();
            let tape = jet::forward(
                &seg.params.arch,
                &seg.params.values,
                &tn,
                &xn,
                JetOrder::Value,
            )?;
            for (p, &i) in idx.iter().enumerate() {
                out[i] = seg.norm.denormalize(
                    tape.get(2 * head, C_VAL, p),
                    tape.get(2 * head + 1, C_VAL, p),
                );
            }
        }
        Ok(out)
    }

    /// Prediction on a tensor grid, laid out like the reference solver.
    pub fn field(&self, times: &[f64], positions: &[f64], head: usize) -> Result<SolutionField> {
        let ts: Vec<f64> = times
            .iter()
            .flat_map(|&t| std::iter::repeat(t).take(positions.len()))
            .collect();
        let xs: Vec<f64> = times
            .iter()
            .flat_map(|_| positions.iter().copied())
            .collect();
        let (temp, alpha) = self.predict_batch(&ts, &xs, head)?.into_iter().unzip();
        Ok(SolutionField {
            times: times.to_vec(),
            positions: positions.to_vec(),
            temp,
            alpha,
        })
    }

    /// Copy of the model restricted to output pair `head`.
    pub fn extract_head(&self, head: usize) -> Result<StitchedModel> {
        let segments = self
            .segments
            .iter()
            .map(|s| {
                Ok(SegmentNet {
                    params: head_params(&s.params, head)?,
                    norm: s.norm,
                })
            })
            .collect::<Result<_>>()?;
        Ok(StitchedModel {
            schedule: self.schedule.clone(),
            segments,
        })
    }

    /// `model.json` plus one checkpoint per segment.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut names = Vec::new();
        for (i, s) in self.segments.iter().enumerate() {
            let name = format!("segment-{i:03}.ckpt");
            checkpoint::save(&dir.join(&name), &s.params, None)?;
            names.push(name);
        }
        let index = ModelIndex {
            schedule: self.schedule.clone(),
            norms: self.segments.iter().map(|s| s.norm).collect(),
            checkpoints: names,
        };
        std::fs::write(
            dir.join("model.json"),
            serde_json::to_string_pretty(&index)?,
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let index: ModelIndex =
            serde_json::from_str(&std::fs::read_to_string(dir.join("model.json"))?)?;
        index.schedule.validate()?;
        if index.norms.len() != index.checkpoints.len() || index.norms.len() != index.schedule.len()
        {
            return Err(Error::Format(
                "model index lists inconsistent segment counts".into(),
            ));
        }
        let segments = index
            .norms
            .iter()
            .zip(&index.checkpoints)
            .map(|(norm, name)| {
                Ok(SegmentNet {
                    params: checkpoint::load(&dir.join(name))?.0,
                    norm: *norm,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            schedule: index.schedule,
            segments,
        })
    }
}

/// Two-output network made of the shared layers and output pair `head`.
pub fn head_params(params: &NetworkParams, head: usize) -> Result<NetworkParams> {
    let arch = params.arch;
    if 2 * head + 1 >= arch.output_dim {
        return Err(Error::InvalidArgument(format!("head {head} out of range")));
    }
    let out = arch.output_layer_range();
    let fan_in = arch.hidden_width;
    let mut values = params.values[..out.start].to_vec();
    values.extend_from_slice(
        &params.values[out.start + 2 * head * fan_in..out.start + (2 * head + 2) * fan_in],
    );
    let bias = out.start + arch.output_dim * fan_in;
    values.extend_from_slice(&params.values[bias + 2 * head..bias + 2 * head + 2]);
    NetworkParams::from_values(arch.with_outputs(2), values)
}

/// Per-segment training budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentBudget {
    pub arch: NetworkArch,
    pub epochs: u64,
    pub counts: PointCounts,
    pub lr: LrSchedule,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default)]
    pub scaling: ResidualScaling,
    #[serde(default)]
    pub log_every: u64,
}

impl Default for SegmentBudget {
    fn default() -> Self {
        Self {
            arch: NetworkArch::default(),
            epochs: 5000,
            counts: PointCounts::new(2000, 400, 200),
            lr: LrSchedule::default(),
            weights: LossWeights::default(),
            scaling: ResidualScaling::default(),
            log_every: 100,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    /// Network initialization.
    pub init: u64,
    /// Point sampling.
    pub points: u64,
}

impl Seeds {
    pub fn new(seed: u64) -> Self {
        Self {
            init: derive_seed(seed, 0),
            points: derive_seed(seed, 1),
        }
    }
}

/// Threshold on the loss jump that triggers halving.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Epsilon {
    /// Multiple of the previous segment's final loss.
    Relative(f64),
    Absolute(f64),
}

impl Default for Epsilon {
    /// Sized against losses under [`ResidualScaling::Convective`]; a jump of
    /// 0.15 is several times what kinks in the air temperature produce.
    fn default() -> Self {
        Epsilon::Absolute(0.15)
    }
}

impl Epsilon {
    pub fn never() -> Self {
        Epsilon::Absolute(f64::INFINITY)
    }

    pub fn threshold(&self, prev_final: f64) -> f64 {
        match *self {
            Epsilon::Relative(k) => k * prev_final,
            Epsilon::Absolute(e) => e,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveConfig {
    pub epsilon: Epsilon,
    /// Shortest segment a split may produce, s; `None` means `t_end / 64`.
    pub min_len: Option<f64>,
    /// Units of the losses compared by the check.
    #[serde(default = "convective")]
    pub scaling: ResidualScaling,
}

fn convective() -> ResidualScaling {
    ResidualScaling::Convective
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        Self {
            epsilon: Epsilon::default(),
            min_len: None,
            scaling: ResidualScaling::Convective,
        }
    }
}

/// Loss check made before training a warm-started segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitCheck {
    pub t_lo: f64,
    pub t_hi: f64,
    pub incoming_loss: f64,
    pub prev_final_loss: f64,
    pub threshold: f64,
    pub split: bool,
}

/// The criterion was still violated when the segment reached `min_len`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitWarning {
    pub t_lo: f64,
    pub t_hi: f64,
    pub incoming_loss: f64,
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub index: usize,
    pub t_lo: f64,
    pub t_hi: f64,
    pub epochs: u64,
    pub final_loss: LossBreakdown,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub segments: Vec<SegmentRecord>,
    pub checks: Vec<SplitCheck>,
    pub warnings: Vec<SplitWarning>,
    #[serde(skip)]
    pub log: TrainLog,
    pub wall_ms: f64,
}

/// Component-wise sum of several breakdowns.
pub fn sum_breakdowns(parts: &[LossBreakdown]) -> LossBreakdown {
    let mut s = LossBreakdown::default();
    for p in parts {
        s.total += p.total;
        s.ic_temp += p.ic_temp;
        s.ic_alpha += p.ic_alpha;
        s.bc_top += p.bc_top;
        s.bc_bottom += p.bc_bottom;
        s.r_temp += p.r_temp;
        s.r_alpha += p.r_alpha;
        if let Some(m) = p.memory {
            s.memory = Some(s.memory.unwrap_or(0.0) + m);
        }
    }
    s
}

/// Initial-condition targets for each head at `t_lo`, read from `prev`.
fn handoff_targets(
    prev: &SegmentNet,
    t_lo: f64,
    xs: &[f64],
    heads: usize,
) -> Result<Vec<IcTargets>> {
    let tn = vec![prev.norm.t_n(t_lo); xs.len()];
    let xn: Vec<f64> = xs.iter().map(|&x| prev.norm.x_n(x)).collect();
    let tape = jet::forward(
        &prev.params.arch,
        &prev.params.values,
        &tn,
        &xn,
        JetOrder::Value,
    )?;
    Ok((0..heads)
        .map(|h| {
            IcTargets::Values(
                (0..xs.len())
                    .map(|p| {
                        prev.norm
                            .denormalize(tape.get(2 * h, C_VAL, p), tape.get(2 * h + 1, C_VAL, p))
                    })
                    .collect(),
            )
        })
        .collect())
}

struct SegmentData {
    points: PointSet,
    ics: Vec<IcTargets>,
}

fn problems<'a>(
    tasks: &'a [TaskSpec],
    data: &'a SegmentData,
    budget: &SegmentBudget,
    norm: Normalization,
    memory: Option<&'a [MemoryPoint]>,
) -> Vec<PinnProblem<'a>> {
    tasks
        .iter()
        .enumerate()
        .map(|(h, task)| {
            let mut p = PinnProblem::new(
                budget.arch,
                task,
                &data.points,
                &data.ics[h],
                budget.weights,
                norm,
            )
            .with_head(h)
            .with_scaling(budget.scaling);
            if let Some(m) = memory {
                p = p.with_memory(m);
            }
            p
        })
        .collect()
}

fn total_loss(probs: &[PinnProblem<'_>], params: &[f64]) -> Result<LossBreakdown> {
    let parts = probs
        .iter()
        .map(|p| p.loss(params))
        .collect::<Result<Vec<_>>>()?;
    Ok(sum_breakdowns(&parts))
}

/// Full-batch Adam on the summed loss of `probs`; returns the fit result.
pub(crate) fn fit_problems(
    probs: &[PinnProblem<'_>],
    params: &mut [f64],
    budget: &SegmentBudget,
    method: &str,
    segment: usize,
) -> Result<crate::training::FitResult> {
    let spec = FitSpec {
        method: method.to_string(),
        segment,
        epochs: budget.epochs,
        schedule: budget.lr,
        log_every: budget.log_every,
    };
    let mut adam = AdamState::new(params.len());
    fit_adam(params, &mut adam, &spec, |p| {
        let mut grad = vec![0.0; p.len()];
        let mut parts = Vec::with_capacity(probs.len());
        for (h, prob) in probs.iter().enumerate() {
            let (b, g) = prob.loss_and_grad(p).map_err(|e| {
                if probs.len() > 1 {
                    e.in_task(segment, h)
                } else {
                    e
                }
            })?;
            for (a, v) in grad.iter_mut().zip(g) {
                *a += v;
            }
            parts.push(b);
        }
        Ok((sum_breakdowns(&parts), grad))
    })
}

fn check_tasks(tasks: &[TaskSpec], budget: &SegmentBudget) -> Result<f64> {
    let first = tasks
        .first()
        .ok_or_else(|| Error::InvalidArgument("no tasks".into()))?;
    for t in tasks {
        t.validate()?;
        if t.material.length != first.material.length || t.t_end() != first.t_end() {
            return Err(Error::InvalidArgument(
                "tasks must share part length and time domain".into(),
            ));
        }
    }
    if budget.arch.output_dim != 2 * tasks.len() {
        return Err(Error::InvalidArgument(format!(
            "{} tasks need {} outputs, network has {}",
            tasks.len(),
            2 * tasks.len(),
            budget.arch.output_dim
        )));
    }
    budget.weights.validate()?;
    Ok(first.material.length)
}

/// Time marching with optional adaptive halving. Each task `i` trains
/// output pair `i` of a shared network (one task is plain TM).
pub fn train_marching(
    tasks: &[TaskSpec],
    initial: &SegmentSchedule,
    adaptive: Option<AdaptiveConfig>,
    budget: &SegmentBudget,
    seeds: Seeds,
    method: &str,
) -> Result<(StitchedModel, TrainReport)> {
    let length = check_tasks(tasks, budget)?;
    initial.validate()?;
    if (initial.t_end() - tasks[0].t_end()).abs() > 1e-9 * tasks[0].t_end() {
        return Err(Error::InvalidArgument(
            "schedule does not span the cure cycle".into(),
        ));
    }
    let start = Instant::now();
    let min_len = adaptive.map(|a| a.min_len.unwrap_or(initial.t_end() / 64.0));
    let mut queue: VecDeque<(f64, f64, BoundaryOrigin)> = (0..initial.len())
        .map(|i| {
            (
                initial.boundaries[i],
                initial.boundaries[i + 1],
                initial.provenance[i + 1],
            )
        })
        .collect();
    let mut boundaries = vec![0.0];
    let mut provenance = vec![BoundaryOrigin::Initial];
    let mut segments: Vec<SegmentNet> = Vec::new();
    let mut report = TrainReport::default();
    let mut prev_final = f64::NAN;

    while let Some((lo, mut hi, mut origin)) = queue.pop_front() {
        let index = segments.len();
        let seg_seed = derive_seed(seeds.points, index as u64);
        let prepare = |lo: f64, hi: f64| -> Result<(NetworkParams, Normalization, SegmentData)> {
            let norm = Normalization::new(lo, hi, length)?;
            let points = sample_points(lo, hi, length, budget.counts, seg_seed)?;
            let (params, ics) = match segments.last() {
                None => (
                    init_params(budget.arch, seeds.init)?,
                    tasks.iter().map(IcTargets::from_task).collect(),
                ),
                Some(prev) => {
                    let mut p = prev.params.clone();
                    prev.norm.transfer(&mut p, &norm);
                    (p, handoff_targets(prev, lo, &points.initial, tasks.len())?)
                }
            };
            Ok((params, norm, SegmentData { points, ics }))
        };
        let (mut params, mut norm, mut data) = prepare(lo, hi)?;

        if let (Some(cfg), Some(min_len)) = (adaptive, min_len) {
            if index > 0 {
                let threshold = cfg.epsilon.threshold(prev_final);
                loop {
                    let probs = problems(tasks, &data, budget, norm, None)
                        .into_iter()
                        .map(|p| p.with_scaling(cfg.scaling))
                        .collect::<Vec<_>>();
                    let incoming = total_loss(&probs, &params.values)
                        .map_err(|e| e.in_segment(index))?
                        .total;
                    let violated = incoming - prev_final > threshold;
                    let can_split = (hi - lo) / 2.0 >= min_len;
                    report.checks.push(SplitCheck {
                        t_lo: lo,
                        t_hi: hi,
                        incoming_loss: incoming,
                        prev_final_loss: prev_final,
                        threshold,
                        split: violated && can_split,
                    });
                    if !violated {
                        break;
                    }
                    if !can_split {
                        warn!("segment [{lo}, {hi}] at minimum length; loss jump {incoming:e} above threshold");
                        report.warnings.push(SplitWarning {
                            t_lo: lo,
                            t_hi: hi,
                            incoming_loss: incoming,
                            threshold,
                        });
                        break;
                    }
                    let mid = 0.5 * (lo + hi);
                    info!("halving [{lo}, {hi}] at {mid}");
                    queue.push_front((mid, hi, origin));
                    hi = mid;
                    origin = BoundaryOrigin::Split;
                    (params, norm, data) = prepare(lo, hi)?;
                }
            }
        }

        let probs = problems(tasks, &data, budget, norm, None);
        let fit = fit_problems(&probs, &mut params.values, budget, method, index)
            .map_err(|e| e.in_segment(index))?;
        let final_loss = total_loss(&probs, &params.values).map_err(|e| e.in_segment(index))?;
        prev_final = match adaptive {
            Some(cfg) if cfg.scaling != budget.scaling => {
                let check: Vec<_> = probs.iter().map(|p| p.with_scaling(cfg.scaling)).collect();
                total_loss(&check, &params.values)
                    .map_err(|e| e.in_segment(index))?
                    .total
            }
            _ => final_loss.total,
        };
        info!(
            "{method} segment {index} [{lo}, {hi}] final loss {:e}",
            final_loss.total
        );
        report.segments.push(SegmentRecord {
            index,
            t_lo: lo,
            t_hi: hi,
            epochs: budget.epochs,
            final_loss,
            wall_ms: fit.wall_ms,
        });
        report.log.extend(fit.log);
        boundaries.push(hi);
        provenance.push(origin);
        segments.push(SegmentNet { params, norm });
    }
    *provenance.last_mut().expect("non-empty") = BoundaryOrigin::Initial;
    report.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let schedule = SegmentSchedule {
        boundaries,
        provenance,
    };
    schedule.validate()?;
    Ok((StitchedModel { schedule, segments }, report))
}

/// Time marching on a fixed schedule.
pub fn train_tm(
    task: &TaskSpec,
    schedule: &SegmentSchedule,
    budget: &SegmentBudget,
    seeds: Seeds,
) -> Result<(StitchedModel, TrainReport)> {
    train_marching(
        std::slice::from_ref(task),
        schedule,
        None,
        budget,
        seeds,
        "tm",
    )
}

/// Time marching with adaptive halving from `initial_n` equal segments.
pub fn train_tm_adaptive(
    task: &TaskSpec,
    initial_n: usize,
    cfg: AdaptiveConfig,
    budget: &SegmentBudget,
    seeds: Seeds,
) -> Result<(StitchedModel, TrainReport)> {
    let initial = SegmentSchedule::uniform(task.t_end(), initial_n)?;
    train_marching(
        std::slice::from_ref(task),
        &initial,
        Some(cfg),
        budget,
        seeds,
        "tm",
    )
}

/// Schedule produced by adaptive halving (training included, since each
/// check needs the trained previous segment).
pub fn adapt_schedule(
    initial_n: usize,
    task: &TaskSpec,
    cfg: AdaptiveConfig,
    budget: &SegmentBudget,
    seeds: Seeds,
) -> Result<SegmentSchedule> {
    Ok(train_tm_adaptive(task, initial_n, cfg, budget, seeds)?
        .0
        .schedule)
}

/// One network over `[0, t_end]` trained with every point set at once.
pub fn train_pinn(
    task: &TaskSpec,
    budget: &SegmentBudget,
    seeds: Seeds,
) -> Result<(StitchedModel, TrainReport)> {
    let schedule = SegmentSchedule::uniform(task.t_end(), 1)?;
    train_marching(
        std::slice::from_ref(task),
        &schedule,
        None,
        budget,
        seeds,
        "pinn",
    )
}

/// Single network, globally normalized, fine-tuned segment by segment with
/// a memory of `memory_per_segment` labeled points from every finished
/// segment.
pub fn train_bcpinn(
    task: &TaskSpec,
    schedule: &SegmentSchedule,
    budget: &SegmentBudget,
    memory_per_segment: usize,
    seeds: Seeds,
) -> Result<(StitchedModel, TrainReport, Vec<MemoryPoint>)> {
    let length = check_tasks(std::slice::from_ref(task), budget)?;
    schedule.validate()?;
    let start = Instant::now();
    let norm = Normalization::new(0.0, schedule.t_end(), length)?;
    let mut params = init_params(budget.arch, seeds.init)?;
    let mut memory: Vec<MemoryPoint> = Vec::new();
    let mut report = TrainReport::default();
    for index in 0..schedule.len() {
        let (lo, hi) = schedule.segment(index);
        let points = sample_points(
            lo,
            hi,
            length,
            budget.counts,
            derive_seed(seeds.points, index as u64),
        )?;
        let ics = if index == 0 {
            vec![IcTargets::from_task(task)]
        } else {
            handoff_targets(
                &SegmentNet {
                    params: params.clone(),
                    norm,
                },
                lo,
                &points.initial,
                1,
            )?
        };
        let data = SegmentData { points, ics };
        let mem = (index > 0).then_some(&memory[..]);
        let probs = problems(std::slice::from_ref(task), &data, budget, norm, mem);
        let fit = fit_problems(&probs, &mut params.values, budget, "bcpinn", index)
            .map_err(|e| e.in_segment(index))?;
        let final_loss = total_loss(&probs, &params.values).map_err(|e| e.in_segment(index))?;
        report.segments.push(SegmentRecord {
            index,
            t_lo: lo,
            t_hi: hi,
            epochs: budget.epochs,
            final_loss,
            wall_ms: fit.wall_ms,
        });
        report.log.extend(fit.log);
        // label fresh points of the finished segment with the current network
        let mem_pts = sample_points(
            lo,
            hi,
            length,
            PointCounts::new(memory_per_segment.max(1), 1, 1),
            derive_seed(seeds.points, 1_000_000 + index as u64),
        )?;
        let picked = &mem_pts.collocation[..memory_per_segment];
        let tn: Vec<f64> = picked.iter().map(|p| norm.t_n(p.0)).collect();
        let xn: Vec<f64> = picked.iter().map(|p| norm.x_n(p.1)).collect();
        let tape = jet::forward(&params.arch, &params.values, &tn, &xn, JetOrder::Value)?;
        memory.extend(picked.iter().enumerate().map(|(k, &(t, x))| MemoryPoint {
            t,
            x,
            t_hat: tape.get(0, C_VAL, k),
            alpha_hat: tape.get(1, C_VAL, k),
        }));
    }
    report.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let mut model = StitchedModel::single(params, norm)?;
    model.schedule = SegmentSchedule::from_boundaries(vec![0.0, schedule.t_end()])?;
    Ok((model, report, memory))
}

/// Optimizer used to fine-tune a pretrained segment on a new task.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Finetune {
    /// Plain gradient descent at a fixed rate.
    Gd { lr: f64 },
    /// Fresh Adam state with the given schedule.
    Adam { lr: LrSchedule },
}

/// Fine-tuning of a pretrained segment chain on one new task.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptSpec {
    pub counts: PointCounts,
    pub weights: LossWeights,
    pub scaling: ResidualScaling,
    pub epochs: u64,
    /// One optimizer per segment.
    pub optimizers: Vec<Finetune>,
    /// Parameter slice that may change; `None` trains everything.
    pub trainable: Option<Range<usize>>,
}

/// Fine-tune every segment of `inits` on `task`, in time order. Segment
/// `k > 0` takes its initial condition from the adapted segment `k - 1`.
pub fn adapt_chain(
    inits: &StitchedModel,
    task: &TaskSpec,
    spec: &AdaptSpec,
    seed: u64,
    method: &str,
) -> Result<(StitchedModel, TrainReport)> {
    task.validate()?;
    spec.weights.validate()?;
    if inits.heads() != 1 {
        return Err(Error::InvalidArgument(
            "adaptation needs a two-output model".into(),
        ));
    }
    if spec.optimizers.len() != inits.segments.len() {
        return Err(Error::InvalidArgument(format!(
            "{} optimizers for {} segments",
            spec.optimizers.len(),
            inits.segments.len()
        )));
    }
    let n_params = inits.arch().parameter_count();
    if let Some(r) = &spec.trainable {
        if r.start > r.end || r.end > n_params {
            return Err(Error::InvalidArgument(
                "trainable range outside the parameter vector".into(),
            ));
        }
    }
    let start = Instant::now();
    let length = task.material.length;
    let mut report = TrainReport::default();
    let mut segments: Vec<SegmentNet> = Vec::with_capacity(inits.segments.len());
    for (index, init) in inits.segments.iter().enumerate() {
        let (lo, hi) = inits.schedule.segment(index);
        let points = sample_points(lo, hi, length, spec.counts, derive_seed(seed, index as u64))?;
        let ic = match segments.last() {
            None => IcTargets::from_task(task),
            Some(prev) => handoff_targets(prev, lo, &points.initial, 1)?.remove(0),
        };
        let prob = PinnProblem::new(
            init.params.arch,
            task,
            &points,
            &ic,
            spec.weights,
            init.norm,
        )
        .with_scaling(spec.scaling);
        let mut params = init.params.clone();
        let eval = |p: &[f64]| -> Result<(LossBreakdown, Vec<f64>)> {
            let (b, mut g) = prob.loss_and_grad(p)?;
            if let Some(r) = &spec.trainable {
                g[..r.start].fill(0.0);
                g[r.end..].fill(0.0);
            }
            Ok((b, g))
        };
        let seg_start = Instant::now();
        let fit_log = match spec.optimizers[index] {
            Finetune::Gd { lr } => {
                fit_gd(&mut params.values, spec.epochs, lr, eval)
                    .map_err(|e| e.in_segment(index))?;
                TrainLog::default()
            }
            Finetune::Adam { lr } => {
                let fs = FitSpec {
                    method: method.to_string(),
                    segment: index,
                    epochs: spec.epochs,
                    schedule: lr,
                    log_every: 0,
                };
                let mut adam = AdamState::new(n_params);
                fit_adam(&mut params.values, &mut adam, &fs, eval)
                    .map_err(|e| e.in_segment(index))?
                    .log
            }
        };
        let final_loss = prob.loss(&params.values).map_err(|e| e.in_segment(index))?;
        report.segments.push(SegmentRecord {
            index,
            t_lo: lo,
            t_hi: hi,
            epochs: spec.epochs,
            final_loss,
            wall_ms: seg_start.elapsed().as_secs_f64() * 1e3,
        });
        report.log.extend(fit_log);
        segments.push(SegmentNet {
            params,
            norm: init.norm,
        });
    }
    report.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok((
        StitchedModel {
            schedule: inits.schedule.clone(),
            segments,
        },
        report,
    ))
}

/// Run-directory manifest written next to the checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub method: String,
    pub schedule: SegmentSchedule,
    pub seeds: Seeds,
    pub budget: SegmentBudget,
    pub final_losses: Vec<f64>,
    pub added_boundaries: Vec<f64>,
    pub warnings: Vec<SplitWarning>,
}

/// Save `model` under `dir` together with its manifest.
pub fn save_run(
    dir: &Path,
    method: &str,
    model: &StitchedModel,
    report: &TrainReport,
    budget: &SegmentBudget,
    seeds: Seeds,
) -> Result<RunManifest> {
    model.save(dir)?;
    let manifest = RunManifest {
        method: method.to_string(),
        schedule: model.schedule.clone(),
        seeds,
        budget: budget.clone(),
        final_losses: report.segments.iter().map(|s| s.final_loss.total).collect(),
        added_boundaries: model.schedule.added_boundaries(),
        warnings: report.warnings.clone(),
    };
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(manifest)
}
