//! Point sampling, loss assembly, optimizers and the generic fit loop.

pub mod adam;
pub mod loss;
pub mod points;
pub mod schedule;

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamState};
pub use loss::{
    bcpinn_loss, pinn_loss, IcTargets, LossBreakdown, LossWeights, MemoryPoint, Normalization,
    PinnProblem, ResidualScaling, SumObjective,
};
pub use points::{sample_points, BoundaryCount, PointCounts, PointSet};
pub use schedule::{LrSchedule, StepAnneal};

use crate::error::{Error, Result};

/// One row of a training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub method: String,
    pub segment: usize,
    pub epoch: u64,
    pub loss: LossBreakdown,
    pub lr: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

pub const LOG_HEADER: &str =
    "method,segment,epoch,total,ic_T,ic_alpha,bc_top,bc_bottom,r_T,r_alpha,ll,lr,wall_ms";

impl TrainLog {
    pub fn push(&mut self, row: LogRow) {
        self.rows.push(row);
    }

    pub fn extend(&mut self, other: TrainLog) {
        self.rows.extend(other.rows);
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{LOG_HEADER}")?;
        for r in &self.rows {
            let l = &r.loss;
            let ll = l.memory.map_or(String::new(), |v| format!("{v:e}"));
            writeln!(
                w,
                "{},{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{},{:e},{:.3}",
                r.method,
                r.segment,
                r.epoch,
                l.total,
                l.ic_temp,
                l.ic_alpha,
                l.bc_top,
                l.bc_bottom,
                l.r_temp,
                l.r_alpha,
                ll,
                r.lr,
                r.wall_ms
            )?;
        }
        Ok(())
    }

    /// Append rows to `path`, writing the header when the file is new.
    pub fn append_csv(&self, path: &Path) -> Result<()> {
        let fresh = !path.exists();
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        let body = if fresh {
            &buf[..]
        } else {
            let skip = LOG_HEADER.len() + 1;
            &buf[skip..]
        };
        f.write_all(body)?;
        Ok(())
    }
}

/// Optimizer-independent settings of a fit.
#[derive(Clone, Debug, PartialEq)]
pub struct FitSpec {
    pub method: String,
    pub segment: usize,
    pub epochs: u64,
    pub schedule: LrSchedule,
    /// Log every this many epochs (and the last one); 0 disables logging.
    pub log_every: u64,
}

/// Outcome of a fit.
#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    /// Loss at the last evaluated parameters (before the final update).
    pub last: LossBreakdown,
    pub log: TrainLog,
    pub wall_ms: f64,
}

/// Full-batch Adam: one epoch is one gradient evaluation on every point and
/// one update. `eval` returns the loss components and the gradient for
/// the slice being optimized; the schedule's step counter is `state.step`.
pub fn fit_adam<F>(
    params: &mut [f64],
    state: &mut AdamState,
    spec: &FitSpec,
    mut eval: F,
) -> Result<FitResult>
where
    F: FnMut(&[f64]) -> Result<(LossBreakdown, Vec<f64>)>,
{
    if !spec.schedule.is_valid() {
        return Err(Error::InvalidArgument(
            "invalid learning-rate schedule".into(),
        ));
    }
    let start = Instant::now();
    let mut log = TrainLog::default();
    let mut last = LossBreakdown::default();
    for epoch in 0..spec.epochs {
        let (b, g) = eval(params)?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient);
        }
        let lr = spec.schedule.lr(state.step);
        state.step(params, &g, lr)?;
        last = b;
        if spec.log_every > 0 && (epoch % spec.log_every == 0 || epoch + 1 == spec.epochs) {
            log.push(LogRow {
                method: spec.method.clone(),
                segment: spec.segment,
                epoch,
                loss: b,
                lr,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            });
        }
    }
    Ok(FitResult {
        last,
        log,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Plain gradient descent with a fixed rate, `epochs` steps.
pub fn fit_gd<F>(
    params: &mut [f64],
    epochs: u64,
    lr: f64,
    mut eval: F,
) -> Result<Option<LossBreakdown>>
where
    F: FnMut(&[f64]) -> Result<(LossBreakdown, Vec<f64>)>,
{
    let mut last = None;
    for _ in 0..epochs {
        let (b, g) = eval(params)?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient);
        }
        for (p, gi) in params.iter_mut().zip(&g) {
            *p -= lr * gi;
        }
        last = Some(b);
    }
    Ok(last)
}
