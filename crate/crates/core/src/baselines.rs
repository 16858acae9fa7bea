//! Transfer-learning and multi-task baselines for adaptation to new tasks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::TaskSpec;
use crate::sequential::{
    adapt_chain, train_marching, train_tm, AdaptSpec, Finetune, Seeds, SegmentBudget,
    SegmentSchedule, StitchedModel, TrainReport,
};

/// HTC pair `(top, bottom)` of the transfer-learning source task.
pub const TL_SOURCE_HTC: (f64, f64) = (120.0, 70.0);

/// Source model for transfer learning: plain TM on the source task.
pub fn train_tl_source(
    base: &TaskSpec,
    schedule: &SegmentSchedule,
    budget: &SegmentBudget,
    seeds: Seeds,
) -> Result<(StitchedModel, TrainReport)> {
    let mut task = base.clone();
    (task.h_top, task.h_bottom) = TL_SOURCE_HTC;
    train_tm(&task, schedule, budget, seeds)
}

/// Fine-tune every layer of every source segment on `task` with Adam.
pub fn adapt_tl(
    source: &StitchedModel,
    task: &TaskSpec,
    budget: &SegmentBudget,
    epochs: u64,
    seed: u64,
) -> Result<(StitchedModel, TrainReport)> {
    let spec = AdaptSpec {
        counts: budget.counts,
        weights: budget.weights,
        scaling: budget.scaling,
        epochs,
        optimizers: vec![Finetune::Adam { lr: budget.lr }; source.segments.len()],
        trainable: None,
    };
    adapt_chain(source, task, &spec, seed, "tl")
}

/// Tasks of the multi-task network; task `i` owns outputs `2i` and `2i+1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MtlHeadMap {
    pub htc: Vec<(f64, f64)>,
}

impl Default for MtlHeadMap {
    fn default() -> Self {
        Self {
            htc: vec![(60.0, 20.0), (120.0, 70.0), (80.0, 40.0)],
        }
    }
}

impl MtlHeadMap {
    pub fn output_dim(&self) -> usize {
        2 * self.htc.len()
    }

    pub fn tasks(&self, base: &TaskSpec) -> Vec<TaskSpec> {
        self.htc
            .iter()
            .map(|&(top, bottom)| {
                let mut t = base.clone();
                t.h_top = top;
                t.h_bottom = bottom;
                t
            })
            .collect()
    }

    /// Head whose HTC pair is nearest to `task`'s; ties go to the lower index.
    pub fn donor(&self, task: &TaskSpec) -> Result<usize> {
        let dist = |&(a, b): &(f64, f64)| (a - task.h_top).hypot(b - task.h_bottom);
        let mut best: Option<(usize, f64)> = None;
        for (i, pair) in self.htc.iter().enumerate() {
            let d = dist(pair);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best.map(|(i, _)| i)
            .ok_or_else(|| Error::InvalidArgument("MTL head map is empty".into()))
    }
}

/// Shared trunk with one output pair per task, trained by time marching on
/// the summed task losses.
pub fn train_mtl(
    base: &TaskSpec,
    map: &MtlHeadMap,
    schedule: &SegmentSchedule,
    budget: &SegmentBudget,
    seeds: Seeds,
) -> Result<(StitchedModel, TrainReport)> {
    let mut budget = budget.clone();
    budget.arch = budget.arch.with_outputs(map.output_dim());
    train_marching(&map.tasks(base), schedule, None, &budget, seeds, "mtl")
}

/// Reduce the output layer to the donor's pair and fine-tune only that
/// layer with Adam; the hidden layers stay bit-identical.
pub fn adapt_mtl(
    model: &StitchedModel,
    map: &MtlHeadMap,
    task: &TaskSpec,
    budget: &SegmentBudget,
    epochs: u64,
    seed: u64,
) -> Result<(StitchedModel, TrainReport)> {
    if model.heads() != map.htc.len() {
        return Err(Error::InvalidArgument(format!(
            "model has {} heads, map lists {} tasks",
            model.heads(),
            map.htc.len()
        )));
    }
    let reduced = model.extract_head(map.donor(task)?)?;
    let spec = AdaptSpec {
        counts: budget.counts,
        weights: budget.weights,
        scaling: budget.scaling,
        epochs,
        optimizers: vec![Finetune::Adam { lr: budget.lr }; reduced.segments.len()],
        trainable: Some(reduced.arch().output_layer_range()),
    };
    adapt_chain(&reduced, task, &spec, seed, "mtl")
}
