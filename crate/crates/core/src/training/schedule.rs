use serde::{Deserialize, Serialize};

/// Learning rate as a function of the step count.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant {
        lr: f64,
    },
    /// Staircase `lr0 · rate^floor(step / every)`.
    ExpDecay {
        lr0: f64,
        rate: f64,
        every: u64,
    },
}

pub const DEFAULT_LR: f64 = 1e-5;

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule::exp_decay(DEFAULT_LR)
    }
}

impl LrSchedule {
    pub fn exp_decay(lr0: f64) -> Self {
        LrSchedule::ExpDecay {
            lr0,
            rate: 0.9,
            every: 5000,
        }
    }

    pub fn lr(&self, step: u64) -> f64 {
        match *self {
            LrSchedule::Constant { lr } => lr,
            LrSchedule::ExpDecay { lr0, rate, every } => {
                lr0 * rate.powi((step / every.max(1)) as i32)
            }
        }
    }

    pub fn initial(&self) -> f64 {
        self.lr(0)
    }

    pub fn is_valid(&self) -> bool {
        match *self {
            LrSchedule::Constant { lr } => lr >= 0.0 && lr.is_finite(),
            LrSchedule::ExpDecay { lr0, rate, every } => {
                lr0 >= 0.0 && lr0.is_finite() && rate > 0.0 && rate <= 1.0 && every > 0
            }
        }
    }
}

/// Divides the rate by `factor` whenever the monitored loss has not improved
/// for `patience` consecutive observations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepAnneal {
    pub lr: f64,
    pub factor: f64,
    pub patience: u64,
    pub best: f64,
    pub since_best: u64,
    pub drops: u32,
}

impl StepAnneal {
    pub fn new(lr: f64, patience: u64) -> Self {
        Self {
            lr,
            factor: 10.0,
            patience,
            best: f64::INFINITY,
            since_best: 0,
            drops: 0,
        }
    }

    /// Record one loss observation and return the rate to use next.
    pub fn observe(&mut self, loss: f64) -> f64 {
        if loss < self.best {
            self.best = loss;
            self.since_best = 0;
        } else {
            self.since_best += 1;
            if self.since_best >= self.patience {
                self.lr /= self.factor;
                self.drops += 1;
                self.since_best = 0;
            }
        }
        self.lr
    }
}
