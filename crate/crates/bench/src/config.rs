//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use smt_core::baselines::MtlHeadMap;
use smt_core::meta::{MetaConfig, TaskDistribution};
use smt_core::physics::TaskSpec;
use smt_core::sequential::{AdaptiveConfig, Epsilon, SegmentBudget, SegmentSchedule};
use smt_core::solver::Grid;

use crate::error::{BenchError, Result};
use crate::metrics::EvalGrid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pinn,
    Tm,
    Bcpinn,
    Smt,
    Tl,
    Mtl,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Pinn => "pinn",
            Method::Tm => "tm",
            Method::Bcpinn => "bcpinn",
            Method::Smt => "smt",
            Method::Tl => "tl",
            Method::Mtl => "mtl",
        }
    }

    /// Methods that are trained once and then adapted to target tasks.
    pub fn adapts(self) -> bool {
        matches!(self, Method::Smt | Method::Tl | Method::Mtl)
    }
}

impl std::str::FromStr for Method {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "pinn" => Method::Pinn,
            "tm" => Method::Tm,
            "bcpinn" => Method::Bcpinn,
            "smt" => Method::Smt,
            "tl" => Method::Tl,
            "mtl" => Method::Mtl,
            other => return Err(BenchError::Config(format!("unknown method `{other}`"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub initial_n: usize,
    /// Adaptive halving; used by `tm` only.
    pub adaptive: bool,
    pub epsilon: Epsilon,
    /// Seconds; unset means `t_end / 64`.
    pub min_len: Option<f64>,
    /// Explicit boundaries, overriding `initial_n` for the fixed-schedule
    /// methods.
    pub boundaries: Option<Vec<f64>>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            initial_n: 10,
            adaptive: true,
            epsilon: Epsilon::default(),
            min_len: None,
            boundaries: None,
        }
    }
}

impl ScheduleConfig {
    pub fn fixed(&self, t_end: f64) -> smt_core::Result<SegmentSchedule> {
        match &self.boundaries {
            Some(b) => SegmentSchedule::from_boundaries(b.clone()),
            None => SegmentSchedule::uniform(t_end, self.initial_n),
        }
    }

    pub fn adaptive_config(&self) -> AdaptiveConfig {
        AdaptiveConfig {
            epsilon: self.epsilon,
            min_len: self.min_len,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Target {
    pub label: String,
    pub h_top: f64,
    pub h_bottom: f64,
}

impl Target {
    pub fn task(&self, base: &TaskSpec) -> TaskSpec {
        let mut t = base.clone();
        t.h_top = self.h_top;
        t.h_bottom = self.h_bottom;
        t
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptConfig {
    pub targets: Vec<Target>,
    /// Adaptation-epoch sweep; every entry restarts from the trained model.
    pub epochs: Vec<u64>,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            targets: vec![Target {
                label: "sym50".into(),
                h_top: 50.0,
                h_bottom: 50.0,
            }],
            epochs: vec![1, 100, 1000],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub nx: usize,
    pub dt: f64,
    /// Defaults to `<output_dir>/oracle`.
    pub cache_dir: Option<PathBuf>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            nx: 41,
            dt: 0.5,
            cache_dir: None,
        }
    }
}

impl OracleConfig {
    pub fn grid(&self, task: &TaskSpec) -> smt_core::Result<Grid> {
        Grid::new(self.nx, self.dt, task.t_end())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Training task for `pinn`, `tm` and `bcpinn`; base task (cure cycle,
    /// material, kinetics) for the adapting methods.
    pub task: TaskSpec,
    pub schedule: ScheduleConfig,
    pub budget: SegmentBudget,
    /// Epochs of the single `pinn` network; unset means
    /// `segments x budget.epochs`.
    pub pinn_epochs: Option<u64>,
    pub bcpinn_memory: usize,
    pub meta: MetaConfig,
    pub distribution: TaskDistribution,
    pub mtl: MtlHeadMap,
    pub adapt: AdaptConfig,
    pub oracle: OracleConfig,
    pub eval: EvalGrid,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            method: Method::Tm,
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            task: TaskSpec::default(),
            schedule: ScheduleConfig::default(),
            budget: SegmentBudget::default(),
            pinn_epochs: None,
            bcpinn_memory: 500,
            meta: MetaConfig::default(),
            distribution: TaskDistribution::default(),
            mtl: MtlHeadMap::default(),
            adapt: AdaptConfig::default(),
            oracle: OracleConfig::default(),
            eval: EvalGrid::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(BenchError::Config(m));
        self.task.validate()?;
        self.oracle.grid(&self.task)?;
        if self.schedule.initial_n == 0 {
            return bad("schedule.initial_n must be positive".into());
        }
        if let Some(b) = &self.schedule.boundaries {
            let s = SegmentSchedule::from_boundaries(b.clone())?;
            if (s.t_end() - self.task.t_end()).abs() > 1e-9 {
                return bad(format!(
                    "schedule ends at {} s, cycle at {} s",
                    s.t_end(),
                    self.task.t_end()
                ));
            }
        }
        if self.eval.nt < 2 || self.eval.nx < 2 {
            return bad("eval grid needs at least 2x2 points".into());
        }
        match self.method {
            Method::Bcpinn if self.bcpinn_memory == 0 => {
                return bad("bcpinn needs bcpinn_memory > 0".into())
            }
            Method::Pinn if self.pinn_epochs == Some(0) => {
                return bad("pinn_epochs must be positive".into())
            }
            Method::Smt => {
                self.meta.validate()?;
                self.distribution.validate()?;
            }
            Method::Mtl if self.mtl.htc.is_empty() => {
                return bad("mtl needs at least one task".into())
            }
            _ => {}
        }
        if self.method.adapts() {
            if self.adapt.targets.is_empty() {
                return bad(format!("{} needs adapt.targets", self.method.name()));
            }
            if self.adapt.epochs.is_empty() {
                return bad(format!("{} needs adapt.epochs", self.method.name()));
            }
            let mut labels: Vec<&str> = self
                .adapt
                .targets
                .iter()
                .map(|t| t.label.as_str())
                .collect();
            labels.sort_unstable();
            if labels.windows(2).any(|w| w[0] == w[1]) || labels.iter().any(|l| !valid_label(l)) {
                return bad("target labels must be unique and use [A-Za-z0-9_-]".into());
            }
        }
        Ok(())
    }

    /// SHA-256 of the config with the location fields cleared, so the
    /// same experiment hashes equally wherever it is written.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.oracle.cache_dir = None;
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(&c)?)))
    }

    pub fn oracle_dir(&self) -> PathBuf {
        self.oracle
            .cache_dir
            .clone()
            .unwrap_or_else(|| self.output_dir.join("oracle"))
    }
}

fn valid_label(l: &str) -> bool {
    !l.is_empty()
        && l.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}
