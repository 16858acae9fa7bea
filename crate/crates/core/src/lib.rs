//! Sequential meta-transfer training of physics-informed networks for the
//! one-dimensional autoclave cure problem.

pub mod baselines;
pub mod error;
pub mod meta;
pub mod net;
pub mod physics;
pub mod scalar;
pub mod sequential;
pub mod solver;
pub mod training;

pub use error::{Error, Result};
