use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a boundary-point count is split between the two faces.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryCount {
    /// The count applies to each face.
    #[default]
    PerSide,
    /// The count is the total over both faces.
    Total,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointCounts {
    pub collocation: usize,
    pub boundary: usize,
    pub initial: usize,
    #[serde(default)]
    pub boundary_mode: BoundaryCount,
}

impl PointCounts {
    pub fn new(collocation: usize, boundary: usize, initial: usize) -> Self {
        Self {
            collocation,
            boundary,
            initial,
            boundary_mode: BoundaryCount::PerSide,
        }
    }

    pub fn per_side(&self) -> usize {
        match self.boundary_mode {
            BoundaryCount::PerSide => self.boundary,
            BoundaryCount::Total => self.boundary.div_ceil(2),
        }
    }
}

/// Training points of one time segment, in physical units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointSet {
    pub t_lo: f64,
    pub t_hi: f64,
    pub length: f64,
    /// `(t, x)` collocation points.
    pub collocation: Vec<(f64, f64)>,
    /// Times on the top face (x = L).
    pub boundary_top: Vec<f64>,
    /// Times on the bottom face (x = 0).
    pub boundary_bottom: Vec<f64>,
    /// Positions on the initial line `t = t_lo`.
    pub initial: Vec<f64>,
}

impl PointSet {
    pub fn n_r(&self) -> usize {
        self.collocation.len()
    }

    pub fn n_bc(&self) -> usize {
        self.boundary_top.len() + self.boundary_bottom.len()
    }

    pub fn n_ic(&self) -> usize {
        self.initial.len()
    }
}

/// Uniform random points in `[t_lo, t_hi] x [0, length]`.
pub fn sample_points(
    t_lo: f64,
    t_hi: f64,
    length: f64,
    counts: PointCounts,
    seed: u64,
) -> Result<PointSet> {
    if !(t_hi > t_lo) || !t_lo.is_finite() || !t_hi.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "empty segment [{t_lo}, {t_hi}]"
        )));
    }
    if counts.collocation == 0 || counts.boundary == 0 || counts.initial == 0 {
        return Err(Error::InvalidArgument(
            "point counts must be positive".into(),
        ));
    }
    if !(length > 0.0) {
        return Err(Error::InvalidArgument(
            "part length must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let collocation = (0..counts.collocation)
        .map(|_| (rng.gen_range(t_lo..=t_hi), rng.gen_range(0.0..=length)))
        .collect();
    let per_side = counts.per_side();
    let boundary_top = (0..per_side).map(|_| rng.gen_range(t_lo..=t_hi)).collect();
    let boundary_bottom = (0..per_side).map(|_| rng.gen_range(t_lo..=t_hi)).collect();
    let initial = (0..counts.initial)
        .map(|_| rng.gen_range(0.0..=length))
        .collect();
    Ok(PointSet {
        t_lo,
        t_hi,
        length,
        collocation,
        boundary_top,
        boundary_bottom,
        initial,
    })
}
