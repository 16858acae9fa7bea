//! Finite-difference reference solution of the coupled heat/cure system.
//!
//! Method of lines: second-order central differences in `x` with ghost nodes
//! carrying the Robin conditions, classic RK4 in time for `T` and `α`
//! together.

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{cure_rate_clamped, TaskSpec, KELVIN_OFFSET};

/// Largest `dt·|λ|` accepted for RK4 on the diffusion operator (the real-axis
/// stability limit is about 2.785).
const RK4_STABILITY: f64 = 2.6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    /// Spatial nodes over `[0, L]`.
    pub nx: usize,
    /// Time step, s.
    pub dt: f64,
    pub t_end: f64,
    /// Store a snapshot every this many seconds (rounded to whole steps).
    #[serde(default = "default_output_interval")]
    pub output_interval: f64,
}

fn default_output_interval() -> f64 {
    60.0
}

impl Grid {
    pub fn new(nx: usize, dt: f64, t_end: f64) -> Result<Self> {
        let g = Self {
            nx,
            dt,
            t_end,
            output_interval: default_output_interval(),
        };
        g.validate()?;
        Ok(g)
    }

    pub fn with_output_interval(mut self, seconds: f64) -> Self {
        self.output_interval = seconds;
        self
    }

    /// Default resolution for a task: 101 nodes, 0.1 s.
    pub fn for_task(task: &TaskSpec) -> Self {
        Self {
            nx: 101,
            dt: 0.1,
            t_end: task.t_end(),
            output_interval: default_output_interval(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 3 {
            return Err(Error::InvalidArgument("grid needs nx >= 3".into()));
        }
        if !(self.dt > 0.0) || !(self.t_end > 0.0) || !(self.output_interval > 0.0) {
            return Err(Error::InvalidArgument(
                "dt, t_end and output interval must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn dx(&self, length: f64) -> f64 {
        length / (self.nx - 1) as f64
    }

    /// Spectral bound of the semi-discrete operator times `dt`.
    pub fn stability_number(&self, task: &TaskSpec) -> f64 {
        let m = &task.material;
        let dx = self.dx(m.length);
        let h = task.h_top.max(task.h_bottom);
        let kappa = m.diffusivity();
        self.dt * (4.0 * kappa / (dx * dx) + 2.0 * h / (m.heat_capacity() * dx))
    }

    pub fn check_stability(&self, task: &TaskSpec) -> Result<()> {
        let s = self.stability_number(task);
        if s > RK4_STABILITY {
            return Err(Error::InvalidArgument(format!(
                "time step {} s violates RK4 stability (dt·|λ| = {s:.3} > {RK4_STABILITY})",
                self.dt
            )));
        }
        Ok(())
    }
}

/// Gridded `T` (°C) and `α` fields, row-major `times x positions`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionField {
    pub times: Vec<f64>,
    pub positions: Vec<f64>,
    pub temp: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl SolutionField {
    pub fn nt(&self) -> usize {
        self.times.len()
    }

    pub fn nx(&self) -> usize {
        self.positions.len()
    }

    #[inline]
    pub fn temp_at(&self, it: usize, ix: usize) -> f64 {
        self.temp[it * self.nx() + ix]
    }

    #[inline]
    pub fn alpha_at(&self, it: usize, ix: usize) -> f64 {
        self.alpha[it * self.nx() + ix]
    }

    /// Time series at the node nearest to `x`.
    pub fn node_series(&self, x: f64) -> (Vec<f64>, Vec<f64>) {
        let ix = nearest(&self.positions, x);
        (0..self.nt())
            .map(|it| (self.temp_at(it, ix), self.alpha_at(it, ix)))
            .unzip()
    }

    /// Write `t,x,T,alpha` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "t,x,T,alpha")?;
        for (it, t) in self.times.iter().enumerate() {
            for (ix, x) in self.positions.iter().enumerate() {
                writeln!(
                    w,
                    "{t:?},{x:?},{:?},{:?}",
                    self.temp_at(it, ix),
                    self.alpha_at(it, ix)
                )?;
            }
        }
        w.flush()?;
        Ok(())
    }

    const MAGIC: &'static [u8; 8] = b"SMTFLD01";

    /// Little-endian binary: magic, `nt`, `nx` (u64), then times, positions,
    /// T, alpha as f64 arrays.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        w.write_all(Self::MAGIC)?;
        w.write_all(&(self.nt() as u64).to_le_bytes())?;
        w.write_all(&(self.nx() as u64).to_le_bytes())?;
        for v in self
            .times
            .iter()
            .chain(&self.positions)
            .chain(&self.temp)
            .chain(&self.alpha)
        {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < 24 || &bytes[..8] != Self::MAGIC {
            return Err(Error::Format("not a solution-field cache".into()));
        }
        let word = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().expect("8 bytes"));
        let nt = word(8) as usize;
        let nx = word(16) as usize;
        let total = nt + nx + 2 * nt * nx;
        if bytes.len() != 24 + 8 * total {
            return Err(Error::Format(
                "solution-field cache has wrong length".into(),
            ));
        }
        let mut vals = (0..total).map(|k| {
            f64::from_le_bytes(bytes[24 + 8 * k..32 + 8 * k].try_into().expect("8 bytes"))
        });
        let mut take = |n: usize| -> Vec<f64> { vals.by_ref().take(n).collect() };
        Ok(Self {
            times: take(nt),
            positions: take(nx),
            temp: take(nt * nx),
            alpha: take(nt * nx),
        })
    }
}

fn nearest(v: &[f64], x: f64) -> usize {
    v.iter()
        .enumerate()
        .min_by(|a, b| (a.1 - x).abs().total_cmp(&(b.1 - x).abs()))
        .map_or(0, |(i, _)| i)
}

/// Integrate the coupled system on `grid`.
pub fn solve(task: &TaskSpec, grid: &Grid) -> Result<SolutionField> {
    task.validate()?;
    grid.validate()?;
    grid.check_stability(task)?;

    let nx = grid.nx;
    let m = &task.material;
    let kin = &task.kinetics;
    let dx = grid.dx(m.length);
    let kappa_dx2 = m.diffusivity() / (dx * dx);
    let heat_gain = m.reaction_heat() / m.heat_capacity();
    let bi_bottom = 2.0 * dx * task.h_bottom / m.kxx;
    let bi_top = 2.0 * dx * task.h_top / m.kxx;

    let n_steps = (grid.t_end / grid.dt).round().max(1.0) as usize;
    let dt = grid.t_end / n_steps as f64;
    let save_every = ((grid.output_interval / dt).round() as usize).max(1);

    // state: T[0..nx], alpha[0..nx]
    let rhs = |t: f64, y: &[f64], out: &mut [f64]| {
        let (temp, alpha) = y.split_at(nx);
        let (d_temp, d_alpha) = out.split_at_mut(nx);
        let ta = task.cycle.eval_clamped(t);
        for i in 0..nx {
            let left = if i == 0 {
                temp[1] - bi_bottom * (temp[0] - ta)
            } else {
                temp[i - 1]
            };
            let right = if i == nx - 1 {
                temp[nx - 2] + bi_top * (ta - temp[nx - 1])
            } else {
                temp[i + 1]
            };
            let rate = cure_rate_clamped(alpha[i], temp[i] + KELVIN_OFFSET, kin);
            d_alpha[i] = rate;
            d_temp[i] = kappa_dx2 * (left - 2.0 * temp[i] + right) + heat_gain * rate;
        }
    };

    let mut y = vec![task.t0; 2 * nx];
    y[nx..].fill(task.alpha0);
    let mut k1 = vec![0.0; 2 * nx];
    let mut k2 = vec![0.0; 2 * nx];
    let mut k3 = vec![0.0; 2 * nx];
    let mut k4 = vec![0.0; 2 * nx];
    let mut stage = vec![0.0; 2 * nx];

    let positions: Vec<f64> = (0..nx).map(|i| i as f64 * dx).collect();
    let mut times = vec![0.0];
    let mut temp_out = y[..nx].to_vec();
    let mut alpha_out = y[nx..].to_vec();

    for step in 0..n_steps {
        let t = step as f64 * dt;
        rhs(t, &y, &mut k1);
        for i in 0..2 * nx {
            stage[i] = y[i] + 0.5 * dt * k1[i];
        }
        rhs(t + 0.5 * dt, &stage, &mut k2);
        for i in 0..2 * nx {
            stage[i] = y[i] + 0.5 * dt * k2[i];
        }
        rhs(t + 0.5 * dt, &stage, &mut k3);
        for i in 0..2 * nx {
            stage[i] = y[i] + dt * k3[i];
        }
        rhs(t + dt, &stage, &mut k4);
        for i in 0..2 * nx {
            y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Unstable {
                step: step + 1,
                time: t + dt,
            });
        }
        if (step + 1) % save_every == 0 || step + 1 == n_steps {
            times.push(if step + 1 == n_steps {
                grid.t_end
            } else {
                (step + 1) as f64 * dt
            });
            temp_out.extend_from_slice(&y[..nx]);
            alpha_out.extend_from_slice(&y[nx..]);
        }
    }

    Ok(SolutionField {
        times,
        positions,
        temp: temp_out,
        alpha: alpha_out,
    })
}

fn bracket(v: &[f64], x: f64) -> (usize, f64) {
    let n = v.len();
    if n == 1 {
        return (0, 0.0);
    }
    let i = match v.binary_search_by(|p| p.total_cmp(&x)) {
        Ok(i) => i.min(n - 2),
        Err(i) => i.saturating_sub(1).min(n - 2),
    };
    let w = (x - v[i]) / (v[i + 1] - v[i]);
    (i, w)
}

/// Bilinear interpolation of `(T °C, α)` at `(t, x)`.
pub fn sample(field: &SolutionField, t: f64, x: f64) -> Result<(f64, f64)> {
    let (t0, t1) = (field.times[0], *field.times.last().expect("non-empty"));
    let (x0, x1) = (
        field.positions[0],
        *field.positions.last().expect("non-empty"),
    );
    if !(t0..=t1).contains(&t) {
        return Err(Error::OutOfDomain {
            what: "time",
            value: t,
            lo: t0,
            hi: t1,
        });
    }
    if !(x0..=x1).contains(&x) {
        return Err(Error::OutOfDomain {
            what: "position",
            value: x,
            lo: x0,
            hi: x1,
        });
    }
    let (it, wt) = bracket(&field.times, t);
    let (ix, wx) = bracket(&field.positions, x);
    let it1 = (it + 1).min(field.nt() - 1);
    let ix1 = (ix + 1).min(field.nx() - 1);
    let lerp2 = |f: &dyn Fn(usize, usize) -> f64| {
        let a = f(it, ix) * (1.0 - wx) + f(it, ix1) * wx;
        let b = f(it1, ix) * (1.0 - wx) + f(it1, ix1) * wx;
        a * (1.0 - wt) + b * wt
    };
    Ok((
        lerp2(&|i, j| field.temp_at(i, j)),
        lerp2(&|i, j| field.alpha_at(i, j)),
    ))
}

/// 64-bit FNV-1a over the JSON encoding of `(task, grid)`; names the
/// binary cache file.
pub fn cache_key(task: &TaskSpec, grid: &Grid) -> String {
    let json = serde_json::to_string(&(task, grid)).expect("task and grid serialize");
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in json.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

/// Solve, or reuse a cached field under `dir`.
pub fn solve_cached(task: &TaskSpec, grid: &Grid, dir: &Path) -> Result<SolutionField> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("field-{}.bin", cache_key(task, grid)));
    if path.exists() {
        if let Ok(f) = SolutionField::read_binary(&path) {
            return Ok(f);
        }
    }
    let f = solve(task, grid)?;
    f.write_binary(&path)?;
    Ok(f)
}

/// Time window in which the degree of cure at position `x` rises from `lo`
/// to `hi` (linear interpolation between stored snapshots).
pub fn cure_transition_window(
    field: &SolutionField,
    x: f64,
    lo: f64,
    hi: f64,
) -> Option<(f64, f64)> {
    let (_, alpha) = field.node_series(x);
    let crossing = |level: f64| {
        alpha.windows(2).enumerate().find_map(|(i, w)| {
            (w[0] < level && w[1] >= level).then(|| {
                let f = (level - w[0]) / (w[1] - w[0]);
                field.times[i] + f * (field.times[i + 1] - field.times[i])
            })
        })
    };
    Some((crossing(lo)?, crossing(hi)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::CureCycle;

    fn short_task() -> TaskSpec {
        let mut t = TaskSpec::with_htc(80.0, 80.0);
        t.cycle = CureCycle::new(vec![(0.0, 20.0), (1200.0, 60.0), (2400.0, 60.0)]).unwrap();
        t
    }

    #[test]
    fn equilibrium_stays_constant() {
        let mut task = TaskSpec::with_htc(50.0, 50.0);
        task.material.h_r = 0.0;
        task.cycle = CureCycle::constant(20.0, 600.0);
        let f = solve(&task, &Grid::new(21, 0.5, 600.0).unwrap()).unwrap();
        assert!(f.temp.iter().all(|&v| (v - 20.0).abs() < 1e-12));
    }

    #[test]
    fn heat_up_is_monotone_and_bounded() {
        let mut task = TaskSpec::with_htc(70.0, 40.0);
        task.material.h_r = 0.0;
        task.cycle = CureCycle::constant(120.0, 3000.0);
        let f = solve(
            &task,
            &Grid::new(31, 0.5, 3000.0)
                .unwrap()
                .with_output_interval(30.0),
        )
        .unwrap();
        for ix in 0..f.nx() {
            for it in 1..f.nt() {
                assert!(f.temp_at(it, ix) >= f.temp_at(it - 1, ix) - 1e-12);
                assert!(f.temp_at(it, ix) <= 120.0 + 1e-12);
            }
        }
    }

    #[test]
    fn alpha_monotone_and_bounded() {
        let f = solve(&short_task(), &Grid::new(21, 0.5, 2400.0).unwrap()).unwrap();
        for ix in 0..f.nx() {
            for it in 1..f.nt() {
                assert!(f.alpha_at(it, ix) >= f.alpha_at(it - 1, ix));
            }
        }
        assert!(f.alpha.iter().all(|&a| (0.001..1.0).contains(&a)));
    }

    #[test]
    fn unstable_step_rejected() {
        let task = short_task();
        assert!(solve(&task, &Grid::new(101, 5.0, 2400.0).unwrap()).is_err());
    }

    #[test]
    fn sample_hits_nodes_and_interpolates() {
        let f = SolutionField {
            times: vec![0.0, 10.0],
            positions: vec![0.0, 1.0, 2.0],
            temp: vec![0.0, 1.0, 2.0, 10.0, 11.0, 12.0],
            alpha: vec![0.1, 0.1, 0.1, 0.3, 0.3, 0.3],
        };
        assert_eq!(sample(&f, 10.0, 1.0).unwrap(), (11.0, 0.3));
        assert_eq!(sample(&f, 0.0, 2.0).unwrap(), (2.0, 0.1));
        let (t, a) = sample(&f, 5.0, 0.5).unwrap();
        assert!((t - 5.5).abs() < 1e-12 && (a - 0.2).abs() < 1e-12);
        assert!(sample(&f, 11.0, 0.0).is_err());
        assert!(sample(&f, 1.0, -0.1).is_err());
    }

    #[test]
    fn binary_cache_round_trip() {
        let task = short_task();
        let grid = Grid::new(11, 1.0, 600.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let a = solve_cached(&task, &grid, dir.path()).unwrap();
        let b = solve_cached(&task, &grid, dir.path()).unwrap();
        assert_eq!(a, b);
        let csv = dir.path().join("f.csv");
        a.write_csv(&csv).unwrap();
        let text = std::fs::read_to_string(csv).unwrap();
        assert!(text.starts_with("t,x,T,alpha\n"));
        assert_eq!(text.lines().count(), 1 + a.nt() * a.nx());
    }
}
