//! Physics-informed loss of the cure problem.
//!
//! Residuals are formed in physical units from the normalized network jets
//! (chain-rule factors of [`Normalization`]) and then divided by the
//! characteristic scale of each equation, unless [`ResidualScaling::Physical`]
//! is requested.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::jet::{self, JetOrder, OutputAdjoint, C_DT, C_DX, C_DXX, C_VAL};
use crate::net::{NetworkArch, NetworkParams, Objective};
use crate::physics::{cure_rate_generic, TaskSpec, KELVIN_OFFSET};
use crate::scalar::{Dual, Scalar};
use crate::training::points::PointSet;

/// Affine maps between physical and network coordinates of one segment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub t_lo: f64,
    pub t_hi: f64,
    /// Position scale, m (the part thickness).
    pub x_scale: f64,
    /// Temperature scale, K; the network predicts `T[°C] / temp_scale`.
    pub temp_scale: f64,
}

pub const DEFAULT_TEMP_SCALE: f64 = 200.0;

impl Normalization {
    pub fn new(t_lo: f64, t_hi: f64, x_scale: f64) -> Result<Self> {
        let n = Self {
            t_lo,
            t_hi,
            x_scale,
            temp_scale: DEFAULT_TEMP_SCALE,
        };
        n.validate()?;
        Ok(n)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_hi > self.t_lo) || !(self.x_scale > 0.0) || !(self.temp_scale > 0.0) {
            return Err(Error::InvalidArgument(
                "normalization needs t_hi > t_lo and positive scales".into(),
            ));
        }
        Ok(())
    }

    pub fn span(&self) -> f64 {
        self.t_hi - self.t_lo
    }

    #[inline]
    pub fn t_n(&self, t: f64) -> f64 {
        (t - self.t_lo) / self.span()
    }

    #[inline]
    pub fn x_n(&self, x: f64) -> f64 {
        x / self.x_scale
    }

    #[inline]
    pub fn temp_n(&self, temp_c: f64) -> f64 {
        temp_c / self.temp_scale
    }

    /// `(T °C, α)` from network outputs.
    #[inline]
    pub fn denormalize(&self, t_hat: f64, alpha_hat: f64) -> (f64, f64) {
        (t_hat * self.temp_scale, alpha_hat)
    }

    /// Map a network trained under `self` to expect inputs under `next`
    /// without changing the function it computes in physical time.
    pub fn transfer(&self, params: &mut NetworkParams, next: &Normalization) {
        params.reparameterize_time((self.t_lo, self.span()), (next.t_lo, next.span()));
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualScaling {
    /// Each residual divided by its characteristic magnitude:
    /// heat equation by `ρCp·T_s/Δt`, cure ODE by `1/Δt`, Robin conditions by
    /// `k_xx·T_s/L`, initial temperature by `T_s`.
    #[default]
    Characteristic,
    /// As [`ResidualScaling::Characteristic`], except each Robin condition is
    /// divided by its own convective scale `h·T_s`, so boundary mismatch is
    /// read as a temperature error.
    Convective,
    /// Raw physical units (W/m³, 1/s, W/m², °C).
    Physical,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub ic_temp: f64,
    pub ic_alpha: f64,
    pub bc_top: f64,
    pub bc_bottom: f64,
    pub r_temp: f64,
    pub r_alpha: f64,
    /// Memory (previous segments) term, bcPINN only.
    pub memory: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            ic_temp: 100.0,
            ic_alpha: 100.0,
            bc_top: 1.0,
            bc_bottom: 1.0,
            r_temp: 1.0,
            r_alpha: 1.0,
            memory: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.ic_temp,
            self.ic_alpha,
            self.bc_top,
            self.bc_bottom,
            self.r_temp,
            self.r_alpha,
            self.memory,
        ];
        if all.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidArgument(
                "loss weights must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Initial/boundary terms only.
    pub fn without_residuals(mut self) -> Self {
        self.r_temp = 0.0;
        self.r_alpha = 0.0;
        self
    }
}

/// Unweighted loss components and their weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub ic_temp: f64,
    pub ic_alpha: f64,
    pub bc_top: f64,
    pub bc_bottom: f64,
    pub r_temp: f64,
    pub r_alpha: f64,
    pub memory: Option<f64>,
}

impl LossBreakdown {
    /// Weighted sum of the components.
    pub fn reassemble(&self, w: &LossWeights) -> f64 {
        w.ic_temp * self.ic_temp
            + w.ic_alpha * self.ic_alpha
            + w.bc_top * self.bc_top
            + w.bc_bottom * self.bc_bottom
            + w.r_temp * self.r_temp
            + w.r_alpha * self.r_alpha
            + self.memory.map_or(0.0, |m| w.memory * m)
    }

    pub fn ic_bc(&self, w: &LossWeights) -> f64 {
        w.ic_temp * self.ic_temp
            + w.ic_alpha * self.ic_alpha
            + w.bc_top * self.bc_top
            + w.bc_bottom * self.bc_bottom
    }
}

/// Initial-condition targets on the initial line of a segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum IcTargets {
    /// Uniform `(T0 °C, α0)`.
    Uniform { temp: f64, alpha: f64 },
    /// Per initial point `(T °C, α)`, aligned with [`PointSet::initial`].
    Values(Vec<(f64, f64)>),
}

impl IcTargets {
    pub fn from_task(task: &TaskSpec) -> Self {
        IcTargets::Uniform {
            temp: task.t0,
            alpha: task.alpha0,
        }
    }

    fn get(&self, i: usize) -> (f64, f64) {
        match self {
            IcTargets::Uniform { temp, alpha } => (*temp, *alpha),
            IcTargets::Values(v) => v[i],
        }
    }

    fn check(&self, n: usize) -> Result<()> {
        match self {
            IcTargets::Values(v) if v.len() != n => Err(Error::InvalidArgument(format!(
                "{} initial targets for {n} initial points",
                v.len()
            ))),
            _ => Ok(()),
        }
    }
}

/// Pseudo-label remembered from an earlier segment (bcPINN).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryPoint {
    pub t: f64,
    pub x: f64,
    pub t_hat: f64,
    pub alpha_hat: f64,
}

/// Everything needed to evaluate the loss of one task on one segment.
#[derive(Clone, Copy, Debug)]
pub struct PinnProblem<'a> {
    pub arch: NetworkArch,
    pub task: &'a TaskSpec,
    pub points: &'a PointSet,
    pub ic: &'a IcTargets,
    pub weights: LossWeights,
    pub norm: Normalization,
    pub scaling: ResidualScaling,
    /// Output pair `(2·head, 2·head + 1)` holds `(T̂, α̂)`.
    pub head: usize,
    pub memory: Option<&'a [MemoryPoint]>,
}

impl<'a> PinnProblem<'a> {
    pub fn new(
        arch: NetworkArch,
        task: &'a TaskSpec,
        points: &'a PointSet,
        ic: &'a IcTargets,
        weights: LossWeights,
        norm: Normalization,
    ) -> Self {
        Self {
            arch,
            task,
            points,
            ic,
            weights,
            norm,
            scaling: ResidualScaling::default(),
            head: 0,
            memory: None,
        }
    }

    pub fn with_memory(mut self, memory: &'a [MemoryPoint]) -> Self {
        self.memory = Some(memory);
        self
    }

    pub fn with_head(mut self, head: usize) -> Self {
        self.head = head;
        self
    }

    pub fn with_scaling(mut self, scaling: ResidualScaling) -> Self {
        self.scaling = scaling;
        self
    }

    pub fn with_weights(mut self, weights: LossWeights) -> Self {
        self.weights = weights;
        self
    }

    fn validate(&self) -> Result<()> {
        self.norm.validate()?;
        self.weights.validate()?;
        self.ic.check(self.points.n_ic())?;
        if 2 * self.head + 1 >= self.arch.output_dim {
            return Err(Error::InvalidArgument(format!(
                "head {} needs {} outputs, network has {}",
                self.head,
                2 * self.head + 2,
                self.arch.output_dim
            )));
        }
        Ok(())
    }

    /// Loss components at `params`.
    pub fn loss(&self, params: &[f64]) -> Result<LossBreakdown> {
        let (b, _) = self.evaluate::<f64>(params, false)?;
        Ok(b)
    }

    /// Loss components and gradient.
    pub fn loss_and_grad(&self, params: &[f64]) -> Result<(LossBreakdown, Vec<f64>)> {
        let (b, g) = self.evaluate::<f64>(params, true)?;
        Ok((b, g.expect("gradient requested")))
    }

    /// Generic evaluation; returns the breakdown (primal values), the total
    /// as `S` and optionally the gradient.
    pub fn evaluate_generic<S: Scalar>(
        &self,
        params: &[S],
        want_grad: bool,
    ) -> Result<(LossBreakdown, S, Option<Vec<S>>)> {
        self.validate()?;
        if params.len() != self.arch.parameter_count() {
            return Err(Error::InvalidArgument(
                "parameter vector length mismatch".into(),
            ));
        }
        let task = self.task;
        let mat = &task.material;
        let norm = &self.norm;
        let w = &self.weights;
        let (ht, ha) = (2 * self.head, 2 * self.head + 1);
        let ts = norm.temp_scale;
        let span = norm.span();
        let length = norm.x_scale;

        let conduction = mat.kxx * ts / length;
        let convective = |h: f64| if h > 0.0 { h * ts } else { conduction };
        let (sc_pde, sc_ode) = (mat.heat_capacity() * ts / span, 1.0 / span);
        let (sc_pde, sc_ode, sc_top, sc_bottom, sc_ic) = match self.scaling {
            ResidualScaling::Characteristic => (sc_pde, sc_ode, conduction, conduction, ts),
            ResidualScaling::Convective => (
                sc_pde,
                sc_ode,
                convective(task.h_top),
                convective(task.h_bottom),
                ts,
            ),
            ResidualScaling::Physical => (1.0, 1.0, 1.0, 1.0, 1.0),
        };

        let mut grad = want_grad.then(|| vec![S::zero(); params.len()]);
        let mut total = S::zero();
        let mut bd = LossBreakdown::default();

        // collocation: heat equation and cure ODE
        let pts = &self.points.collocation;
        if !pts.is_empty() {
            let tn: Vec<f64> = pts.iter().map(|p| norm.t_n(p.0)).collect();
            let xn: Vec<f64> = pts.iter().map(|p| norm.x_n(p.1)).collect();
            let tape = jet::forward(&self.arch, params, &tn, &xn, JetOrder::Full)?;
            let mut adj = OutputAdjoint::<S>::zeros(&tape, self.arch.output_dim);
            let n = pts.len() as f64;
            let c_t = mat.heat_capacity() * ts / span / sc_pde;
            let c_xx = mat.kxx * ts / (length * length) / sc_pde;
            let c_a = mat.reaction_heat() / span / sc_pde;
            let c_ode = 1.0 / span / sc_ode;
            let mut l_t = S::zero();
            let mut l_a = S::zero();
            for p in 0..pts.len() {
                let temp = tape.get(ht, C_VAL, p);
                let alpha = tape.get(ha, C_VAL, p);
                let r_t = tape.get(ht, C_DT, p).scale(c_t)
                    - tape.get(ht, C_DXX, p).scale(c_xx)
                    - tape.get(ha, C_DT, p).scale(c_a);
                let tk = temp.scale(ts) + S::from_f64(KELVIN_OFFSET);
                // the exact solution never drops below α0, so the kinetics
                // never need to see smaller values
                let floored = alpha.re() < task.alpha0;
                let alpha = if floored {
                    S::from_f64(task.alpha0)
                } else {
                    alpha
                };
                let by_alpha = cure_rate_generic(Dual::var(alpha), Dual::cst(tk), &task.kinetics);
                let by_temp = cure_rate_generic(Dual::cst(alpha), Dual::var(tk), &task.kinetics);
                let rate = by_alpha.re;
                let rate_da = if floored { S::zero() } else { by_alpha.eps };
                let r_a = tape.get(ha, C_DT, p).scale(c_ode) - rate.scale(1.0 / sc_ode);
                l_t += r_t * r_t;
                l_a += r_a * r_a;
                if grad.is_some() {
                    let g_t = r_t.scale(2.0 * w.r_temp / n);
                    let g_a = r_a.scale(2.0 * w.r_alpha / n);
                    adj.add(ht, C_DT, p, g_t.scale(c_t));
                    adj.add(ht, C_DXX, p, g_t.scale(-c_xx));
                    adj.add(ha, C_DT, p, g_t.scale(-c_a) + g_a.scale(c_ode));
                    adj.add(ha, C_VAL, p, -(g_a * rate_da).scale(1.0 / sc_ode));
                    adj.add(ht, C_VAL, p, -(g_a * by_temp.eps).scale(ts / sc_ode));
                }
            }
            let l_t = l_t.scale(1.0 / n);
            let l_a = l_a.scale(1.0 / n);
            bd.r_temp = finite(l_t, "r_T")?;
            bd.r_alpha = finite(l_a, "r_alpha")?;
            total += l_t.scale(w.r_temp) + l_a.scale(w.r_alpha);
            if let Some(g) = grad.as_mut() {
                jet::backward(&self.arch, params, &tape, &adj, g);
            }
        }

        // Robin conditions on both faces
        let top = &self.points.boundary_top;
        let bottom = &self.points.boundary_bottom;
        if !top.is_empty() || !bottom.is_empty() {
            let tn: Vec<f64> = top.iter().chain(bottom).map(|&t| norm.t_n(t)).collect();
            let xn: Vec<f64> = std::iter::repeat(1.0)
                .take(top.len())
                .chain(std::iter::repeat(0.0).take(bottom.len()))
                .collect();
            let tape = jet::forward(&self.arch, params, &tn, &xn, JetOrder::FirstX)?;
            let mut adj = OutputAdjoint::<S>::zeros(&tape, self.arch.output_dim);
            let k_flux = mat.kxx * ts / length;
            let mut l_top = S::zero();
            let mut l_bot = S::zero();
            for (p, &t) in top.iter().chain(bottom).enumerate() {
                let is_top = p < top.len();
                let ta = task.cycle.eval_clamped(t);
                let temp = tape.get(ht, C_VAL, p);
                let sc = if is_top { sc_top } else { sc_bottom };
                let c_flux = k_flux / sc;
                let flux = tape.get(ht, C_DX, p).scale(c_flux);
                // d r / d T̂
                let (r, dr_dtemp, n, wt) = if is_top {
                    let h = task.h_top / sc;
                    (
                        S::from_f64(h * ta) - temp.scale(h * ts) - flux,
                        -h * ts,
                        top.len() as f64,
                        w.bc_top,
                    )
                } else {
                    let h = task.h_bottom / sc;
                    (
                        temp.scale(h * ts) - S::from_f64(h * ta) - flux,
                        h * ts,
                        bottom.len() as f64,
                        w.bc_bottom,
                    )
                };
                if is_top {
                    l_top += r * r;
                } else {
                    l_bot += r * r;
                }
                if grad.is_some() {
                    let g = r.scale(2.0 * wt / n);
                    adj.add(ht, C_VAL, p, g.scale(dr_dtemp));
                    adj.add(ht, C_DX, p, g.scale(-c_flux));
                }
            }
            let l_top = if top.is_empty() {
                S::zero()
            } else {
                l_top.scale(1.0 / top.len() as f64)
            };
            let l_bot = if bottom.is_empty() {
                S::zero()
            } else {
                l_bot.scale(1.0 / bottom.len() as f64)
            };
            bd.bc_top = finite(l_top, "bc_top")?;
            bd.bc_bottom = finite(l_bot, "bc_bottom")?;
            total += l_top.scale(w.bc_top) + l_bot.scale(w.bc_bottom);
            if let Some(g) = grad.as_mut() {
                jet::backward(&self.arch, params, &tape, &adj, g);
            }
        }

        // initial line and remembered labels share one value-only batch
        let init = &self.points.initial;
        let mem = self.memory.unwrap_or(&[]);
        if !init.is_empty() || !mem.is_empty() {
            let t0n = norm.t_n(self.points.t_lo);
            let tn: Vec<f64> = std::iter::repeat(t0n)
                .take(init.len())
                .chain(mem.iter().map(|m| norm.t_n(m.t)))
                .collect();
            let xn: Vec<f64> = init
                .iter()
                .map(|&x| norm.x_n(x))
                .chain(mem.iter().map(|m| norm.x_n(m.x)))
                .collect();
            let tape = jet::forward(&self.arch, params, &tn, &xn, JetOrder::Value)?;
            let mut adj = OutputAdjoint::<S>::zeros(&tape, self.arch.output_dim);
            let (mut l_it, mut l_ia) = (S::zero(), S::zero());
            let ni = init.len() as f64;
            for p in 0..init.len() {
                let (temp_ic, alpha_ic) = self.ic.get(p);
                let r_t =
                    (tape.get(ht, C_VAL, p).scale(ts) - S::from_f64(temp_ic)).scale(1.0 / sc_ic);
                let r_a = tape.get(ha, C_VAL, p) - S::from_f64(alpha_ic);
                l_it += r_t * r_t;
                l_ia += r_a * r_a;
                if grad.is_some() {
                    adj.add(ht, C_VAL, p, r_t.scale(2.0 * w.ic_temp / ni * ts / sc_ic));
                    adj.add(ha, C_VAL, p, r_a.scale(2.0 * w.ic_alpha / ni));
                }
            }
            if !init.is_empty() {
                let l_it = l_it.scale(1.0 / ni);
                let l_ia = l_ia.scale(1.0 / ni);
                bd.ic_temp = finite(l_it, "ic_T")?;
                bd.ic_alpha = finite(l_ia, "ic_alpha")?;
                total += l_it.scale(w.ic_temp) + l_ia.scale(w.ic_alpha);
            }
            if self.memory.is_some() {
                let nm = mem.len() as f64;
                let mut l_m = S::zero();
                for (k, m) in mem.iter().enumerate() {
                    let p = init.len() + k;
                    let d_t = tape.get(ht, C_VAL, p) - S::from_f64(m.t_hat);
                    let d_a = tape.get(ha, C_VAL, p) - S::from_f64(m.alpha_hat);
                    l_m += d_t * d_t + d_a * d_a;
                    if grad.is_some() {
                        adj.add(ht, C_VAL, p, d_t.scale(2.0 * w.memory / nm));
                        adj.add(ha, C_VAL, p, d_a.scale(2.0 * w.memory / nm));
                    }
                }
                let l_m = if mem.is_empty() {
                    S::zero()
                } else {
                    l_m.scale(1.0 / nm)
                };
                bd.memory = Some(finite(l_m, "memory")?);
                total += l_m.scale(w.memory);
            }
            if let Some(g) = grad.as_mut() {
                jet::backward(&self.arch, params, &tape, &adj, g);
            }
        }

        bd.total = finite(total, "total")?;
        Ok((bd, total, grad))
    }

    fn evaluate<S: Scalar>(
        &self,
        params: &[S],
        want_grad: bool,
    ) -> Result<(LossBreakdown, Option<Vec<S>>)> {
        let (b, _, g) = self.evaluate_generic(params, want_grad)?;
        Ok((b, g))
    }
}

fn finite<S: Scalar>(v: S, term: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v.re())
    } else {
        Err(Error::NonFiniteLoss {
            term: term.to_string(),
        })
    }
}

impl Objective for PinnProblem<'_> {
    fn parameter_count(&self) -> usize {
        self.arch.parameter_count()
    }

    fn value_and_grad<S: Scalar>(&self, params: &[S]) -> Result<(S, Vec<S>)> {
        let (_, total, g) = self.evaluate_generic(params, true)?;
        Ok((total, g.expect("gradient requested")))
    }
}

/// Sum of several objectives over the same parameter vector.
pub struct SumObjective<'a> {
    pub parts: Vec<PinnProblem<'a>>,
}

impl SumObjective<'_> {
    pub fn loss_and_grad(&self, params: &[f64]) -> Result<(Vec<LossBreakdown>, Vec<f64>)> {
        let mut grad = vec![0.0; params.len()];
        let mut parts = Vec::with_capacity(self.parts.len());
        for p in &self.parts {
            let (b, g) = p.loss_and_grad(params)?;
            for (a, v) in grad.iter_mut().zip(g) {
                *a += v;
            }
            parts.push(b);
        }
        Ok((parts, grad))
    }
}

impl Objective for SumObjective<'_> {
    fn parameter_count(&self) -> usize {
        self.parts.first().map_or(0, |p| p.arch.parameter_count())
    }

    fn value_and_grad<S: Scalar>(&self, params: &[S]) -> Result<(S, Vec<S>)> {
        let mut total = S::zero();
        let mut grad = vec![S::zero(); params.len()];
        for p in &self.parts {
            let (v, g) = p.value_and_grad(params)?;
            total += v;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        Ok((total, grad))
    }
}

/// Loss components of `params` on one task/segment.
pub fn pinn_loss(
    params: &NetworkParams,
    task: &TaskSpec,
    points: &PointSet,
    weights: LossWeights,
    norm: Normalization,
    ic: &IcTargets,
) -> Result<LossBreakdown> {
    PinnProblem::new(params.arch, task, points, ic, weights, norm).loss(&params.values)
}

/// [`pinn_loss`] plus `λ_LL` times the mean squared departure from `memory`.
pub fn bcpinn_loss(
    params: &NetworkParams,
    task: &TaskSpec,
    points: &PointSet,
    weights: LossWeights,
    norm: Normalization,
    ic: &IcTargets,
    memory: &[MemoryPoint],
) -> Result<LossBreakdown> {
    PinnProblem::new(params.arch, task, points, ic, weights, norm)
        .with_memory(memory)
        .loss(&params.values)
}
