//! Material data, cure cycle, cure kinetics and pointwise residuals of the
//! one-dimensional thermochemical cure model.
//!
//! Temperatures cross every public interface in °C; the kinetics convert to
//! kelvin internally.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const KELVIN_OFFSET: f64 = 273.15;

/// Resin cure kinetics (8552 epoxy).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CureKineticsParams {
    /// Activation energy, J/gmol.
    pub delta_e: f64,
    /// Gas constant, J/(gmol·K).
    pub r: f64,
    /// Pre-exponential factor, 1/s.
    pub a: f64,
    pub m: f64,
    pub n: f64,
    /// Diffusion constant.
    pub c: f64,
    pub alpha_c0: f64,
    /// 1/K
    pub alpha_ct: f64,
}

impl Default for CureKineticsParams {
    fn default() -> Self {
        Self {
            delta_e: 66_500.0,
            r: 8.314,
            a: 1.53e5,
            m: 0.813,
            n: 2.74,
            c: 43.1,
            alpha_c0: -1.684,
            alpha_ct: 5.475e-3,
        }
    }
}

impl CureKineticsParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.r > 0.0 && self.delta_e > 0.0) {
            return Err(Error::InvalidArgument(
                "kinetics need A > 0, R > 0 and delta_E > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Composite and resin properties (AS4/8552 defaults).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaterialProps {
    /// Composite density, kg/m³.
    pub rho: f64,
    /// Specific heat, J/(kg·K).
    pub cp: f64,
    /// Through-thickness conductivity, W/(m·K).
    pub kxx: f64,
    /// Fibre volume fraction.
    pub vf: f64,
    /// Resin density, kg/m³.
    pub rho_r: f64,
    /// Resin heat of reaction, J/kg.
    pub h_r: f64,
    /// Part thickness, m.
    pub length: f64,
}

impl Default for MaterialProps {
    fn default() -> Self {
        Self {
            rho: 1580.0,
            cp: 870.0,
            kxx: 0.65,
            vf: 0.57,
            rho_r: 1300.0,
            h_r: 3.0e5,
            length: 0.03,
        }
    }
}

impl MaterialProps {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.rho, self.cp, self.kxx, self.rho_r, self.length];
        if positive.iter().any(|v| !(*v > 0.0)) || self.h_r < 0.0 {
            return Err(Error::InvalidArgument(
                "material properties must be positive (H_R non-negative)".into(),
            ));
        }
        if !(self.vf > 0.0 && self.vf < 1.0) {
            return Err(Error::InvalidArgument(
                "fibre volume fraction must be in (0, 1)".into(),
            ));
        }
        Ok(())
    }

    /// Volumetric heat capacity ρ·Cp.
    pub fn heat_capacity(&self) -> f64 {
        self.rho * self.cp
    }

    /// Heat released per unit degree of cure per unit volume, (1 − v_f)·ρ_r·H_R.
    pub fn reaction_heat(&self) -> f64 {
        (1.0 - self.vf) * self.rho_r * self.h_r
    }

    pub fn diffusivity(&self) -> f64 {
        self.kxx / self.heat_capacity()
    }
}

/// Piecewise-linear autoclave air temperature program.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CureCycle {
    /// `(time s, air temperature °C)`, strictly increasing times from 0.
    pub breakpoints: Vec<(f64, f64)>,
}

impl Default for CureCycle {
    /// 20 → 110 °C at 2 °C/min, 50 min hold, 110 → 180 °C at 2 °C/min,
    /// hold until 300 min.
    fn default() -> Self {
        Self {
            breakpoints: vec![
                (0.0, 20.0),
                (2700.0, 110.0),
                (5700.0, 110.0),
                (7800.0, 180.0),
                (18_000.0, 180.0),
            ],
        }
    }
}

impl CureCycle {
    pub fn new(breakpoints: Vec<(f64, f64)>) -> Result<Self> {
        let c = Self { breakpoints };
        c.validate()?;
        Ok(c)
    }

    pub fn constant(temp_c: f64, t_end: f64) -> Self {
        Self {
            breakpoints: vec![(0.0, temp_c), (t_end, temp_c)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bp = &self.breakpoints;
        if bp.len() < 2 || bp[0].0 != 0.0 {
            return Err(Error::InvalidArgument(
                "cure cycle needs >= 2 breakpoints starting at t = 0".into(),
            ));
        }
        if bp.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::InvalidArgument(
                "cure cycle times must increase strictly".into(),
            ));
        }
        if bp.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "cure cycle values must be finite".into(),
            ));
        }
        Ok(())
    }

    pub fn t_end(&self) -> f64 {
        self.breakpoints.last().map_or(0.0, |b| b.0)
    }

    /// Largest |dT_a/dt| over the program, °C/s.
    pub fn max_rate(&self) -> f64 {
        self.breakpoints
            .windows(2)
            .map(|w| ((w[1].1 - w[0].1) / (w[1].0 - w[0].0)).abs())
            .fold(0.0, f64::max)
    }

    /// Interpolated air temperature without domain checks; clamps to the ends.
    pub fn eval_clamped(&self, t: f64) -> f64 {
        let bp = &self.breakpoints;
        if t <= bp[0].0 {
            return bp[0].1;
        }
        for w in bp.windows(2) {
            let ((t0, v0), (t1, v1)) = (w[0], w[1]);
            if t <= t1 {
                return v0 + (v1 - v0) * (t - t0) / (t1 - t0);
            }
        }
        bp[bp.len() - 1].1
    }
}

/// One curing configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    #[serde(default)]
    pub cycle: CureCycle,
    /// Top (x = L) heat-transfer coefficient, W/(m²·K).
    pub h_top: f64,
    /// Bottom (x = 0) heat-transfer coefficient, W/(m²·K).
    pub h_bottom: f64,
    /// Initial part temperature, °C.
    #[serde(rename = "T0", default = "default_t0")]
    pub t0: f64,
    #[serde(default = "default_alpha0")]
    pub alpha0: f64,
    #[serde(default)]
    pub material: MaterialProps,
    #[serde(default)]
    pub kinetics: CureKineticsParams,
}

fn default_t0() -> f64 {
    20.0
}

fn default_alpha0() -> f64 {
    0.001
}

impl Default for TaskSpec {
    /// TL source configuration (top 120, bottom 70 W/(m²·K)).
    fn default() -> Self {
        Self::with_htc(120.0, 70.0)
    }
}

impl TaskSpec {
    pub fn with_htc(h_top: f64, h_bottom: f64) -> Self {
        Self {
            cycle: CureCycle::default(),
            h_top,
            h_bottom,
            t0: default_t0(),
            alpha0: default_alpha0(),
            material: MaterialProps::default(),
            kinetics: CureKineticsParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.cycle.validate()?;
        self.material.validate()?;
        self.kinetics.validate()?;
        if !(self.h_top >= 0.0 && self.h_bottom >= 0.0) {
            return Err(Error::InvalidArgument("HTCs must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.alpha0) {
            return Err(Error::InvalidArgument("alpha0 must be in [0, 1)".into()));
        }
        if !self.t0.is_finite() {
            return Err(Error::InvalidArgument("T0 must be finite".into()));
        }
        Ok(())
    }

    pub fn t_end(&self) -> f64 {
        self.cycle.t_end()
    }

    pub fn htc(&self, side: Side) -> f64 {
        match side {
            Side::Top => self.h_top,
            Side::Bottom => self.h_bottom,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// x = L
    Top,
    /// x = 0
    Bottom,
}

/// Arrhenius rate constant `A·exp(−ΔE/(R·T))`, `T` in kelvin.
pub fn arrhenius_k(t_kelvin: f64, k: &CureKineticsParams) -> Result<f64> {
    if !(t_kelvin > 0.0) {
        return Err(Error::OutOfDomain {
            what: "absolute temperature",
            value: t_kelvin,
            lo: 0.0,
            hi: f64::INFINITY,
        });
    }
    Ok(k.a * (-k.delta_e / (k.r * t_kelvin)).exp())
}

/// Cure rate dα/dt in 1/s, `T` in kelvin.
pub fn cure_rate(alpha: f64, t_kelvin: f64, k: &CureKineticsParams) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::OutOfDomain {
            what: "degree of cure",
            value: alpha,
            lo: 0.0,
            hi: 1.0,
        });
    }
    let kk = arrhenius_k(t_kelvin, k)?;
    Ok(rate_unchecked(alpha, t_kelvin, kk, k))
}

#[inline]
fn rate_unchecked(alpha: f64, t_kelvin: f64, kk: f64, k: &CureKineticsParams) -> f64 {
    let diffusion = 1.0 + (k.c * (alpha - (k.alpha_c0 + k.alpha_ct * t_kelvin))).exp();
    kk * alpha.powf(k.m) * (1.0 - alpha).powf(k.n) / diffusion
}

/// Cure rate used inside solvers: `alpha` clamped to `[0, 1]`, temperature
/// floored at 1 K.
#[inline]
pub fn cure_rate_clamped(alpha: f64, t_kelvin: f64, k: &CureKineticsParams) -> f64 {
    let a = alpha.clamp(0.0, 1.0);
    let tk = t_kelvin.max(1.0);
    rate_unchecked(a, tk, k.a * (-k.delta_e / (k.r * tk)).exp(), k)
}

/// Smallest degree of cure seen by the differentiable kinetics; keeps
/// `α^(m−1)` finite.
pub const ALPHA_FLOOR: f64 = 1e-9;
/// Largest degree of cure seen by the differentiable kinetics.
pub const ALPHA_CEIL: f64 = 1.0 - 1e-12;

/// Differentiable cure rate for residual training. Network outputs are not
/// range-constrained, so `alpha` is clamped to `[ALPHA_FLOOR, ALPHA_CEIL]`
/// (zero derivative outside) and the temperature floored at 1 K.
pub fn cure_rate_generic<S: Scalar>(alpha: S, t_kelvin: S, k: &CureKineticsParams) -> S {
    let alpha = if alpha.re() < ALPHA_FLOOR {
        S::from_f64(ALPHA_FLOOR)
    } else if alpha.re() > ALPHA_CEIL {
        S::from_f64(ALPHA_CEIL)
    } else {
        alpha
    };
    let tk = if t_kelvin.re() < 1.0 {
        S::from_f64(1.0)
    } else {
        t_kelvin
    };
    let kk = (S::one() / tk).scale(-k.delta_e / k.r).exp().scale(k.a);
    let crit = tk.scale(k.alpha_ct) + S::from_f64(k.alpha_c0);
    let diffusion = S::one() + (alpha - crit).scale(k.c).exp();
    kk * alpha.powf(k.m) * (S::one() - alpha).powf(k.n) / diffusion
}

/// Air temperature at time `t` (s), °C.
pub fn air_temperature(t: f64, cycle: &CureCycle) -> Result<f64> {
    let t_end = cycle.t_end();
    if !(0.0..=t_end).contains(&t) {
        return Err(Error::OutOfDomain {
            what: "time",
            value: t,
            lo: 0.0,
            hi: t_end,
        });
    }
    Ok(cycle.eval_clamped(t))
}

/// Local heat-equation state in physical units.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct HeatState {
    /// K/s
    pub dt_dt: f64,
    /// K/m²
    pub d2t_dx2: f64,
    /// 1/s
    pub dalpha_dt: f64,
}

/// `ρCp·∂T/∂t − k_xx·∂²T/∂x² − (1−v_f)ρ_r H_R·dα/dt`, W/m³.
pub fn pde_residual_t(s: &HeatState, mat: &MaterialProps) -> f64 {
    mat.heat_capacity() * s.dt_dt - mat.kxx * s.d2t_dx2 - mat.reaction_heat() * s.dalpha_dt
}

/// `dα/dt − rate(α, T)`, 1/s; `temp_c` in °C.
pub fn ode_residual_alpha(
    alpha: f64,
    temp_c: f64,
    dalpha_dt: f64,
    k: &CureKineticsParams,
) -> Result<f64> {
    Ok(dalpha_dt - cure_rate(alpha, temp_c + KELVIN_OFFSET, k)?)
}

/// Robin boundary residual, W/m².
///
/// Top (x = L): `h_t (T_a − T) − k_xx ∂T/∂x`; bottom (x = 0):
/// `h_b (T − T_a) − k_xx ∂T/∂x`.
pub fn robin_residual(
    side: Side,
    t_surface: f64,
    dt_dx_surface: f64,
    t: f64,
    task: &TaskSpec,
) -> Result<f64> {
    let ta = air_temperature(t, &task.cycle)?;
    let h = task.htc(side);
    let convective = match side {
        Side::Top => h * (ta - t_surface),
        Side::Bottom => h * (t_surface - ta),
    };
    Ok(convective - task.material.kxx * dt_dx_surface)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Dual;
    use proptest::prelude::*;

    fn kin() -> CureKineticsParams {
        CureKineticsParams::default()
    }

    // High-precision references (40-digit decimal arithmetic).
    const K_400: f64 = 3.164964831273428774685958276041188e-4;
    const K_450: f64 = 2.919400079198427300279309588709605e-3;
    const RATE_05_450: f64 = 2.487319192168067040676637011218601e-4;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn arrhenius_spot_values() {
        assert!(rel(arrhenius_k(400.0, &kin()).unwrap(), K_400) < 1e-10);
        assert!(rel(arrhenius_k(450.0, &kin()).unwrap(), K_450) < 1e-10);
        assert!(rel(arrhenius_k(1e6, &kin()).unwrap(), 1.53e5) < 1e-2);
        assert!(arrhenius_k(0.0, &kin()).is_err());
        assert!(arrhenius_k(-5.0, &kin()).is_err());
    }

    #[test]
    fn cure_rate_spot_values_and_endpoints() {
        assert!(rel(cure_rate(0.5, 450.0, &kin()).unwrap(), RATE_05_450) < 1e-10);
        assert_eq!(cure_rate(0.0, 450.0, &kin()).unwrap(), 0.0);
        assert_eq!(cure_rate(1.0, 450.0, &kin()).unwrap(), 0.0);
        assert!(cure_rate(1.2, 450.0, &kin()).is_err());
        assert!(cure_rate(-0.1, 450.0, &kin()).is_err());
    }

    #[test]
    fn generic_rate_matches_and_differentiates() {
        let (a, tk) = (0.37, 431.0);
        let r = cure_rate(a, tk, &kin()).unwrap();
        assert!(rel(cure_rate_generic(a, tk, &kin()), r) < 1e-13);
        let da = cure_rate_generic(Dual::var(a), Dual::cst(tk), &kin()).eps;
        let dt = cure_rate_generic(Dual::cst(a), Dual::var(tk), &kin()).eps;
        let h = 1e-6;
        let fd_a = (cure_rate(a + h, tk, &kin()).unwrap() - cure_rate(a - h, tk, &kin()).unwrap())
            / (2.0 * h);
        let fd_t = (cure_rate(a, tk + h, &kin()).unwrap() - cure_rate(a, tk - h, &kin()).unwrap())
            / (2.0 * h);
        assert!(rel(da, fd_a) < 1e-6);
        assert!(rel(dt, fd_t) < 1e-6);
    }

    #[test]
    fn default_cycle_shape() {
        let c = CureCycle::default();
        assert_eq!(air_temperature(0.0, &c).unwrap(), 20.0);
        assert!((air_temperature(1800.0, &c).unwrap() - 80.0).abs() < 1e-12);
        assert_eq!(air_temperature(4000.0, &c).unwrap(), 110.0);
        assert_eq!(air_temperature(2700.0, &c).unwrap(), 110.0);
        assert_eq!(air_temperature(12_000.0, &c).unwrap(), 180.0);
        assert!((c.max_rate() - 2.0 / 60.0).abs() < 1e-15);
        assert!(air_temperature(-1.0, &c).is_err());
        assert!(air_temperature(18_000.5, &c).is_err());
    }

    #[test]
    fn bad_cycles_rejected() {
        assert!(CureCycle::new(vec![(0.0, 20.0)]).is_err());
        assert!(CureCycle::new(vec![(1.0, 20.0), (2.0, 30.0)]).is_err());
        assert!(CureCycle::new(vec![(0.0, 20.0), (5.0, 30.0), (5.0, 40.0)]).is_err());
    }

    #[test]
    fn pde_residual_cases() {
        let m = MaterialProps::default();
        assert_eq!(pde_residual_t(&HeatState::default(), &m), 0.0);
        let s = HeatState {
            dt_dt: 0.01,
            d2t_dx2: 20.0,
            dalpha_dt: 1e-4,
        };
        let expect = 1580.0 * 870.0 * 0.01 - 0.65 * 20.0 - 0.43 * 1300.0 * 3.0e5 * 1e-4;
        assert!(rel(pde_residual_t(&s, &m), expect) < 1e-12);
    }

    #[test]
    fn ode_residual_cases() {
        let (a, tc) = (0.3, 170.0);
        let r = cure_rate(a, tc + KELVIN_OFFSET, &kin()).unwrap();
        assert_eq!(ode_residual_alpha(a, tc, r, &kin()).unwrap(), 0.0);
        assert_eq!(ode_residual_alpha(0.0, tc, 0.0, &kin()).unwrap(), 0.0);
    }

    #[test]
    fn robin_cases() {
        let task = TaskSpec::default();
        let ta = air_temperature(3000.0, &task.cycle).unwrap();
        assert_eq!(
            robin_residual(Side::Top, ta, 0.0, 3000.0, &task).unwrap(),
            0.0
        );
        assert_eq!(
            robin_residual(Side::Bottom, ta, 0.0, 3000.0, &task).unwrap(),
            0.0
        );
        let mut zero_h = task.clone();
        zero_h.h_top = 0.0;
        zero_h.h_bottom = 0.0;
        for side in [Side::Top, Side::Bottom] {
            let r = robin_residual(side, 55.0, 12.0, 3000.0, &zero_h).unwrap();
            assert!((r + 0.65 * 12.0).abs() < 1e-12);
        }
        // sign convention
        let top = robin_residual(Side::Top, ta - 1.0, 0.0, 3000.0, &task).unwrap();
        let bot = robin_residual(Side::Bottom, ta - 1.0, 0.0, 3000.0, &task).unwrap();
        assert!(top > 0.0 && bot < 0.0);
    }

    proptest! {
        #[test]
        fn cure_rate_non_negative(a in 0.0f64..=1.0, tk in 1.0f64..2000.0) {
            prop_assert!(cure_rate(a, tk, &kin()).unwrap() >= 0.0);
        }

        #[test]
        fn cure_rate_vanishes_at_endpoints(tk in 1.0f64..2000.0) {
            prop_assert_eq!(cure_rate(0.0, tk, &kin()).unwrap(), 0.0);
            prop_assert_eq!(cure_rate(1.0, tk, &kin()).unwrap(), 0.0);
        }

        #[test]
        fn arrhenius_monotone(t1 in 50.0f64..3000.0, dt in 1e-3f64..500.0) {
            prop_assert!(arrhenius_k(t1 + dt, &kin()).unwrap() > arrhenius_k(t1, &kin()).unwrap());
        }

        #[test]
        fn air_temperature_lipschitz(t in 0.0f64..17_000.0, d in 0.0f64..1000.0) {
            let c = CureCycle::default();
            let a = air_temperature(t, &c).unwrap();
            let b = air_temperature(t + d, &c).unwrap();
            prop_assert!((b - a).abs() <= c.max_rate() * d + 1e-9);
        }

        #[test]
        fn residuals_linear_in_derivatives(
            a in -1.0f64..1.0, b in -50.0f64..50.0, c in -1e-3f64..1e-3,
            a2 in -1.0f64..1.0, b2 in -50.0f64..50.0, c2 in -1e-3f64..1e-3,
        ) {
            let m = MaterialProps::default();
            let s1 = HeatState { dt_dt: a, d2t_dx2: b, dalpha_dt: c };
            let s2 = HeatState { dt_dt: a2, d2t_dx2: b2, dalpha_dt: c2 };
            let sum = HeatState { dt_dt: a + a2, d2t_dx2: b + b2, dalpha_dt: c + c2 };
            let lhs = pde_residual_t(&sum, &m);
            let rhs = pde_residual_t(&s1, &m) + pde_residual_t(&s2, &m);
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
            // robin: residual is affine in the flux; the flux part superposes
            let task = TaskSpec::default();
            let r0 = robin_residual(Side::Top, 90.0, 0.0, 100.0, &task).unwrap();
            let r1 = robin_residual(Side::Top, 90.0, b, 100.0, &task).unwrap() - r0;
            let r2 = robin_residual(Side::Top, 90.0, b2, 100.0, &task).unwrap() - r0;
            let r12 = robin_residual(Side::Top, 90.0, b + b2, 100.0, &task).unwrap() - r0;
            prop_assert!((r12 - r1 - r2).abs() <= 1e-9 * (1.0 + r12.abs()));
        }
    }
}
