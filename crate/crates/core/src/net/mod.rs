//! Dense tanh networks with exact input derivatives and parameter gradients.
//!
//! Parameters live in one flat vector. Layer `l` stores its weight matrix
//! (`fan_out x fan_in`, row-major) followed by its bias vector.
//!
//! Two derivative routes exist on purpose:
//! * [`input_derivatives`] evaluates a single point with nested dual numbers
//!   (`Dual<f64>` in `t`, `Dual<Dual<f64>>` in `x`);
//! * [`jet`] propagates truncated Taylor jets for a whole batch of points and
//!   runs the reverse sweep that yields parameter gradients.
//!
//! The test-suite checks both against each other and against finite
//! differences.

pub mod checkpoint;
pub mod jet;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{Dual, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkArch {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl Default for NetworkArch {
    fn default() -> Self {
        Self {
            input_dim: 2,
            output_dim: 2,
            hidden_layers: 5,
            hidden_width: 64,
            activation: Activation::Tanh,
        }
    }
}

impl NetworkArch {
    pub fn new(hidden_layers: usize, hidden_width: usize) -> Self {
        Self {
            hidden_layers,
            hidden_width,
            ..Self::default()
        }
    }

    pub fn with_outputs(mut self, output_dim: usize) -> Self {
        self.output_dim = output_dim;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::InvalidArgument(
                "network dims must be positive".into(),
            ));
        }
        if self.hidden_layers == 0 || self.hidden_width == 0 {
            return Err(Error::InvalidArgument(
                "network needs at least one hidden layer of width >= 1".into(),
            ));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` for every affine layer, input to output.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_layers + 2);
        dims.push(self.input_dim);
        dims.extend(std::iter::repeat(self.hidden_width).take(self.hidden_layers));
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_shapes().iter().map(|&(i, o)| (i + 1) * o).sum()
    }

    /// Offset of each layer's weight block; its bias block follows at
    /// `offset + fan_in * fan_out`.
    pub fn layer_offsets(&self) -> Vec<usize> {
        let mut off = 0;
        self.layer_shapes()
            .iter()
            .map(|&(i, o)| {
                let start = off;
                off += (i + 1) * o;
                start
            })
            .collect()
    }

    /// Index range of the final (output) layer inside the flat vector.
    pub fn output_layer_range(&self) -> std::ops::Range<usize> {
        let (i, o) = *self.layer_shapes().last().expect("at least one layer");
        let start = *self.layer_offsets().last().expect("at least one layer");
        start..start + (i + 1) * o
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub arch: NetworkArch,
    pub values: Vec<f64>,
}

impl NetworkParams {
    pub fn zeros(arch: NetworkArch) -> Self {
        Self {
            values: vec![0.0; arch.parameter_count()],
            arch,
        }
    }

    pub fn from_values(arch: NetworkArch, values: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if values.len() != arch.parameter_count() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameters, got {}",
                arch.parameter_count(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput(format!("parameter {i}")));
        }
        Ok(Self { arch, values })
    }

    pub fn parameter_count(&self) -> usize {
        self.values.len()
    }

    /// Re-express the time input of the first layer: if the network was fed
    /// `s_old = (t - lo_old) / span_old` it now expects
    /// `s_new = (t - lo_new) / span_new` and computes the same function of `t`.
    pub fn reparameterize_time(
        &mut self,
        (lo_old, span_old): (f64, f64),
        (lo_new, span_new): (f64, f64),
    ) {
        let (fan_in, fan_out) = self.arch.layer_shapes()[0];
        let scale = span_new / span_old;
        let shift = (lo_new - lo_old) / span_old;
        for o in 0..fan_out {
            let w_t = self.values[o * fan_in];
            self.values[fan_in * fan_out + o] += w_t * shift;
            self.values[o * fan_in] = w_t * scale;
        }
    }
}

/// Glorot-uniform weights, zero biases; deterministic in `seed`.
pub fn init_params(arch: NetworkArch, seed: u64) -> Result<NetworkParams> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(arch.parameter_count());
    for (fan_in, fan_out) in arch.layer_shapes() {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit);
        values.extend((0..fan_in * fan_out).map(|_| dist.sample(&mut rng)));
        values.extend(std::iter::repeat(0.0).take(fan_out));
    }
    Ok(NetworkParams { arch, values })
}

/// Network output in normalized units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NetOutput {
    pub t_hat: f64,
    pub alpha_hat: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct InputDerivatives {
    pub d_t_dt: f64,
    pub d_t_dx: f64,
    pub d2_t_dx2: f64,
    pub dalpha_dt: f64,
    pub dalpha_dx: f64,
}

/// Single-point forward pass over any scalar type, with `f64` weights.
pub fn forward_generic<S: Scalar>(params: &NetworkParams, inputs: &[S]) -> Vec<S> {
    let arch = &params.arch;
    let shapes = arch.layer_shapes();
    let offsets = arch.layer_offsets();
    let last = shapes.len() - 1;
    let mut act: Vec<S> = inputs.to_vec();
    for (l, (&(fan_in, fan_out), &off)) in shapes.iter().zip(&offsets).enumerate() {
        let w = &params.values[off..off + fan_in * fan_out];
        let b = &params.values[off + fan_in * fan_out..off + (fan_in + 1) * fan_out];
        let mut next = Vec::with_capacity(fan_out);
        for o in 0..fan_out {
            let row = &w[o * fan_in..(o + 1) * fan_in];
            let mut z = S::from_f64(b[o]);
            for (a, &wi) in act.iter().zip(row) {
                z += a.scale(wi);
            }
            next.push(if l < last { z.tanh() } else { z });
        }
        act = next;
    }
    act
}

fn check_inputs(t_n: f64, x_n: f64) -> Result<()> {
    if !t_n.is_finite() || !x_n.is_finite() {
        return Err(Error::NonFiniteInput(format!("(t, x) = ({t_n}, {x_n})")));
    }
    Ok(())
}

fn check_two_in_two_out(params: &NetworkParams) -> Result<()> {
    if params.arch.input_dim != 2 || params.arch.output_dim < 2 {
        return Err(Error::InvalidArgument(
            "expected a (t, x) -> (T, alpha) network".into(),
        ));
    }
    Ok(())
}

/// Evaluate the first two outputs (normalized temperature and degree of
/// cure) at normalized inputs.
pub fn forward(params: &NetworkParams, t_n: f64, x_n: f64) -> Result<NetOutput> {
    check_inputs(t_n, x_n)?;
    check_two_in_two_out(params)?;
    let y = forward_generic(params, &[t_n, x_n]);
    Ok(NetOutput {
        t_hat: y[0],
        alpha_hat: y[1],
    })
}

/// Exact input derivatives of [`forward`] via forward-mode dual numbers.
pub fn input_derivatives(params: &NetworkParams, t_n: f64, x_n: f64) -> Result<InputDerivatives> {
    check_inputs(t_n, x_n)?;
    check_two_in_two_out(params)?;
    let dt = forward_generic(params, &[Dual::var(t_n), Dual::cst(x_n)]);
    // x seeded in both nesting levels: re.eps and eps.re carry d/dx, eps.eps d2/dx2
    let x2 = Dual::new(Dual::var(x_n), Dual::cst(1.0));
    let t2 = Dual::cst(Dual::cst(t_n));
    let dx = forward_generic(params, &[t2, x2]);
    Ok(InputDerivatives {
        d_t_dt: dt[0].eps,
        d_t_dx: dx[0].re.eps,
        d2_t_dx2: dx[0].eps.eps,
        dalpha_dt: dt[1].eps,
        dalpha_dx: dx[1].re.eps,
    })
}

/// Scalar objective whose parameter gradient can be taken exactly.
///
/// Implementations evaluate at parameters of any [`Scalar`] type; running
/// with [`Dual`] parameters seeded along `v` yields `H v` in the tangent part
/// of the gradient.
pub trait Objective {
    fn parameter_count(&self) -> usize;

    fn value_and_grad<S: Scalar>(&self, params: &[S]) -> Result<(S, Vec<S>)>;
}

/// Gradient of `obj` at `params`.
pub fn grad_params<O: Objective + ?Sized>(obj: &O, params: &[f64]) -> Result<(f64, Vec<f64>)> {
    if params.len() != obj.parameter_count() {
        return Err(Error::InvalidArgument(format!(
            "objective expects {} parameters, got {}",
            obj.parameter_count(),
            params.len()
        )));
    }
    let (v, g) = obj.value_and_grad::<f64>(params)?;
    if !v.is_finite() {
        return Err(Error::NonFiniteLoss {
            term: "total".into(),
        });
    }
    if g.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteGradient);
    }
    Ok((v, g))
}

/// Gradient and Hessian-vector product `H v` at `params`, exact.
pub fn grad_and_hvp<O: Objective + ?Sized>(
    obj: &O,
    params: &[f64],
    v: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if params.len() != v.len() {
        return Err(Error::InvalidArgument("direction length mismatch".into()));
    }
    let seeded: Vec<Dual<f64>> = params
        .iter()
        .zip(v)
        .map(|(&p, &d)| Dual::new(p, d))
        .collect();
    let (_, g) = obj.value_and_grad::<Dual<f64>>(&seeded)?;
    let grad: Vec<f64> = g.iter().map(|d| d.re).collect();
    let hv: Vec<f64> = g.iter().map(|d| d.eps).collect();
    if hv.iter().chain(&grad).any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteGradient);
    }
    Ok((grad, hv))
}
