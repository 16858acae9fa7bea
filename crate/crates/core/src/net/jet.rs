//! Batched jet propagation and its reverse sweep.
//!
//! Each neuron carries up to four components for every point of a batch:
//! value, `d/dx`, `d/dt` and `d2/dx2` (in that order, so a prefix of the
//! list is always closed under the chain rule). Activations are stored as
//! row-major `width x (ncomp * npts)` matrices with components in contiguous
//! column blocks, which turns every affine layer into a single GEMM.

use crate::error::{Error, Result};
use crate::net::NetworkArch;
use crate::scalar::Scalar;

/// Which input derivatives a batch carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JetOrder {
    /// Values only.
    Value,
    /// Values and `d/dx`.
    FirstX,
    /// Values, `d/dx`, `d/dt`, `d2/dx2`.
    Full,
}

impl JetOrder {
    pub fn ncomp(self) -> usize {
        match self {
            JetOrder::Value => 1,
            JetOrder::FirstX => 2,
            JetOrder::Full => 4,
        }
    }
}

pub const C_VAL: usize = 0;
pub const C_DX: usize = 1;
pub const C_DT: usize = 2;
pub const C_DXX: usize = 3;

/// Forward record kept for the reverse sweep.
pub struct JetTape<S> {
    pub order: JetOrder,
    pub npts: usize,
    /// Input to every affine layer, `fan_in x cols`.
    inputs: Vec<Vec<S>>,
    /// Pre-activations of hidden layers, `width x cols`.
    pre: Vec<Vec<S>>,
    /// Network outputs, `output_dim x cols`.
    pub out: Vec<S>,
}

impl<S: Scalar> JetTape<S> {
    pub fn cols(&self) -> usize {
        self.order.ncomp() * self.npts
    }

    /// Component `comp` of output `o` at point `p`.
    #[inline]
    pub fn get(&self, o: usize, comp: usize, p: usize) -> S {
        self.out[o * self.cols() + comp * self.npts + p]
    }
}

/// Adjoint buffer shaped like [`JetTape::out`].
pub struct OutputAdjoint<S> {
    pub npts: usize,
    pub ncomp: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> OutputAdjoint<S> {
    pub fn zeros<T>(tape: &JetTape<T>, output_dim: usize) -> Self {
        let ncomp = tape.order.ncomp();
        Self {
            npts: tape.npts,
            ncomp,
            data: vec![S::zero(); output_dim * ncomp * tape.npts],
        }
    }

    #[inline]
    pub fn add(&mut self, o: usize, comp: usize, p: usize, v: S) {
        let cols = self.ncomp * self.npts;
        self.data[o * cols + comp * self.npts + p] += v;
    }
}

/// Propagate jets for points `(t[p], x[p])` (normalized inputs).
pub fn forward<S: Scalar>(
    arch: &NetworkArch,
    params: &[S],
    t: &[f64],
    x: &[f64],
    order: JetOrder,
) -> Result<JetTape<S>> {
    if arch.input_dim != 2 {
        return Err(Error::InvalidArgument(
            "jets need a (t, x) input layer".into(),
        ));
    }
    if t.len() != x.len() {
        return Err(Error::InvalidArgument(
            "t and x batches differ in length".into(),
        ));
    }
    if params.len() != arch.parameter_count() {
        return Err(Error::InvalidArgument(
            "parameter vector length mismatch".into(),
        ));
    }
    let npts = t.len();
    let ncomp = order.ncomp();
    let cols = ncomp * npts;

    let mut a0 = vec![S::zero(); 2 * cols];
    for p in 0..npts {
        a0[C_VAL * npts + p] = S::from_f64(t[p]);
        a0[cols + C_VAL * npts + p] = S::from_f64(x[p]);
        if ncomp > C_DX {
            a0[cols + C_DX * npts + p] = S::one();
        }
        if ncomp > C_DT {
            a0[C_DT * npts + p] = S::one();
        }
    }

    let shapes = arch.layer_shapes();
    let offsets = arch.layer_offsets();
    let last = shapes.len() - 1;
    let mut inputs = Vec::with_capacity(shapes.len());
    let mut pre = Vec::with_capacity(last);
    let mut act = a0;
    let mut out = Vec::new();

    for (l, (&(fan_in, fan_out), &off)) in shapes.iter().zip(&offsets).enumerate() {
        let w = &params[off..off + fan_in * fan_out];
        let b = &params[off + fan_in * fan_out..off + (fan_in + 1) * fan_out];
        let mut z = vec![S::zero(); fan_out * cols];
        S::gemm(
            fan_out,
            fan_in,
            cols,
            1.0,
            w,
            (fan_in, 1),
            &act,
            (cols, 1),
            0.0,
            &mut z,
            (cols, 1),
        );
        for o in 0..fan_out {
            for v in &mut z[o * cols..o * cols + npts] {
                *v += b[o];
            }
        }
        if l == last {
            inputs.push(act);
            out = z;
            break;
        }
        let mut h = vec![S::zero(); fan_out * cols];
        for o in 0..fan_out {
            let zr = &z[o * cols..(o + 1) * cols];
            let hr = &mut h[o * cols..(o + 1) * cols];
            for p in 0..npts {
                let s = zr[p].tanh();
                hr[p] = s;
                if ncomp == 1 {
                    continue;
                }
                let d1 = S::one() - s * s;
                let zx = zr[C_DX * npts + p];
                hr[C_DX * npts + p] = d1 * zx;
                if ncomp > C_DT {
                    let d2 = (s * d1).scale(-2.0);
                    hr[C_DT * npts + p] = d1 * zr[C_DT * npts + p];
                    hr[C_DXX * npts + p] = d1 * zr[C_DXX * npts + p] + d2 * zx * zx;
                }
            }
        }
        inputs.push(act);
        pre.push(z);
        act = h;
    }

    Ok(JetTape {
        order,
        npts,
        inputs,
        pre,
        out,
    })
}

/// Reverse sweep: accumulate `d loss / d params` into `grad` given the
/// adjoint of every output component.
pub fn backward<S: Scalar>(
    arch: &NetworkArch,
    params: &[S],
    tape: &JetTape<S>,
    adj: &OutputAdjoint<S>,
    grad: &mut [S],
) {
    let npts = tape.npts;
    let ncomp = tape.order.ncomp();
    let cols = ncomp * npts;
    let shapes = arch.layer_shapes();
    let offsets = arch.layer_offsets();

    let mut zbar = adj.data.clone();
    for l in (0..shapes.len()).rev() {
        let (fan_in, fan_out) = shapes[l];
        let off = offsets[l];
        let a = &tape.inputs[l];
        {
            let gw = &mut grad[off..off + fan_in * fan_out];
            // gW += Zbar · Aᵀ
            S::gemm(
                fan_out,
                cols,
                fan_in,
                1.0,
                &zbar,
                (cols, 1),
                a,
                (1, cols),
                1.0,
                gw,
                (fan_in, 1),
            );
        }
        for o in 0..fan_out {
            let mut acc = S::zero();
            for v in &zbar[o * cols..o * cols + npts] {
                acc += *v;
            }
            grad[off + fan_in * fan_out + o] += acc;
        }
        if l == 0 {
            break;
        }
        let w = &params[off..off + fan_in * fan_out];
        let mut abar = vec![S::zero(); fan_in * cols];
        // Abar = Wᵀ · Zbar
        S::gemm(
            fan_in,
            fan_out,
            cols,
            1.0,
            w,
            (1, fan_in),
            &zbar,
            (cols, 1),
            0.0,
            &mut abar,
            (cols, 1),
        );

        // activation of layer l-1 maps pre[l-1] to inputs[l]
        let z = &tape.pre[l - 1];
        let h = &tape.inputs[l];
        for r in 0..fan_in {
            let zr = &z[r * cols..(r + 1) * cols];
            let hr = &h[r * cols..(r + 1) * cols];
            let br = &mut abar[r * cols..(r + 1) * cols];
            for p in 0..npts {
                let s = hr[p];
                let d1 = S::one() - s * s;
                if ncomp == 1 {
                    br[p] = br[p] * d1;
                    continue;
                }
                let d2 = (s * d1).scale(-2.0);
                let zx = zr[C_DX * npts + p];
                let hb_v = br[p];
                let hb_x = br[C_DX * npts + p];
                if ncomp == 2 {
                    br[p] = hb_v * d1 + d2 * hb_x * zx;
                    br[C_DX * npts + p] = d1 * hb_x;
                    continue;
                }
                let d3 = (d1 * d1 + s * d2).scale(-2.0);
                let zt = zr[C_DT * npts + p];
                let zxx = zr[C_DXX * npts + p];
                let hb_t = br[C_DT * npts + p];
                let hb_xx = br[C_DXX * npts + p];
                br[p] =
                    hb_v * d1 + d2 * (hb_x * zx + hb_t * zt + hb_xx * zxx) + d3 * hb_xx * zx * zx;
                br[C_DX * npts + p] = d1 * hb_x + (d2 * zx * hb_xx).scale(2.0);
                br[C_DT * npts + p] = d1 * hb_t;
                br[C_DXX * npts + p] = d1 * hb_xx;
            }
        }
        zbar = abar;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{init_params, input_derivatives, NetworkParams};

    fn probe_points() -> (Vec<f64>, Vec<f64>) {
        let t = vec![0.0, 0.13, 0.5, 0.77, 1.0];
        let x = vec![0.9, 0.0, 0.41, 1.0, 0.25];
        (t, x)
    }

    #[test]
    fn jets_match_nested_duals() {
        let p = init_params(NetworkArch::new(3, 7), 11).unwrap();
        let (t, x) = probe_points();
        let tape = forward(&p.arch, &p.values, &t, &x, JetOrder::Full).unwrap();
        for i in 0..t.len() {
            let d = input_derivatives(&p, t[i], x[i]).unwrap();
            let close = |a: f64, b: f64| (a - b).abs() <= 1e-13 * (1.0 + b.abs());
            assert!(close(tape.get(0, C_DT, i), d.d_t_dt));
            assert!(close(tape.get(0, C_DX, i), d.d_t_dx));
            assert!(close(tape.get(0, C_DXX, i), d.d2_t_dx2));
            assert!(close(tape.get(1, C_DT, i), d.dalpha_dt));
            assert!(close(tape.get(1, C_DX, i), d.dalpha_dx));
        }
    }

    #[test]
    fn value_order_matches_full_order_values() {
        let p = init_params(NetworkArch::new(2, 5), 2).unwrap();
        let (t, x) = probe_points();
        let full = forward(&p.arch, &p.values, &t, &x, JetOrder::Full).unwrap();
        let val = forward(&p.arch, &p.values, &t, &x, JetOrder::Value).unwrap();
        let fx = forward(&p.arch, &p.values, &t, &x, JetOrder::FirstX).unwrap();
        for i in 0..t.len() {
            for o in 0..2 {
                assert_eq!(full.get(o, C_VAL, i), val.get(o, C_VAL, i));
                assert_eq!(full.get(o, C_DX, i), fx.get(o, C_DX, i));
            }
        }
    }

    /// Loss = sum over points/outputs/components of c_k * component², so the
    /// reverse sweep must reproduce finite differences of that sum.
    fn jet_loss(params: &NetworkParams, order: JetOrder, pv: &[f64]) -> f64 {
        let (t, x) = probe_points();
        let tape = forward(&params.arch, pv, &t, &x, order).unwrap();
        let mut s = 0.0;
        for o in 0..2 {
            for c in 0..order.ncomp() {
                for i in 0..t.len() {
                    s += (1.0 + c as f64) * tape.get(o, c, i).powi(2);
                }
            }
        }
        s
    }

    #[test]
    fn reverse_sweep_matches_finite_differences() {
        for order in [JetOrder::Value, JetOrder::FirstX, JetOrder::Full] {
            let p = init_params(NetworkArch::new(2, 4), 5).unwrap();
            let (t, x) = probe_points();
            let tape = forward(&p.arch, &p.values, &t, &x, order).unwrap();
            let mut adj = OutputAdjoint::zeros(&tape, 2);
            for o in 0..2 {
                for c in 0..order.ncomp() {
                    for i in 0..t.len() {
                        adj.add(o, c, i, 2.0 * (1.0 + c as f64) * tape.get(o, c, i));
                    }
                }
            }
            let mut g = vec![0.0; p.values.len()];
            backward(&p.arch, &p.values, &tape, &adj, &mut g);
            let h = 1e-5;
            for k in 0..p.values.len() {
                let mut plus = p.values.clone();
                plus[k] += h;
                let mut minus = p.values.clone();
                minus[k] -= h;
                let fd = (jet_loss(&p, order, &plus) - jet_loss(&p, order, &minus)) / (2.0 * h);
                assert!(
                    (fd - g[k]).abs() <= 1e-7 * (1.0 + fd.abs()),
                    "{order:?} param {k}: fd {fd} vs {}",
                    g[k]
                );
            }
        }
    }
}
