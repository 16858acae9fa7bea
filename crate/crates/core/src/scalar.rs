//! Scalar abstraction shared by the network and loss code.
//!
//! Everything that participates in a parameter gradient is written against
//! [`Scalar`] so that the same code runs on plain `f64` (values and
//! gradients) and on [`Dual`] numbers (directional derivatives of those
//! gradients, i.e. Hessian-vector products for the meta-gradient).

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

pub trait Scalar:
    Copy
    + Debug
    + Default
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    fn from_f64(v: f64) -> Self;

    /// Primal (real) part.
    fn re(&self) -> f64;

    fn tanh(self) -> Self;

    fn exp(self) -> Self;

    fn ln(self) -> Self;

    /// `self^p` for a constant real exponent; `self` must be positive.
    fn powf(self, p: f64) -> Self {
        (self.ln() * Self::from_f64(p)).exp()
    }

    /// True when every component is finite.
    fn is_finite(&self) -> bool;

    #[inline]
    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    #[inline]
    fn one() -> Self {
        Self::from_f64(1.0)
    }

    #[inline]
    fn scale(self, k: f64) -> Self {
        self * Self::from_f64(k)
    }

    /// General matrix product `C = alpha * A B + beta * C` with explicit
    /// strides, `A` is `m x k`, `B` is `k x n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: &[Self],
        (rsa, csa): (usize, usize),
        b: &[Self],
        (rsb, csb): (usize, usize),
        beta: f64,
        c: &mut [Self],
        (rsc, csc): (usize, usize),
    ) {
        let alpha = Self::from_f64(alpha);
        for i in 0..m {
            for j in 0..n {
                let mut acc = Self::zero();
                for l in 0..k {
                    acc += a[i * rsa + l * csa] * b[l * rsb + j * csb];
                }
                let cij = &mut c[i * rsc + j * csc];
                *cij = if beta == 0.0 {
                    alpha * acc
                } else {
                    cij.scale(beta) + alpha * acc
                };
            }
        }
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn re(&self) -> f64 {
        *self
    }
    #[inline]
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn powf(self, p: f64) -> Self {
        f64::powf(self, p)
    }
    #[inline]
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: &[Self],
        (rsa, csa): (usize, usize),
        b: &[Self],
        (rsb, csb): (usize, usize),
        beta: f64,
        c: &mut [Self],
        (rsc, csc): (usize, usize),
    ) {
        if m == 0 || n == 0 {
            return;
        }
        // bounds: the last element touched must be inside each slice
        if k > 0 {
            assert!((m - 1) * rsa + (k - 1) * csa < a.len());
            assert!((k - 1) * rsb + (n - 1) * csb < b.len());
        }
        assert!((m - 1) * rsc + (n - 1) * csc < c.len());
        // SAFETY: index bounds checked above; slices do not alias since `c`
        // is borrowed mutably.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa as isize,
                csa as isize,
                b.as_ptr(),
                rsb as isize,
                csb as isize,
                beta,
                c.as_mut_ptr(),
                rsc as isize,
                csc as isize,
            );
        }
    }
}

/// First-order dual number `re + eps·ε` with `ε² = 0`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Dual<S> {
    pub re: S,
    pub eps: S,
}

impl<S: Scalar> Dual<S> {
    #[inline]
    pub fn new(re: S, eps: S) -> Self {
        Self { re, eps }
    }

    /// Independent variable: tangent seeded with one.
    #[inline]
    pub fn var(re: S) -> Self {
        Self { re, eps: S::one() }
    }

    #[inline]
    pub fn cst(re: S) -> Self {
        Self { re, eps: S::zero() }
    }

    #[inline]
    fn chain(self, f: S, df: S) -> Self {
        Self {
            re: f,
            eps: df * self.eps,
        }
    }
}

impl<S: Scalar> Add for Dual<S> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.re + o.re, self.eps + o.eps)
    }
}

impl<S: Scalar> Sub for Dual<S> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.re - o.re, self.eps - o.eps)
    }
}

impl<S: Scalar> Mul for Dual<S> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Self::new(self.re * o.re, self.re * o.eps + self.eps * o.re)
    }
}

impl<S: Scalar> Div for Dual<S> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let inv = S::one() / o.re;
        Self::new(self.re * inv, (self.eps - self.re * inv * o.eps) * inv)
    }
}

impl<S: Scalar> Neg for Dual<S> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.re, -self.eps)
    }
}

impl<S: Scalar> AddAssign for Dual<S> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<S: Scalar> SubAssign for Dual<S> {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl<S: Scalar> MulAssign for Dual<S> {
    #[inline]
    fn mul_assign(&mut self, o: Self) {
        *self = *self * o;
    }
}

impl<S: Scalar> Scalar for Dual<S> {
    #[inline]
    fn from_f64(v: f64) -> Self {
        Self::cst(S::from_f64(v))
    }
    #[inline]
    fn re(&self) -> f64 {
        self.re.re()
    }
    #[inline]
    fn tanh(self) -> Self {
        let t = self.re.tanh();
        self.chain(t, S::one() - t * t)
    }
    #[inline]
    fn exp(self) -> Self {
        let e = self.re.exp();
        self.chain(e, e)
    }
    #[inline]
    fn ln(self) -> Self {
        self.chain(self.re.ln(), S::one() / self.re)
    }
    #[inline]
    fn powf(self, p: f64) -> Self {
        let f = self.re.powf(p);
        let df = self.re.powf(p - 1.0).scale(p);
        self.chain(f, df)
    }
    #[inline]
    fn is_finite(&self) -> bool {
        self.re.is_finite() && self.eps.is_finite()
    }

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: &[Self],
        sa: (usize, usize),
        b: &[Self],
        sb: (usize, usize),
        beta: f64,
        c: &mut [Self],
        sc: (usize, usize),
    ) {
        // (A + εA')(B + εB') = AB + ε(A'B + AB'), one product per part.
        let a_re: Vec<S> = a.iter().map(|v| v.re).collect();
        let a_eps: Vec<S> = a.iter().map(|v| v.eps).collect();
        let b_re: Vec<S> = b.iter().map(|v| v.re).collect();
        let b_eps: Vec<S> = b.iter().map(|v| v.eps).collect();
        let mut c_re: Vec<S> = c.iter().map(|v| v.re).collect();
        let mut c_eps: Vec<S> = c.iter().map(|v| v.eps).collect();
        S::gemm(m, k, n, alpha, &a_re, sa, &b_re, sb, beta, &mut c_re, sc);
        S::gemm(m, k, n, alpha, &a_eps, sa, &b_re, sb, beta, &mut c_eps, sc);
        S::gemm(m, k, n, alpha, &a_re, sa, &b_eps, sb, 1.0, &mut c_eps, sc);
        for ((cv, re), eps) in c.iter_mut().zip(c_re).zip(c_eps) {
            *cv = Self::new(re, eps);
        }
    }
}
