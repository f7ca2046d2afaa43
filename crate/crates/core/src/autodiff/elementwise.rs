//! Pointwise kernels. Binary operations accept equal shapes or a
//! single-element operand, which is broadcast.

use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use super::{Var, GUARD};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy)]
enum Broadcast {
    None,
    Left,
    Right,
}

fn broadcast_kind(op: &'static str, a: &[usize], b: &[usize]) -> Result<Broadcast> {
    let na: usize = a.iter().product();
    let nb: usize = b.iter().product();
    if a == b {
        Ok(Broadcast::None)
    } else if na == 1 {
        Ok(Broadcast::Left)
    } else if nb == 1 {
        Ok(Broadcast::Right)
    } else {
        Err(Error::ShapeMismatch {
            op,
            left: a.to_vec(),
            right: b.to_vec(),
        })
    }
}

/// Sign with `sign(0) = +1`, so a guarded denominator never vanishes.
#[inline]
fn guard_sign<T: Real>(y: T) -> T {
    if y < T::zero() {
        -T::one()
    } else {
        T::one()
    }
}

/// `y + η·sign(y)`.
#[inline]
pub(crate) fn guarded<T: Real>(y: T) -> T {
    y + T::from_f64(GUARD) * guard_sign(y)
}

/// Element-wise binary op `f(a, b)` with partial derivatives `da`, `db`.
fn binary<'t, T: Real>(
    op: &'static str,
    a: Var<'t, T>,
    b: Var<'t, T>,
    f: impl Fn(T, T) -> T + 'static,
    da: impl Fn(T, T) -> T + 'static,
    db: impl Fn(T, T) -> T + 'static,
) -> Result<Var<'t, T>> {
    let av = a.value();
    let bv = b.value();
    let kind = broadcast_kind(op, av.shape(), bv.shape())?;
    let (shape, n) = match kind {
        Broadcast::Left => (bv.shape().to_vec(), bv.len()),
        _ => (av.shape().to_vec(), av.len()),
    };
    let pick = move |t: &Tensor<T>, i: usize| {
        if t.len() == 1 {
            t.data()[0]
        } else {
            t.data()[i]
        }
    };
    let out: Vec<T> = (0..n).map(|i| f(pick(&av, i), pick(&bv, i))).collect();
    let value = Tensor::from_vec(&shape, out)?;

    let backward = Box::new(move |g: &Tensor<T>, needs: &[bool]| {
        let grad_for = |d: &dyn Fn(T, T) -> T, reduce: bool, like: &Arc<Tensor<T>>| {
            let vals = (0..g.len()).map(|i| g.data()[i] * d(pick(&av, i), pick(&bv, i)));
            if reduce {
                Tensor::from_vec(like.shape(), vec![vals.sum()]).unwrap()
            } else {
                Tensor::from_vec(like.shape(), vals.collect()).unwrap()
            }
        };
        let ga = needs[0].then(|| grad_for(&da, matches!(kind, Broadcast::Left), &av));
        let gb = needs[1].then(|| grad_for(&db, matches!(kind, Broadcast::Right), &bv));
        vec![ga, gb]
    });
    Ok(a.tape.record(op, &[a, b], value, backward))
}

/// Element-wise unary op; `df(x, y)` receives input and output.
fn unary<'t, T: Real>(
    op: &'static str,
    x: Var<'t, T>,
    f: impl Fn(T) -> T,
    df: impl Fn(T, T) -> T + 'static,
) -> Var<'t, T> {
    let xv = x.value();
    let yv = Arc::new(xv.map(f));
    let value = (*yv).clone();
    let backward = Box::new(move |g: &Tensor<T>, _: &[bool]| {
        let data = g
            .data()
            .iter()
            .zip(xv.data().iter().zip(yv.data()))
            .map(|(&g, (&x, &y))| g * df(x, y))
            .collect();
        vec![Some(Tensor::from_vec(xv.shape(), data).unwrap())]
    });
    x.tape.record(op, &[x], value, backward)
}

impl<'t, T: Real> Var<'t, T> {
    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        binary("add", self, other, |a, b| a + b, |_, _| T::one(), |_, _| T::one())
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        binary("sub", self, other, |a, b| a - b, |_, _| T::one(), |_, _| -T::one())
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        binary("mul", self, other, |a, b| a * b, |_, b| b, |a, _| a)
    }

    /// `a / (b + η·sign(b))` with `sign(0) = +1`.
    pub fn div(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        binary(
            "div",
            self,
            other,
            |a, b| a / guarded(b),
            |_, b| T::one() / guarded(b),
            |a, b| {
                let d = guarded(b);
                -a / (d * d)
            },
        )
    }

    /// Plain `a / b`, for denominators known to stay away from zero.
    pub fn div_unguarded(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        binary("div_unguarded", self, other, |a, b| a / b, |_, b| T::one() / b, |a, b| -a / (b * b))
    }

    pub fn neg(self) -> Var<'t, T> {
        unary("neg", self, |x| -x, |_, _| -T::one())
    }

    pub fn scale(self, c: f64) -> Var<'t, T> {
        let c = T::from_f64(c);
        unary("scale", self, move |x| x * c, move |_, _| c)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t, T> {
        let c = T::from_f64(c);
        unary("add_scalar", self, move |x| x + c, |_, _| T::one())
    }

    /// `c - x`.
    pub fn rsub_scalar(self, c: f64) -> Var<'t, T> {
        let c = T::from_f64(c);
        unary("rsub_scalar", self, move |x| c - x, |_, _| -T::one())
    }

    pub fn square(self) -> Var<'t, T> {
        unary("square", self, |x| x * x, |x, _| x + x)
    }

    /// `sqrt(x + η)`; finite slope at zero.
    pub fn sqrt(self) -> Var<'t, T> {
        let eta = T::from_f64(GUARD);
        unary(
            "sqrt",
            self,
            move |x| (x + eta).sqrt(),
            |_, y| T::from_f64(0.5) / y,
        )
    }

    pub fn atan(self) -> Var<'t, T> {
        unary("atan", self, |x| x.atan(), |x, _| T::one() / (T::one() + x * x))
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        unary("sigmoid", self, sigmoid, |_, y| y * (T::one() - y))
    }

    /// Smoothed Heaviside `1/2 + atan(x/ε)/π`.
    ///
    /// Negative inputs are evaluated as `1 - H(-x)`, which makes
    /// `H(-x) = 1 - H(x)` hold bitwise and keeps every complement exact.
    pub fn heaviside(self, eps: f64) -> Var<'t, T> {
        let e = T::from_f64(eps);
        unary(
            "heaviside",
            self,
            move |x| heaviside_kernel(x, e),
            move |x, _| dirac_kernel(x, e),
        )
    }

    /// Smoothed Dirac delta `(ε/π) / (ε² + x²)`, the derivative of
    /// [`Var::heaviside`].
    pub fn dirac(self, eps: f64) -> Var<'t, T> {
        let e = T::from_f64(eps);
        unary(
            "dirac",
            self,
            move |x| dirac_kernel(x, e),
            move |x, _| {
                let d = e * e + x * x;
                -(x + x) * e / (T::PI() * d * d)
            },
        )
    }

    /// Rectifier; NaN passes through so divergence stays visible.
    pub fn relu(self) -> Var<'t, T> {
        unary(
            "relu",
            self,
            |x| if x < T::zero() { T::zero() } else { x },
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    /// `ln(1 + eˣ)`, computed stably.
    pub fn softplus(self) -> Var<'t, T> {
        unary(
            "softplus",
            self,
            |x| x.max(T::zero()) + (-x.abs()).exp().ln_1p(),
            |x, _| sigmoid(x),
        )
    }

    /// Clamps to `[lo, hi]`; NaN passes through.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t, T> {
        let (lo, hi) = (T::from_f64(lo), T::from_f64(hi));
        unary(
            "clamp",
            self,
            move |x| {
                if x < lo {
                    lo
                } else if x > hi {
                    hi
                } else {
                    x
                }
            },
            move |x, _| {
                if x < lo || x > hi {
                    T::zero()
                } else {
                    T::one()
                }
            },
        )
    }
}

#[inline]
pub(crate) fn heaviside_kernel<T: Real>(x: T, eps: T) -> T {
    let half = T::from_f64(0.5);
    if x < T::zero() {
        T::one() - (half + (-x / eps).atan() / T::PI())
    } else {
        half + (x / eps).atan() / T::PI()
    }
}

#[inline]
pub(crate) fn dirac_kernel<T: Real>(x: T, eps: T) -> T {
    eps / (T::PI() * (eps * eps + x * x))
}

#[inline]
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

macro_rules! forward_op {
    ($tr:ident, $method:ident) => {
        impl<'t, T: Real> $tr for Var<'t, T> {
            type Output = Var<'t, T>;
            /// Panics on shape mismatch; use the named method for a `Result`.
            fn $method(self, rhs: Var<'t, T>) -> Var<'t, T> {
                Var::$method(self, rhs).expect(concat!("shape mismatch in ", stringify!($method)))
            }
        }
    };
}

forward_op!(Add, add);
forward_op!(Sub, sub);
forward_op!(Mul, mul);

impl<'t, T: Real> Neg for Var<'t, T> {
    type Output = Var<'t, T>;
    fn neg(self) -> Var<'t, T> {
        Var::neg(self)
    }
}
