//! Terminal liabilities `H(x)` with derivatives through third order.

use std::fmt;
use std::sync::Arc;

use crate::scalar::Real;

/// User-supplied smooth payoff. Buffers are row-major: `hessian` has `n²`
/// entries, `third` has `n³` entries indexed `(i * n + j) * n + k`.
pub trait SmoothPayoff<T>: Send + Sync + fmt::Debug {
    fn value(&self, x: &[T]) -> T;
    fn gradient(&self, x: &[T], out: &mut [T]);
    fn hessian(&self, x: &[T], out: &mut [T]);
    fn third(&self, x: &[T], out: &mut [T]);
}

/// Terminal liability as a function of `X_T`.
#[derive(Clone, Debug)]
pub enum PayoffMap<T: Real> {
    /// `H = x[index]`.
    IndexLinear { index: usize },
    /// `H ≡ value`.
    Constant(T),
    /// `H = max(x[index], 0)^exponent`.
    Power { index: usize, exponent: T },
    Smooth(Arc<dyn SmoothPayoff<T>>),
}

impl<T: Real> PayoffMap<T> {
    /// Polynomial degree when known; derivatives above it vanish identically.
    pub fn degree(&self) -> Option<usize> {
        match self {
            PayoffMap::Constant(_) => Some(0),
            PayoffMap::IndexLinear { .. } => Some(1),
            _ => None,
        }
    }

    /// Largest coordinate index the payoff reads, if any.
    pub fn max_index(&self) -> Option<usize> {
        match self {
            PayoffMap::IndexLinear { index } | PayoffMap::Power { index, .. } => Some(*index),
            _ => None,
        }
    }

    #[inline]
    pub fn value(&self, x: &[T]) -> T {
        match self {
            PayoffMap::IndexLinear { index } => x[*index],
            PayoffMap::Constant(c) => *c,
            PayoffMap::Power { index, exponent } => power_parts(x[*index], *exponent)[0],
            PayoffMap::Smooth(h) => h.value(x),
        }
    }

    #[inline]
    pub fn gradient(&self, x: &[T], out: &mut [T]) {
        match self {
            PayoffMap::Smooth(h) => h.gradient(x, out),
            _ => {
                out.iter_mut().for_each(|v| *v = T::zero());
                match self {
                    PayoffMap::IndexLinear { index } => out[*index] = T::one(),
                    PayoffMap::Power { index, exponent } => {
                        out[*index] = power_parts(x[*index], *exponent)[1]
                    }
                    _ => {}
                }
            }
        }
    }

    pub fn hessian(&self, x: &[T], out: &mut [T]) {
        let n = x.len();
        match self {
            PayoffMap::Smooth(h) => h.hessian(x, out),
            _ => {
                out.iter_mut().for_each(|v| *v = T::zero());
                if let PayoffMap::Power { index, exponent } = self {
                    out[index * n + index] = power_parts(x[*index], *exponent)[2];
                }
            }
        }
    }

    pub fn third(&self, x: &[T], out: &mut [T]) {
        let n = x.len();
        match self {
            PayoffMap::Smooth(h) => h.third(x, out),
            _ => {
                out.iter_mut().for_each(|v| *v = T::zero());
                if let PayoffMap::Power { index, exponent } = self {
                    out[(index * n + index) * n + index] = power_parts(x[*index], *exponent)[3];
                }
            }
        }
    }
}

fn power_parts<T: Real>(v: T, p: T) -> [T; 4] {
    if v <= T::zero() {
        return [T::zero(); 4];
    }
    let f = v.powf(p);
    let f1 = p * f / v;
    let f2 = (p - T::one()) * f1 / v;
    let f3 = (p - T::lit(2.0)) * f2 / v;
    [f, f1, f2, f3]
}
