//! Posterior covariance `Σ(t)` and posterior mean `ẑ_t` of the market price of risk.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{MvhError, Result};
use crate::linalg::{max_abs, min_sym_eigenvalue, symmetrize};
use crate::model::{FilterKind, ModelSpec};
use crate::scalar::Real;

const BLOW_UP: f64 = 1e8;
const PD_TOL: f64 = -1e-10;

/// Posterior mean and covariance at time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterState<T: Real> {
    pub t: T,
    pub zhat: DVector<T>,
    pub sigma: DMatrix<T>,
}

/// `Σ` on a uniform grid `t_k = k·step`, linearly interpolated in between.
#[derive(Clone, Debug)]
pub struct SigmaSchedule<T: Real> {
    pub step: T,
    pub values: Vec<DMatrix<T>>,
}

impl<T: Real> SigmaSchedule<T> {
    pub fn horizon(&self) -> T {
        self.step * T::from_count(self.values.len() - 1)
    }

    pub fn times(&self) -> impl Iterator<Item = T> + '_ {
        (0..self.values.len()).map(move |k| self.step * T::from_count(k))
    }

    /// Node index and weight for time `t` (clamped to the grid).
    #[inline]
    pub fn locate(&self, t: T) -> (usize, T) {
        grid_locate(self.step, self.values.len(), t)
    }

    pub fn at(&self, t: T) -> DMatrix<T> {
        let (i, w) = self.locate(t);
        if w == T::zero() {
            return self.values[i].clone();
        }
        &self.values[i] * (T::one() - w) + &self.values[i + 1] * w
    }

    /// Writes `t, s_00, s_01, …` rows in row-major entry order.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let n = self.values[0].nrows();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        for i in 0..n {
            for j in 0..n {
                header.push(format!("sigma_{i}{j}"));
            }
        }
        w.write_record(&header)?;
        for (t, s) in self.times().zip(&self.values) {
            let mut rec = vec![fmt_num(t)];
            for i in 0..n {
                for j in 0..n {
                    rec.push(fmt_num(s[(i, j)]));
                }
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn fmt_num<T: Real>(x: T) -> String {
    format!("{:.12e}", x.as_f64())
}

/// Node index `i` and weight `w ∈ [0,1)` such that `t = (i + w)·step`.
#[inline]
pub(crate) fn grid_locate<T: Real>(step: T, len: usize, t: T) -> (usize, T) {
    let x = (t / step).max(T::zero());
    let last = len - 1;
    let fi = x.floor();
    let i = fi.to_usize().unwrap_or(last);
    if i >= last {
        return (last, T::zero());
    }
    let w = x - fi;
    // Snap round-off so that grid times hit nodes exactly.
    if w < T::lit(1e-9) {
        (i, T::zero())
    } else if w > T::one() - T::lit(1e-9) {
        (i + 1, T::zero())
    } else {
        (i, w)
    }
}

/// `(Σ0⁻¹ + tI)⁻¹`.
pub fn bayesian_sigma<T: Real>(sigma0: &DMatrix<T>, t: T) -> Result<DMatrix<T>> {
    let n = sigma0.nrows();
    let inv = sigma0.clone().try_inverse().ok_or(MvhError::SingularMatrix("Sigma0"))?;
    let mut s = (inv + DMatrix::identity(n, n) * t)
        .try_inverse()
        .ok_or(MvhError::SingularMatrix("Sigma0^-1 + tI"))?;
    symmetrize(&mut s);
    Ok(s)
}

fn riccati_rhs<T: Real>(ddt: &DMatrix<T>, f: &DMatrix<T>, s: &DMatrix<T>) -> DMatrix<T> {
    ddt - f * s - s * f.transpose() - s * s
}

/// Number of uniform steps of length close to `step` covering `[0, horizon]`.
pub fn grid_steps<T: Real>(horizon: T, step: T) -> Result<usize> {
    if !(step > T::zero()) || !(horizon > T::zero()) {
        return Err(MvhError::ConfigInvalid("step and horizon must be positive".into()));
    }
    let k = (horizon / step - T::lit(1e-9)).ceil();
    k.to_usize().filter(|&k| k >= 1).ok_or(MvhError::ConfigInvalid("grid too fine".into()))
}

/// Integrates the forward Riccati equation `Σ̇ = δδᵀ − FΣ − ΣFᵀ − Σ²` with RK4,
/// symmetrizing every node. Bayesian specs use the closed form on the same grid.
pub fn solve_kalman_sigma<T: Real>(spec: &ModelSpec<T>, step: T) -> Result<SigmaSchedule<T>> {
    let k = grid_steps(spec.horizon, step)?;
    let h = spec.horizon / T::from_count(k);
    if spec.filter_kind == FilterKind::Bayesian {
        let values = (0..=k)
            .map(|i| bayesian_sigma(&spec.sigma0, h * T::from_count(i)))
            .collect::<Result<Vec<_>>>()?;
        return Ok(SigmaSchedule { step: h, values });
    }
    let ddt = spec.delta_delta_t();
    let f = &spec.f;
    let mut values = Vec::with_capacity(k + 1);
    let mut s = spec.sigma0.clone();
    symmetrize(&mut s);
    values.push(s.clone());
    let half = T::lit(0.5);
    let sixth = h / T::lit(6.0);
    for i in 0..k {
        let k1 = riccati_rhs(&ddt, f, &s);
        let k2 = riccati_rhs(&ddt, f, &(&s + &k1 * (h * half)));
        let k3 = riccati_rhs(&ddt, f, &(&s + &k2 * (h * half)));
        let k4 = riccati_rhs(&ddt, f, &(&s + &k3 * h));
        s += (k1 + (k2 + k3) * T::lit(2.0) + k4) * sixth;
        symmetrize(&mut s);
        let t = (h * T::from_count(i + 1)).as_f64();
        if !(max_abs(&s) <= T::lit(BLOW_UP)) {
            return Err(MvhError::BlowUp { what: "posterior covariance", t });
        }
        let min_eig = min_sym_eigenvalue(&s);
        if min_eig < T::lit(PD_TOL) {
            return Err(MvhError::NotPositiveDefinite { t, min_eig: min_eig.as_f64() });
        }
        values.push(s.clone());
    }
    Ok(SigmaSchedule { step: h, values })
}

/// Euler step `ẑ ← ẑ + (μ − Fẑ)dt + Σ(t)dn`.
pub fn propagate_zhat<T: Real>(
    state: &FilterState<T>,
    schedule: &SigmaSchedule<T>,
    spec: &ModelSpec<T>,
    dn: &DVector<T>,
    dt: T,
) -> FilterState<T> {
    let sigma = schedule.at(state.t);
    let zhat = &state.zhat + (&spec.mu - &spec.f * &state.zhat) * dt + &sigma * dn;
    let t = state.t + dt;
    FilterState { t, sigma: schedule.at(t), zhat }
}
