//! Market model: dimensions, prior, signal dynamics, volatility and payoff.

mod payoff;
pub mod presets;
mod volatility;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use payoff::{PayoffMap, SmoothPayoff};
pub use volatility::{
    eval_gamma_unchecked, GammaEval, RowProfile, RowVol, Scale, VolatilityMap,
};

use crate::error::Result;
use crate::linalg::min_sym_eigenvalue;
use crate::scalar::Real;

/// How the posterior covariance is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    /// Constant hidden drift; closed-form `Σ(t) = (Σ0⁻¹ + tI)⁻¹`. Requires `μ = F = δ = 0`.
    Bayesian,
    /// Linear Gaussian signal `dz = (μ − Fz)dt + δ dV`.
    KalmanBucy,
}

/// Full market and filter parameterization. State ordering is
/// `(S_1..S_d, Y_1..Y_m)`.
#[derive(Clone, Debug)]
pub struct ModelSpec<T: Real> {
    pub d: usize,
    pub m: usize,
    pub z0: DVector<T>,
    pub sigma0: DMatrix<T>,
    pub mu: DVector<T>,
    pub f: DMatrix<T>,
    /// `n × p` signal loading.
    pub delta: DMatrix<T>,
    pub filter_kind: FilterKind,
    pub volatility: VolatilityMap<T>,
    pub payoff: PayoffMap<T>,
    pub horizon: T,
    /// Initial state `X_0`.
    pub x0: DVector<T>,
}

impl<T: Real> ModelSpec<T> {
    pub fn n(&self) -> usize {
        self.d + self.m
    }

    /// `γ(x)` with derivatives, failing on a singular `σ` or `ρ` block.
    pub fn eval_gamma(&self, x: &DVector<T>) -> Result<GammaEval<T>> {
        volatility::eval_gamma(&self.volatility, self.d, x)
    }

    /// `δδᵀ`.
    pub fn delta_delta_t(&self) -> DMatrix<T> {
        &self.delta * self.delta.transpose()
    }
}

/// Violated invariants; empty means valid.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.violations.join("; "))
    }
}

/// Checks internal consistency of a model.
pub fn validate<T: Real>(spec: &ModelSpec<T>) -> ValidationReport {
    let mut v = Vec::new();
    let n = spec.n();
    if spec.d < 1 {
        v.push("d ≥ 1 required".to_string());
    }
    if !(spec.horizon > T::zero()) || !spec.horizon.is_finite() {
        v.push("horizon_T must be positive".to_string());
    }
    let mut dims_ok = true;
    let mut dim = |name: &str, got: (usize, usize), want: (usize, usize)| {
        if got != want {
            v.push(format!("{name} has shape {}x{}, expected {}x{}", got.0, got.1, want.0, want.1));
            dims_ok = false;
        }
    };
    dim("z0", spec.z0.shape(), (n, 1));
    dim("mu", spec.mu.shape(), (n, 1));
    dim("x0", spec.x0.shape(), (n, 1));
    dim("Sigma0", spec.sigma0.shape(), (n, n));
    dim("F", spec.f.shape(), (n, n));
    dim("delta", (spec.delta.nrows(), n), (n, n));
    dim("volatility", (spec.volatility.dim(), n), (n, n));
    if !dims_ok {
        return ValidationReport { violations: v };
    }
    let finite = spec.z0.iter().chain(spec.mu.iter()).chain(spec.x0.iter())
        .chain(spec.sigma0.iter()).chain(spec.f.iter()).chain(spec.delta.iter())
        .all(|x| x.is_finite());
    if !finite {
        v.push("non-finite model parameter".to_string());
    }
    if spec.sigma0 != spec.sigma0.transpose() {
        v.push("Sigma0 not symmetric".to_string());
    } else if finite && !(min_sym_eigenvalue(&spec.sigma0) > T::zero()) {
        v.push("Sigma0 not positive definite".to_string());
    }
    if spec.filter_kind == FilterKind::Bayesian {
        let zero = |x: &T| *x == T::zero();
        if !spec.mu.iter().all(zero) || !spec.f.iter().all(zero) || !spec.delta.iter().all(zero) {
            v.push("Bayesian filter requires mu = 0, F = 0, delta = 0".to_string());
        }
    }
    let profiles = spec.volatility.profiles();
    for (i, r) in profiles.iter().enumerate() {
        if r.coord >= n || r.loading.len() != n {
            v.push(format!("volatility row {i} malformed"));
            continue;
        }
        if i < spec.d && (spec.d..n).any(|j| r.loading[j] != T::zero()) {
            v.push(format!("tradable volatility row {i} must vanish on state columns"));
        }
        if let Scale::Power(b) = r.scale {
            if !(b >= T::zero() && b <= T::one()) {
                v.push(format!("volatility row {i} exponent outside [0, 1]"));
            }
        }
    }
    if let VolatilityMap::CevIndex { index, .. } = spec.volatility {
        if index >= n {
            v.push("CEV index out of range".to_string());
        }
    }
    if let Some(i) = spec.payoff.max_index() {
        if i >= n {
            v.push("payoff index out of range".to_string());
        }
    }
    if v.is_empty() {
        if let Err(e) = spec.eval_gamma(&spec.x0) {
            v.push(format!("volatility at x0: {e}"));
        }
    }
    ValidationReport { violations: v }
}
