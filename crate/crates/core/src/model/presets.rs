//! Ready-made model configurations.

use nalgebra::{DMatrix, DVector};

use super::{FilterKind, ModelSpec, PayoffMap, VolatilityMap};
use crate::scalar::Real;

fn v<T: Real>(xs: &[f64]) -> DVector<T> {
    DVector::from_iterator(xs.len(), xs.iter().map(|&x| T::lit(x)))
}

fn m<T: Real>(n: usize, xs: &[f64]) -> DMatrix<T> {
    DMatrix::from_row_iterator(n, xs.len() / n, xs.iter().map(|&x| T::lit(x)))
}

/// Index loading used by [`index_hedge`].
pub const INDEX_LOADING: [f64; 3] = [-0.07, -0.12, 0.27];

/// Two tradables and one non-tradable index under a three-factor Kalman–Bucy
/// signal. The index follows `dY = Y^β σ_yᵀ(θ̂dt + dn)` and the liability is
/// `H = Y_T`. Tradables carry log-normal volatility `0.2`.
pub fn index_hedge<T: Real>(beta: T, horizon: T) -> ModelSpec<T> {
    let s = INDEX_LOADING;
    let base = m(3, &[0.2, 0.0, 0.0, 0.0, 0.2, 0.0, s[0], s[1], s[2]]);
    let volatility = VolatilityMap::Composite(
        base.row_iter()
            .enumerate()
            .map(|(i, row)| super::RowProfile {
                coord: i,
                scale: if i == 2 { super::Scale::Power(beta) } else { super::Scale::Linear },
                loading: row.transpose(),
            })
            .collect(),
    );
    ModelSpec {
        d: 2,
        m: 1,
        z0: v(&[0.3, 0.3, 0.1]),
        sigma0: m(3, &[0.2, 0.1, -0.01, 0.1, 0.2, -0.05, -0.01, -0.05, 0.2]),
        mu: v(&[0.06, 0.06, 0.02]),
        f: m(3, &[0.2, 0.07, 0.05, 0.07, 0.2, 0.03, 0.05, 0.03, 0.2]),
        delta: m(3, &[0.3, 0.15, -0.1, 0.15, 0.3, -0.08, -0.03, -0.07, 0.3]),
        filter_kind: FilterKind::KalmanBucy,
        volatility,
        payoff: PayoffMap::IndexLinear { index: 2 },
        horizon,
        x0: v(&[1.0, 1.0, 1.0]),
    }
}

/// Fully observed single-asset market: `Σ0 = s0·I` with no signal noise and
/// constant drift. Setting `s0 → 0` recovers a deterministic price of risk.
pub fn single_asset<T: Real>(theta: f64, s0: f64, horizon: T) -> ModelSpec<T> {
    ModelSpec {
        d: 1,
        m: 0,
        z0: v(&[theta]),
        sigma0: m(1, &[s0]),
        mu: v(&[0.0]),
        f: m(1, &[0.0]),
        delta: m(1, &[0.0]),
        filter_kind: FilterKind::KalmanBucy,
        volatility: VolatilityMap::LogLinear(m(1, &[0.2])),
        payoff: PayoffMap::Constant(T::one()),
        horizon,
        x0: v(&[1.0]),
    }
}

/// One tradable and one non-tradable index (`n = 2`) with a CEV index row
/// `max(Y,0)^β (−0.1, 0.25)` and `H = Y_T`. Small enough for nested Monte Carlo.
pub fn small_index<T: Real>(beta: T, horizon: T) -> ModelSpec<T> {
    let volatility = VolatilityMap::Composite(vec![
        super::RowProfile { coord: 0, scale: super::Scale::Linear, loading: v(&[0.2, 0.0]) },
        super::RowProfile { coord: 1, scale: super::Scale::Power(beta), loading: v(&[-0.1, 0.25]) },
    ]);
    ModelSpec {
        d: 1,
        m: 1,
        z0: v(&[0.3, 0.1]),
        sigma0: m(2, &[0.2, -0.05, -0.05, 0.2]),
        mu: v(&[0.06, 0.02]),
        f: m(2, &[0.2, 0.05, 0.05, 0.2]),
        delta: m(2, &[0.3, -0.1, -0.05, 0.3]),
        filter_kind: FilterKind::KalmanBucy,
        volatility,
        payoff: PayoffMap::IndexLinear { index: 1 },
        horizon,
        x0: v(&[1.0, 1.0]),
    }
}
