//! Mean-variance hedging under partial information.
//!
//! The hidden market price of risk is filtered with a Kalman–Bucy (or Bayesian)
//! filter. The three value-function components `V2`, `V1`, `V0` are obtained
//! from Riccati ODE tables, forward-measure Monte Carlo, a particle estimator,
//! and a third-order asymptotic expansion.
//!
//! Numerical types are generic over [`Real`] (`f32` or `f64`); the aliases at
//! the crate root fix `f64`.

pub mod coeffs;
pub mod error;
pub mod expand;
pub mod filter;
pub mod linalg;
pub mod mc;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod stats;

pub use error::{MvhError, Result};
pub use scalar::Real;

pub type ModelSpec = model::ModelSpec<f64>;
pub type VolatilityMap = model::VolatilityMap<f64>;
pub type PayoffMap = model::PayoffMap<f64>;
pub type SigmaSchedule = filter::SigmaSchedule<f64>;
pub type FilterState = filter::FilterState<f64>;
pub type CoefficientTable = coeffs::CoefficientTable<f64>;
pub type IntegralTable = coeffs::IntegralTable<f64>;
