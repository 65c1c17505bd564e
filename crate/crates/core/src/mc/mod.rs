//! Monte Carlo engine: path simulation under the physical and forward
//! measures, stochastic flows, `V1`/`ζ1`/`V0` estimators, the particle
//! representation, and optimal-wealth replay.
//!
//! Every unit of work (a path, or an antithetic pair) draws from its own
//! generator keyed by `(seed, unit, group)`, see [`crate::rng`], so results do
//! not depend on the thread count.

mod estimators;
mod grid;
mod hedge;
mod particle;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use estimators::{
    a_kac_check, estimate_v1, estimate_z1_delta, estimate_z1_flows, girsanov_check, GirsanovReport,
    VectorEstimate,
};
pub use grid::{assemble_z, check_dim, Kernel, McGrid, Node, PathState, MAX_DIM};
pub use hedge::{
    estimate_v0, estimate_v0_solvable, replay_wealth, HedgeProvider, HedgeReport, Histogram,
    MartingalePoint, PiPoint, SolvableProvider, WealthRow, HISTOGRAM_BINS,
};
pub use particle::{estimate_v0_particle, v0_nested};

use crate::coeffs::CoefficientTable;
use crate::error::{MvhError, Result};
use crate::model::ModelSpec;
use crate::rng::{fill_normals, unit_rng};
use crate::scalar::Real;
use crate::stats::{chunked, Estimate, Welford};

/// Probability measure the paths are simulated under.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    Physical,
    ForwardAT,
}

/// Sampling controls shared by all estimators.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimConfig<T> {
    /// Total number of paths; with antithetics this counts both members of each pair.
    pub n_paths: usize,
    pub dt: T,
    pub seed: u64,
    pub antithetic: bool,
}

impl<T: Real> SimConfig<T> {
    pub fn new(n_paths: usize, dt: T, seed: u64) -> Self {
        SimConfig { n_paths, dt, seed, antithetic: false }
    }

    pub fn antithetic(mut self, on: bool) -> Self {
        self.antithetic = on;
        self
    }

    /// Number of independent work units.
    pub fn units(&self) -> usize {
        if self.antithetic {
            self.n_paths / 2
        } else {
            self.n_paths
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_paths == 0 || (self.antithetic && self.n_paths < 2) {
            return Err(MvhError::ConfigInvalid("Monte Carlo needs at least one path (two with antithetics)".into()));
        }
        Ok(())
    }

    /// Paths per unit.
    fn width(&self) -> usize {
        if self.antithetic {
            2
        } else {
            1
        }
    }
}

/// Initial condition `(t, x, ẑ)` of a simulation.
#[derive(Clone, Debug, PartialEq)]
pub struct StartState<T> {
    pub t: T,
    pub x: Vec<T>,
    pub z: Vec<T>,
}

impl<T: Real> StartState<T> {
    /// `(0, X_0, z_0)` of the model.
    pub fn initial(spec: &ModelSpec<T>) -> Self {
        StartState { t: T::zero(), x: spec.x0.iter().copied().collect(), z: spec.z0.iter().copied().collect() }
    }
}

/// Terminal flow matrices per path, row-major `n × n` each.
#[derive(Clone, Debug)]
pub struct Flows<T> {
    pub chi: Vec<T>,
    pub chit: Vec<T>,
    pub xi: Vec<T>,
}

impl<T> Default for Flows<T> {
    fn default() -> Self {
        Flows { chi: Vec::new(), chit: Vec::new(), xi: Vec::new() }
    }
}

/// Simulated paths. Terminal values are always kept; full trajectories only
/// on request. With antithetics, paths `2p` and `2p + 1` form pair `p`.
#[derive(Clone, Debug)]
pub struct PathEnsemble<T: Real> {
    pub measure: Measure,
    pub seed: u64,
    pub dt: T,
    pub steps: usize,
    pub antithetic: bool,
    pub start: StartState<T>,
    pub n: usize,
    pub n_paths: usize,
    /// `X_T`, `n` values per path.
    pub x_t: Vec<T>,
    /// `ẑ_T`, `n` values per path.
    pub z_t: Vec<T>,
    /// `ln L_T⁻¹` per path (zero under the physical measure).
    pub log_linv: Vec<T>,
    pub flows: Option<Flows<T>>,
    /// `(X, ẑ)` at every node, `(steps + 1) · 2n` values per path.
    pub trajectories: Option<Vec<T>>,
}

impl<T: Real> PathEnsemble<T> {
    pub fn x_at_end(&self, p: usize) -> &[T] {
        &self.x_t[p * self.n..(p + 1) * self.n]
    }

    pub fn z_at_end(&self, p: usize) -> &[T] {
        &self.z_t[p * self.n..(p + 1) * self.n]
    }

    /// Node times of the simulation grid.
    pub fn times(&self) -> Vec<T> {
        (0..=self.steps).map(|k| self.start.t + self.dt * T::from_count(k)).collect()
    }

    /// `(X, ẑ)` of path `p` at node `k`, when trajectories were kept.
    pub fn state_at(&self, p: usize, k: usize) -> Option<(&[T], &[T])> {
        let tr = self.trajectories.as_ref()?;
        let w = 2 * self.n;
        let base = (p * (self.steps + 1) + k) * w;
        Some((&tr[base..base + self.n], &tr[base + self.n..base + w]))
    }

    /// Estimate of a per-path quantity, averaging antithetic pairs first.
    pub fn estimate_of(&self, per_path: impl Fn(usize) -> f64) -> Estimate {
        unit_estimate(self.n_paths, self.antithetic, per_path)
    }
}

/// Mean and SE over units, where a unit is a path or an antithetic pair.
pub fn unit_estimate(n_paths: usize, antithetic: bool, per_path: impl Fn(usize) -> f64) -> Estimate {
    let mut w = Welford::default();
    if antithetic {
        for p in 0..n_paths / 2 {
            w.push(0.5 * (per_path(2 * p) + per_path(2 * p + 1)));
        }
    } else {
        for p in 0..n_paths {
            w.push(per_path(p));
        }
    }
    w.estimate()
}

/// Standard normals scaled by `√dt` for `steps` steps of unit `unit`, stream `group`.
pub fn draw_increments<T: Real>(rng: &mut ChaCha8Rng, dt: T, steps: usize, n: usize, out: &mut Vec<T>) {
    out.resize(steps * n, T::zero());
    fill_normals(rng, dt.sqrt(), out);
}

/// Options for [`simulate`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SimOptions {
    pub with_flows: bool,
    pub keep_trajectories: bool,
}

/// Euler–Maruyama simulation of `(X, ẑ)` from `start` to the horizon.
///
/// Under [`Measure::ForwardAT`] the state drifts are `(ψ, Ψ)` for `X` and
/// `(φ, Φ)` for `ẑ`, and `ln L⁻¹` is accumulated; under
/// [`Measure::Physical`] `X` is driven by `ẑ dt + dn` and `ẑ` by the
/// Kalman–Bucy dynamics. Flows are only available under the forward measure.
pub fn simulate<T: Real>(
    spec: &ModelSpec<T>,
    table: &CoefficientTable<T>,
    measure: Measure,
    start: &StartState<T>,
    cfg: SimConfig<T>,
    opts: SimOptions,
) -> Result<PathEnsemble<T>> {
    cfg.validate()?;
    check_dim(spec)?;
    if opts.with_flows && measure == Measure::Physical {
        return Err(MvhError::ConfigMismatch("flows are integrated under the forward measure only".into()));
    }
    let grid = McGrid::new(table, start.t, cfg.dt)?;
    let vol = spec.volatility.compile();
    let kern = Kernel::new(&grid, &vol);
    let n = grid.n;
    let steps = grid.steps;
    let width = cfg.width();
    let traj_w = (steps + 1) * 2 * n;

    struct Chunk<T> {
        x: Vec<T>,
        z: Vec<T>,
        l: Vec<T>,
        flows: Flows<T>,
        traj: Vec<T>,
    }

    let parts = chunked(cfg.units(), |range| -> Result<Chunk<T>> {
        let mut out = Chunk { x: Vec::new(), z: Vec::new(), l: Vec::new(), flows: Flows::default(), traj: Vec::new() };
        let mut st = PathState::new(n);
        let mut normals = Vec::new();
        let mut dw = [T::zero(); MAX_DIM];
        for unit in range {
            draw_increments(&mut unit_rng(cfg.seed, unit as u64, 0), grid.dt, steps, n, &mut normals);
            for member in 0..width {
                let path = unit * width + member;
                let sign = if member == 0 { T::one() } else { -T::one() };
                st.reset(&start.x, &start.z);
                if opts.keep_trajectories {
                    out.traj.extend_from_slice(&st.x);
                    out.traj.extend_from_slice(&st.z);
                }
                for k in 0..steps {
                    for j in 0..n {
                        dw[j] = sign * normals[k * n + j];
                    }
                    match measure {
                        Measure::ForwardAT => kern.step_forward(k, &mut st, &dw[..n], opts.with_flows),
                        Measure::Physical => kern.step_physical(k, &mut st, &dw[..n]),
                    }
                    kern.check(&st, path, k + 1)?;
                    if opts.keep_trajectories {
                        out.traj.extend_from_slice(&st.x);
                        out.traj.extend_from_slice(&st.z);
                    }
                }
                out.x.extend_from_slice(&st.x);
                out.z.extend_from_slice(&st.z);
                out.l.push(st.log_linv);
                if opts.with_flows {
                    out.flows.chi.extend_from_slice(&st.chi);
                    out.flows.chit.extend_from_slice(&st.chit);
                    out.flows.xi.extend_from_slice(&st.xi);
                }
            }
        }
        Ok(out)
    });

    let n_paths = cfg.units() * width;
    let mut ens = PathEnsemble {
        measure,
        seed: cfg.seed,
        dt: grid.dt,
        steps,
        antithetic: cfg.antithetic,
        start: start.clone(),
        n,
        n_paths,
        x_t: Vec::with_capacity(n_paths * n),
        z_t: Vec::with_capacity(n_paths * n),
        log_linv: Vec::with_capacity(n_paths),
        flows: opts.with_flows.then(Flows::default),
        trajectories: opts.keep_trajectories.then(|| Vec::with_capacity(n_paths * traj_w)),
    };
    for part in parts {
        let c = part?;
        ens.x_t.extend(c.x);
        ens.z_t.extend(c.z);
        ens.log_linv.extend(c.l);
        if let Some(f) = ens.flows.as_mut() {
            f.chi.extend(c.flows.chi);
            f.chit.extend(c.flows.chit);
            f.xi.extend(c.flows.xi);
        }
        if let Some(t) = ens.trajectories.as_mut() {
            t.extend(c.traj);
        }
    }
    Ok(ens)
}
