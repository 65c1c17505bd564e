//! `V1` and `ζ1` estimators, the Girsanov consistency check, and the
//! Feynman–Kac check of the discount factor `A`.

use serde::Serialize;

use super::grid::{assemble_z, combine_z, node_at};
use super::{
    draw_increments, unit_estimate, Kernel, McGrid, Measure, PathEnsemble, PathState, SimConfig,
    StartState, MAX_DIM,
};
use crate::coeffs::{eval_a, CoefficientTable};
use crate::error::{MvhError, Result};
use crate::model::{ModelSpec, PayoffMap};
use crate::rng::unit_rng;
use crate::scalar::Real;
use crate::stats::{chunked, merge_all, Estimate, Welford};

/// Component-wise Monte Carlo estimate of a vector.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VectorEstimate {
    pub value: Vec<f64>,
    pub se: Vec<f64>,
    pub n: u64,
}

impl VectorEstimate {
    fn from_welford(ws: &[Welford]) -> Self {
        VectorEstimate {
            value: ws.iter().map(|w| w.mean).collect(),
            se: ws.iter().map(|w| w.se()).collect(),
            n: ws.first().map_or(0, |w| w.n),
        }
    }

    /// Every component agrees within `k` combined standard errors.
    pub fn agrees(&self, other: &VectorEstimate, k: f64) -> bool {
        self.value.len() == other.value.len()
            && (0..self.value.len()).all(|i| self.component(i).agrees(&other.component(i), k))
    }

    pub fn component(&self, i: usize) -> Estimate {
        Estimate { value: self.value[i], se: self.se[i], n: self.n }
    }
}

/// Per-unit vector accumulation, averaging antithetic pairs first.
fn vector_estimate(n_paths: usize, antithetic: bool, dim: usize, fill: impl Fn(usize, &mut [f64])) -> VectorEstimate {
    let mut ws = vec![Welford::default(); dim];
    let mut a = vec![0.0; dim];
    let mut b = vec![0.0; dim];
    if antithetic {
        for p in 0..n_paths / 2 {
            fill(2 * p, &mut a);
            fill(2 * p + 1, &mut b);
            for i in 0..dim {
                ws[i].push(0.5 * (a[i] + b[i]));
            }
        }
    } else {
        for p in 0..n_paths {
            fill(p, &mut a);
            for i in 0..dim {
                ws[i].push(a[i]);
            }
        }
    }
    VectorEstimate::from_welford(&ws)
}

fn require_forward<T: Real>(ens: &PathEnsemble<T>) -> Result<()> {
    if ens.measure == Measure::ForwardAT {
        Ok(())
    } else {
        Err(MvhError::ConfigMismatch("estimator needs paths under the forward measure".into()))
    }
}

/// `V1(t) = A(t,T)·E^{A_T}[H(X_T)]` from a forward-measure ensemble.
pub fn estimate_v1<T: Real>(ens: &PathEnsemble<T>, table: &CoefficientTable<T>, payoff: &PayoffMap<T>) -> Result<Estimate> {
    require_forward(ens)?;
    let z0 = nalgebra::DVector::from_column_slice(&ens.start.z);
    let a = eval_a(table, ens.start.t, &z0).as_f64();
    Ok(ens.estimate_of(|p| a * payoff.value(ens.x_at_end(p)).as_f64()))
}

/// `ζ1 = V1·Σ(c¹ + c²ẑ) + A·[γ(x)ᵀE(χ∂H) + Σ E(χ̃∂H)]` from an ensemble with flows.
pub fn estimate_z1_flows<T: Real>(
    ens: &PathEnsemble<T>,
    spec: &ModelSpec<T>,
    table: &CoefficientTable<T>,
) -> Result<VectorEstimate> {
    require_forward(ens)?;
    let flows = ens.flows.as_ref().ok_or(MvhError::FlowsMissing)?;
    let n = ens.n;
    let node = node_at(table, ens.start.t);
    let vol = spec.volatility.compile();
    let mut anchor = PathState::new(n);
    anchor.reset(&ens.start.x, &ens.start.z);
    let anchor = std::cell::RefCell::new(anchor);
    let nn = n * n;
    Ok(vector_estimate(ens.n_paths, ens.antithetic, n, |p, out| {
        let mut grad = [T::zero(); MAX_DIM];
        let mut z = [T::zero(); MAX_DIM];
        assemble_z(
            &node,
            &vol,
            &spec.payoff,
            &mut anchor.borrow_mut(),
            ens.x_at_end(p),
            &flows.chi[p * nn..(p + 1) * nn],
            &flows.chit[p * nn..(p + 1) * nn],
            false,
            &mut grad[..n],
            &mut z[..n],
        );
        for i in 0..n {
            out[i] = z[i].as_f64();
        }
    }))
}

/// `ζ1` from central finite differences of `E^{A_T}[H(X_T)]` in each
/// coordinate of `x` and `ẑ`, using common random numbers. The bump in
/// coordinate `v` is `bump · max(|v|, 1)`.
pub fn estimate_z1_delta<T: Real>(
    spec: &ModelSpec<T>,
    table: &CoefficientTable<T>,
    start: &StartState<T>,
    bump: T,
    cfg: SimConfig<T>,
) -> Result<VectorEstimate> {
    cfg.validate()?;
    super::check_dim(spec)?;
    let grid = McGrid::new(table, start.t, cfg.dt)?;
    let vol = spec.volatility.compile();
    let kern = Kernel::new(&grid, &vol);
    let n = grid.n;
    let width = cfg.width();
    let h = |v: T| bump * v.abs().max(T::one());
    let hx: Vec<T> = start.x.iter().map(|&v| h(v)).collect();
    let hz: Vec<T> = start.z.iter().map(|&v| h(v)).collect();

    let parts = chunked(cfg.units(), |range| -> Result<Vec<Welford>> {
        let mut ws = vec![Welford::default(); n];
        let mut st = PathState::new(n);
        let mut anchor = PathState::new(n);
        anchor.reset(&start.x, &start.z);
        let mut normals = Vec::new();
        let mut acc = vec![0.0; n];
        let mut out = [T::zero(); MAX_DIM];
        let mut dx = [T::zero(); MAX_DIM];
        let mut dz = [T::zero(); MAX_DIM];
        let mut x = start.x.clone();
        let mut z = start.z.clone();
        for unit in range {
            draw_increments(&mut unit_rng(cfg.seed, unit as u64, 0), grid.dt, grid.steps, n, &mut normals);
            acc.iter_mut().for_each(|a| *a = 0.0);
            for member in 0..width {
                let path = unit * width + member;
                let sign = if member == 0 { T::one() } else { -T::one() };
                let mut run = |x: &[T], z: &[T]| -> Result<T> {
                    st.reset(x, z);
                    kern.run_forward(0, &mut st, &normals, sign, false, path)?;
                    Ok(spec.payoff.value(&st.x))
                };
                let base = run(&start.x, &start.z)?;
                for i in 0..n {
                    x[i] = start.x[i] + hx[i];
                    let up = run(&x, &start.z)?;
                    x[i] = start.x[i] - hx[i];
                    let dn = run(&x, &start.z)?;
                    x[i] = start.x[i];
                    dx[i] = (up - dn) / (hx[i] + hx[i]);
                    z[i] = start.z[i] + hz[i];
                    let up = run(&start.x, &z)?;
                    z[i] = start.z[i] - hz[i];
                    let dn = run(&start.x, &z)?;
                    z[i] = start.z[i];
                    dz[i] = (up - dn) / (hz[i] + hz[i]);
                }
                combine_z(&grid.nodes[0], &vol, &mut anchor, base, &dx[..n], &dz[..n], false, &mut out[..n]);
                for i in 0..n {
                    acc[i] += out[i].as_f64() / width as f64;
                }
            }
            for i in 0..n {
                ws[i].push(acc[i]);
            }
        }
        Ok(ws)
    });
    let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(VectorEstimate::from_welford(&merge_all(&parts)))
}

/// Both sides of `E_P[H] = E^{A_T}[L_T⁻¹ H]`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct GirsanovReport {
    pub physical: Estimate,
    pub reweighted: Estimate,
    /// `E^{A_T}[L_T⁻¹]`, which must be one.
    pub density_mean: Estimate,
}

impl GirsanovReport {
    pub fn agrees(&self, k: f64) -> bool {
        self.physical.agrees(&self.reweighted, k) && self.density_mean.within(1.0, k, 1e-12)
    }
}

/// Estimates `E_P[H]` directly and by reweighting forward-measure paths,
/// on independent streams.
pub fn girsanov_check<T: Real>(spec: &ModelSpec<T>, table: &CoefficientTable<T>, cfg: SimConfig<T>) -> Result<GirsanovReport> {
    let start = StartState::initial(spec);
    let opts = super::SimOptions::default();
    let phys = super::simulate(spec, table, Measure::Physical, &start, cfg, opts)?;
    let fwd_cfg = SimConfig { seed: cfg.seed ^ 0x9e37_79b9_7f4a_7c15, ..cfg };
    let fwd = super::simulate(spec, table, Measure::ForwardAT, &start, fwd_cfg, opts)?;
    let h = |e: &PathEnsemble<T>, p: usize| spec.payoff.value(e.x_at_end(p)).as_f64();
    Ok(GirsanovReport {
        physical: phys.estimate_of(|p| h(&phys, p)),
        reweighted: fwd.estimate_of(|p| fwd.log_linv[p].as_f64().exp() * h(&fwd, p)),
        density_mean: fwd.estimate_of(|p| fwd.log_linv[p].as_f64().exp()),
    })
}

/// `A(0,T) = E^{P^A}[exp(−∫(½ẑᵀb²ẑ + b¹ᵀẑ)ds)]` against the Riccati value.
pub fn a_kac_check<T: Real>(spec: &ModelSpec<T>, table: &CoefficientTable<T>, cfg: SimConfig<T>) -> Result<(Estimate, f64)> {
    cfg.validate()?;
    let start = StartState::initial(spec);
    let grid = McGrid::new(table, start.t, cfg.dt)?;
    let vol = spec.volatility.compile();
    let kern = Kernel::new(&grid, &vol);
    let n = grid.n;
    let width = cfg.width();
    let parts = chunked(cfg.units(), |range| {
        let mut vals = Vec::with_capacity(range.len() * width);
        let mut st = PathState::new(n);
        let mut normals = Vec::new();
        let mut dn = [T::zero(); MAX_DIM];
        for unit in range {
            draw_increments(&mut unit_rng(cfg.seed, unit as u64, 0), grid.dt, grid.steps, n, &mut normals);
            for member in 0..width {
                let sign = if member == 0 { T::one() } else { -T::one() };
                st.reset(&start.x, &start.z);
                let mut integral = T::zero();
                for k in 0..grid.steps {
                    for j in 0..n {
                        dn[j] = sign * normals[k * n + j];
                    }
                    integral += kern.step_discount(k, &mut st, &dn[..n]) * grid.dt;
                }
                vals.push((-integral).exp().as_f64());
            }
        }
        vals
    });
    let vals: Vec<f64> = parts.into_iter().flatten().collect();
    let est = unit_estimate(vals.len(), cfg.antithetic, |p| vals[p]);
    let exact = eval_a(table, start.t, &spec.z0).as_f64();
    Ok((est, exact))
}
