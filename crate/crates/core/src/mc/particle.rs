//! One-shot particle estimator of `V0` and the nested Monte Carlo oracle it
//! is checked against.

use rand_distr::{Distribution, Exp1};

use super::grid::assemble_z;
use super::{draw_increments, Kernel, McGrid, PathState, SimConfig, StartState, MAX_DIM};
use crate::coeffs::CoefficientTable;
use crate::error::{MvhError, Result};
use crate::model::ModelSpec;
use crate::rng::unit_rng;
use crate::scalar::Real;
use crate::stats::{chunked, Estimate, Welford};

/// Stream reserved for the interaction time.
const TAU_GROUP: u64 = 3;
const INNER_SEED_MIX: u64 = 0xd1b5_4a32_d192_ed03;

/// `Σ_{i<d} u_i v_i`.
fn tradable_dot<T: Real>(d: usize, u: &[T], v: &[T]) -> T {
    (0..d).fold(T::zero(), |acc, i| acc + u[i] * v[i])
}

/// Particle representation of `V0(0)`.
///
/// Each path runs under the forward measure and contributes
/// `L_T⁻¹H² − 1{τ<T}·L_τ⁻¹e^{−V_L(τ)}·(e^{λτ}/λ)·𝒵¹_d·𝒵²_d`, where `τ` is an
/// exponential time with intensity `λ` snapped to the preceding grid node and
/// `𝒵¹`, `𝒵²` are evaluated on two independent particles branched at `τ`.
pub fn estimate_v0_particle<T: Real>(
    spec: &ModelSpec<T>,
    table: &CoefficientTable<T>,
    lambda: T,
    cfg: SimConfig<T>,
) -> Result<Estimate> {
    cfg.validate()?;
    super::check_dim(spec)?;
    if !(lambda > T::zero()) {
        return Err(MvhError::ConfigInvalid("particle intensity must be positive".into()));
    }
    let start = StartState::initial(spec);
    let grid = McGrid::new(table, start.t, cfg.dt)?;
    let vol = spec.volatility.compile();
    let kern = Kernel::new(&grid, &vol);
    let (n, d, steps) = (grid.n, grid.d, grid.steps);
    let span = (grid.dt * T::from_count(steps)).as_f64();
    let lam = lambda.as_f64();
    let width = cfg.width();

    let parts = chunked(cfg.units(), |range| -> Result<Welford> {
        let mut acc = Welford::default();
        let mut main = PathState::new(n);
        let mut anchor = PathState::new(n);
        let mut branch = PathState::new(n);
        let mut normals = Vec::new();
        let mut bn = [Vec::new(), Vec::new()];
        let mut zs = [[T::zero(); MAX_DIM]; 2];
        let mut grad = [T::zero(); MAX_DIM];
        let mut dw = [T::zero(); MAX_DIM];
        for unit in range {
            let u = unit as u64;
            draw_increments(&mut unit_rng(cfg.seed, u, 0), grid.dt, steps, n, &mut normals);
            let tau: f64 = {
                let e: f64 = Exp1.sample(&mut unit_rng(cfg.seed, u, TAU_GROUP));
                e / lam
            };
            let k_tau = (tau < span).then(|| ((tau / grid.dt.as_f64()).floor() as usize).min(steps - 1));
            if let Some(k) = k_tau {
                for (g, buf) in bn.iter_mut().enumerate() {
                    draw_increments(&mut unit_rng(cfg.seed, u, 1 + g as u64), grid.dt, steps - k, n, buf);
                }
            }
            let mut unit_val = 0.0;
            for member in 0..width {
                let path = unit * width + member;
                let sign = if member == 0 { T::one() } else { -T::one() };
                main.reset(&start.x, &start.z);
                let mut second = 0.0;
                for k in 0..steps {
                    if Some(k) == k_tau {
                        anchor.reset(&main.x, &main.z);
                        for (g, z) in zs.iter_mut().enumerate() {
                            branch.reset(&main.x, &main.z);
                            kern.run_forward(k, &mut branch, &bn[g], sign, true, path)?;
                            assemble_z(
                                &grid.nodes[k],
                                &vol,
                                &spec.payoff,
                                &mut anchor,
                                &branch.x,
                                &branch.chi,
                                &branch.chit,
                                true,
                                &mut grad[..n],
                                &mut z[..n],
                            );
                        }
                        let prod = tradable_dot(d, &zs[0], &zs[1]).as_f64();
                        let log_w = main.log_linv.as_f64() - grid.nodes[k].vl(&main.z).as_f64();
                        second = log_w.exp() * (lam * tau).exp() / lam * prod;
                    }
                    for j in 0..n {
                        dw[j] = sign * normals[k * n + j];
                    }
                    kern.step_forward(k, &mut main, &dw[..n], false);
                    kern.check(&main, path, k + 1)?;
                }
                let h = spec.payoff.value(&main.x).as_f64();
                unit_val += (main.log_linv.as_f64().exp() * h * h - second) / width as f64;
            }
            acc.push(unit_val);
        }
        Ok(acc)
    });
    let mut total = Welford::default();
    for p in parts {
        total.merge(&p?);
    }
    Ok(total.estimate())
}

/// Nested two-level Monte Carlo of
/// `V0 = E_P[H² − Σ_k dt·|ζ1_d + V1ẑ_d|²/V2]`: outer paths under the
/// physical measure and, at every node, two independent inner forward-measure
/// batches of `n_inner` particles estimating `ζ1 + V1ẑ`.
pub fn v0_nested<T: Real>(
    spec: &ModelSpec<T>,
    table: &CoefficientTable<T>,
    n_outer: usize,
    n_inner: usize,
    dt: T,
    seed: u64,
) -> Result<Estimate> {
    if n_outer == 0 || n_inner == 0 {
        return Err(MvhError::ConfigInvalid("nested Monte Carlo needs outer and inner paths".into()));
    }
    super::check_dim(spec)?;
    let start = StartState::initial(spec);
    let grid = McGrid::new(table, start.t, dt)?;
    let vol = spec.volatility.compile();
    let kern = Kernel::new(&grid, &vol);
    let (n, d, steps) = (grid.n, grid.d, grid.steps);
    let inv_inner = 1.0 / n_inner as f64;

    let parts = chunked(n_outer, |range| -> Result<Welford> {
        let mut acc = Welford::default();
        let mut outer = PathState::new(n);
        let mut anchor = PathState::new(n);
        let mut inner = PathState::new(n);
        let mut normals = Vec::new();
        let mut inner_normals = Vec::new();
        let mut z = [T::zero(); MAX_DIM];
        let mut grad = [T::zero(); MAX_DIM];
        let mut mean = [[0.0f64; MAX_DIM]; 2];
        for unit in range {
            draw_increments(&mut unit_rng(seed, unit as u64, 0), grid.dt, steps, n, &mut normals);
            outer.reset(&start.x, &start.z);
            let mut integral = 0.0;
            for k in 0..steps {
                anchor.reset(&outer.x, &outer.z);
                for (b, m) in mean.iter_mut().enumerate() {
                    m.iter_mut().for_each(|v| *v = 0.0);
                    let id = ((unit * steps + k) * 2 + b) as u64;
                    let mut rng = unit_rng(seed ^ INNER_SEED_MIX, id, 0);
                    for _ in 0..n_inner {
                        draw_increments(&mut rng, grid.dt, steps - k, n, &mut inner_normals);
                        inner.reset(&outer.x, &outer.z);
                        kern.run_forward(k, &mut inner, &inner_normals, T::one(), true, unit)?;
                        assemble_z(
                            &grid.nodes[k],
                            &vol,
                            &spec.payoff,
                            &mut anchor,
                            &inner.x,
                            &inner.chi,
                            &inner.chit,
                            true,
                            &mut grad[..n],
                            &mut z[..n],
                        );
                        for i in 0..n {
                            m[i] += z[i].as_f64() * inv_inner;
                        }
                    }
                }
                let prod: f64 = (0..d).map(|i| mean[0][i] * mean[1][i]).sum();
                integral += grid.dt.as_f64() * (-grid.nodes[k].vl(&outer.z).as_f64()).exp() * prod;
                kern.step_physical(k, &mut outer, &normals[k * n..(k + 1) * n]);
                kern.check(&outer, unit, k + 1)?;
            }
            let h = spec.payoff.value(&outer.x).as_f64();
            acc.push(h * h - integral);
        }
        Ok(acc)
    });
    let mut total = Welford::default();
    for p in parts {
        total.merge(&p?);
    }
    Ok(total.estimate())
}
