//! `V0` from a `(V1, ζ1)` provider, optimal-wealth replay, hedge ratios,
//! terminal histograms, and the near-martingale diagnostic.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{draw_increments, Kernel, McGrid, PathState, SimConfig, StartState, MAX_DIM};
use crate::coeffs::{eval_v2, CoefficientTable};
use crate::error::{MvhError, Result};
use crate::filter::fmt_num;
use crate::linalg::{dot, matvec};
use crate::model::{ModelSpec, PayoffMap};
use crate::rng::unit_rng;
use crate::scalar::Real;
use crate::stats::{chunked, Estimate, Welford};

/// Supplies `V1` and `ζ1` at a grid node for a state `(x, ẑ)`.
pub trait HedgeProvider<T: Real>: Sync {
    /// Writes `ζ1` into `z1` and returns `V1`.
    fn eval(&self, grid: &McGrid<T>, k: usize, x: &[T], z: &[T], z1: &mut [T]) -> T;
}

/// Closed forms `V1 = y·A·P`, `ζ1 = V1{σ_y + Σ(c¹ + β¹ + c²ẑ)}` of the
/// solvable index model.
#[derive(Clone, Debug)]
pub struct SolvableProvider<T> {
    index: usize,
    sigma_y: Vec<T>,
}

impl<T: Real> SolvableProvider<T> {
    pub fn new(table: &CoefficientTable<T>) -> Result<Self> {
        let (index, sy) = table
            .sigma_y
            .as_ref()
            .ok_or_else(|| MvhError::ConfigMismatch("closed-form hedge needs the solvable index model".into()))?;
        Ok(SolvableProvider { index: *index, sigma_y: sy.iter().copied().collect() })
    }
}

impl<T: Real> HedgeProvider<T> for SolvableProvider<T> {
    fn eval(&self, grid: &McGrid<T>, k: usize, x: &[T], z: &[T], z1: &mut [T]) -> T {
        let n = grid.n;
        let c = &grid.nodes[k];
        let (b1, _) = c.beta.as_ref().expect("solvable grid carries beta");
        let v1 = x[self.index] * (c.ln_a(z) + c.ln_p(z).expect("beta")).exp();
        let mut v = [T::zero(); MAX_DIM];
        let mut w = [T::zero(); MAX_DIM];
        matvec(n, &c.c2, z, &mut v[..n]);
        for i in 0..n {
            v[i] += c.c1[i] + b1[i];
        }
        matvec(n, &c.sigma, &v[..n], &mut w[..n]);
        for i in 0..n {
            z1[i] = v1 * (self.sigma_y[i] + w[i]);
        }
        v1
    }
}

/// Bins of `H − W_T` for one initial capital.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Histogram {
    pub w: f64,
    pub lo: f64,
    pub width: f64,
    pub counts: Vec<u64>,
    pub mean: f64,
    pub std: f64,
}

/// Bins per histogram.
pub const HISTOGRAM_BINS: usize = 200;

impl Histogram {
    /// [`HISTOGRAM_BINS`] uniform bins over `mean ± 5·std`.
    pub fn from_samples(w: f64, xs: &[f64]) -> Self {
        let mut acc = Welford::default();
        xs.iter().for_each(|&x| acc.push(x));
        let std = acc.variance().sqrt();
        let half = (5.0 * std).max(1e-12);
        let lo = acc.mean - half;
        let width = 2.0 * half / HISTOGRAM_BINS as f64;
        let mut counts = vec![0u64; HISTOGRAM_BINS];
        for &x in xs {
            let b = ((x - lo) / width).floor();
            if b >= 0.0 && b < HISTOGRAM_BINS as f64 {
                counts[b as usize] += 1;
            }
        }
        Histogram { w, lo, width, counts, mean: acc.mean, std }
    }

    /// Columns `w, bin_lo, bin_hi, count, density`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(out);
        wr.write_record(["w", "bin_lo", "bin_hi", "count", "density"])?;
        let total: u64 = self.counts.iter().sum();
        for (i, &c) in self.counts.iter().enumerate() {
            let lo = self.lo + self.width * i as f64;
            let density = if total == 0 { 0.0 } else { c as f64 / (total as f64 * self.width) };
            wr.write_record([
                fmt_num(self.w),
                fmt_num(lo),
                fmt_num(lo + self.width),
                c.to_string(),
                fmt_num(density),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Predicted and simulated hedging error for one initial capital.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WealthRow {
    pub w: f64,
    /// `w²V2(0) − 2wV1(0) + V0(0)`.
    pub predicted: f64,
    /// Simulated `E[(H − W_T)²]`.
    pub simulated: Estimate,
}

/// Optimal position `π*` at one node of the sample path.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PiPoint {
    pub w: f64,
    pub t: f64,
    pub pi: Vec<f64>,
}

/// `E[V(t, W_t)]` at one checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MartingalePoint {
    pub w: f64,
    pub t: f64,
    pub value: Estimate,
}

/// Result of [`replay_wealth`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HedgeReport {
    pub v2_0: f64,
    pub v1_0: f64,
    pub v0: Estimate,
    pub w_star: f64,
    pub rows: Vec<WealthRow>,
    pub histograms: Vec<Histogram>,
    pub pi_path: Vec<PiPoint>,
    pub martingale: Vec<MartingalePoint>,
}

impl HedgeReport {
    /// `V(0,w) = w²V2 − 2wV1 + V0`.
    pub fn value(&self, w: f64) -> f64 {
        w * w * self.v2_0 - 2.0 * w * self.v1_0 + self.v0.value
    }

    /// Columns `w, predicted, simulated, simulated_se, v0_se`.
    pub fn write_rows_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(out);
        wr.write_record(["w", "predicted", "simulated", "simulated_se", "v0_se"])?;
        for r in &self.rows {
            wr.write_record([
                fmt_num(r.w),
                fmt_num(r.predicted),
                fmt_num(r.simulated.value),
                fmt_num(r.simulated.se),
                fmt_num(self.v0.se),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Columns `w, t, pi_0 … pi_{d−1}`.
    pub fn write_pi_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(out);
        let d = self.pi_path.first().map_or(0, |p| p.pi.len());
        let mut header = vec!["w".to_string(), "t".to_string()];
        header.extend((0..d).map(|i| format!("pi_{i}")));
        wr.write_record(&header)?;
        for p in &self.pi_path {
            let mut rec = vec![fmt_num(p.w), fmt_num(p.t)];
            rec.extend(p.pi.iter().map(|&v| fmt_num(v)));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Per-path outputs of a hedged physical-measure simulation.
struct PathOut {
    h: f64,
    integral: f64,
    /// `W_T` per capital.
    wealth: Vec<f64>,
    /// `V(t_c, W_{t_c})` estimates per checkpoint and capital, row-major.
    q: Vec<f64>,
}

/// Sample-path data for `π*`.
struct SampleOut<T> {
    x: Vec<Vec<T>>,
    brackets: Vec<Vec<T>>,
}

struct RunOut<T> {
    paths: Vec<PathOut>,
    sample: Option<SampleOut<T>>,
    v1_0: f64,
}

/// Simulates under the physical measure and replays the optimal wealth for
/// every capital in `ws` on the same paths.
///
/// `dW = [(ζ1_d + V1θ̂)/V2 − W(Z_L + θ̂)]·(dN + θ̂dt)` with
/// `Z_L = (Σ(a¹ + a²ẑ))_d`; the `V0` integrand is `|ζ1_d + V1θ̂|²/V2`.
fn hedge_run<T: Real, P: HedgeProvider<T> + ?Sized>(
    spec: &ModelSpec<T>,
    grid: &McGrid<T>,
    provider: &P,
    ws: &[T],
    checkpoints: &[usize],
    cfg: SimConfig<T>,
) -> Result<RunOut<T>> {
    let start = StartState::initial(spec);
    let vol = spec.volatility.compile();
    let kern = Kernel::new(grid, &vol);
    let (n, d, steps) = (grid.n, grid.d, grid.steps);
    let width = cfg.width();
    let nw = ws.len();
    let dtf = grid.dt;

    let parts = chunked(cfg.units(), |range| -> Result<(Vec<PathOut>, Option<SampleOut<T>>)> {
        let mut outs = Vec::with_capacity(range.len() * width);
        let mut sample = None;
        let mut st = PathState::new(n);
        let mut normals = Vec::new();
        let mut z1 = [T::zero(); MAX_DIM];
        let mut zl = [T::zero(); MAX_DIM];
        let mut tmp = [T::zero(); MAX_DIM];
        let mut u = [T::zero(); MAX_DIM];
        let mut ds = [T::zero(); MAX_DIM];
        let mut dn = [T::zero(); MAX_DIM];
        let mut wealth = vec![T::zero(); nw];
        for unit in range {
            draw_increments(&mut unit_rng(cfg.seed, unit as u64, 0), grid.dt, steps, n, &mut normals);
            for member in 0..width {
                let path = unit * width + member;
                let sign = if member == 0 { T::one() } else { -T::one() };
                let record = path == 0;
                let mut rec = SampleOut { x: Vec::new(), brackets: Vec::new() };
                st.reset(&start.x, &start.z);
                wealth.copy_from_slice(ws);
                let mut integral = 0.0;
                // (V2, V1, integral so far, W per capital) at checkpoints
                let mut cp: Vec<(f64, f64, f64, Vec<f64>)> = Vec::with_capacity(checkpoints.len());
                for k in 0..=steps {
                    let c = &grid.nodes[k];
                    let v2 = c.vl(&st.z).exp();
                    let v1 = if k == steps {
                        spec.payoff.value(&st.x)
                    } else {
                        provider.eval(grid, k, &st.x, &st.z, &mut z1[..n])
                    };
                    if checkpoints.contains(&k) {
                        cp.push((v2.as_f64(), v1.as_f64(), integral, wealth.iter().map(|w| w.as_f64()).collect()));
                    }
                    if k == steps {
                        break;
                    }
                    matvec(n, &c.a2, &st.z, &mut tmp[..n]);
                    for i in 0..n {
                        tmp[i] += c.a1[i];
                    }
                    matvec(n, &c.sigma, &tmp[..n], &mut zl[..n]);
                    for i in 0..d {
                        u[i] = (z1[i] + v1 * st.z[i]) / v2;
                    }
                    integral += (dot(&u[..d], &u[..d]) * v2 * dtf).as_f64();
                    for j in 0..n {
                        dn[j] = sign * normals[k * n + j];
                    }
                    for i in 0..d {
                        ds[i] = dn[i] + st.z[i] * dtf;
                    }
                    if record {
                        rec.x.push(st.x.clone());
                        for &w in wealth.iter() {
                            rec.brackets.push((0..d).map(|i| u[i] - w * (zl[i] + st.z[i])).collect());
                        }
                    }
                    let gain = dot(&u[..d], &ds[..d]);
                    let mut lev = T::zero();
                    for i in 0..d {
                        lev += (zl[i] + st.z[i]) * ds[i];
                    }
                    for w in wealth.iter_mut() {
                        *w += gain - *w * lev;
                    }
                    kern.step_physical(k, &mut st, &dn[..n]);
                    kern.check(&st, path, k + 1)?;
                }
                let h = spec.payoff.value(&st.x).as_f64();
                let mut q = Vec::with_capacity(cp.len() * nw);
                for (v2, v1, before, wc) in &cp {
                    for w in wc {
                        q.push(w * w * v2 - 2.0 * w * v1 + h * h - (integral - before));
                    }
                }
                outs.push(PathOut { h, integral, wealth: wealth.iter().map(|w| w.as_f64()).collect(), q });
                if record {
                    sample = Some(rec);
                }
            }
        }
        Ok((outs, sample))
    });
    let mut paths = Vec::with_capacity(cfg.n_paths);
    let mut sample = None;
    for p in parts {
        let (o, s) = p?;
        paths.extend(o);
        if s.is_some() {
            sample = s;
        }
    }
    let mut z1 = [T::zero(); MAX_DIM];
    let v1_0 = provider.eval(grid, 0, &start.x, &start.z, &mut z1[..n]).as_f64();
    Ok(RunOut { paths, sample, v1_0 })
}

fn estimate_paths(paths: &[PathOut], antithetic: bool, f: impl Fn(&PathOut) -> f64) -> Estimate {
    super::unit_estimate(paths.len(), antithetic, |p| f(&paths[p]))
}

/// `V0(0) = E_P[H² − ∫|ζ1_d + V1θ̂|²/V2 dt]` with `(V1, ζ1)` from `provider`
/// and a left-point time sum.
pub fn estimate_v0<T: Real, P: HedgeProvider<T> + ?Sized>(
    spec: &ModelSpec<T>,
    table: &CoefficientTable<T>,
    provider: &P,
    cfg: SimConfig<T>,
) -> Result<Estimate> {
    cfg.validate()?;
    super::check_dim(spec)?;
    let grid = McGrid::new(table, T::zero(), cfg.dt)?;
    let run = hedge_run(spec, &grid, provider, &[], &[], cfg)?;
    Ok(estimate_paths(&run.paths, cfg.antithetic, |p| p.h * p.h - p.integral))
}

/// [`estimate_v0`] with the closed-form provider of the solvable index model.
pub fn estimate_v0_solvable<T: Real>(spec: &ModelSpec<T>, table: &CoefficientTable<T>, cfg: SimConfig<T>) -> Result<Estimate> {
    let provider = SolvableProvider::new(table)?;
    if !matches!(spec.payoff, PayoffMap::IndexLinear { index } if index == provider.index) {
        return Err(MvhError::ConfigMismatch("closed-form hedge needs H = Y_T of the index".into()));
    }
    estimate_v0(spec, table, &provider, cfg)
}

/// Replays the optimal wealth from each capital in `ws` on common physical
/// paths and compares `E[(H − W_T)²]` with `V(0,w)`.
pub fn replay_wealth<T: Real, P: HedgeProvider<T> + ?Sized>(
    spec: &ModelSpec<T>,
    table: &CoefficientTable<T>,
    provider: &P,
    ws: &[T],
    cfg: SimConfig<T>,
) -> Result<HedgeReport> {
    cfg.validate()?;
    super::check_dim(spec)?;
    let grid = McGrid::new(table, T::zero(), cfg.dt)?;
    let mid = grid.node_near(table.horizon * T::lit(0.5));
    let checkpoints = [0, mid, grid.steps];
    let run = hedge_run(spec, &grid, provider, ws, &checkpoints, cfg)?;
    let anti = cfg.antithetic;
    let v2_0 = eval_v2(table, T::zero(), &spec.z0).as_f64();
    let v0 = estimate_paths(&run.paths, anti, |p| p.h * p.h - p.integral);
    let v1_0 = run.v1_0;
    let nw = ws.len();
    let mut rows = Vec::with_capacity(nw);
    let mut histograms = Vec::with_capacity(nw);
    let mut martingale = Vec::new();
    for (i, w) in ws.iter().map(|w| w.as_f64()).enumerate() {
        let simulated = estimate_paths(&run.paths, anti, |p| (p.h - p.wealth[i]).powi(2));
        rows.push(WealthRow { w, predicted: w * w * v2_0 - 2.0 * w * v1_0 + v0.value, simulated });
        let diffs: Vec<f64> = run.paths.iter().map(|p| p.h - p.wealth[i]).collect();
        histograms.push(Histogram::from_samples(w, &diffs));
        for (c, &k) in checkpoints.iter().enumerate() {
            let value = estimate_paths(&run.paths, anti, |p| p.q[c * nw + i]);
            martingale.push(MartingalePoint { w, t: grid.nodes[k].t.as_f64(), value });
        }
    }
    let mut pi_path = Vec::new();
    if let Some(s) = &run.sample {
        let d = grid.d;
        for (k, x) in s.x.iter().enumerate() {
            let gamma = spec.eval_gamma(&DVector::from_column_slice(x))?.gamma;
            let sigma_t: DMatrix<T> = gamma.view((0, 0), (d, d)).transpose();
            let lu = sigma_t.lu();
            for (i, w) in ws.iter().enumerate() {
                let b = DVector::from_column_slice(&s.brackets[k * nw + i]);
                let pi = lu.solve(&b).ok_or(MvhError::SingularMatrix("sigma"))?;
                pi_path.push(PiPoint {
                    w: w.as_f64(),
                    t: grid.nodes[k].t.as_f64(),
                    pi: pi.iter().map(|v| v.as_f64()).collect(),
                });
            }
        }
    }
    Ok(HedgeReport { v2_0, v1_0, v0, w_star: v1_0 / v2_0, rows, histograms, pi_path, martingale })
}
