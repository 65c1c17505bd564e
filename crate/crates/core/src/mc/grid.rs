//! Per-node coefficients on a Monte Carlo time grid and the Euler kernels.

use nalgebra::{DMatrix, DVector};

use crate::coeffs::CoefficientTable;
use crate::error::{MvhError, Result};
use crate::linalg::{dot, matvec, quad_form, to_row_major};
use crate::model::{ModelSpec, PayoffMap, RowVol};
use crate::scalar::Real;

/// Coefficients frozen at one MC node, row-major.
#[derive(Clone, Debug)]
pub struct Node<T: Real> {
    pub t: T,
    pub sigma: Vec<T>,
    pub a2: Vec<T>,
    pub a1: Vec<T>,
    pub a0: T,
    pub c2: Vec<T>,
    pub c1: Vec<T>,
    pub c0: T,
    pub beta: Option<(Vec<T>, T)>,
    pub psi: Vec<T>,
    pub psi_m: Vec<T>,
    pub phi: Vec<T>,
    pub phi_m: Vec<T>,
    pub g: Vec<T>,
    pub k: Vec<T>,
    pub b2: Vec<T>,
    pub b1: Vec<T>,
    pub varphi: Vec<T>,
    pub kappa: Vec<T>,
}

impl<T: Real> Node<T> {
    /// `V_L(ẑ)`.
    #[inline]
    pub fn vl(&self, z: &[T]) -> T {
        quad_form(self.c1.len(), &self.a2, &self.a1, self.a0, z)
    }

    /// `ln A(ẑ)`.
    #[inline]
    pub fn ln_a(&self, z: &[T]) -> T {
        quad_form(self.c1.len(), &self.c2, &self.c1, self.c0, z)
    }

    /// `ln P(ẑ)` when the solvable index model applies.
    #[inline]
    pub fn ln_p(&self, z: &[T]) -> Option<T> {
        self.beta.as_ref().map(|(b1, b0)| dot(b1, z) + *b0)
    }
}

/// Uniform grid `t0 = t_0 < … < t_K = T` with coefficients at every node.
///
/// Node coefficients are recomputed from the interpolated `Σ`, `a`, `c`, so the
/// forward-measure and physical Euler schemes are exact Girsanov images of
/// each other.
#[derive(Clone, Debug)]
pub struct McGrid<T: Real> {
    pub n: usize,
    pub d: usize,
    pub t0: T,
    pub dt: T,
    pub steps: usize,
    pub nodes: Vec<Node<T>>,
    pub mu: Vec<T>,
    pub f: Vec<T>,
}

impl<T: Real> McGrid<T> {
    /// Grid from `t0` to the table horizon with step as close to `dt` as an
    /// integer count allows.
    pub fn new(table: &CoefficientTable<T>, t0: T, dt: T) -> Result<Self> {
        let span = table.horizon - t0;
        if !(dt > T::zero()) || !(span > T::zero()) {
            return Err(MvhError::ConfigInvalid(format!(
                "Monte Carlo grid needs dt > 0 and t0 < T (dt = {}, t0 = {})",
                dt.as_f64(),
                t0.as_f64()
            )));
        }
        let steps = ((span / dt).as_f64().round() as usize).max(1);
        let dt = span / T::from_count(steps);
        let nodes = (0..=steps)
            .map(|k| {
                let t = if k == steps { table.horizon } else { t0 + dt * T::from_count(k) };
                node_at(table, t)
            })
            .collect();
        Ok(McGrid {
            n: table.n(),
            d: table.structure.d,
            t0,
            dt,
            steps,
            nodes,
            mu: table.structure.mu.iter().copied().collect(),
            f: to_row_major(&table.structure.f),
        })
    }

    /// Node index closest to `t`.
    pub fn node_near(&self, t: T) -> usize {
        let k = ((t - self.t0) / self.dt).as_f64().round();
        (k.max(0.0) as usize).min(self.steps)
    }
}

pub(crate) fn node_at<T: Real>(table: &CoefficientTable<T>, t: T) -> Node<T> {
    let p = table.primitives(t);
    let d = table.structure.derive(&p.sigma, &p.a2, &p.a1, &p.c2, &p.c1);
    let m = |x: &DMatrix<T>| to_row_major(x);
    let v = |x: &DVector<T>| x.iter().copied().collect::<Vec<_>>();
    Node {
        t,
        sigma: m(&p.sigma),
        a2: m(&p.a2),
        a1: v(&p.a1),
        a0: p.a0,
        c2: m(&p.c2),
        c1: v(&p.c1),
        c0: p.c0,
        beta: p.beta.as_ref().map(|(b1, b0)| (v(b1), *b0)),
        psi: v(&d.psi),
        psi_m: m(&d.psi_m),
        phi: v(&d.phi),
        phi_m: m(&d.phi_m),
        g: v(&d.g),
        k: m(&d.k),
        b2: m(&d.b2),
        b1: v(&d.b1),
        varphi: v(&d.varphi),
        kappa: m(&d.kappa),
    }
}

/// Mutable per-path state plus scratch buffers; allocated once per work chunk.
#[derive(Clone, Debug)]
pub struct PathState<T: Real> {
    pub x: Vec<T>,
    pub z: Vec<T>,
    /// `χ_ij = ∂X^j/∂x^i`.
    pub chi: Vec<T>,
    /// `χ̃_ij = ∂X^j/∂ẑ^i`.
    pub chit: Vec<T>,
    /// `ξ_ij = ∂ẑ^j/∂ẑ^i`.
    pub xi: Vec<T>,
    /// `ln L⁻¹` accumulated under the forward measure.
    pub log_linv: T,
    f: Vec<T>,
    f1: Vec<T>,
    u: Vec<T>,
    w: Vec<T>,
    tmp: Vec<T>,
    gp: Vec<T>,
    row: Vec<T>,
}

impl<T: Real> PathState<T> {
    pub fn new(n: usize) -> Self {
        let z = || vec![T::zero(); n];
        let zz = || vec![T::zero(); n * n];
        PathState {
            x: z(),
            z: z(),
            chi: zz(),
            chit: zz(),
            xi: zz(),
            log_linv: T::zero(),
            f: z(),
            f1: z(),
            u: z(),
            w: z(),
            tmp: z(),
            gp: zz(),
            row: z(),
        }
    }

    /// Resets the state to `(x, ẑ)` with unit flows and `L⁻¹ = 1`.
    pub fn reset(&mut self, x: &[T], z: &[T]) {
        let n = x.len();
        self.x.copy_from_slice(x);
        self.z.copy_from_slice(z);
        self.log_linv = T::zero();
        for i in 0..n {
            for j in 0..n {
                let e = if i == j { T::one() } else { T::zero() };
                self.chi[i * n + j] = e;
                self.xi[i * n + j] = e;
                self.chit[i * n + j] = T::zero();
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(&self.z).all(|v| v.is_finite()) && self.log_linv.is_finite()
    }

    /// `γ(x)ᵀ v` at the current state.
    pub fn gamma_t_apply(&mut self, vol: &RowVol<T>, v: &[T], out: &mut [T]) {
        let n = vol.n;
        vol.scales(&self.x, &mut self.f, &mut self.f1);
        for o in out.iter_mut().take(n) {
            *o = T::zero();
        }
        for i in 0..n {
            let s = self.f[i] * v[i];
            for j in 0..n {
                out[j] += vol.loading[i * n + j] * s;
            }
        }
    }
}

/// Euler kernels over a grid and a compiled volatility map.
#[derive(Clone, Copy, Debug)]
pub struct Kernel<'a, T: Real> {
    pub grid: &'a McGrid<T>,
    pub vol: &'a RowVol<T>,
}

impl<'a, T: Real> Kernel<'a, T> {
    pub fn new(grid: &'a McGrid<T>, vol: &'a RowVol<T>) -> Self {
        Kernel { grid, vol }
    }

    /// One step under the forward measure from node `k` with Brownian increment `dw`.
    ///
    /// `dX = γ(X)(dW + (ψ + Ψẑ)dt)`, `dẑ = (φ − Φẑ)dt + Σ dW`; flows and
    /// `ln L⁻¹ += −θ·dW − ½|θ|²dt` with `θ = G + Kẑ` are advanced alongside.
    pub fn step_forward(&self, k: usize, s: &mut PathState<T>, dw: &[T], flows: bool) {
        let n = self.grid.n;
        let dt = self.grid.dt;
        let c = &self.grid.nodes[k];
        let vol = self.vol;
        vol.scales(&s.x, &mut s.f, &mut s.f1);
        matvec(n, &c.psi_m, &s.z, &mut s.tmp);
        for i in 0..n {
            s.w[i] = dw[i] + (c.psi[i] + s.tmp[i]) * dt;
        }
        for j in 0..n {
            s.u[j] = dot(&vol.loading[j * n..(j + 1) * n], &s.w);
        }
        if flows {
            self.advance_flows(c, s);
        }
        // θ = G + Kẑ and the Radon–Nikodym increment
        matvec(n, &c.k, &s.z, &mut s.tmp);
        let half = T::lit(0.5);
        let mut acc = T::zero();
        for i in 0..n {
            let th = c.g[i] + s.tmp[i];
            acc += th * dw[i] + half * th * th * dt;
        }
        s.log_linv -= acc;
        for j in 0..n {
            s.x[j] += s.f[j] * s.u[j];
        }
        matvec(n, &c.phi_m, &s.z, &mut s.tmp);
        for i in 0..n {
            s.w[i] = (c.phi[i] - s.tmp[i]) * dt;
        }
        matvec(n, &c.sigma, dw, &mut s.tmp);
        for i in 0..n {
            s.z[i] += s.w[i] + s.tmp[i];
        }
    }

    fn advance_flows(&self, c: &Node<T>, s: &mut PathState<T>) {
        let n = self.grid.n;
        let dt = self.grid.dt;
        let vol = self.vol;
        // γΨ, row j = f_j · loading_j Ψ
        for j in 0..n {
            for l in 0..n {
                let mut acc = T::zero();
                for m in 0..n {
                    acc += vol.loading[j * n + m] * c.psi_m[m * n + l];
                }
                s.gp[j * n + l] = s.f[j] * acc;
            }
        }
        for i in 0..n {
            // χ ← χ + χM with M_kj = [k = coord_j] f'_j u_j
            for j in 0..n {
                s.row[j] = s.chi[i * n + vol.coord[j]] * s.f1[j] * s.u[j];
            }
            for j in 0..n {
                s.chi[i * n + j] += s.row[j];
            }
            // χ̃ ← χ̃ + χ̃M + ξ(γΨ)ᵀdt
            for j in 0..n {
                let mut acc = T::zero();
                for l in 0..n {
                    acc += s.xi[i * n + l] * s.gp[j * n + l];
                }
                s.row[j] = s.chit[i * n + vol.coord[j]] * s.f1[j] * s.u[j] + acc * dt;
            }
            for j in 0..n {
                s.chit[i * n + j] += s.row[j];
            }
            // ξ ← ξ − ξΦᵀdt
            for m in 0..n {
                let mut acc = T::zero();
                for l in 0..n {
                    acc += s.xi[i * n + l] * c.phi_m[m * n + l];
                }
                s.row[m] = acc * dt;
            }
            for m in 0..n {
                s.xi[i * n + m] -= s.row[m];
            }
        }
    }

    /// One step under the physical measure: `dX = γ(X)(ẑdt + dn)`,
    /// `dẑ = (μ − Fẑ)dt + Σ dn`.
    pub fn step_physical(&self, k: usize, s: &mut PathState<T>, dn: &[T]) {
        let n = self.grid.n;
        let dt = self.grid.dt;
        let c = &self.grid.nodes[k];
        let vol = self.vol;
        vol.scales(&s.x, &mut s.f, &mut s.f1);
        for i in 0..n {
            s.w[i] = s.z[i] * dt + dn[i];
        }
        for j in 0..n {
            s.x[j] += s.f[j] * dot(&vol.loading[j * n..(j + 1) * n], &s.w);
        }
        matvec(n, &self.grid.f, &s.z, &mut s.tmp);
        for i in 0..n {
            s.w[i] = (self.grid.mu[i] - s.tmp[i]) * dt;
        }
        matvec(n, &c.sigma, dn, &mut s.tmp);
        for i in 0..n {
            s.z[i] += s.w[i] + s.tmp[i];
        }
    }

    /// One step of `ẑ` under the measure `P^A`: `dẑ = (varphi + κẑ)dt + Σ dn`.
    /// Returns the left-point integrand `½ẑᵀb²ẑ + b¹ᵀẑ`.
    pub fn step_discount(&self, k: usize, s: &mut PathState<T>, dn: &[T]) -> T {
        let n = self.grid.n;
        let dt = self.grid.dt;
        let c = &self.grid.nodes[k];
        let r = quad_form(n, &c.b2, &c.b1, T::zero(), &s.z);
        matvec(n, &c.kappa, &s.z, &mut s.tmp);
        for i in 0..n {
            s.w[i] = (c.varphi[i] + s.tmp[i]) * dt;
        }
        matvec(n, &c.sigma, dn, &mut s.tmp);
        for i in 0..n {
            s.z[i] += s.w[i] + s.tmp[i];
        }
        r
    }

    /// Runs the forward-measure scheme from node `k0` to the horizon using
    /// `normals` (row per step) multiplied by `sign`.
    pub fn run_forward(
        &self,
        k0: usize,
        s: &mut PathState<T>,
        normals: &[T],
        sign: T,
        flows: bool,
        path: usize,
    ) -> Result<()> {
        let n = self.grid.n;
        let mut dw = [T::zero(); MAX_DIM];
        for (i, k) in (k0..self.grid.steps).enumerate() {
            for j in 0..n {
                dw[j] = sign * normals[i * n + j];
            }
            self.step_forward(k, s, &dw[..n], flows);
            self.check(s, path, k + 1)?;
        }
        Ok(())
    }

    /// Fails with `NumericOverflow` when the state is no longer finite.
    #[inline]
    pub fn check(&self, s: &PathState<T>, path: usize, k: usize) -> Result<()> {
        if s.is_finite() {
            Ok(())
        } else {
            Err(MvhError::NumericOverflow { path, t: self.grid.nodes[k.min(self.grid.steps)].t.as_f64() })
        }
    }
}

/// Largest state dimension supported by the stack buffers of the kernels.
pub const MAX_DIM: usize = 16;

/// Checks that the model fits the kernels' fixed-size buffers.
pub fn check_dim<T: Real>(spec: &ModelSpec<T>) -> Result<()> {
    if spec.n() > MAX_DIM {
        Err(MvhError::ConfigInvalid(format!("Monte Carlo supports n ≤ {MAX_DIM}, got {}", spec.n())))
    } else {
        Ok(())
    }
}

/// `𝒵 = A·[H·(Σ(c¹ + c²ẑ) + ẑ) + γ(x)ᵀχ∂H + Σχ̃∂H]` for a branch started at
/// node `c` from `anchor = (x, ẑ)` and ending at `x_end` with flows
/// `(chi, chit)`. With `with_z = false` the `ẑ` term is dropped, giving the
/// integrand of `ζ1`. Returns `A·H`.
#[allow(clippy::too_many_arguments)]
pub fn assemble_z<T: Real>(
    c: &Node<T>,
    vol: &RowVol<T>,
    payoff: &PayoffMap<T>,
    anchor: &mut PathState<T>,
    x_end: &[T],
    chi: &[T],
    chit: &[T],
    with_z: bool,
    grad: &mut [T],
    out: &mut [T],
) -> T {
    let n = vol.n;
    let h = payoff.value(x_end);
    payoff.gradient(x_end, grad);
    let mut dx = [T::zero(); MAX_DIM];
    let mut dz = [T::zero(); MAX_DIM];
    matvec(n, chi, grad, &mut dx[..n]);
    matvec(n, chit, grad, &mut dz[..n]);
    combine_z(c, vol, anchor, h, &dx[..n], &dz[..n], with_z, out)
}

/// `A·[H·(Σ(c¹ + c²ẑ) + ẑ) + γ(x)ᵀ∇ₓ + Σ∇_ẑ]` given the sensitivities of
/// `H(X_T)` to the starting point. Returns `A·H`.
#[allow(clippy::too_many_arguments)]
pub fn combine_z<T: Real>(
    c: &Node<T>,
    vol: &RowVol<T>,
    anchor: &mut PathState<T>,
    h: T,
    dx: &[T],
    dz: &[T],
    with_z: bool,
    out: &mut [T],
) -> T {
    let n = vol.n;
    let a = c.ln_a(&anchor.z).exp();
    let mut v = [T::zero(); MAX_DIM];
    let mut w = [T::zero(); MAX_DIM];
    matvec(n, &c.c2, &anchor.z, &mut v[..n]);
    for i in 0..n {
        v[i] = h * (c.c1[i] + v[i]) + dz[i];
    }
    matvec(n, &c.sigma, &v[..n], &mut w[..n]);
    for i in 0..n {
        out[i] = w[i] + if with_z { h * anchor.z[i] } else { T::zero() };
    }
    anchor.gamma_t_apply(vol, dx, &mut w[..n]);
    for i in 0..n {
        out[i] = a * (out[i] + w[i]);
    }
    a * h
}
