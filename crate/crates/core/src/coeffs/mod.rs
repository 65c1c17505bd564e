//! Deterministic coefficient tables: the `a`, `c` and `β` Riccati chains,
//! derived forward-measure coefficients, and the semi-closed value functions.

mod integrals;

use std::io::Write;

use nalgebra::{DMatrix, DVector};

pub use integrals::{nested_scalar, Brackets, IntegralTable};

use crate::error::{MvhError, Result};
use crate::filter::{fmt_num, grid_locate, solve_kalman_sigma, SigmaSchedule};
use crate::linalg::{max_abs, ones_d, ones_m, symmetrize};
use crate::model::{ModelSpec, PayoffMap, Scale};
use crate::scalar::Real;

const BLOW_UP: f64 = 1e8;

/// `a² , a¹, a⁰` on the grid.
#[derive(Clone, Debug)]
pub struct ATable<T: Real> {
    pub a2: Vec<DMatrix<T>>,
    pub a1: Vec<DVector<T>>,
    pub a0: Vec<T>,
}

/// `c², c¹, c⁰` on the grid.
#[derive(Clone, Debug)]
pub struct CTable<T: Real> {
    pub c2: Vec<DMatrix<T>>,
    pub c1: Vec<DVector<T>>,
    pub c0: Vec<T>,
}

/// `β¹, β⁰` on the grid.
#[derive(Clone, Debug)]
pub struct BetaTable<T: Real> {
    pub beta1: Vec<DVector<T>>,
    pub beta0: Vec<T>,
}

/// Solved quantities at one time: `Σ`, `a`, `c`, and optionally `β`.
#[derive(Clone, Debug, PartialEq)]
pub struct Primitives<T: Real> {
    pub sigma: DMatrix<T>,
    pub a2: DMatrix<T>,
    pub a1: DVector<T>,
    pub a0: T,
    pub c2: DMatrix<T>,
    pub c1: DVector<T>,
    pub c0: T,
    pub beta: Option<(DVector<T>, T)>,
}

/// Algebraic combinations of `Σ`, `a`, `c` at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct Derived<T: Real> {
    pub xi: DMatrix<T>,
    pub b2: DMatrix<T>,
    pub b1: DVector<T>,
    pub varphi: DVector<T>,
    pub kappa: DMatrix<T>,
    pub psi: DVector<T>,
    /// `Ψ`.
    pub psi_m: DMatrix<T>,
    /// `Ψ̃`.
    pub psi_t: DMatrix<T>,
    pub phi: DVector<T>,
    /// `Φ`.
    pub phi_m: DMatrix<T>,
    pub g: DVector<T>,
    pub k: DMatrix<T>,
}

/// Constant model data the derived coefficients depend on.
#[derive(Clone, Debug)]
pub struct Structure<T: Real> {
    pub d: usize,
    pub mu: DVector<T>,
    pub f: DMatrix<T>,
    pub one_d: DMatrix<T>,
    pub one_m: DMatrix<T>,
}

impl<T: Real> Structure<T> {
    pub fn new(spec: &ModelSpec<T>) -> Self {
        let n = spec.n();
        Structure {
            d: spec.d,
            mu: spec.mu.clone(),
            f: spec.f.clone(),
            one_d: ones_d(spec.d, n),
            one_m: ones_m(spec.d, n),
        }
    }

    /// `Σ_dᵀΣ_d = Σ 1_d Σ`.
    pub fn sd_sd(&self, s: &DMatrix<T>) -> DMatrix<T> {
        s * &self.one_d * s
    }

    /// `Ξ = Σ_dᵀΣ_d − Σ_mᵀΣ_m`.
    pub fn xi(&self, s: &DMatrix<T>) -> DMatrix<T> {
        s * (&self.one_d - &self.one_m) * s
    }

    /// All derived coefficients from `Σ`, `a`, `c`.
    pub fn derive(
        &self,
        s: &DMatrix<T>,
        a2: &DMatrix<T>,
        a1: &DVector<T>,
        c2: &DMatrix<T>,
        c1: &DVector<T>,
    ) -> Derived<T> {
        let two = T::lit(2.0);
        let sds = self.sd_sd(s);
        let s2 = s * s;
        let one_d_s = &self.one_d * s;
        let s_one_d = s * &self.one_d;
        let psi = s * c1 - &one_d_s * a1;
        let psi_t = s * c2 - &one_d_s * a2;
        let phi = &self.mu - &sds * a1 + &s2 * c1;
        let phi_m = &self.f + &sds * a2 + &s_one_d - &s2 * c2;
        Derived {
            xi: self.xi(s),
            b2: &self.one_d * two + &one_d_s * a2 + a2 * &s_one_d,
            b1: &one_d_s * a1,
            varphi: &self.mu - &sds * a1,
            kappa: -(&self.f + &sds * a2 + &s_one_d),
            g: psi.clone(),
            k: &psi_t - &self.one_d,
            psi_m: &self.one_m + &psi_t,
            psi,
            psi_t,
            phi,
            phi_m,
        }
    }
}

fn lerp_m<T: Real>(v: &[DMatrix<T>], i: usize, w: T) -> DMatrix<T> {
    if w == T::zero() {
        v[i].clone()
    } else {
        &v[i] * (T::one() - w) + &v[i + 1] * w
    }
}

fn lerp_v<T: Real>(v: &[DVector<T>], i: usize, w: T) -> DVector<T> {
    if w == T::zero() {
        v[i].clone()
    } else {
        &v[i] * (T::one() - w) + &v[i + 1] * w
    }
}

fn lerp_s<T: Real>(v: &[T], i: usize, w: T) -> T {
    if w == T::zero() {
        v[i]
    } else {
        v[i] * (T::one() - w) + v[i + 1] * w
    }
}

/// Backward RK4 from the zero terminal state on the schedule grid. `rhs(t, y)`
/// returns `dy/dt`; `post` runs after every step; `check` may abort with the
/// node time.
fn rk4_backward<T: Real, S: Clone>(
    k: usize,
    h: T,
    terminal: S,
    rhs: impl Fn(T, &S) -> S,
    axpy: impl Fn(&S, T, &S) -> S,
    post: impl Fn(&mut S),
    check: impl Fn(T, &S) -> Result<()>,
) -> Result<Vec<S>> {
    let mut out = vec![terminal.clone(); k + 1];
    let mut y = terminal;
    let half = h * T::lit(0.5);
    let two = T::lit(2.0);
    for i in (1..=k).rev() {
        let t = h * T::from_count(i);
        let k1 = rhs(t, &y);
        let k2 = rhs(t - half, &axpy(&y, -half, &k1));
        let k3 = rhs(t - half, &axpy(&y, -half, &k2));
        let k4 = rhs(t - h, &axpy(&y, -h, &k3));
        let incr = axpy(&axpy(&axpy(&k1, two, &k2), two, &k3), T::one(), &k4);
        y = axpy(&y, -h / T::lit(6.0), &incr);
        post(&mut y);
        check(t - h, &y)?;
        out[i - 1] = y.clone();
    }
    Ok(out)
}

fn axpy_m<T: Real>(y: &DMatrix<T>, a: T, x: &DMatrix<T>) -> DMatrix<T> {
    y + x * a
}

fn axpy_v<T: Real>(y: &DVector<T>, a: T, x: &DVector<T>) -> DVector<T> {
    y + x * a
}

fn axpy_s<T: Real>(y: &T, a: T, x: &T) -> T {
    *y + a * *x
}

fn blow_check<T: Real>(what: &'static str) -> impl Fn(T, &DMatrix<T>) -> Result<()> {
    move |t, m| {
        if max_abs(m) <= T::lit(BLOW_UP) {
            Ok(())
        } else {
            Err(MvhError::BlowUp { what, t: t.as_f64() })
        }
    }
}

fn finite_v<T: Real>(what: &'static str) -> impl Fn(T, &DVector<T>) -> Result<()> {
    move |t, v| {
        if v.iter().all(|x| x.abs() <= T::lit(BLOW_UP)) {
            Ok(())
        } else {
            Err(MvhError::BlowUp { what, t: t.as_f64() })
        }
    }
}

fn finite_s<T: Real>(what: &'static str) -> impl Fn(T, &T) -> Result<()> {
    move |t, v| {
        if v.abs() <= T::lit(BLOW_UP) {
            Ok(())
        } else {
            Err(MvhError::BlowUp { what, t: t.as_f64() })
        }
    }
}

/// Solves `a² → a¹ → a⁰` backward from zero terminal values.
pub fn solve_a<T: Real>(schedule: &SigmaSchedule<T>, spec: &ModelSpec<T>) -> Result<ATable<T>> {
    let st = Structure::new(spec);
    let n = spec.n();
    let k = schedule.values.len() - 1;
    let h = schedule.step;
    let two = T::lit(2.0);
    let ft = st.f.transpose();
    let a2 = rk4_backward(
        k,
        h,
        DMatrix::zeros(n, n),
        |t, a: &DMatrix<T>| {
            let s = schedule.at(t);
            let xi = st.xi(&s);
            let one_d_s_a = &st.one_d * &s * a;
            &st.one_d * two + a * xi * a + &ft * a + a * &st.f + (&one_d_s_a + one_d_s_a.transpose()) * two
        },
        axpy_m,
        symmetrize,
        blow_check("a2"),
    )?;
    let a1 = rk4_backward(
        k,
        h,
        DVector::zeros(n),
        |t, a: &DVector<T>| {
            let (i, w) = schedule.locate(t);
            let s = schedule.at(t);
            let a2t = lerp_m(&a2, i, w);
            let m = &ft + &a2t * st.xi(&s) + &st.one_d * &s * two;
            -(&a2t * &st.mu) + m * a
        },
        axpy_v,
        |_| {},
        finite_v("a1"),
    )?;
    let a0 = rk4_backward(
        k,
        h,
        T::zero(),
        |t, _: &T| {
            let (i, w) = schedule.locate(t);
            let s = schedule.at(t);
            let a2t = lerp_m(&a2, i, w);
            let a1t = lerp_v(&a1, i, w);
            let half = T::lit(0.5);
            -st.mu.dot(&a1t) - half * (&a2t * &s * &s).trace() + half * a1t.dot(&(st.xi(&s) * &a1t))
        },
        axpy_s,
        |_| {},
        finite_s("a0"),
    )?;
    Ok(ATable { a2, a1, a0 })
}

/// Solves `c² → c¹ → c⁰` backward from zero terminal values.
pub fn solve_c<T: Real>(a: &ATable<T>, schedule: &SigmaSchedule<T>, spec: &ModelSpec<T>) -> Result<CTable<T>> {
    let st = Structure::new(spec);
    let n = spec.n();
    let k = schedule.values.len() - 1;
    let h = schedule.step;
    let zero_v = DVector::zeros(n);
    let zero_m = DMatrix::zeros(n, n);
    let at = |t: T| {
        let (i, w) = schedule.locate(t);
        let s = schedule.at(t);
        let d = st.derive(&s, &lerp_m(&a.a2, i, w), &lerp_v(&a.a1, i, w), &zero_m, &zero_v);
        (i, w, s, d)
    };
    let c2 = rk4_backward(
        k,
        h,
        DMatrix::zeros(n, n),
        |t, c: &DMatrix<T>| {
            let (_, _, s, d) = at(t);
            &d.b2 - c * &d.kappa - d.kappa.transpose() * c - c * &s * &s * c
        },
        axpy_m,
        symmetrize,
        blow_check("c2"),
    )?;
    let c1 = rk4_backward(
        k,
        h,
        DVector::zeros(n),
        |t, c: &DVector<T>| {
            let (i, w, s, d) = at(t);
            let c2t = lerp_m(&c2, i, w);
            &d.b1 - d.kappa.transpose() * c - &c2t * &d.varphi - &c2t * &s * &s * c
        },
        axpy_v,
        |_| {},
        finite_v("c1"),
    )?;
    let c0 = rk4_backward(
        k,
        h,
        T::zero(),
        |t, _: &T| {
            let (i, w, s, d) = at(t);
            let c2t = lerp_m(&c2, i, w);
            let c1t = lerp_v(&c1, i, w);
            let half = T::lit(0.5);
            let s2 = &s * &s;
            -d.varphi.dot(&c1t) - half * (&c2t * &s2).trace() - half * c1t.dot(&(&s2 * &c1t))
        },
        axpy_s,
        |_| {},
        finite_s("c0"),
    )?;
    Ok(CTable { c2, c1, c0 })
}

/// Solves `β¹ → β⁰` for the log-linear index with loading `σ_y`.
///
/// `β̇¹ = Φᵀβ¹ − Ψᵀσ_y` and `β̇⁰ = −(φ + Σσ_y)ᵀβ¹ − ½β¹ᵀΣ²β¹ − ψᵀσ_y`. The
/// `Σσ_y` drift enters because the index and `ẑ` share the same innovation.
pub fn solve_beta<T: Real>(
    c: &CTable<T>,
    a: &ATable<T>,
    schedule: &SigmaSchedule<T>,
    spec: &ModelSpec<T>,
    sigma_y: &DVector<T>,
) -> Result<BetaTable<T>> {
    let st = Structure::new(spec);
    let n = spec.n();
    let k = schedule.values.len() - 1;
    let h = schedule.step;
    let at = |t: T| {
        let (i, w) = schedule.locate(t);
        let s = schedule.at(t);
        let d = st.derive(
            &s,
            &lerp_m(&a.a2, i, w),
            &lerp_v(&a.a1, i, w),
            &lerp_m(&c.c2, i, w),
            &lerp_v(&c.c1, i, w),
        );
        (i, w, s, d)
    };
    let beta1 = rk4_backward(
        k,
        h,
        DVector::zeros(n),
        |t, b: &DVector<T>| {
            let (_, _, _, d) = at(t);
            d.phi_m.transpose() * b - d.psi_m.transpose() * sigma_y
        },
        axpy_v,
        |_| {},
        finite_v("beta1"),
    )?;
    let beta0 = rk4_backward(
        k,
        h,
        T::zero(),
        |t, _: &T| {
            let (i, w, s, d) = at(t);
            let b1 = lerp_v(&beta1, i, w);
            let drift = &d.phi + &s * sigma_y;
            -drift.dot(&b1) - T::lit(0.5) * b1.dot(&(&s * &s * &b1)) - d.psi.dot(sigma_y)
        },
        axpy_s,
        |_| {},
        finite_s("beta0"),
    )?;
    Ok(BetaTable { beta1, beta0 })
}

/// Index loading `σ_y` when the payoff is `H = Y^I_T` with `γ^I = Y^I σ_yᵀ`.
pub fn solvable_loading<T: Real>(spec: &ModelSpec<T>) -> Result<(usize, DVector<T>)> {
    let PayoffMap::IndexLinear { index } = spec.payoff else {
        return Err(MvhError::ConfigMismatch("closed form needs an index-linear payoff".into()));
    };
    let rows = spec.volatility.profiles();
    match rows.get(index) {
        Some(r) if r.coord == index && r.scale == Scale::Linear => Ok((index, r.loading.clone())),
        _ => Err(MvhError::ConfigMismatch(
            "closed form needs the payoff index to carry log-linear volatility".into(),
        )),
    }
}

/// Every coefficient on the grid, plus `β` for the solvable index model.
#[derive(Clone, Debug)]
pub struct CoefficientTable<T: Real> {
    pub step: T,
    pub horizon: T,
    pub structure: Structure<T>,
    pub schedule: SigmaSchedule<T>,
    pub a: ATable<T>,
    pub c: CTable<T>,
    pub beta: Option<BetaTable<T>>,
    pub sigma_y: Option<(usize, DVector<T>)>,
    /// Derived coefficients at each node.
    pub derived: Vec<Derived<T>>,
}

impl<T: Real> CoefficientTable<T> {
    /// Filter, `a`, `c`, derived coefficients, and `β` when the model admits it.
    pub fn build(spec: &ModelSpec<T>, step: T) -> Result<Self> {
        let schedule = solve_kalman_sigma(spec, step)?;
        Self::from_schedule(spec, schedule)
    }

    pub fn from_schedule(spec: &ModelSpec<T>, schedule: SigmaSchedule<T>) -> Result<Self> {
        let a = solve_a(&schedule, spec)?;
        let c = solve_c(&a, &schedule, spec)?;
        let sigma_y = solvable_loading(spec).ok();
        let beta = match &sigma_y {
            Some((_, sy)) => Some(solve_beta(&c, &a, &schedule, spec, sy)?),
            None => None,
        };
        Ok(Self::assemble(spec, schedule, a, c, beta, sigma_y))
    }

    pub fn assemble(
        spec: &ModelSpec<T>,
        schedule: SigmaSchedule<T>,
        a: ATable<T>,
        c: CTable<T>,
        beta: Option<BetaTable<T>>,
        sigma_y: Option<(usize, DVector<T>)>,
    ) -> Self {
        let structure = Structure::new(spec);
        let derived = build_mc_coeffs(&structure, &schedule, &a, &c);
        CoefficientTable {
            step: schedule.step,
            horizon: schedule.horizon(),
            structure,
            schedule,
            a,
            c,
            beta,
            sigma_y,
            derived,
        }
    }

    pub fn len(&self) -> usize {
        self.schedule.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.schedule.values.is_empty()
    }

    pub fn n(&self) -> usize {
        self.structure.mu.len()
    }

    pub fn time(&self, i: usize) -> T {
        self.step * T::from_count(i)
    }

    /// Linearly interpolated primitives at `t`.
    pub fn primitives(&self, t: T) -> Primitives<T> {
        let (i, w) = grid_locate(self.step, self.len(), t);
        Primitives {
            sigma: self.schedule.at(t),
            a2: lerp_m(&self.a.a2, i, w),
            a1: lerp_v(&self.a.a1, i, w),
            a0: lerp_s(&self.a.a0, i, w),
            c2: lerp_m(&self.c.c2, i, w),
            c1: lerp_v(&self.c.c1, i, w),
            c0: lerp_s(&self.c.c0, i, w),
            beta: self
                .beta
                .as_ref()
                .map(|b| (lerp_v(&b.beta1, i, w), lerp_s(&b.beta0, i, w))),
        }
    }

    /// Derived coefficients recomputed from interpolated primitives at `t`.
    pub fn derived_at(&self, t: T) -> Derived<T> {
        let p = self.primitives(t);
        self.structure.derive(&p.sigma, &p.a2, &p.a1, &p.c2, &p.c1)
    }

    /// Writes one row per grid node with row-major matrix entries.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let n = self.n();
        let mut w = csv::Writer::from_writer(out);
        let mats = ["sigma", "xi", "a2", "b2", "c2", "kappa", "Psi", "PsiTilde", "Phi", "K"];
        let vecs = ["a1", "b1", "c1", "varphi", "psi", "phi", "G"];
        let mut header = vec!["t".to_string()];
        for name in mats {
            for i in 0..n {
                for j in 0..n {
                    header.push(format!("{name}_{i}{j}"));
                }
            }
        }
        for name in vecs {
            for i in 0..n {
                header.push(format!("{name}_{i}"));
            }
        }
        header.extend(["a0", "c0"].map(String::from));
        if self.beta.is_some() {
            for i in 0..n {
                header.push(format!("beta1_{i}"));
            }
            header.push("beta0".into());
        }
        w.write_record(&header)?;
        for idx in 0..self.len() {
            let d = &self.derived[idx];
            let s = &self.schedule.values[idx];
            let mut rec = vec![fmt_num(self.time(idx))];
            let ms = [s, &d.xi, &self.a.a2[idx], &d.b2, &self.c.c2[idx], &d.kappa, &d.psi_m, &d.psi_t, &d.phi_m, &d.k];
            for m in ms {
                for i in 0..n {
                    for j in 0..n {
                        rec.push(fmt_num(m[(i, j)]));
                    }
                }
            }
            let vs = [&self.a.a1[idx], &d.b1, &self.c.c1[idx], &d.varphi, &d.psi, &d.phi, &d.g];
            for v in vs {
                rec.extend(v.iter().map(|&x| fmt_num(x)));
            }
            rec.push(fmt_num(self.a.a0[idx]));
            rec.push(fmt_num(self.c.c0[idx]));
            if let Some(b) = &self.beta {
                rec.extend(b.beta1[idx].iter().map(|&x| fmt_num(x)));
                rec.push(fmt_num(b.beta0[idx]));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Derived coefficients `ψ, Ψ, Ψ̃, φ, Φ, G, K` (and `Ξ, b, varphi, κ`) at every node.
pub fn build_mc_coeffs<T: Real>(
    st: &Structure<T>,
    schedule: &SigmaSchedule<T>,
    a: &ATable<T>,
    c: &CTable<T>,
) -> Vec<Derived<T>> {
    (0..schedule.values.len())
        .map(|i| st.derive(&schedule.values[i], &a.a2[i], &a.a1[i], &c.c2[i], &c.c1[i]))
        .collect()
}

/// `V_L = ½ẑᵀa²ẑ + a¹ᵀẑ + a⁰`.
pub fn eval_vl<T: Real>(table: &CoefficientTable<T>, t: T, zhat: &DVector<T>) -> T {
    let p = table.primitives(t);
    T::lit(0.5) * zhat.dot(&(&p.a2 * zhat)) + p.a1.dot(zhat) + p.a0
}

/// `V2 = exp(V_L)`.
pub fn eval_v2<T: Real>(table: &CoefficientTable<T>, t: T, zhat: &DVector<T>) -> T {
    eval_vl(table, t, zhat).exp()
}

/// `A(t,T) = exp(½ẑᵀc²ẑ + c¹ᵀẑ + c⁰)`.
pub fn eval_a<T: Real>(table: &CoefficientTable<T>, t: T, zhat: &DVector<T>) -> T {
    let p = table.primitives(t);
    (T::lit(0.5) * zhat.dot(&(&p.c2 * zhat)) + p.c1.dot(zhat) + p.c0).exp()
}

/// `P(t,T) = exp(β¹ᵀẑ + β⁰)` for the solvable index model.
pub fn eval_p<T: Real>(table: &CoefficientTable<T>, t: T, zhat: &DVector<T>) -> Result<T> {
    let p = table.primitives(t);
    let (b1, b0) = p.beta.ok_or_else(|| MvhError::ConfigMismatch("no beta table".into()))?;
    Ok((b1.dot(zhat) + b0).exp())
}

/// Closed-form `ζ1 = V1{σ_y + Σ(c¹ + β¹ + c²ẑ)}` with `V1 = y·A·P`.
pub fn eval_z1_solvable<T: Real>(
    table: &CoefficientTable<T>,
    t: T,
    y: T,
    zhat: &DVector<T>,
) -> Result<DVector<T>> {
    let (_, sy) = table
        .sigma_y
        .as_ref()
        .ok_or_else(|| MvhError::ConfigMismatch("closed form needs the solvable index model".into()))?;
    let p = table.primitives(t);
    let (b1, _) = p.beta.clone().expect("beta present with sigma_y");
    let v1 = y * eval_a(table, t, zhat) * eval_p(table, t, zhat)?;
    Ok((sy + &p.sigma * (&p.c1 + b1 + &p.c2 * zhat)) * v1)
}

/// `V1 = y·A·P` for the solvable index model.
pub fn eval_v1_solvable<T: Real>(table: &CoefficientTable<T>, t: T, y: T, zhat: &DVector<T>) -> Result<T> {
    Ok(y * eval_a(table, t, zhat) * eval_p(table, t, zhat)?)
}

/// Convenience: full table for a spec at its default ODE step `T/5000`.
pub fn default_table<T: Real>(spec: &ModelSpec<T>) -> Result<CoefficientTable<T>> {
    CoefficientTable::build(spec, spec.horizon / T::lit(5000.0))
}

#[cfg(test)]
mod tests;
