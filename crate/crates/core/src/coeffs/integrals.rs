//! Nested time integrals `[f]_t^T`, `[[f]]`, `[[[f]]]` and the product brackets
//! needed by the expansion, tabulated against the left endpoint `t`.
//!
//! Every bracket reduces to `∫_t^T w(u) f(u) du` with a `t`-independent weight,
//! so one backward cumulative trapezoid per bracket suffices:
//! `[[f]] = ∫(T−u)f`, `[[[f]]] = ∫(T−u)²/2 f`, `[g[f]] = ∫[g]_u^T f(u)du`,
//! `[[g[f]]] = ∫[[g]]_u^T f(u)du`.

use nalgebra::{DMatrix, DVector};

use super::{lerp_m, lerp_s, lerp_v, CoefficientTable};
use crate::filter::grid_locate;
use crate::scalar::Real;

/// Backward cumulative trapezoid: `out[j] = ∫_{t_j}^{T} f`.
fn cumulative<V, T>(h: T, f: &[V]) -> Vec<V>
where
    T: Real,
    V: Clone + std::ops::Add<Output = V> + std::ops::Mul<T, Output = V>,
{
    let k = f.len() - 1;
    let mut out = vec![f[k].clone() * T::zero(); k + 1];
    let half = h * T::lit(0.5);
    for j in (0..k).rev() {
        out[j] = out[j + 1].clone() + (f[j].clone() + f[j + 1].clone()) * half;
    }
    out
}

fn weighted<V, T>(f: &[V], w: impl Fn(usize) -> T) -> Vec<V>
where
    T: Real,
    V: Clone + std::ops::Mul<T, Output = V>,
{
    f.iter().enumerate().map(|(i, v)| v.clone() * w(i)).collect()
}

/// `([f], [[f]], [[[f]]])` for a scalar integrand sampled on a uniform grid.
pub fn nested_scalar<T: Real>(h: T, f: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
    let k = f.len() - 1;
    let tt = h * T::from_count(k);
    let rem = |i: usize| tt - h * T::from_count(i);
    let one = cumulative(h, f);
    let two = cumulative(h, &weighted(f, rem));
    let three = cumulative(h, &weighted(f, |i| rem(i) * rem(i) * T::lit(0.5)));
    (one, two, three)
}

/// Every bracket used by the expansion, evaluated at one left endpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct Brackets<T: Real> {
    /// `T − t`.
    pub tau: T,
    pub psi_1: DVector<T>,
    pub psi_2: DVector<T>,
    /// `[(s−t)ψ]`.
    pub psi_w: DVector<T>,
    pub phi_2: DVector<T>,
    pub phi_3: DVector<T>,
    /// `[[(u−t)φ]]`.
    pub phi_w: DVector<T>,
    pub pt_1: DMatrix<T>,
    pub pt_2: DMatrix<T>,
    pub pt_w: DMatrix<T>,
    pub pm_2: DMatrix<T>,
    pub pm_3: DMatrix<T>,
    pub pm_w: DMatrix<T>,
    /// `[[Σ]]`.
    pub sigma_2: DMatrix<T>,
    /// `[Ψ̃[φ]]`.
    pub pt_phi: DVector<T>,
    /// `[[Φ[φ]]]`.
    pub pm_phi: DVector<T>,
    /// `[Ψ̃[Φ]]`.
    pub pt_pm: DMatrix<T>,
    /// `[[Φ[Φ]]]`.
    pub pm_pm: DMatrix<T>,
}

/// Brackets at every grid node, plus the unit-integrand checks.
#[derive(Clone, Debug)]
pub struct IntegralTable<T: Real> {
    pub step: T,
    pub horizon: T,
    nodes: Vec<Brackets<T>>,
    /// `([1], [[1]], [[[1]]])` per node.
    pub unit: (Vec<T>, Vec<T>, Vec<T>),
}

impl<T: Real> IntegralTable<T> {
    pub fn build(table: &CoefficientTable<T>) -> Self {
        let h = table.step;
        let k = table.len() - 1;
        let tt = table.horizon;
        let rem: Vec<T> = (0..=k).map(|i| tt - h * T::from_count(i)).collect();
        let w2 = |i: usize| rem[i];
        let w3 = |i: usize| rem[i] * rem[i] * T::lit(0.5);

        let psi: Vec<DVector<T>> = table.derived.iter().map(|d| d.psi.clone()).collect();
        let phi: Vec<DVector<T>> = table.derived.iter().map(|d| d.phi.clone()).collect();
        let pt: Vec<DMatrix<T>> = table.derived.iter().map(|d| d.psi_t.clone()).collect();
        let pm: Vec<DMatrix<T>> = table.derived.iter().map(|d| d.phi_m.clone()).collect();
        let sg = &table.schedule.values;

        let psi_1 = cumulative(h, &psi);
        let psi_2 = cumulative(h, &weighted(&psi, w2));
        let phi_2 = cumulative(h, &weighted(&phi, w2));
        let phi_3 = cumulative(h, &weighted(&phi, w3));
        let pt_1 = cumulative(h, &pt);
        let pt_2 = cumulative(h, &weighted(&pt, w2));
        let pm_2 = cumulative(h, &weighted(&pm, w2));
        let pm_3 = cumulative(h, &weighted(&pm, w3));
        let sigma_2 = cumulative(h, &weighted(sg, w2));

        let prod_v = |g: &[DMatrix<T>], f: &[DVector<T>]| -> Vec<DVector<T>> {
            cumulative(h, &g.iter().zip(f).map(|(a, b)| a * b).collect::<Vec<_>>())
        };
        let prod_m = |g: &[DMatrix<T>], f: &[DMatrix<T>]| -> Vec<DMatrix<T>> {
            cumulative(h, &g.iter().zip(f).map(|(a, b)| a * b).collect::<Vec<_>>())
        };
        let pt_phi = prod_v(&pt_1, &phi);
        let pm_phi = prod_v(&pm_2, &phi);
        let pt_pm = prod_m(&pt_1, &pm);
        let pm_pm = prod_m(&pm_2, &pm);

        let two = T::lit(2.0);
        let nodes = (0..=k)
            .map(|i| {
                let tau = rem[i];
                Brackets {
                    tau,
                    psi_w: &psi_1[i] * tau - &psi_2[i],
                    phi_w: &phi_2[i] * tau - &phi_3[i] * two,
                    pt_w: &pt_1[i] * tau - &pt_2[i],
                    pm_w: &pm_2[i] * tau - &pm_3[i] * two,
                    psi_1: psi_1[i].clone(),
                    psi_2: psi_2[i].clone(),
                    phi_2: phi_2[i].clone(),
                    phi_3: phi_3[i].clone(),
                    pt_1: pt_1[i].clone(),
                    pt_2: pt_2[i].clone(),
                    pm_2: pm_2[i].clone(),
                    pm_3: pm_3[i].clone(),
                    sigma_2: sigma_2[i].clone(),
                    pt_phi: pt_phi[i].clone(),
                    pm_phi: pm_phi[i].clone(),
                    pt_pm: pt_pm[i].clone(),
                    pm_pm: pm_pm[i].clone(),
                }
            })
            .collect();
        let ones = vec![T::one(); k + 1];
        IntegralTable { step: h, horizon: tt, nodes, unit: nested_scalar(h, &ones) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, i: usize) -> &Brackets<T> {
        &self.nodes[i]
    }

    /// Brackets at `t`, linearly interpolated between nodes.
    pub fn at(&self, t: T) -> Brackets<T> {
        let (i, w) = grid_locate(self.step, self.nodes.len(), t);
        if w == T::zero() {
            return self.nodes[i].clone();
        }
        let a = &self.nodes[i];
        let b = &self.nodes[i + 1];
        let v = |x: &DVector<T>, y: &DVector<T>| lerp_v(&[x.clone(), y.clone()], 0, w);
        let m = |x: &DMatrix<T>, y: &DMatrix<T>| lerp_m(&[x.clone(), y.clone()], 0, w);
        Brackets {
            tau: lerp_s(&[a.tau, b.tau], 0, w),
            psi_1: v(&a.psi_1, &b.psi_1),
            psi_2: v(&a.psi_2, &b.psi_2),
            psi_w: v(&a.psi_w, &b.psi_w),
            phi_2: v(&a.phi_2, &b.phi_2),
            phi_3: v(&a.phi_3, &b.phi_3),
            phi_w: v(&a.phi_w, &b.phi_w),
            pt_1: m(&a.pt_1, &b.pt_1),
            pt_2: m(&a.pt_2, &b.pt_2),
            pt_w: m(&a.pt_w, &b.pt_w),
            pm_2: m(&a.pm_2, &b.pm_2),
            pm_3: m(&a.pm_3, &b.pm_3),
            pm_w: m(&a.pm_w, &b.pm_w),
            sigma_2: m(&a.sigma_2, &b.sigma_2),
            pt_phi: v(&a.pt_phi, &b.pt_phi),
            pm_phi: v(&a.pm_phi, &b.pm_phi),
            pt_pm: m(&a.pt_pm, &b.pt_pm),
            pm_pm: m(&a.pm_pm, &b.pm_pm),
        }
    }
}
