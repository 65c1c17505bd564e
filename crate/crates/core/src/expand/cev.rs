//! Closed forms for `H = Y^I_T` when row `I` of `γ` is `f(y)·σ_yᵀ` with
//! `f(y) = y^β`, written through `(f, f', f'')` so that `β ∈ {0, 1}` and
//! `y ≤ 0` follow the same algebra as the generic route.

use nalgebra::DVector;

use super::ExpansionTerms;
use crate::coeffs::{Brackets, Primitives};
use crate::linalg::mask_m;
use crate::model::{PayoffMap, Scale, VolatilityMap};
use crate::scalar::Real;

/// Index coordinate, its scale function and loading `σ_y`.
#[derive(Clone, Debug, PartialEq)]
pub struct CevShape<T: Real> {
    pub index: usize,
    pub scale: Scale<T>,
    pub sigma_y: DVector<T>,
}

impl<T: Real> CevShape<T> {
    /// Recognises `H = x_I` with row `I` of `γ` depending on `x_I` only.
    pub fn detect(vol: &VolatilityMap<T>, payoff: &PayoffMap<T>) -> Option<Self> {
        let PayoffMap::IndexLinear { index } = *payoff else {
            return None;
        };
        let row = vol.profiles().into_iter().nth(index)?;
        (row.coord == index).then_some(CevShape { index, scale: row.scale, sigma_y: row.loading })
    }
}

/// State-independent pieces at one time `t`.
#[derive(Clone, Debug)]
pub(super) struct CevNode<T: Real> {
    tau: T,
    /// `1m σ_y`.
    sm: DVector<T>,
    /// `σ_yᵀ([ψ] + 1m[[φ]])`.
    u1: T,
    /// `([Ψ̃] − 1m[[Φ]])ᵀσ_y`.
    r1: DVector<T>,
    u3: T,
    r3: DVector<T>,
    u4: T,
    r4: DVector<T>,
    /// `σ_yᵀ1m[[Σ]]σ_y`.
    s_sig: T,
    /// `|σ_y|²`.
    ss: T,
    /// `Σᵀ1m σ_y`.
    sy_sigma: DVector<T>,
    /// `Σᵀ r1`.
    r1_sigma: DVector<T>,
    sigma_c1: DVector<T>,
    sigma_c2: nalgebra::DMatrix<T>,
    c2: nalgebra::DMatrix<T>,
    c1: DVector<T>,
    c0: T,
}

impl<T: Real> CevNode<T> {
    pub(super) fn new(shape: &CevShape<T>, d: usize, b: &Brackets<T>, p: &Primitives<T>) -> Self {
        let two = T::lit(2.0);
        let sy = &shape.sigma_y;
        let sm = mask_m(sy, d);
        let r1 = b.pt_1.tr_mul(sy) - b.pm_2.tr_mul(&sm);
        CevNode {
            tau: b.tau,
            u1: sy.dot(&b.psi_1) + sm.dot(&b.phi_2),
            u3: sy.dot(&(&b.psi_2 + &b.psi_w)) + sm.dot(&(&b.phi_3 * two + &b.phi_w)),
            r3: (&b.pt_2 + &b.pt_w).tr_mul(sy) - (&b.pm_3 * two + &b.pm_w).tr_mul(&sm),
            u4: sy.dot(&b.pt_phi) - sm.dot(&b.pm_phi),
            r4: b.pm_pm.tr_mul(&sm) - b.pt_pm.tr_mul(sy),
            s_sig: sm.dot(&(&b.sigma_2 * sy)),
            ss: sy.dot(sy),
            sy_sigma: p.sigma.tr_mul(&sm),
            r1_sigma: p.sigma.tr_mul(&r1),
            r1,
            sm,
            sigma_c1: &p.sigma * &p.c1,
            sigma_c2: &p.sigma * &p.c2,
            c2: p.c2.clone(),
            c1: p.c1.clone(),
            c0: p.c0,
        }
    }

    pub(super) fn eval(&self, shape: &CevShape<T>, y: T, z: &DVector<T>, order: usize) -> ExpansionTerms<T> {
        let half = T::lit(0.5);
        let n = z.len();
        let tau = self.tau;
        let tau2 = tau * tau;
        let sy = &shape.sigma_y;
        let (f, f1, f2) = shape.scale.eval(y);
        let s = self.sm.dot(z);
        let a = (half * z.dot(&(&self.c2 * z)) + self.c1.dot(z) + self.c0).exp();
        let mut out = ExpansionTerms::new(n, order);
        out.v1[0] = a * y;
        if order == 0 {
            return out;
        }
        let cs = &self.sigma_c1 + &self.sigma_c2 * z;
        // β y^{2β−1} and (2β² − β) y^{3β−2}
        let b21 = f * f1;
        let b32 = f * (f1 * f1 + f * f2);

        let y1 = tau * f * s;
        out.v1[1] = a * y1;
        out.zeta1[1] = (&cs * y + sy * f) * a;
        if order == 1 {
            return out;
        }

        let lin1 = self.u1 + self.r1.dot(z);
        let y2 = half * tau2 * b21 * s * s + f * lin1;
        out.v1[2] = a * y2;
        let sig1 = (sy * (b21 * s) + &self.sy_sigma * f) * tau;
        out.zeta1[2] = (&cs * y1 + sig1) * a;
        if order == 2 {
            return out;
        }

        let y3 = tau2 * tau / T::lit(6.0) * b32 * s * s * s
            + tau2 / T::lit(4.0) * f * f * f2 * s * self.ss
            + b21 * s * (self.u3 + self.r3.dot(z))
            + f * (self.u4 + self.r4.dot(z))
            + b21 * self.s_sig;
        out.v1[3] = a * y3;
        let sig2 = sy * (half * tau2 * b32 * s * s + b21 * lin1)
            + &self.sy_sigma * (tau2 * b21 * s)
            + &self.r1_sigma * f;
        out.zeta1[3] = (&cs * y2 + sig2) * a;
        out
    }
}
