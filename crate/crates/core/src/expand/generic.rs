//! Expansion for an arbitrary smooth volatility map and payoff.

use nalgebra::{DMatrix, DVector};

use super::{ExpansionContext, ExpansionTerms};
use crate::coeffs::{Brackets, Primitives};
use crate::linalg::ones_m;
use crate::model::eval_gamma_unchecked;
use crate::scalar::Real;

/// Payoff derivatives at `x`; missing entries are identically zero.
struct PayoffJet<T: Real> {
    value: T,
    grad: DVector<T>,
    hess: Option<DMatrix<T>>,
    /// Row-major `n³` buffer.
    third: Option<Vec<T>>,
}

impl<T: Real> PayoffJet<T> {
    fn new(ctx: &ExpansionContext<T>, x: &[T], order: usize) -> Self {
        let n = x.len();
        let payoff = &ctx.payoff;
        let deg = payoff.degree();
        let needs = |k: usize| order >= k && deg.map_or(true, |d| d >= k);
        let mut grad = DVector::zeros(n);
        payoff.gradient(x, grad.as_mut_slice());
        let hess = needs(2).then(|| {
            let mut buf = vec![T::zero(); n * n];
            payoff.hessian(x, &mut buf);
            DMatrix::from_row_slice(n, n, &buf)
        });
        let third = needs(3).then(|| {
            let mut buf = vec![T::zero(); n * n * n];
            payoff.third(x, &mut buf);
            buf
        });
        PayoffJet { value: payoff.value(x), grad, hess, third }
    }
}

fn frob<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> T {
    a.component_mul(b).sum()
}

/// Per-order terms of `V1` and `ζ1` at `(t, x, ẑ)` from brackets `b` and
/// primitives `p` evaluated at `t`.
pub(super) fn terms<T: Real>(
    ctx: &ExpansionContext<T>,
    b: &Brackets<T>,
    p: &Primitives<T>,
    x: &DVector<T>,
    z: &DVector<T>,
    order: usize,
) -> ExpansionTerms<T> {
    let n = x.len();
    let d = ctx.table.structure.d;
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    let tau = b.tau;
    let tau2 = tau * tau;
    let tau3 = tau2 * tau;

    let a = (half * z.dot(&(&p.c2 * z)) + p.c1.dot(z) + p.c0).exp();
    let cs = &p.sigma * (&p.c1 + &p.c2 * z);
    let xs: Vec<T> = x.iter().copied().collect();
    let jet = PayoffJet::new(ctx, &xs, order);
    let mut out = ExpansionTerms::new(n, order);
    out.v1[0] = a * jet.value;
    if order == 0 {
        return out;
    }

    let one_m = ones_m::<T>(d, n);
    let ge = eval_gamma_unchecked(&ctx.volatility, x);
    let gam = &ge.gamma;
    let gam_t = gam.transpose();
    let mz = &one_m * z;
    // g = γ 1m ẑ and ∂_k g as column k of `jac`
    let g = gam * &mz;
    let dg: Vec<DVector<T>> = ge.d1.iter().map(|dk| dk * &mz).collect();
    let jac = DMatrix::from_fn(n, n, |i, k| dg[k][i]);
    let gg = gam * &gam_t;
    let grad = &jet.grad;
    let hess = jet.hess.as_ref();

    // order 1
    let ex1 = &g * tau;
    out.v1[1] = a * grad.dot(&ex1);
    out.zeta1[1] = (&cs * jet.value + &gam_t * grad) * a;
    if order == 1 {
        return out;
    }

    // order 2
    let v = &b.psi_1 + &one_m * &b.phi_2;
    let mv = &b.pt_1 - &one_m * &b.pm_2;
    let vz = &v + &mv * z;
    let jg = &jac * &g;
    let ex2 = &jg * (half * tau2) + gam * &vz;
    let ex11 = &g * g.transpose() * tau2 + &gg * tau;
    let hex11 = hess.map_or(T::zero(), |h| frob(h, &ex11));
    out.v1[2] = a * (grad.dot(&ex2) + half * hex11);

    let sig1 = (&jac * gam + gam * &one_m * &p.sigma) * tau;
    let mut z2 = &cs * grad.dot(&ex1) + sig1.transpose() * grad;
    if let Some(h) = hess {
        z2 += &gam_t * (h.transpose() * &ex1);
    }
    out.zeta1[2] = z2 * a;
    if order == 2 {
        return out;
    }

    // order 3
    let d2g = |k: usize, l: usize| ge.d2(k, l) * &mz;
    let mut ex3 = &jac * &jg * (tau3 / T::lit(6.0));
    for i in 0..n {
        for j in 0..n {
            let dij = d2g(i, j);
            ex3 += &dij * (g[i] * g[j] * tau3 / T::lit(6.0) + gg[(i, j)] * tau2 / T::lit(4.0));
        }
    }
    let s2t = &one_m * &b.sigma_2 * &gam_t;
    for i in 0..n {
        let c = &ge.d1[i] * &s2t;
        for j in 0..n {
            ex3[j] += c[(j, i)];
        }
    }
    let w_a = &b.psi_2 + &one_m * &b.phi_3 + (&b.pt_2 - &one_m * &b.pm_3) * z;
    let w_b = &b.psi_w
        + &one_m * (&b.phi_3 + &b.phi_w)
        + (&b.pt_w - &one_m * (&b.pm_3 + &b.pm_w)) * z;
    let gw_a = gam * &w_a;
    for i in 0..n {
        ex3 += &dg[i] * gw_a[i] + &ge.d1[i] * &w_b * g[i];
    }
    ex3 += gam * (&b.pt_phi - &one_m * &b.pm_phi + (&one_m * &b.pm_pm - &b.pt_pm) * z);

    let mut t3 = grad.dot(&ex3);
    if let Some(h) = hess {
        let w3 = &b.psi_2
            + &b.psi_w
            + &one_m * (&b.phi_3 * two + &b.phi_w)
            + (&b.pt_2 + &b.pt_w - &one_m * (&b.pm_3 * two + &b.pm_w)) * z;
        let mut dk_gt = DMatrix::zeros(n, n);
        for k in 0..n {
            dk_gt += &ge.d1[k] * &gam_t * g[k];
        }
        let ex21 = &jg * g.transpose() * (half * tau3)
            + gam * &one_m * &b.sigma_2 * &gam_t
            + (dk_gt + &jac * &gg) * (half * tau2)
            + gam * &w3 * g.transpose();
        t3 += frob(h, &ex21);
    }
    if let Some(h3) = jet.third.as_ref() {
        let mut acc = T::zero();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let e = (g[i] * gg[(j, k)] + g[j] * gg[(k, i)] + g[k] * gg[(i, j)]) * tau2
                        + g[i] * g[j] * g[k] * tau3;
                    acc += h3[(i * n + j) * n + k] * e;
                }
            }
        }
        t3 += acc / T::lit(6.0);
    }
    out.v1[3] = a * t3;

    // σ̄^{(2)}, row i per component
    let mut q = &jac * &jac;
    for j in 0..n {
        for k in 0..n {
            let djk = d2g(j, k);
            for i in 0..n {
                q[(i, k)] += djk[i] * g[j];
            }
        }
    }
    let mut r = &jac * gam;
    for j in 0..n {
        r += &ge.d1[j] * g[j];
    }
    let dvz: Vec<DVector<T>> = ge.d1.iter().map(|dj| dj * &vz).collect();
    let pm = DMatrix::from_fn(n, n, |i, j| dvz[j][i]);
    let sig2 = &q * gam * (half * tau2) + &r * &one_m * &p.sigma * (half * tau2) + &pm * gam + gam * &mv * &p.sigma;

    let mut z3 = &cs * (grad.dot(&ex2) + half * hex11) + sig2.transpose() * grad;
    if let Some(h) = hess {
        z3 += &gam_t * (h.transpose() * &ex2);
        // Σ_ij ∂_ij H σ̄^{(i,j),(1,1)}
        let mut w = DVector::zeros(n);
        for k in 0..n {
            let dk = &ge.d1[k] * &gam_t;
            let mut acc = T::zero();
            for i in 0..n {
                for j in 0..n {
                    acc += h[(i, j)]
                        * ((jac[(i, k)] * g[j] + g[i] * jac[(j, k)]) * tau2 + (dk[(i, j)] + dk[(j, i)]) * tau);
                }
            }
            w[k] = acc;
        }
        let u = &gam_t * (h * &g + h.transpose() * &g);
        let s11 = &gam_t * w + p.sigma.transpose() * &one_m * u * tau2;
        z3 += s11 * half;
    }
    if let Some(h3) = jet.third.as_ref() {
        let mut qk = DVector::zeros(n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    qk[k] += h3[(i * n + j) * n + k] * ex11[(i, j)];
                }
            }
        }
        z3 += &gam_t * qk * half;
    }
    out.zeta1[3] = z3 * a;
    out
}
