use std::sync::Arc;

use nalgebra::DVector;

use super::*;
use crate::coeffs::{default_table, eval_a, eval_v1_solvable};
use crate::model::{presets, RowProfile, Scale, SmoothPayoff};

fn dv(xs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(xs)
}

/// `H = x₀x₂ + x₁² + x₂³/3`.
#[derive(Debug)]
struct Cubic;

impl SmoothPayoff<f64> for Cubic {
    fn value(&self, x: &[f64]) -> f64 {
        x[0] * x[2] + x[1] * x[1] + x[2].powi(3) / 3.0
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&[x[2], 2.0 * x[1], x[0] + x[2] * x[2]]);
    }
    fn hessian(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&[0.0, 0.0, 1.0, 0.0, 2.0, 0.0, 1.0, 0.0, 2.0 * x[2]]);
    }
    fn third(&self, _x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        out[26] = 2.0;
    }
}

/// Index model with rows driven by other coordinates and a nonlinear payoff.
fn tangled() -> ModelSpec<f64> {
    let mut spec = presets::index_hedge::<f64>(0.5, 1.0);
    let base = presets::INDEX_LOADING;
    spec.volatility = VolatilityMap::Composite(vec![
        RowProfile { coord: 2, scale: Scale::Power(0.7), loading: dv(&[0.2, 0.03, 0.0]) },
        RowProfile { coord: 0, scale: Scale::Linear, loading: dv(&[0.05, 0.2, 0.0]) },
        RowProfile { coord: 1, scale: Scale::Power(0.4), loading: dv(&base) },
    ]);
    spec.payoff = PayoffMap::Smooth(Arc::new(Cubic));
    spec
}

#[test]
fn order_zero_is_discounted_payoff() {
    let spec = presets::index_hedge::<f64>(0.25, 1.0);
    let table = default_table(&spec).unwrap();
    let ctx = ExpansionContext::new(&spec, &table, 3).unwrap();
    let (x, z) = (dv(&[1.1, 0.9, 1.3]), dv(&[0.2, -0.1, 0.05]));
    let v = v1_expansion(&ctx, 0.3, &x, &z, 0).unwrap();
    assert!((v - eval_a(&table, 0.3, &z) * 1.3).abs() < 1e-15);
    assert_eq!(zeta1_expansion(&ctx, 0.3, &x, &z, 0).unwrap(), DVector::zeros(3));
}

#[test]
fn order_above_three_is_rejected() {
    let spec = presets::index_hedge::<f64>(0.25, 1.0);
    let table = default_table(&spec).unwrap();
    assert!(matches!(ExpansionContext::new(&spec, &table, 4), Err(MvhError::OrderUnsupported(4))));
    let ctx = ExpansionContext::new(&spec, &table, 3).unwrap();
    let (x, z) = (spec.x0.clone(), spec.z0.clone());
    assert!(matches!(v1_expansion(&ctx, 0.0, &x, &z, 4), Err(MvhError::OrderUnsupported(4))));
    assert!(matches!(cev_expansion(&ctx, 0.0, 1.0, &z, 5), Err(MvhError::OrderUnsupported(5))));
    assert!(ExpansionProvider::new(&ctx, 4).is_err());
}

#[test]
fn generic_matches_closed_forms() {
    let states = [
        (0.0, 1.0, [0.3, 0.3, 0.1]),
        (0.25, 0.8, [-0.2, 0.4, 0.3]),
        (0.6, 1.4, [0.1, -0.5, -0.2]),
        (0.95, 0.3, [0.7, 0.0, 0.05]),
    ];
    for beta in [0.0, 0.25, 0.5, 1.0] {
        let spec = presets::index_hedge::<f64>(beta, 1.0);
        let table = default_table(&spec).unwrap();
        let ctx = ExpansionContext::new(&spec, &table, 3).unwrap();
        for &(t, y, z) in &states {
            let x = dv(&[1.2, 0.7, y]);
            let z = dv(&z);
            for order in 0..=3 {
                let g = expansion_terms(&ctx, t, &x, &z, order).unwrap();
                let c = cev_expansion(&ctx, t, y, &z, order).unwrap();
                for k in 0..=order {
                    assert!((g.v1[k] - c.v1[k]).abs() < 1e-10, "beta {beta} t {t} order {order} term {k}");
                    assert!((&g.zeta1[k] - &c.zeta1[k]).amax() < 1e-10, "beta {beta} t {t} zeta term {k}");
                }
            }
        }
    }
}

#[test]
fn closed_forms_need_index_payoff() {
    let spec = tangled();
    let table = default_table(&spec).unwrap();
    let ctx = ExpansionContext::new(&spec, &table, 3).unwrap();
    assert!(ctx.cev_shape().is_none());
    assert!(matches!(cev_expansion(&ctx, 0.0, 1.0, &spec.z0, 2), Err(MvhError::ConfigMismatch(_))));
}

#[test]
fn orthogonal_signal_kills_first_order_index_term() {
    let spec = presets::index_hedge::<f64>(0.5, 1.0);
    let table = default_table(&spec).unwrap();
    let ctx = ExpansionContext::new(&spec, &table, 3).unwrap();
    // σ_yᵀ1m ẑ only sees the last coordinate
    let z = dv(&[0.4, -0.3, 0.0]);
    let t = cev_expansion(&ctx, 0.0, 1.0, &z, 1).unwrap();
    assert_eq!(t.v1[1], 0.0);
}

#[test]
fn low_orders_do_not_depend_on_beta_at_unit_level() {
    let mut reference: Option<(f64, f64)> = None;
    for beta in [0.0, 0.25, 0.5, 1.0] {
        let spec = presets::index_hedge::<f64>(beta, 1.0);
        let table = default_table(&spec).unwrap();
        let ctx = ExpansionContext::new(&spec, &table, 3).unwrap();
        let t = cev_expansion(&ctx, 0.0, 1.0, &spec.z0, 1).unwrap();
        let got = (t.v1[0], t.v1[0] + t.v1[1]);
        match reference {
            None => reference = Some(got),
            Some(r) => {
                assert!((r.0 - got.0).abs() < 1e-12);
                assert!((r.1 - got.1).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn constant_payoff_keeps_only_discount_terms() {
    let mut spec = presets::index_hedge::<f64>(0.5, 1.0);
    spec.payoff = PayoffMap::Constant(2.0);
    let table = default_table(&spec).unwrap();
    let ctx = ExpansionContext::new(&spec, &table, 3).unwrap();
    let (x, z) = (spec.x0.clone(), dv(&[0.1, 0.2, -0.3]));
    let t = expansion_terms(&ctx, 0.2, &x, &z, 3).unwrap();
    let a = eval_a(&table, 0.2, &z);
    let p = table.primitives(0.2);
    let expect = &p.sigma * (&p.c1 + &p.c2 * &z) * (a * 2.0);
    assert!((t.v1[0] - 2.0 * a).abs() < 1e-15);
    assert!(t.v1[1..].iter().all(|&v| v == 0.0));
    assert!((&t.zeta1[1] - expect).amax() < 1e-15);
    assert!(t.zeta1[2..].iter().all(|v| v.amax() == 0.0));
}

#[test]
fn first_order_is_drift_of_frozen_volatility() {
    let spec = tangled();
    let table = default_table(&spec).unwrap();
    let ctx = ExpansionContext::new(&spec, &table, 3).unwrap();
    let (x, z) = (dv(&[1.1, 0.9, 1.2]), dv(&[0.1, 0.2, -0.3]));
    let t = 0.4;
    let terms = expansion_terms(&ctx, t, &x, &z, 1).unwrap();
    let ge = crate::model::eval_gamma_unchecked(&spec.volatility, &x);
    let g = &ge.gamma * crate::linalg::mask_m(&z, spec.d);
    let mut grad = [0.0; 3];
    Cubic.gradient(x.as_slice(), &mut grad);
    let expect = eval_a(&table, t, &z) * (Cubic.value(x.as_slice()) + (1.0 - t) * dv(&grad).dot(&g));
    assert!((terms.v1_sum() - expect).abs() < 1e-14);
}

/// `ζ1^{(k)} = γᵀ∇ₓ(V1^{(k−1)}) + Σ∇_ẑ(V1^{(k−1)})` for every `k`.
#[test]
fn zeta_terms_are_diffusion_of_lower_value_terms() {
    let spec = tangled();
    let table = default_table(&spec).unwrap();
    let ctx = ExpansionContext::new(&spec, &table, 3).unwrap();
    let (x, z) = (dv(&[1.1, 0.9, 1.2]), dv(&[0.1, 0.2, -0.3]));
    let t = 0.35;
    let h = 1e-5;
    let base = expansion_terms(&ctx, t, &x, &z, 3).unwrap();
    let ge = crate::model::eval_gamma_unchecked(&spec.volatility, &x);
    let sigma = table.primitives(t).sigma;
    for k in 1..=3 {
        let term = |x: &DVector<f64>, z: &DVector<f64>| expansion_terms(&ctx, t, x, z, 3).unwrap().v1[k - 1];
        let mut gx = DVector::zeros(3);
        let mut gz = DVector::zeros(3);
        for i in 0..3 {
            let mut up = x.clone();
            let mut dn = x.clone();
            up[i] += h;
            dn[i] -= h;
            gx[i] = (term(&up, &z) - term(&dn, &z)) / (2.0 * h);
            let mut up = z.clone();
            let mut dn = z.clone();
            up[i] += h;
            dn[i] -= h;
            gz[i] = (term(&x, &up) - term(&x, &dn)) / (2.0 * h);
        }
        let fd = ge.gamma.transpose() * gx + sigma.transpose() * gz;
        assert!((&base.zeta1[k] - &fd).amax() < 1e-8, "order {k}: {} vs {}", base.zeta1[k], fd);
    }
}

#[test]
fn solvable_case_converges_towards_exact() {
    let spec = presets::index_hedge::<f64>(1.0, 1.0);
    let table = default_table(&spec).unwrap();
    let ctx = ExpansionContext::new(&spec, &table, 3).unwrap();
    let exact = eval_v1_solvable(&table, 0.0, 1.0, &spec.z0).unwrap();
    let errs: Vec<f64> = (0..=3)
        .map(|k| (v1_expansion(&ctx, 0.0, &spec.x0, &spec.z0, k).unwrap() - exact).abs())
        .collect();
    assert!(errs.windows(2).all(|w| w[1] <= w[0]), "{errs:?}");
    assert!(errs[3] < 1e-4, "{errs:?}");
}

#[test]
fn provider_matches_direct_evaluation() {
    for spec in [presets::index_hedge::<f64>(0.5, 1.0), tangled()] {
        let table = default_table(&spec).unwrap();
        let ctx = ExpansionContext::new(&spec, &table, 3).unwrap();
        let provider = ExpansionProvider::new(&ctx, 3).unwrap();
        let grid = McGrid::new(&table, 0.0, 0.1).unwrap();
        let x = [1.1, 0.9, 1.2];
        let z = [0.1, 0.2, -0.3];
        for k in [0, 4, 9] {
            let mut z1 = [0.0; 3];
            let v = provider.eval(&grid, k, &x, &z, &mut z1);
            let t = grid.nodes[k].t;
            let direct = expansion_terms(&ctx, t, &dv(&x), &dv(&z), 3).unwrap();
            assert!((v - direct.v1_sum()).abs() < 1e-12);
            assert!((dv(&z1) - direct.zeta1_sum()).amax() < 1e-12);
        }
        // a second grid bypasses the cache
        let other = McGrid::new(&table, 0.0, 0.25).unwrap();
        let mut z1 = [0.0; 3];
        let v = provider.eval(&other, 2, &x, &z, &mut z1);
        let direct = expansion_terms(&ctx, other.nodes[2].t, &dv(&x), &dv(&z), 3).unwrap();
        assert!((v - direct.v1_sum()).abs() < 1e-12);
    }
}

#[test]
fn breakdown_csv_lists_every_order() {
    let spec = presets::index_hedge::<f64>(0.25, 1.0);
    let table = default_table(&spec).unwrap();
    let ctx = ExpansionContext::new(&spec, &table, 3).unwrap();
    let t = cev_expansion(&ctx, 0.0, 1.0, &spec.z0, 3).unwrap();
    let mut buf = Vec::new();
    t.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "order,v1_term,v1_cumulative,zeta1_0,zeta1_1,zeta1_2");
    assert_eq!(lines.len(), 5);
    let last: f64 = lines[4].split(',').nth(2).unwrap().parse().unwrap();
    assert!((last - t.v1_sum()).abs() < 1e-12);
}
