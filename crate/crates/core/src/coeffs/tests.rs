use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};

use super::*;
use crate::model::presets;

fn complete_market(theta: f64, horizon: f64) -> CoefficientTable<f64> {
    CoefficientTable::build(&presets::single_asset::<f64>(theta, 0.0, horizon), 1e-3).unwrap()
}

#[test]
fn complete_market_closed_forms() {
    let tab = complete_market(0.4, 1.0);
    for (i, t) in (0..tab.len()).map(|i| (i, tab.time(i))) {
        assert_relative_eq!(tab.a.a2[i][(0, 0)], -2.0 * (1.0 - t), epsilon = 1e-12);
        assert_relative_eq!(tab.c.c2[i][(0, 0)], -2.0 * (1.0 - t), epsilon = 1e-12);
        assert!(tab.a.a1[i][0].abs() < 1e-14 && tab.a.a0[i].abs() < 1e-14);
        assert!(tab.c.c1[i][0].abs() < 1e-14 && tab.c.c0[i].abs() < 1e-14);
    }
    let z = DVector::from_vec(vec![0.4]);
    for t in [0.0, 0.3, 0.77] {
        let want = (-0.16f64 * (1.0 - t)).exp();
        assert_relative_eq!(eval_v2(&tab, t, &z), want, epsilon = 1e-10);
        assert_relative_eq!(eval_a(&tab, t, &z), want, epsilon = 1e-10);
    }
}

#[test]
fn terminal_conditions_vanish() {
    let tab = default_table(&presets::index_hedge::<f64>(1.0, 0.5)).unwrap();
    let last = tab.len() - 1;
    assert_eq!(tab.a.a2[last], DMatrix::zeros(3, 3));
    assert_eq!(tab.a.a1[last], DVector::zeros(3));
    assert_eq!(tab.a.a0[last], 0.0);
    assert_eq!(tab.c.c2[last], DMatrix::zeros(3, 3));
    assert_eq!(tab.c.c0[last], 0.0);
    let b = tab.beta.as_ref().unwrap();
    assert_eq!(b.beta1[last], DVector::zeros(3));
    assert_eq!(b.beta0[last], 0.0);
    let z = DVector::from_vec(vec![0.7, -0.2, 0.4]);
    assert_eq!(eval_vl(&tab, 0.5, &z), 0.0);
    assert_eq!(eval_v2(&tab, 0.5, &z), 1.0);
    assert_eq!(eval_a(&tab, 0.5, &z), 1.0);
    assert_eq!(eval_p(&tab, 0.5, &z).unwrap(), 1.0);
}

#[test]
fn reference_v2_half_year() {
    let spec = presets::index_hedge::<f64>(1.0, 0.5);
    let tab = default_table(&spec).unwrap();
    let v2 = eval_v2(&tab, 0.0, &spec.z0);
    assert!((v2 - 0.9263).abs() < 1e-3, "{v2}");
    assert!((v2 - 0.926324).abs() < 2e-6, "{v2}");
}

#[test]
fn reference_v2_one_year() {
    let spec = presets::index_hedge::<f64>(0.5, 1.0);
    let tab = default_table(&spec).unwrap();
    let v2 = eval_v2(&tab, 0.0, &spec.z0);
    assert!((v2 - 0.8721).abs() < 1e-3, "{v2}");
}

#[test]
fn forward_value_matches_prototype_oracle() {
    // Independent dense-matrix oracle gives A·P = 0.941860 at T = 0.5.
    let spec = presets::index_hedge::<f64>(1.0, 0.5);
    let tab = default_table(&spec).unwrap();
    let v1 = eval_v1_solvable(&tab, 0.0, 1.0, &spec.z0).unwrap();
    assert!((v1 - 0.941860).abs() < 5e-6, "{v1}");
}

#[test]
fn discount_factor_equals_v2() {
    // With H ≡ 1 the linear BSDE for V1 is solved by V2, so A(t,T) ≡ V2(t).
    let spec = presets::index_hedge::<f64>(1.0, 1.0);
    let tab = default_table(&spec).unwrap();
    for (t, z) in [(0.0, spec.z0.clone()), (0.4, DVector::from_vec(vec![-0.3, 0.8, 0.2]))] {
        assert_relative_eq!(eval_a(&tab, t, &z), eval_v2(&tab, t, &z), epsilon = 1e-9);
    }
}

#[test]
fn symmetric_riccati_solutions() {
    let tab = default_table(&presets::index_hedge::<f64>(1.0, 1.0)).unwrap();
    for i in 0..tab.len() {
        assert_eq!(tab.a.a2[i], tab.a.a2[i].transpose());
        assert_eq!(tab.c.c2[i], tab.c.c2[i].transpose());
        assert_eq!(tab.schedule.values[i], tab.schedule.values[i].transpose());
    }
}

#[test]
fn xi_from_stored_sigma() {
    let tab = default_table(&presets::index_hedge::<f64>(1.0, 0.5)).unwrap();
    for i in [0, 17, tab.len() - 1] {
        let s = &tab.schedule.values[i];
        let sd = s.rows(0, 2).into_owned();
        let sm = s.rows(2, 1).into_owned();
        let xi = sd.transpose() * sd - sm.transpose() * sm;
        assert_relative_eq!(tab.derived[i].xi, xi, epsilon = 1e-15);
    }
}

#[test]
fn exact_algebraic_identities() {
    let tab = default_table(&presets::index_hedge::<f64>(1.0, 1.0)).unwrap();
    let one_d = crate::linalg::ones_d::<f64>(2, 3);
    let one_m = crate::linalg::ones_m::<f64>(2, 3);
    for d in &tab.derived {
        assert_eq!(&d.psi_m - &d.psi_t, one_m);
        assert_relative_eq!(&d.k - &d.psi_t, -&one_d, epsilon = 1e-15);
        assert_eq!(d.psi, d.g);
    }
}

#[test]
fn derived_with_zero_solutions() {
    let spec = presets::index_hedge::<f64>(1.0, 1.0);
    let st = Structure::new(&spec);
    let s = spec.sigma0.clone();
    let zm = DMatrix::zeros(3, 3);
    let zv = DVector::zeros(3);
    let d = st.derive(&s, &zm, &zv, &zm, &zv);
    assert_eq!(d.psi, zv);
    assert_eq!(d.g, zv);
    assert_eq!(d.psi_m, st.one_m);
    assert_eq!(d.k, -&st.one_d);
    assert_eq!(d.phi, spec.mu);
    assert_relative_eq!(d.phi_m, &spec.f + &s * &st.one_d, epsilon = 1e-15);
}

#[test]
fn derived_with_vanishing_covariance() {
    let spec = presets::index_hedge::<f64>(1.0, 1.0);
    let tab = default_table(&spec).unwrap();
    let st = Structure::new(&spec);
    let d = st.derive(&DMatrix::zeros(3, 3), &tab.a.a2[0], &tab.a.a1[0], &tab.c.c2[0], &tab.c.c1[0]);
    assert_eq!(d.psi, DVector::zeros(3));
    assert_eq!(d.psi_t, DMatrix::zeros(3, 3));
    assert_eq!(d.k, -&st.one_d);
    assert_eq!(d.phi_m, spec.f);
}

#[test]
fn c_chain_ignores_a0() {
    let spec = presets::index_hedge::<f64>(1.0, 0.5);
    let sched = crate::filter::solve_kalman_sigma(&spec, 1e-3).unwrap();
    let a = solve_a(&sched, &spec).unwrap();
    let mut bumped = a.clone();
    bumped.a0.iter_mut().for_each(|x| *x += 3.0);
    let c1 = solve_c(&a, &sched, &spec).unwrap();
    let c2 = solve_c(&bumped, &sched, &spec).unwrap();
    assert_eq!(c1.c1, c2.c1);
    assert_eq!(c1.c0, c2.c0);
}

#[test]
fn zero_loading_gives_unit_p() {
    let spec = presets::index_hedge::<f64>(1.0, 0.5);
    let sched = crate::filter::solve_kalman_sigma(&spec, 1e-3).unwrap();
    let a = solve_a(&sched, &spec).unwrap();
    let c = solve_c(&a, &sched, &spec).unwrap();
    let b = solve_beta(&c, &a, &sched, &spec, &DVector::zeros(3)).unwrap();
    assert!(b.beta1.iter().all(|v| v.iter().all(|&x| x == 0.0)));
    assert!(b.beta0.iter().all(|&x| x == 0.0));
}

#[test]
fn zero_loading_and_covariance_gives_zero_z1() {
    let mut spec = presets::index_hedge::<f64>(1.0, 0.5);
    spec.sigma0 = DMatrix::zeros(3, 3);
    spec.delta = DMatrix::zeros(3, 3);
    let sched = crate::filter::solve_kalman_sigma(&spec, 1e-3).unwrap();
    let a = solve_a(&sched, &spec).unwrap();
    let c = solve_c(&a, &sched, &spec).unwrap();
    let sy = DVector::zeros(3);
    let b = solve_beta(&c, &a, &sched, &spec, &sy).unwrap();
    let tab = CoefficientTable::assemble(&spec, sched, a, c, Some(b), Some((2, sy)));
    let z1 = eval_z1_solvable(&tab, 0.1, 1.0, &spec.z0).unwrap();
    assert_eq!(z1, DVector::zeros(3));
}

#[test]
fn terminal_z1_is_payoff_times_loading() {
    let spec = presets::index_hedge::<f64>(1.0, 0.5);
    let tab = default_table(&spec).unwrap();
    let z1 = eval_z1_solvable(&tab, 0.5, 1.3, &spec.z0).unwrap();
    let want = DVector::from_row_slice(&presets::INDEX_LOADING) * 1.3;
    assert_relative_eq!(z1, want, epsilon = 1e-15);
}

#[test]
fn closed_form_rejects_cev() {
    let spec = presets::index_hedge::<f64>(0.5, 0.5);
    let tab = default_table(&spec).unwrap();
    assert!(matches!(eval_z1_solvable(&tab, 0.0, 1.0, &spec.z0), Err(MvhError::ConfigMismatch(_))));
}

#[test]
fn value_function_positive_on_grid() {
    let spec = presets::index_hedge::<f64>(1.0, 1.0);
    let tab = default_table(&spec).unwrap();
    for i in 0..tab.len() {
        assert!(eval_v2(&tab, tab.time(i), &spec.z0) > 0.0);
    }
}

fn a2_residual(h: f64) -> f64 {
    let spec = presets::index_hedge::<f64>(1.0, 1.0);
    let tab = CoefficientTable::build(&spec, h).unwrap();
    let st = &tab.structure;
    let mut worst: f64 = 0.0;
    for i in 1..tab.len() - 1 {
        let a = &tab.a.a2[i];
        let s = &tab.schedule.values[i];
        let osa = &st.one_d * s * a;
        let rhs = &st.one_d * 2.0 + a * st.xi(s) * a + st.f.transpose() * a + a * &st.f + (&osa + osa.transpose()) * 2.0;
        let fd = (&tab.a.a2[i + 1] - &tab.a.a2[i - 1]) / (2.0 * h);
        worst = worst.max((fd - rhs).amax());
    }
    worst
}

#[test]
fn riccati_residual_is_second_order() {
    let r1 = a2_residual(1e-2);
    let r2 = a2_residual(5e-3);
    assert!(r1 < 1e-3, "{r1}");
    assert!(r1 / r2 > 3.0, "{r1} {r2}");
}

#[test]
fn blow_up_reports_time() {
    let mut spec = presets::single_asset::<f64>(0.3, 1e6, 5.0);
    spec.delta[(0, 0)] = 6.0;
    spec.filter_kind = crate::model::FilterKind::KalmanBucy;
    match CoefficientTable::build(&spec, 1e-3) {
        Err(MvhError::BlowUp { t, .. }) => assert!(t > 0.0 && t < 5.0, "t = {t}"),
        Err(e) => panic!("expected blow-up, got {e}"),
        Ok(_) => panic!("expected blow-up, got a table"),
    }
}

#[test]
fn unit_brackets_match_polynomials() {
    let tab = default_table(&presets::index_hedge::<f64>(1.0, 1.0)).unwrap();
    let it = IntegralTable::build(&tab);
    let (one, two, three) = &it.unit;
    for i in (0..it.len()).step_by(97) {
        let tau: f64 = 1.0 - tab.time(i);
        assert!((one[i] - tau).abs() < 1e-8);
        assert!((two[i] - tau * tau / 2.0).abs() < 1e-8);
        assert!((three[i] - tau.powi(3) / 6.0).abs() < 1e-8);
    }
}

#[test]
fn linear_integrand_bracket() {
    let h = 1e-3;
    let f: Vec<f64> = (0..=1000).map(|i| i as f64 * h).collect();
    let (one, _, _) = nested_scalar(h, &f);
    assert!((one[300] - 0.455).abs() < 1e-12);
    assert!((one[0] - 0.5).abs() < 1e-12);
}

#[test]
fn weighted_brackets_consistent() {
    let tab = default_table(&presets::index_hedge::<f64>(1.0, 1.0)).unwrap();
    let it = IntegralTable::build(&tab);
    let b = it.at(0.3);
    // [(s−t)ψ] + [[ψ]] = (T−t)[ψ].
    assert_relative_eq!(&b.psi_w + &b.psi_2, &b.psi_1 * b.tau, epsilon = 1e-14);
    let b0 = it.node(0);
    assert_eq!(b0.tau, 1.0);
}
