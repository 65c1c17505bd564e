use mvh_core::coeffs::{default_table, eval_v1_solvable, eval_z1_solvable};
use mvh_core::mc::*;
use mvh_core::model::{presets, PayoffMap};
use mvh_core::stats::Estimate;
use nalgebra::{DMatrix, DVector};

fn exact(value: f64) -> Estimate {
    Estimate { value, se: 0.0, n: 0 }
}

#[test]
fn forward_measure_v1_matches_closed_form() {
    let spec = presets::index_hedge::<f64>(1.0, 0.5);
    let table = default_table(&spec).unwrap();
    let start = StartState::initial(&spec);
    let ens = simulate(&spec, &table, Measure::ForwardAT, &start, SimConfig::new(60_000, 5e-3, 21), SimOptions::default())
        .unwrap();
    let v1 = estimate_v1(&ens, &table, &spec.payoff).unwrap();
    let closed = eval_v1_solvable(&table, 0.0, 1.0, &spec.z0).unwrap();
    assert!(v1.agrees(&exact(closed), 3.0), "{v1:?} vs {closed}");
}

#[test]
fn flows_z1_matches_closed_form() {
    let spec = presets::index_hedge::<f64>(1.0, 0.5);
    let table = default_table(&spec).unwrap();
    let start = StartState::initial(&spec);
    let opts = SimOptions { with_flows: true, keep_trajectories: false };
    let ens = simulate(&spec, &table, Measure::ForwardAT, &start, SimConfig::new(40_000, 5e-3, 22), opts).unwrap();
    let z1 = estimate_z1_flows(&ens, &spec, &table).unwrap();
    let closed = eval_z1_solvable(&table, 0.0, 1.0, &spec.z0).unwrap();
    for i in 0..3 {
        assert!(z1.component(i).agrees(&exact(closed[i]), 3.0), "{i}: {z1:?} vs {closed}");
    }
}

#[test]
fn constant_payoff_z1_has_no_flow_terms() {
    let mut spec = presets::index_hedge::<f64>(0.5, 0.5);
    spec.payoff = PayoffMap::Constant(2.0);
    let table = default_table(&spec).unwrap();
    let start = StartState::initial(&spec);
    let opts = SimOptions { with_flows: true, keep_trajectories: false };
    let ens = simulate(&spec, &table, Measure::ForwardAT, &start, SimConfig::new(32, 1e-2, 3), opts).unwrap();
    let z1 = estimate_z1_flows(&ens, &spec, &table).unwrap();
    let p = table.primitives(0.0);
    let a = mvh_core::coeffs::eval_a(&table, 0.0, &spec.z0);
    let expect = &p.sigma * (&p.c1 + &p.c2 * &spec.z0) * (2.0 * a);
    for i in 0..3 {
        assert!((z1.value[i] - expect[i]).abs() < 1e-13);
    }
}

fn flows_vs_delta(beta: f64, seed: u64) {
    let spec = presets::index_hedge::<f64>(beta, 0.5);
    let table = default_table(&spec).unwrap();
    let start = StartState::initial(&spec);
    let opts = SimOptions { with_flows: true, keep_trajectories: false };
    let flows = simulate(&spec, &table, Measure::ForwardAT, &start, SimConfig::new(20_000, 1e-2, seed), opts).unwrap();
    let f = estimate_z1_flows(&flows, &spec, &table).unwrap();
    let d = estimate_z1_delta(&spec, &table, &start, 1e-4, SimConfig::new(20_000, 1e-2, seed + 1)).unwrap();
    assert!(f.agrees(&d, 3.0), "flows {f:?}\ndelta {d:?}");
}

#[test]
fn flows_agree_with_delta_on_solvable_model() {
    flows_vs_delta(1.0, 30);
}

#[test]
fn flows_agree_with_delta_on_cev_model() {
    flows_vs_delta(0.5, 40);
}

#[test]
fn delta_on_frozen_dynamics_is_unit_gradient() {
    let mut spec = presets::index_hedge::<f64>(1.0, 0.5);
    spec.volatility = mvh_core::model::VolatilityMap::Constant(DMatrix::zeros(3, 3));
    let table = default_table(&spec).unwrap();
    let start = StartState::initial(&spec);
    let d = estimate_z1_delta(&spec, &table, &start, 1e-4, SimConfig::new(8, 1e-2, 1)).unwrap();
    // with γ ≡ 0 only the V1·Σ(c¹ + c²ẑ) term survives; H = Y has unit gradient in y
    let p = table.primitives(0.0);
    let a = mvh_core::coeffs::eval_a(&table, 0.0, &spec.z0);
    let expect = &p.sigma * (&p.c1 + &p.c2 * &spec.z0) * a;
    for i in 0..3 {
        assert!((d.value[i] - expect[i]).abs() < 1e-9, "{d:?}");
    }
}

#[test]
fn girsanov_identity_holds() {
    let spec = presets::index_hedge::<f64>(0.5, 0.5);
    let table = default_table(&spec).unwrap();
    let rep = girsanov_check(&spec, &table, SimConfig::new(60_000, 5e-3, 50)).unwrap();
    assert!(rep.agrees(3.0), "{rep:?}");
}

#[test]
fn girsanov_constant_payoff_is_normalised() {
    let mut spec = presets::index_hedge::<f64>(1.0, 0.5);
    spec.payoff = PayoffMap::Constant(1.0);
    let table = default_table(&spec).unwrap();
    let rep = girsanov_check(&spec, &table, SimConfig::new(40_000, 5e-3, 51)).unwrap();
    assert_eq!(rep.physical.value, 1.0);
    assert!(rep.reweighted.within(1.0, 3.0, 0.0), "{rep:?}");
}

#[test]
fn density_is_one_when_price_of_risk_vanishes() {
    let spec = presets::single_asset::<f64>(0.0, 1e-14, 1.0);
    let table = default_table(&spec).unwrap();
    let start = StartState::initial(&spec);
    let ens = simulate(&spec, &table, Measure::ForwardAT, &start, SimConfig::new(64, 1e-2, 5), SimOptions::default())
        .unwrap();
    assert!(ens.log_linv.iter().all(|l| l.abs() < 1e-10));
}

#[test]
fn physical_filter_mean_follows_signal_ode() {
    let mut spec = presets::index_hedge::<f64>(1.0, 0.5);
    spec.sigma0 = DMatrix::identity(3, 3) * 1e-2;
    spec.delta = DMatrix::zeros(3, 3);
    let table = default_table(&spec).unwrap();
    let start = StartState::initial(&spec);
    let ens = simulate(&spec, &table, Measure::Physical, &start, SimConfig::new(10_000, 1e-3, 60), SimOptions::default())
        .unwrap();
    // z̄(T) = e^{−FT}z0 + F⁻¹(I − e^{−FT})μ
    let e = (-&spec.f * 0.5).exp();
    let id = DMatrix::<f64>::identity(3, 3);
    let zbar: DVector<f64> = &e * &spec.z0 + spec.f.clone().try_inverse().unwrap() * (&id - &e) * &spec.mu;
    for i in 0..3 {
        let est = ens.estimate_of(|p| ens.z_at_end(p)[i]);
        assert!(est.within(zbar[i], 3.0, 1e-5), "{i}: {est:?} vs {}", zbar[i]);
    }
}

#[test]
fn discount_factor_feynman_kac() {
    let spec = presets::index_hedge::<f64>(1.0, 0.5);
    let table = default_table(&spec).unwrap();
    let (est, a) = a_kac_check(&spec, &table, SimConfig::new(40_000, 2e-3, 70)).unwrap();
    assert!(est.within(a, 3.0, 0.0), "{est:?} vs {a}");
}

#[test]
fn particle_agrees_with_solvable_route() {
    let spec = presets::index_hedge::<f64>(1.0, 0.5);
    let table = default_table(&spec).unwrap();
    let cfg = SimConfig::new(40_000, 5e-3, 80);
    let p = estimate_v0_particle(&spec, &table, 2.0, cfg).unwrap();
    let s = estimate_v0_solvable(&spec, &table, SimConfig { seed: 81, ..cfg }).unwrap();
    assert!(p.agrees(&s, 3.0), "{p:?} vs {s:?}");
}

#[test]
fn degenerate_market_has_unit_v0() {
    let mut spec = presets::index_hedge::<f64>(1.0, 0.5);
    spec.sigma0 = DMatrix::zeros(3, 3);
    spec.delta = DMatrix::zeros(3, 3);
    spec.mu = DVector::zeros(3);
    spec.z0 = DVector::zeros(3);
    if let mvh_core::model::VolatilityMap::Composite(rows) = &mut spec.volatility {
        rows[2].loading = DVector::zeros(3);
    }
    let table = default_table(&spec).unwrap();
    let v0 = estimate_v0_solvable(&spec, &table, SimConfig::new(64, 1e-2, 1)).unwrap();
    assert!((v0.value - 1.0).abs() < 1e-14, "{v0:?}");
}

#[test]
fn solvable_route_rejects_other_models() {
    let spec = presets::index_hedge::<f64>(0.5, 0.5);
    let table = default_table(&spec).unwrap();
    let err = estimate_v0_solvable(&spec, &table, SimConfig::new(8, 1e-2, 1)).unwrap_err();
    assert!(matches!(err, mvh_core::MvhError::ConfigMismatch(_)));
}

#[test]
fn antithetic_pairs_preserve_mean() {
    let spec = presets::index_hedge::<f64>(1.0, 0.5);
    let table = default_table(&spec).unwrap();
    let start = StartState::initial(&spec);
    let plain = simulate(&spec, &table, Measure::ForwardAT, &start, SimConfig::new(20_000, 1e-2, 90), SimOptions::default())
        .unwrap();
    let anti_cfg = SimConfig::new(20_000, 1e-2, 91).antithetic(true);
    let anti = simulate(&spec, &table, Measure::ForwardAT, &start, anti_cfg, SimOptions::default()).unwrap();
    let a = estimate_v1(&plain, &table, &spec.payoff).unwrap();
    let b = estimate_v1(&anti, &table, &spec.payoff).unwrap();
    assert!(a.agrees(&b, 3.0), "{a:?} vs {b:?}");
    assert!(b.se < a.se);
}

#[test]
fn estimates_are_thread_count_independent() {
    let spec = presets::index_hedge::<f64>(0.5, 0.5);
    let table = default_table(&spec).unwrap();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let cfg = SimConfig::new(5_000, 1e-2, 99).antithetic(true);
            let p = estimate_v0_particle(&spec, &table, 2.0, SimConfig::new(3_000, 1e-2, 98)).unwrap();
            let start = StartState::initial(&spec);
            let opts = SimOptions { with_flows: true, keep_trajectories: false };
            let ens = simulate(&spec, &table, Measure::ForwardAT, &start, cfg, opts).unwrap();
            let z = estimate_z1_flows(&ens, &spec, &table).unwrap();
            (p, z, ens.x_t)
        })
    };
    let (p1, z1, x1) = run(1);
    let (p4, z4, x4) = run(4);
    assert_eq!(p1, p4);
    assert_eq!(z1, z4);
    assert_eq!(x1, x4);
}

#[test]
fn particle_agrees_with_nested_oracle() {
    let spec = presets::small_index::<f64>(0.5, 0.5);
    let table = default_table(&spec).unwrap();
    let nested = v0_nested(&spec, &table, 4_000, 16, 0.05, 90).unwrap();
    let particle = estimate_v0_particle(&spec, &table, 2.0, SimConfig::new(40_000, 0.05, 91)).unwrap();
    assert!(particle.agrees(&nested, 3.0), "{particle:?} vs {nested:?}");
}
