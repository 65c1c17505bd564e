use std::sync::OnceLock;

use mvh_core::coeffs::default_table;
use mvh_core::expand::{cev_expansion, expansion_terms, ExpansionContext};
use mvh_core::filter::{bayesian_sigma, solve_kalman_sigma};
use mvh_core::model::{eval_gamma_unchecked, presets, FilterKind, PayoffMap, RowProfile, Scale, VolatilityMap};
use mvh_core::{CoefficientTable, ModelSpec};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

const H: f64 = 1e-5;

fn rel_close(fd: f64, exact: f64) -> bool {
    (fd - exact).abs() <= 1e-6 * exact.abs().max(1.0)
}

fn vol_map(scales: &[Scale<f64>], loadings: &[f64]) -> VolatilityMap<f64> {
    let n = scales.len();
    VolatilityMap::Composite(
        scales
            .iter()
            .enumerate()
            .map(|(i, &scale)| RowProfile {
                coord: (i + 1) % n,
                scale,
                loading: DVector::from_column_slice(&loadings[i * n..(i + 1) * n]),
            })
            .collect(),
    )
}

fn scale() -> impl Strategy<Value = Scale<f64>> {
    prop_oneof![Just(Scale::One), Just(Scale::Linear), (0.05f64..1.0).prop_map(Scale::Power)]
}

fn sym_pd(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (prop::collection::vec(-0.5f64..0.5, n * n), 0.05f64..0.5)
        .prop_map(move |(v, shift)| {
            let b = DMatrix::from_vec(n, n, v);
            &b * b.transpose() + DMatrix::identity(n, n) * shift
        })
}

fn bayes_spec(sigma0: DMatrix<f64>, kind: FilterKind) -> ModelSpec {
    let n = sigma0.nrows();
    let mut spec = presets::small_index::<f64>(1.0, 1.0);
    spec.sigma0 = sigma0;
    spec.mu = DVector::zeros(n);
    spec.f = DMatrix::zeros(n, n);
    spec.delta = DMatrix::zeros(n, n);
    spec.filter_kind = kind;
    spec
}

struct CevCase {
    spec: ModelSpec,
    ctx: ExpansionContext<'static, f64>,
}

fn cev_cases() -> &'static [CevCase] {
    static CASES: OnceLock<Vec<CevCase>> = OnceLock::new();
    CASES.get_or_init(|| {
        [0.0, 0.3, 0.5, 1.0]
            .into_iter()
            .map(|beta| {
                let spec = presets::index_hedge::<f64>(beta, 1.0);
                let table: &'static CoefficientTable = Box::leak(Box::new(default_table(&spec).unwrap()));
                let ctx = ExpansionContext::new(&spec, table, 3).unwrap();
                CevCase { spec, ctx }
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn volatility_derivatives_match_finite_differences(
        scales in prop::collection::vec(scale(), 3),
        loadings in prop::collection::vec(-0.5f64..0.5, 9),
        x in prop::collection::vec(0.3f64..2.0, 3),
    ) {
        let map = vol_map(&scales, &loadings);
        let x = DVector::from_vec(x);
        let ev = eval_gamma_unchecked(&map, &x);
        for k in 0..3 {
            let mut up = x.clone();
            let mut dn = x.clone();
            up[k] += H;
            dn[k] -= H;
            let (eu, ed) = (eval_gamma_unchecked(&map, &up), eval_gamma_unchecked(&map, &dn));
            let d1 = (&eu.gamma - &ed.gamma) / (2.0 * H);
            for (fd, exact) in d1.iter().zip(ev.d1[k].iter()) {
                prop_assert!(rel_close(*fd, *exact), "∂{k}: {fd} vs {exact}");
            }
            for l in 0..3 {
                let d2 = (&eu.d1[l] - &ed.d1[l]) / (2.0 * H);
                for (fd, exact) in d2.iter().zip(ev.d2(k, l).iter()) {
                    prop_assert!(rel_close(*fd, *exact), "∂{k}∂{l}: {fd} vs {exact}");
                }
            }
        }
    }

    #[test]
    fn power_payoff_derivatives_match_finite_differences(exponent in 0.1f64..3.0, y in 0.3f64..2.0) {
        let h = PayoffMap::Power { index: 1, exponent };
        let x = [0.7, y];
        let at = |y: f64| [0.7, y];
        let (mut g, mut hh, mut t) = ([0.0; 2], [0.0; 4], [0.0; 8]);
        h.gradient(&x, &mut g);
        h.hessian(&x, &mut hh);
        h.third(&x, &mut t);
        let fd1 = (h.value(&at(y + H)) - h.value(&at(y - H))) / (2.0 * H);
        let grad = |y: f64| {
            let mut o = [0.0; 2];
            h.gradient(&at(y), &mut o);
            o[1]
        };
        let hess = |y: f64| {
            let mut o = [0.0; 4];
            h.hessian(&at(y), &mut o);
            o[3]
        };
        prop_assert!(rel_close(fd1, g[1]));
        prop_assert!(rel_close((grad(y + H) - grad(y - H)) / (2.0 * H), hh[3]));
        prop_assert!(rel_close((hess(y + H) - hess(y - H)) / (2.0 * H), t[7]));
        prop_assert_eq!(g[0], 0.0);
        prop_assert!(hh[..3].iter().chain(&t[..7]).all(|v| *v == 0.0));
    }

    #[test]
    fn kalman_riccati_matches_bayesian_closed_form(sigma0 in sym_pd(2)) {
        let kalman = solve_kalman_sigma(&bayes_spec(sigma0.clone(), FilterKind::KalmanBucy), 1e-3).unwrap();
        for (i, s) in kalman.values.iter().enumerate().step_by(50) {
            let t = kalman.step * i as f64;
            let closed = bayesian_sigma(&sigma0, t).unwrap();
            prop_assert!((s - &closed).amax() < 1e-9, "t = {t}: {s} vs {closed}");
        }
    }

    #[test]
    fn posterior_covariance_stays_symmetric_and_shrinks(sigma0 in sym_pd(2)) {
        let spec = bayes_spec(sigma0.clone(), FilterKind::KalmanBucy);
        let sched = solve_kalman_sigma(&spec, 1e-2).unwrap();
        let mut trace = sigma0.trace();
        for s in &sched.values {
            prop_assert_eq!(s, &s.transpose());
            prop_assert!(s.trace() <= trace + 1e-12);
            trace = s.trace();
        }
    }

    #[test]
    fn generic_and_closed_form_expansions_agree(
        case in 0usize..4,
        t in 0.0f64..0.9,
        y in 0.4f64..1.8,
        z in prop::collection::vec(-0.5f64..0.5, 3),
    ) {
        let c = &cev_cases()[case];
        let ctx = &c.ctx;
        let z = DVector::from_vec(z);
        let mut x = c.spec.x0.clone();
        x[2] = y;
        let g = expansion_terms(ctx, t, &x, &z, 3).unwrap();
        let f = cev_expansion(ctx, t, y, &z, 3).unwrap();
        for k in 0..=3 {
            prop_assert!((g.v1[k] - f.v1[k]).abs() < 1e-10, "V1 term {k}");
            prop_assert!((&g.zeta1[k] - &f.zeta1[k]).amax() < 1e-10, "ζ1 term {k}");
        }
    }

    #[test]
    fn low_orders_ignore_beta_at_unit_level(t in 0.0f64..0.9, z in prop::collection::vec(-0.5f64..0.5, 3)) {
        let z = DVector::from_vec(z);
        let terms: Vec<_> = cev_cases()
            .iter()
            .map(|c| cev_expansion(&c.ctx, t, 1.0, &z, 1).unwrap())
            .collect();
        for w in terms.windows(2) {
            prop_assert!((w[0].v1[0] - w[1].v1[0]).abs() <= 1e-12);
            prop_assert!((w[0].v1[1] - w[1].v1[1]).abs() <= 1e-12);
        }
    }
}
