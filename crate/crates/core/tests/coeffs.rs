use mvh_core::coeffs::{default_table, eval_a, eval_p, eval_v2};
use mvh_core::model::presets;

#[test]
fn half_year_v2_matches_reference() {
    let spec = presets::index_hedge::<f64>(1.0, 0.5);
    let table = default_table(&spec).unwrap();
    let v2 = eval_v2(&table, 0.0, &spec.z0);
    assert!((v2 - 0.9263).abs() <= 1e-3, "{v2}");
}

#[test]
fn half_year_v1_matches_reference() {
    let spec = presets::index_hedge::<f64>(1.0, 0.5);
    let table = default_table(&spec).unwrap();
    let v1 = eval_a(&table, 0.0, &spec.z0) * eval_p(&table, 0.0, &spec.z0).unwrap() * spec.x0[2];
    assert!((v1 - 0.9399).abs() <= 1e-3, "A·P·Y0 = {v1}");
}

#[test]
fn one_year_v2_matches_reference() {
    let spec = presets::index_hedge::<f64>(0.25, 1.0);
    let table = default_table(&spec).unwrap();
    let v2 = eval_v2(&table, 0.0, &spec.z0);
    assert!((v2 - 0.8721).abs() <= 1e-3, "{v2}");
}
