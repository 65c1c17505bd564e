//! Subcommand pipelines. Each returns the summary lines printed to stdout and
//! writes its tables below the configured output directory.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use mvh_core::coeffs::{eval_a, eval_p, eval_v1_solvable, eval_v2};
use mvh_core::expand::{cev_expansion, expansion_terms, expansion_v0, ExpansionContext, ExpansionProvider, ExpansionTerms};
use mvh_core::mc::{
    estimate_v0_particle, estimate_z1_delta, estimate_z1_flows, girsanov_check, replay_wealth, simulate,
    v0_nested, HedgeProvider, HedgeReport, Measure, SimConfig, SimOptions, SolvableProvider, StartState,
};
use mvh_core::model::PayoffMap;
use mvh_core::{CoefficientTable, ModelSpec, MvhError};
use serde::Serialize;

use crate::config::{with_index_beta, Format, Resolved, RunConfig};
use crate::error::CliError;

type Res<T> = Result<T, CliError>;

fn num(v: f64) -> String {
    format!("{v:.12e}")
}

fn create(dir: &Path, name: &str) -> Res<BufWriter<File>> {
    std::fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_toml<S: Serialize>(dir: &Path, name: &str, value: &S) -> Res<()> {
    let text = toml::to_string(value).map_err(|e| MvhError::ConfigInvalid(format!("summary serialization: {e}")))?;
    create(dir, name)?.write_all(text.as_bytes())?;
    Ok(())
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.5}")).collect::<Vec<_>>().join(", ")
}

/// Label used in file names, e.g. `0.25` or `1`.
fn label(v: f64) -> String {
    format!("{v}")
}

fn sim_config(r: &Resolved) -> SimConfig<f64> {
    SimConfig::new(r.mc_paths, r.mc_dt, r.seed).antithetic(r.antithetic)
}

fn table_for(spec: &ModelSpec, r: &Resolved) -> Res<CoefficientTable> {
    Ok(CoefficientTable::build(spec, r.ode_step)?)
}

/// `V1(0)` in closed form when the model is solvable, otherwise from the expansion.
fn v1_at_start(spec: &ModelSpec, table: &CoefficientTable, order: usize) -> Res<(f64, &'static str)> {
    if let (Some((index, _)), PayoffMap::IndexLinear { index: h }) = (&table.sigma_y, &spec.payoff) {
        if index == h {
            return Ok((eval_v1_solvable(table, 0.0, spec.x0[*index], &spec.z0)?, "closed form"));
        }
    }
    let ctx = ExpansionContext::new(spec, table, order)?;
    Ok((start_terms(&ctx, spec, order)?.v1_sum(), "expansion"))
}

fn start_terms(ctx: &ExpansionContext<f64>, spec: &ModelSpec, order: usize) -> Res<ExpansionTerms<f64>> {
    Ok(match ctx.cev_shape() {
        Some(s) => cev_expansion(ctx, 0.0, spec.x0[s.index], &spec.z0, order)?,
        None => expansion_terms(ctx, 0.0, &spec.x0, &spec.z0, order)?,
    })
}

#[derive(Serialize)]
struct SolveSummary {
    v2: f64,
    a: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    p: Option<f64>,
    v1: f64,
    v1_source: &'static str,
    w_star: f64,
}

/// Filter and Riccati tables plus the time-zero summary.
pub fn solve(cfg: &RunConfig) -> Res<Vec<String>> {
    let spec = cfg.spec()?;
    let r = cfg.resolved()?;
    let table = table_for(&spec, &r)?;
    let dir = &cfg.outputs.directory;
    let z0 = &spec.z0;
    let v2 = eval_v2(&table, 0.0, z0);
    let a = eval_a(&table, 0.0, z0);
    let p = eval_p(&table, 0.0, z0).ok();
    let (v1, v1_source) = v1_at_start(&spec, &table, r.expansion_order)?;
    let summary = SolveSummary { v2, a, p, v1, v1_source, w_star: v1 / v2 };
    if cfg.outputs.wants(Format::Csv) {
        table.schedule.write_csv(create(dir, "sigma.csv")?)?;
        table.write_csv(create(dir, "coefficients.csv")?)?;
    }
    if cfg.outputs.wants(Format::Toml) {
        write_toml(dir, "summary.toml", &summary)?;
    }
    let mut lines = vec![format!("V2(0)   = {v2:.6}"), format!("A(0,T)  = {a:.6}")];
    if let Some(p) = p {
        lines.push(format!("P(0,T)  = {p:.6}"));
    }
    lines.push(format!("V1(0)   = {v1:.6} ({v1_source})"));
    lines.push(format!("w*      = {:.6}", summary.w_star));
    Ok(lines)
}

/// Replays the optimal wealth with the closed-form provider when available,
/// otherwise with the expansion of the configured order.
fn replay(spec: &ModelSpec, table: &CoefficientTable, r: &Resolved, ws: &[f64]) -> Res<(HedgeReport, String)> {
    let solvable = SolvableProvider::new(table)
        .ok()
        .filter(|_| matches!(spec.payoff, PayoffMap::IndexLinear { index } if Some(index) == table.sigma_y.as_ref().map(|s| s.0)));
    let report = match solvable {
        Some(p) => (replay_wealth(spec, table, &p as &dyn HedgeProvider<f64>, ws, sim_config(r))?, "closed form".to_string()),
        None => {
            let ctx = ExpansionContext::new(spec, table, r.expansion_order)?;
            let p = ExpansionProvider::new(&ctx, r.expansion_order)?;
            (replay_wealth(spec, table, &p, ws, sim_config(r))?, format!("expansion order {}", r.expansion_order))
        }
    };
    Ok(report)
}

fn write_martingale(report: &HedgeReport, out: impl Write) -> Res<()> {
    let mut out = out;
    writeln!(out, "w,t,value,se")?;
    for m in &report.martingale {
        writeln!(out, "{},{},{},{}", num(m.w), num(m.t), num(m.value.value), num(m.value.se))?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct HedgeSummary {
    provider: String,
    v2: f64,
    v1: f64,
    v0: f64,
    v0_se: f64,
    w_star: f64,
}

/// Predicted against simulated hedging error for each initial capital.
pub fn hedge(cfg: &RunConfig) -> Res<Vec<String>> {
    let spec = cfg.spec()?;
    let r = cfg.resolved()?;
    let table = table_for(&spec, &r)?;
    let (report, provider) = replay(&spec, &table, &r, &cfg.study.w)?;
    let dir = &cfg.outputs.directory;
    if cfg.outputs.wants(Format::Csv) {
        report.write_rows_csv(create(dir, "hedge.csv")?)?;
        report.write_pi_csv(create(dir, "pi.csv")?)?;
        write_martingale(&report, create(dir, "martingale.csv")?)?;
    }
    let summary = HedgeSummary {
        provider: provider.clone(),
        v2: report.v2_0,
        v1: report.v1_0,
        v0: report.v0.value,
        v0_se: report.v0.se,
        w_star: report.w_star,
    };
    if cfg.outputs.wants(Format::Toml) {
        write_toml(dir, "hedge_summary.toml", &summary)?;
    }
    let mut lines = vec![
        format!("provider: {provider}"),
        format!("V2(0) = {:.6}  V1(0) = {:.6}  V0(0) = {:.6} ± {:.6}", report.v2_0, report.v1_0, report.v0.value, report.v0.se),
        format!("w* = {:.6}", report.w_star),
    ];
    for row in &report.rows {
        lines.push(format!(
            "w = {:<6} predicted {:.6}  simulated {:.6} ± {:.6}",
            row.w, row.predicted, row.simulated.value, row.simulated.se
        ));
    }
    Ok(lines)
}

/// Histograms of `H − W_T`, for the configured model or across the `β` sweep.
pub fn hist(cfg: &RunConfig, beta_sweep: bool) -> Res<Vec<String>> {
    let base = cfg.spec()?;
    let r = cfg.resolved()?;
    let dir = &cfg.outputs.directory;
    let runs: Vec<(Option<f64>, ModelSpec)> = if beta_sweep {
        cfg.study.betas.iter().map(|&b| Ok((Some(b), with_index_beta(&base, b)?))).collect::<Res<_>>()?
    } else {
        vec![(None, base)]
    };
    let mut lines = Vec::new();
    for (beta, spec) in runs {
        let table = table_for(&spec, &r)?;
        let (report, _) = replay(&spec, &table, &r, &cfg.study.w)?;
        for h in &report.histograms {
            let name = match beta {
                Some(b) => format!("hist_beta{}_w{}.csv", label(b), label(h.w)),
                None => format!("hist_w{}.csv", label(h.w)),
            };
            if cfg.outputs.wants(Format::Csv) {
                h.write_csv(create(dir, &name)?)?;
            }
            lines.push(format!("{name}: mean {:.6} std {:.6}", h.mean, h.std));
        }
    }
    Ok(lines)
}

#[derive(Serialize)]
struct Table1Row {
    beta: f64,
    order: usize,
    v1: f64,
    v0: f64,
    v0_se: f64,
    v2: f64,
    v1_exact: Option<f64>,
}

/// Expansion orders `0..=3` of `V1(0)` and the matching `V0(0)` simulations per `β`.
pub fn table1(cfg: &RunConfig) -> Res<Vec<String>> {
    let base = cfg.spec()?;
    let r = cfg.resolved()?;
    let dir = &cfg.outputs.directory;
    let mut rows = Vec::new();
    for &beta in &cfg.study.betas {
        let spec = with_index_beta(&base, beta)?;
        let table = table_for(&spec, &r)?;
        let ctx = ExpansionContext::new(&spec, &table, 3)?;
        let terms = start_terms(&ctx, &spec, 3)?;
        let v2 = eval_v2(&table, 0.0, &spec.z0);
        let exact = match (&table.sigma_y, &spec.payoff) {
            (Some((i, _)), PayoffMap::IndexLinear { index }) if i == index => {
                Some(eval_v1_solvable(&table, 0.0, spec.x0[*i], &spec.z0)?)
            }
            _ => None,
        };
        if cfg.outputs.wants(Format::Csv) {
            terms.write_csv(create(dir, &format!("expansion_terms_beta{}.csv", label(beta)))?)?;
        }
        let mut v1 = 0.0;
        for order in 0..=3 {
            v1 += terms.v1[order];
            let v0 = expansion_v0(&spec, &table, &ctx, order, sim_config(&r))?;
            rows.push(Table1Row { beta, order, v1, v0: v0.value, v0_se: v0.se, v2, v1_exact: exact });
        }
    }
    if cfg.outputs.wants(Format::Csv) {
        let mut out = create(dir, "table1.csv")?;
        writeln!(out, "beta,order,v1,v0,v0_se,v2,v1_exact")?;
        for row in &rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                num(row.beta),
                row.order,
                num(row.v1),
                num(row.v0),
                num(row.v0_se),
                num(row.v2),
                row.v1_exact.map(num).unwrap_or_default()
            )?;
        }
        out.flush()?;
    }
    if cfg.outputs.wants(Format::Toml) {
        #[derive(Serialize)]
        struct Doc<'a> {
            rows: &'a [Table1Row],
        }
        write_toml(dir, "table1.toml", &Doc { rows: &rows })?;
    }
    Ok(rows
        .iter()
        .map(|r| {
            format!(
                "beta {:<5} order {}  V1 {:.5}  V0 {:.4} ± {:.4}{}",
                r.beta,
                r.order,
                r.v1,
                r.v0,
                r.v0_se,
                r.v1_exact.map(|e| format!("  exact V1 {e:.5}")).unwrap_or_default()
            )
        })
        .collect())
}

/// Girsanov, flow-vs-delta and particle-vs-nested self-tests at 3 standard errors.
pub fn check(cfg: &RunConfig) -> Res<Vec<String>> {
    let spec = cfg.spec()?;
    let r = cfg.resolved()?;
    let table = table_for(&spec, &r)?;
    let sc = sim_config(&r);
    let mut lines = Vec::new();
    let mut failed = Vec::new();
    let mut record = |name: &str, ok: bool, detail: String| {
        lines.push(format!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" }));
        if !ok {
            failed.push(name.to_string());
        }
    };

    let g = girsanov_check(&spec, &table, sc)?;
    record(
        "girsanov",
        g.agrees(3.0),
        format!(
            "E_P[H] {:.5} ± {:.5}, reweighted {:.5} ± {:.5}, E[1/L] {:.5} ± {:.5}",
            g.physical.value, g.physical.se, g.reweighted.value, g.reweighted.se, g.density_mean.value, g.density_mean.se
        ),
    );

    let start = StartState::initial(&spec);
    let opts = SimOptions { with_flows: true, keep_trajectories: false };
    let flow_cfg = SimConfig { n_paths: (r.mc_paths / 5).max(2), ..sc };
    let ens = simulate(&spec, &table, Measure::ForwardAT, &start, flow_cfg, opts)?;
    let flows = estimate_z1_flows(&ens, &spec, &table)?;
    let delta = estimate_z1_delta(&spec, &table, &start, 1e-4, SimConfig { seed: r.seed.wrapping_add(1), ..flow_cfg })?;
    record("flows-vs-delta", flows.agrees(&delta, 3.0), format!("flows [{}], delta [{}]", join(&flows.value), join(&delta.value)));

    let coarse = spec.horizon / 10.0;
    let particle = estimate_v0_particle(&spec, &table, r.particle_lambda, SimConfig { dt: coarse, ..sc })?;
    let n_outer = (r.mc_paths / 50).max(1);
    let nested = v0_nested(&spec, &table, n_outer, 16, coarse, r.seed.wrapping_add(2))?;
    record(
        "particle-vs-nested",
        particle.agrees(&nested, 3.0),
        format!("particle {:.5} ± {:.5}, nested {:.5} ± {:.5}", particle.value, particle.se, nested.value, nested.se),
    );

    if failed.is_empty() {
        Ok(lines)
    } else {
        for l in &lines {
            eprintln!("{l}");
        }
        Err(CliError::CheckFailed(failed))
    }
}

