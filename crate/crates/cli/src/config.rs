//! TOML run configuration: `[model]`, `[numerics]`, `[study]`, `[outputs]`.

use std::path::{Path, PathBuf};

use mvh_core::model::{FilterKind, PayoffMap, RowProfile, Scale, VolatilityMap};
use mvh_core::{ModelSpec, MvhError};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Whole configuration document.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub numerics: Numerics,
    #[serde(default)]
    pub study: Study,
    #[serde(default)]
    pub outputs: Outputs,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d: usize,
    pub m: usize,
    pub horizon: f64,
    pub filter: FilterKind,
    pub x0: Vec<f64>,
    pub z0: Vec<f64>,
    pub sigma0: Vec<Vec<f64>>,
    pub mu: Vec<f64>,
    pub f: Vec<Vec<f64>>,
    pub delta: Vec<Vec<f64>>,
    pub volatility: VolatilityConfig,
    pub payoff: PayoffConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VolatilityConfig {
    Constant { matrix: Vec<Vec<f64>> },
    LogLinear { matrix: Vec<Vec<f64>> },
    CevIndex { matrix: Vec<Vec<f64>>, index: usize, beta: f64 },
    Composite { rows: Vec<RowConfig> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleName {
    One,
    Linear,
    Power,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RowConfig {
    pub coord: usize,
    pub scale: ScaleName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exponent: Option<f64>,
    pub loading: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PayoffConfig {
    IndexLinear { index: usize },
    Constant { value: f64 },
    Power { index: usize, exponent: f64 },
}

/// Numerical controls. Missing entries take the documented defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Numerics {
    /// ODE step; default `T/5000`.
    pub ode_step: Option<f64>,
    /// Total paths, both antithetic members included; default 100 000.
    pub mc_paths: Option<usize>,
    /// Monte Carlo step; default `2e-3`.
    pub mc_dt: Option<f64>,
    /// Default 1.
    pub seed: Option<u64>,
    /// Default true.
    pub antithetic: Option<bool>,
    /// Interaction intensity of the particle estimator; default `1/T`.
    pub particle_lambda: Option<f64>,
    /// Default 3.
    pub expansion_order: Option<usize>,
}

/// Resolved numerical controls.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Resolved {
    pub ode_step: f64,
    pub mc_paths: usize,
    pub mc_dt: f64,
    pub seed: u64,
    pub antithetic: bool,
    pub particle_lambda: f64,
    pub expansion_order: usize,
}

/// Sweep values used by `hedge`, `hist` and `table1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Study {
    /// Initial capitals.
    pub w: Vec<f64>,
    /// CEV exponents of the index row.
    pub betas: Vec<f64>,
}

impl Default for Study {
    fn default() -> Self {
        Study { w: vec![0.0, 0.5, 1.0, 1.5, 2.0], betas: vec![0.25, 0.5] }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Toml,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Outputs {
    pub directory: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for Outputs {
    fn default() -> Self {
        Outputs { directory: PathBuf::from("out"), formats: vec![Format::Csv] }
    }
}

impl Outputs {
    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

/// Command-line overrides of config fields.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub ode_step: Option<f64>,
    pub mc_paths: Option<usize>,
    pub mc_dt: Option<f64>,
    pub seed: Option<u64>,
    pub antithetic: Option<bool>,
    pub particle_lambda: Option<f64>,
    pub expansion_order: Option<usize>,
    pub horizon: Option<f64>,
    pub w: Option<Vec<f64>>,
    pub betas: Option<Vec<f64>>,
    pub directory: Option<PathBuf>,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Core(MvhError::ConfigInvalid(msg.into()))
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, CliError> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(invalid(format!("{name} has rows of unequal length")));
    }
    Ok(DMatrix::from_row_iterator(r, c, rows.iter().flatten().copied()))
}

fn vector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| invalid(format!("config: {}", e.message())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn apply(&mut self, o: &Overrides) {
        let n = &mut self.numerics;
        n.ode_step = o.ode_step.or(n.ode_step);
        n.mc_paths = o.mc_paths.or(n.mc_paths);
        n.mc_dt = o.mc_dt.or(n.mc_dt);
        n.seed = o.seed.or(n.seed);
        n.antithetic = o.antithetic.or(n.antithetic);
        n.particle_lambda = o.particle_lambda.or(n.particle_lambda);
        n.expansion_order = o.expansion_order.or(n.expansion_order);
        if let Some(h) = o.horizon {
            self.model.horizon = h;
        }
        if let Some(w) = &o.w {
            self.study.w = w.clone();
        }
        if let Some(b) = &o.betas {
            self.study.betas = b.clone();
        }
        if let Some(d) = &o.directory {
            self.outputs.directory = d.clone();
        }
    }

    /// Numerical controls with defaults filled in and range-checked.
    pub fn resolved(&self) -> Result<Resolved, CliError> {
        let n = &self.numerics;
        let t = self.model.horizon;
        let r = Resolved {
            ode_step: n.ode_step.unwrap_or(t / 5000.0),
            mc_paths: n.mc_paths.unwrap_or(100_000),
            mc_dt: n.mc_dt.unwrap_or(2e-3),
            seed: n.seed.unwrap_or(1),
            antithetic: n.antithetic.unwrap_or(true),
            particle_lambda: n.particle_lambda.unwrap_or(1.0 / t),
            expansion_order: n.expansion_order.unwrap_or(3),
        };
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(format!("numerics.{name} must be positive")))
            }
        };
        positive("ode_step", r.ode_step)?;
        positive("mc_dt", r.mc_dt)?;
        positive("particle_lambda", r.particle_lambda)?;
        if r.mc_paths == 0 || (r.antithetic && r.mc_paths < 2) {
            return Err(invalid("numerics.mc_paths must be positive (at least 2 with antithetics)"));
        }
        if r.expansion_order > 3 {
            return Err(invalid("numerics.expansion_order must be in 0..=3"));
        }
        Ok(r)
    }

    /// The model section as a validated [`ModelSpec`].
    pub fn spec(&self) -> Result<ModelSpec, CliError> {
        let m = &self.model;
        let volatility = match &m.volatility {
            VolatilityConfig::Constant { matrix: c } => VolatilityMap::Constant(matrix("volatility", c)?),
            VolatilityConfig::LogLinear { matrix: c } => VolatilityMap::LogLinear(matrix("volatility", c)?),
            VolatilityConfig::CevIndex { matrix: c, index, beta } => {
                VolatilityMap::CevIndex { base: matrix("volatility", c)?, index: *index, beta: *beta }
            }
            VolatilityConfig::Composite { rows } => VolatilityMap::Composite(
                rows.iter()
                    .map(|r| {
                        let scale = match (r.scale, r.exponent) {
                            (ScaleName::One, None) => Scale::One,
                            (ScaleName::Linear, None) => Scale::Linear,
                            (ScaleName::Power, Some(b)) => Scale::Power(b),
                            (ScaleName::Power, None) => return Err(invalid("power scale needs an exponent")),
                            (_, Some(_)) => return Err(invalid("only power scales take an exponent")),
                        };
                        Ok(RowProfile { coord: r.coord, scale, loading: vector(&r.loading) })
                    })
                    .collect::<Result<_, _>>()?,
            ),
        };
        let payoff = match m.payoff {
            PayoffConfig::IndexLinear { index } => PayoffMap::IndexLinear { index },
            PayoffConfig::Constant { value } => PayoffMap::Constant(value),
            PayoffConfig::Power { index, exponent } => PayoffMap::Power { index, exponent },
        };
        let spec = ModelSpec {
            d: m.d,
            m: m.m,
            z0: vector(&m.z0),
            sigma0: matrix("sigma0", &m.sigma0)?,
            mu: vector(&m.mu),
            f: matrix("f", &m.f)?,
            delta: matrix("delta", &m.delta)?,
            filter_kind: m.filter,
            volatility,
            payoff,
            horizon: m.horizon,
            x0: vector(&m.x0),
        };
        let report = mvh_core::model::validate(&spec);
        if report.is_valid() {
            Ok(spec)
        } else {
            Err(invalid(report.to_string()))
        }
    }
}

/// Copy of `spec` with the payoff index row rescaled to `max(y, 0)^β`.
pub fn with_index_beta(spec: &ModelSpec, beta: f64) -> Result<ModelSpec, CliError> {
    let PayoffMap::IndexLinear { index } = spec.payoff else {
        return Err(CliError::Core(MvhError::ConfigMismatch("β sweep needs an index-linear payoff".into())));
    };
    if !(0.0..=1.0).contains(&beta) {
        return Err(invalid(format!("β = {beta} outside [0, 1]")));
    }
    let mut rows = spec.volatility.profiles();
    if rows[index].coord != index {
        return Err(CliError::Core(MvhError::ConfigMismatch(
            "β sweep needs the index row to depend on the index only".into(),
        )));
    }
    rows[index].scale = Scale::Power(beta);
    Ok(ModelSpec { volatility: VolatilityMap::Composite(rows), ..spec.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[model]
d = 1
m = 0
horizon = 2.0
filter = "bayesian"
x0 = [1.0]
z0 = [0.1]
sigma0 = [[0.04]]
mu = [0.0]
f = [[0.0]]
delta = [[0.0]]
volatility = { kind = "constant", matrix = [[0.2]] }
payoff = { kind = "constant", value = 1.0 }
"#;

    #[test]
    fn defaults_follow_horizon() {
        let cfg = RunConfig::from_toml(MINIMAL).unwrap();
        let r = cfg.resolved().unwrap();
        assert_eq!(r.ode_step, 2.0 / 5000.0);
        assert_eq!(r.particle_lambda, 0.5);
        assert_eq!((r.mc_paths, r.mc_dt, r.seed, r.antithetic, r.expansion_order), (100_000, 2e-3, 1, true, 3));
        assert_eq!(cfg.outputs, Outputs::default());
        assert_eq!(cfg.study, Study::default());
        cfg.spec().unwrap();
    }

    #[test]
    fn overrides_replace_config_values() {
        let mut cfg = RunConfig::from_toml(MINIMAL).unwrap();
        cfg.apply(&Overrides { seed: Some(7), horizon: Some(1.0), w: Some(vec![3.0]), ..Overrides::default() });
        let r = cfg.resolved().unwrap();
        assert_eq!(r.seed, 7);
        assert_eq!(r.ode_step, 1.0 / 5000.0);
        assert_eq!(cfg.study.w, vec![3.0]);
    }

    #[test]
    fn rejects_malformed_sections() {
        let ragged = MINIMAL.replace("sigma0 = [[0.04]]", "sigma0 = [[0.04], [0.0, 1.0]]");
        assert!(RunConfig::from_toml(&ragged).unwrap().spec().is_err());
        let no_exponent = MINIMAL.replace(
            r#"{ kind = "constant", matrix = [[0.2]] }"#,
            r#"{ kind = "composite", rows = [{ coord = 0, scale = "power", loading = [0.2] }] }"#,
        );
        let err = RunConfig::from_toml(&no_exponent).unwrap().spec().unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let zero_paths = format!("{MINIMAL}\n[numerics]\nmc_paths = 1\n");
        assert!(RunConfig::from_toml(&zero_paths).unwrap().resolved().is_err());
        assert!(RunConfig::from_toml("[model]\nd = 1").is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = RunConfig::from_toml(MINIMAL).unwrap();
        let text = toml::to_string(&cfg).unwrap();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(back.numerics, cfg.numerics);
        assert_eq!(back.model.sigma0, cfg.model.sigma0);
    }
}
