//! Volatility maps `γ(x)`, built from per-row profiles `γ_i(x) = f_i(x_{c_i}) · s_i`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{MvhError, Result};
use crate::scalar::Real;

/// One-dimensional scale function applied to a single state coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "exponent", rename_all = "snake_case")]
pub enum Scale<T> {
    /// `f ≡ 1`.
    One,
    /// `f(v) = v`.
    Linear,
    /// `f(v) = max(v, 0)^β`.
    Power(T),
}

impl<T: Real> Scale<T> {
    /// Collapses `Power(0)` and `Power(1)` onto the exact forms.
    pub fn normalized(self) -> Self {
        match self {
            Scale::Power(b) if b == T::zero() => Scale::One,
            Scale::Power(b) if b == T::one() => Scale::Linear,
            s => s,
        }
    }

    /// `(f, f', f'')` at `v`.
    #[inline]
    pub fn eval(self, v: T) -> (T, T, T) {
        match self {
            Scale::One => (T::one(), T::zero(), T::zero()),
            Scale::Linear => (v, T::one(), T::zero()),
            Scale::Power(b) => {
                if v <= T::zero() {
                    (T::zero(), T::zero(), T::zero())
                } else {
                    let f = v.powf(b);
                    let f1 = b * f / v;
                    let f2 = (b - T::one()) * f1 / v;
                    (f, f1, f2)
                }
            }
        }
    }
}

/// Row `i` of `γ`: `f(x[coord]) · loading`.
#[derive(Clone, Debug, PartialEq)]
pub struct RowProfile<T: Real> {
    pub coord: usize,
    pub scale: Scale<T>,
    pub loading: DVector<T>,
}

/// Volatility map `γ(x)` with rows ordered as (tradables, states).
#[derive(Clone, Debug, PartialEq)]
pub enum VolatilityMap<T: Real> {
    /// `γ(x) = C`.
    Constant(DMatrix<T>),
    /// Row `i` is `x_i · C_i`.
    LogLinear(DMatrix<T>),
    /// Rows of `base` are constant except row `index`, which is `max(x_index, 0)^β · base_index`.
    CevIndex { base: DMatrix<T>, index: usize, beta: T },
    /// Arbitrary per-row profiles.
    Composite(Vec<RowProfile<T>>),
}

impl<T: Real> VolatilityMap<T> {
    /// Number of rows.
    pub fn dim(&self) -> usize {
        match self {
            VolatilityMap::Constant(c) | VolatilityMap::LogLinear(c) => c.nrows(),
            VolatilityMap::CevIndex { base, .. } => base.nrows(),
            VolatilityMap::Composite(rows) => rows.len(),
        }
    }

    /// Per-row profiles with normalized scales.
    pub fn profiles(&self) -> Vec<RowProfile<T>> {
        let from_matrix = |c: &DMatrix<T>, scale: &dyn Fn(usize) -> (usize, Scale<T>)| {
            (0..c.nrows())
                .map(|i| {
                    let (coord, s) = scale(i);
                    RowProfile { coord, scale: s.normalized(), loading: c.row(i).transpose() }
                })
                .collect::<Vec<_>>()
        };
        match self {
            VolatilityMap::Constant(c) => from_matrix(c, &|i| (i, Scale::One)),
            VolatilityMap::LogLinear(c) => from_matrix(c, &|i| (i, Scale::Linear)),
            VolatilityMap::CevIndex { base, index, beta } => from_matrix(base, &|i| {
                if i == *index {
                    (i, Scale::Power(*beta))
                } else {
                    (i, Scale::One)
                }
            }),
            VolatilityMap::Composite(rows) => rows
                .iter()
                .map(|r| RowProfile { scale: r.scale.normalized(), ..r.clone() })
                .collect(),
        }
    }

    /// Compiled form for hot loops.
    pub fn compile(&self) -> RowVol<T> {
        RowVol::new(&self.profiles())
    }
}

/// `γ(x)` together with its first and second partial derivatives.
#[derive(Clone, Debug)]
pub struct GammaEval<T: Real> {
    pub gamma: DMatrix<T>,
    /// `d1[k] = ∂_k γ`.
    pub d1: Vec<DMatrix<T>>,
    /// `d2[k * n + l] = ∂_k ∂_l γ`.
    pub d2: Vec<DMatrix<T>>,
}

impl<T: Real> GammaEval<T> {
    pub fn d2(&self, k: usize, l: usize) -> &DMatrix<T> {
        &self.d2[k * self.gamma.nrows() + l]
    }
}

/// Evaluates `γ`, `∂γ`, `∂²γ` without checking the block structure.
pub fn eval_gamma_unchecked<T: Real>(map: &VolatilityMap<T>, x: &DVector<T>) -> GammaEval<T> {
    let rows = map.profiles();
    let n = rows.len();
    let mut gamma = DMatrix::zeros(n, n);
    let mut d1 = vec![DMatrix::zeros(n, n); n];
    let mut d2 = vec![DMatrix::zeros(n, n); n * n];
    for (i, r) in rows.iter().enumerate() {
        let (f, f1, f2) = r.scale.eval(x[r.coord]);
        for j in 0..n {
            gamma[(i, j)] = f * r.loading[j];
            d1[r.coord][(i, j)] = f1 * r.loading[j];
            d2[r.coord * n + r.coord][(i, j)] = f2 * r.loading[j];
        }
    }
    GammaEval { gamma, d1, d2 }
}

/// Evaluates `γ` and its derivatives, reporting a singular `σ` or `ρ` block.
pub fn eval_gamma<T: Real>(map: &VolatilityMap<T>, d: usize, x: &DVector<T>) -> Result<GammaEval<T>> {
    let ev = eval_gamma_unchecked(map, x);
    check_blocks(&ev.gamma, d, x)?;
    Ok(ev)
}

fn check_blocks<T: Real>(gamma: &DMatrix<T>, d: usize, x: &DVector<T>) -> Result<()> {
    let n = gamma.nrows();
    let singular = |block: DMatrix<T>| {
        let scale = block.iter().fold(T::zero(), |a, &b| a.max(b.abs()));
        let det = block.determinant().abs();
        let k = block.nrows() as i32;
        !(scale > T::zero()) || !(det > T::lit(1e-14) * scale.powi(k))
    };
    let xs = || x.iter().map(|v| v.as_f64()).collect();
    if singular(gamma.view((0, 0), (d, d)).into_owned()) {
        return Err(MvhError::SingularBlock { block: "sigma", x: xs() });
    }
    if n > d && singular(gamma.view((d, d), (n - d, n - d)).into_owned()) {
        return Err(MvhError::SingularBlock { block: "rho", x: xs() });
    }
    Ok(())
}

/// Flattened row profiles for allocation-free evaluation.
#[derive(Clone, Debug)]
pub struct RowVol<T: Real> {
    pub n: usize,
    pub coord: Vec<usize>,
    pub scale: Vec<Scale<T>>,
    /// Row-major `n × n` loadings.
    pub loading: Vec<T>,
}

impl<T: Real> RowVol<T> {
    pub fn new(rows: &[RowProfile<T>]) -> Self {
        let n = rows.len();
        let mut loading = Vec::with_capacity(n * n);
        for r in rows {
            loading.extend(r.loading.iter().copied());
        }
        RowVol {
            n,
            coord: rows.iter().map(|r| r.coord).collect(),
            scale: rows.iter().map(|r| r.scale).collect(),
            loading,
        }
    }

    /// Row scales `f_i` and slopes `f_i'` at `x`.
    #[inline]
    pub fn scales(&self, x: &[T], f: &mut [T], f1: &mut [T]) {
        for i in 0..self.n {
            let (a, b, _) = self.scale[i].eval(x[self.coord[i]]);
            f[i] = a;
            f1[i] = b;
        }
    }

    /// `γ(x) v` given precomputed row scales.
    #[inline]
    pub fn apply(&self, f: &[T], v: &[T], out: &mut [T]) {
        let n = self.n;
        for i in 0..n {
            let row = &self.loading[i * n..(i + 1) * n];
            let mut acc = T::zero();
            for j in 0..n {
                acc += row[j] * v[j];
            }
            out[i] = f[i] * acc;
        }
    }

    /// Row-major `γ(x)` given precomputed row scales.
    #[inline]
    pub fn fill(&self, f: &[T], out: &mut [T]) {
        let n = self.n;
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = f[i] * self.loading[i * n + j];
            }
        }
    }
}
