//! Third-order asymptotic expansion of `V1 = A(t,T)·E^{A_T}[H(X_T)]` and
//! of its diffusion coefficient `ζ1`.
//!
//! The state is expanded in a bookkeeping parameter `ε` counting powers of
//! `Σ`, `γ`, `μ` and `F`, and every result is reported at `ε = 1`. All time
//! integrals are precomputed in an [`IntegralTable`], so an evaluation at a
//! new `(x, ẑ)` is pure polynomial assembly.

mod cev;
mod generic;
#[cfg(test)]
mod tests;

use std::io::Write;
use std::sync::OnceLock;

use nalgebra::DVector;

pub use cev::CevShape;
use cev::CevNode;

use crate::coeffs::{Brackets, CoefficientTable, IntegralTable, Primitives};
use crate::error::{MvhError, Result};
use crate::filter::fmt_num;
use crate::mc::{estimate_v0, HedgeProvider, McGrid, SimConfig};
use crate::model::{ModelSpec, PayoffMap, VolatilityMap};
use crate::scalar::Real;
use crate::stats::Estimate;

/// Highest supported expansion order.
pub const MAX_ORDER: usize = 3;

fn check_order(order: usize) -> Result<()> {
    if order > MAX_ORDER {
        Err(MvhError::OrderUnsupported(order))
    } else {
        Ok(())
    }
}

/// Everything the expansion needs besides the state.
#[derive(Clone, Debug)]
pub struct ExpansionContext<'a, T: Real> {
    pub table: &'a CoefficientTable<T>,
    pub integrals: IntegralTable<T>,
    pub volatility: VolatilityMap<T>,
    pub payoff: PayoffMap<T>,
    /// Default order used by [`ExpansionProvider`].
    pub order: usize,
    cev: Option<CevShape<T>>,
}

impl<'a, T: Real> ExpansionContext<'a, T> {
    pub fn new(spec: &ModelSpec<T>, table: &'a CoefficientTable<T>, order: usize) -> Result<Self> {
        check_order(order)?;
        if spec.n() != table.n() || spec.d != table.structure.d {
            return Err(MvhError::ConfigMismatch("expansion model and coefficient table differ in dimension".into()));
        }
        Ok(ExpansionContext {
            table,
            integrals: IntegralTable::build(table),
            volatility: spec.volatility.clone(),
            payoff: spec.payoff.clone(),
            order,
            cev: CevShape::detect(&spec.volatility, &spec.payoff),
        })
    }

    /// The index model recognised for the closed forms, if any.
    pub fn cev_shape(&self) -> Option<&CevShape<T>> {
        self.cev.as_ref()
    }

    fn require_cev(&self) -> Result<&CevShape<T>> {
        self.cev.as_ref().ok_or_else(|| {
            MvhError::ConfigMismatch("closed forms need H = Y of an index whose volatility row depends on Y only".into())
        })
    }

    fn local(&self, t: T) -> (Brackets<T>, Primitives<T>) {
        (self.integrals.at(t), self.table.primitives(t))
    }
}

/// Per-order contributions, already multiplied by `A(t,T)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpansionTerms<T: Real> {
    /// `v1[k]` is the `ε^k` term of `V1`.
    pub v1: Vec<T>,
    /// `zeta1[k]` is the `ε^k` term of `ζ1`; `zeta1[0]` is zero.
    pub zeta1: Vec<DVector<T>>,
}

impl<T: Real> ExpansionTerms<T> {
    fn new(n: usize, order: usize) -> Self {
        ExpansionTerms { v1: vec![T::zero(); order + 1], zeta1: vec![DVector::zeros(n); order + 1] }
    }

    pub fn order(&self) -> usize {
        self.v1.len() - 1
    }

    /// `V1` through the stored order.
    pub fn v1_sum(&self) -> T {
        self.v1.iter().fold(T::zero(), |a, &b| a + b)
    }

    /// `ζ1` through the stored order.
    pub fn zeta1_sum(&self) -> DVector<T> {
        self.zeta1.iter().skip(1).fold(self.zeta1[0].clone(), |a, b| a + b)
    }

    /// Columns `order, v1_term, v1_cumulative, zeta1_0, …, zeta1_{n−1}`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(out);
        let n = self.zeta1[0].len();
        let mut header = vec!["order".to_string(), "v1_term".to_string(), "v1_cumulative".to_string()];
        header.extend((0..n).map(|i| format!("zeta1_{i}")));
        wr.write_record(&header)?;
        let mut cum = T::zero();
        for k in 0..self.v1.len() {
            cum += self.v1[k];
            let mut row = vec![k.to_string(), fmt_num(self.v1[k].as_f64()), fmt_num(cum.as_f64())];
            row.extend(self.zeta1[k].iter().map(|v| fmt_num(v.as_f64())));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Per-order terms from the general formulas.
pub fn expansion_terms<T: Real>(
    ctx: &ExpansionContext<T>,
    t: T,
    x: &DVector<T>,
    zhat: &DVector<T>,
    order: usize,
) -> Result<ExpansionTerms<T>> {
    check_order(order)?;
    let (b, p) = ctx.local(t);
    Ok(generic::terms(ctx, &b, &p, x, zhat, order))
}

/// `V1(t)` through `order` from the general formulas.
pub fn v1_expansion<T: Real>(ctx: &ExpansionContext<T>, t: T, x: &DVector<T>, zhat: &DVector<T>, order: usize) -> Result<T> {
    Ok(expansion_terms(ctx, t, x, zhat, order)?.v1_sum())
}

/// `ζ1(t)` through `order` from the general formulas. There is no
/// zeroth-order term, so `order = 0` gives the zero vector.
pub fn zeta1_expansion<T: Real>(
    ctx: &ExpansionContext<T>,
    t: T,
    x: &DVector<T>,
    zhat: &DVector<T>,
    order: usize,
) -> Result<DVector<T>> {
    Ok(expansion_terms(ctx, t, x, zhat, order)?.zeta1_sum())
}

/// Per-order terms from the closed forms of the index model, with `y` the
/// index level.
pub fn cev_expansion<T: Real>(ctx: &ExpansionContext<T>, t: T, y: T, zhat: &DVector<T>, order: usize) -> Result<ExpansionTerms<T>> {
    check_order(order)?;
    let shape = ctx.require_cev()?;
    let (b, p) = ctx.local(t);
    Ok(CevNode::new(shape, ctx.table.structure.d, &b, &p).eval(shape, y, zhat, order))
}

enum Prepared<T: Real> {
    Cev(Vec<CevNode<T>>),
    Generic(Vec<(Brackets<T>, Primitives<T>)>),
}

struct NodeCache<T: Real> {
    t0: T,
    dt: T,
    steps: usize,
    data: Prepared<T>,
}

/// Supplies `(V1, ζ1)` of the given order to the hedging simulation.
///
/// Integrals are prepared once per Monte Carlo grid; the closed forms are
/// used whenever the model admits them.
pub struct ExpansionProvider<'c, 'a, T: Real> {
    ctx: &'c ExpansionContext<'a, T>,
    order: usize,
    cache: OnceLock<NodeCache<T>>,
}

impl<'c, 'a, T: Real> ExpansionProvider<'c, 'a, T> {
    pub fn new(ctx: &'c ExpansionContext<'a, T>, order: usize) -> Result<Self> {
        check_order(order)?;
        Ok(ExpansionProvider { ctx, order, cache: OnceLock::new() })
    }

    fn prepare(&self, grid: &McGrid<T>) -> NodeCache<T> {
        let d = self.ctx.table.structure.d;
        let data = match self.ctx.cev.as_ref() {
            Some(shape) => Prepared::Cev(
                grid.nodes
                    .iter()
                    .map(|nd| {
                        let (b, p) = self.ctx.local(nd.t);
                        CevNode::new(shape, d, &b, &p)
                    })
                    .collect(),
            ),
            None => Prepared::Generic(grid.nodes.iter().map(|nd| self.ctx.local(nd.t)).collect()),
        };
        NodeCache { t0: grid.t0, dt: grid.dt, steps: grid.steps, data }
    }

    fn terms(&self, grid: &McGrid<T>, k: usize, x: &[T], z: &[T]) -> ExpansionTerms<T> {
        let cache = self.cache.get_or_init(|| self.prepare(grid));
        let zv = DVector::from_column_slice(z);
        let same = cache.steps == grid.steps && cache.t0 == grid.t0 && cache.dt == grid.dt;
        match (&cache.data, self.ctx.cev.as_ref()) {
            (Prepared::Cev(nodes), Some(shape)) if same => nodes[k].eval(shape, x[shape.index], &zv, self.order),
            (Prepared::Generic(nodes), _) if same => {
                let (b, p) = &nodes[k];
                generic::terms(self.ctx, b, p, &DVector::from_column_slice(x), &zv, self.order)
            }
            _ => {
                let (b, p) = self.ctx.local(grid.nodes[k].t);
                match self.ctx.cev.as_ref() {
                    Some(shape) => CevNode::new(shape, self.ctx.table.structure.d, &b, &p).eval(
                        shape,
                        x[shape.index],
                        &zv,
                        self.order,
                    ),
                    None => generic::terms(self.ctx, &b, &p, &DVector::from_column_slice(x), &zv, self.order),
                }
            }
        }
    }
}

impl<T: Real> HedgeProvider<T> for ExpansionProvider<'_, '_, T> {
    fn eval(&self, grid: &McGrid<T>, k: usize, x: &[T], z: &[T], z1: &mut [T]) -> T {
        let terms = self.terms(grid, k, x, z);
        z1.copy_from_slice(terms.zeta1_sum().as_slice());
        terms.v1_sum()
    }
}

/// `V0(0)` by physical-measure Monte Carlo with `(V1, ζ1)` from the expansion.
pub fn expansion_v0<T: Real>(
    spec: &ModelSpec<T>,
    table: &CoefficientTable<T>,
    ctx: &ExpansionContext<T>,
    order: usize,
    cfg: SimConfig<T>,
) -> Result<Estimate> {
    let provider = ExpansionProvider::new(ctx, order)?;
    estimate_v0(spec, table, &provider, cfg)
}
