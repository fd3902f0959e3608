//! Forward optimal transport (entropic and exact), the distances it
//! induces, and probabilistic inverse optimal transport.

mod exact;
mod iot;
mod sinkhorn;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use exact::{exact_ot, exact_ot_with_limit, ExactPlan, DEFAULT_SIZE_LIMIT};
pub use iot::{
    cost_gap_correlation, feasible_cost_matrix, iot_likelihood, iot_prior_logdensity, knowledge_gap_prior_mean,
    metro_mc, minimal_c0, C0Choice, CostGapCorrelation, IotPosterior, MetroMcConfig, MinimalC0Config,
};
pub use sinkhorn::{sinkhorn, SinkhornConfig, SinkhornResult, SinkhornSolver};

/// Cost matrix with its total and simplex-normalized form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostMatrix {
    /// `c = C / C_0`, summing to 1.
    pub normalized: Array2<f64>,
    /// `C_0 = sum C`.
    pub total: f64,
}

impl CostMatrix {
    pub fn from_costs(costs: &Array2<f64>) -> Result<Self> {
        if costs.iter().any(|&c| !(c >= 0.0) || !c.is_finite()) {
            return Err(Error::invalid("cost entries must be finite and >= 0"));
        }
        let total = costs.sum();
        if total <= 0.0 {
            return Err(Error::Degenerate("cost matrix sums to zero".into()));
        }
        Ok(CostMatrix {
            normalized: costs / total,
            total,
        })
    }

    pub fn costs(&self) -> Array2<f64> {
        &self.normalized * self.total
    }
}

pub(crate) fn support(v: &[f64]) -> Vec<usize> {
    (0..v.len()).filter(|&i| v[i] > 0.0).collect()
}

pub(crate) fn check_marginals(x: &[f64], y: &[f64], tol: f64) -> Result<()> {
    if x.iter().chain(y).any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::invalid("marginals must be finite and non-negative"));
    }
    let (sx, sy): (f64, f64) = (x.iter().sum(), y.iter().sum());
    if (sx - sy).abs() > tol * sx.max(1.0) {
        return Err(Error::invalid(format!("unbalanced marginals: {sx} vs {sy}")));
    }
    if sx <= 0.0 {
        return Err(Error::Degenerate("marginals carry no mass".into()));
    }
    Ok(())
}

/// `½ Σ |y_k - x_k|`.
pub fn tv_distance(x: &[f64], y: &[f64]) -> f64 {
    crate::stats::total_variation(x, y)
}

/// Minimal cost of displacing `x` onto `y` under `cost`.
pub fn ot_distance(x: &[f64], y: &[f64], cost: &Array2<f64>) -> Result<f64> {
    Ok(exact_ot(x, y, cost)?.cost)
}

/// `1 - I`: zero on the diagonal, one elsewhere.
pub fn unit_cost(k: usize) -> Array2<f64> {
    Array2::from_shape_fn((k, k), |(i, j)| if i == j { 0.0 } else { 1.0 })
}
