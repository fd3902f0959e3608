use ndarray::Array2;

use super::{check_marginals, support};
use crate::error::{Error, Result};
use crate::stats::logsumexp;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    pub max_iters: usize,
    /// L1 tolerance on the row marginals after a column update.
    pub tol: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        SinkhornConfig {
            epsilon: 1e-2,
            max_iters: 100_000,
            tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornResult {
    pub plan: Array2<f64>,
    /// `<plan, C>`
    pub cost: f64,
    pub iterations: usize,
    pub marginal_error: f64,
}

/// Entropic optimal transport between `x` and `y` under cost `cost`.
pub fn sinkhorn(x: &[f64], y: &[f64], cost: &Array2<f64>, config: SinkhornConfig) -> Result<SinkhornResult> {
    SinkhornSolver::new(x, y, config)?.solve(cost)
}

/// Reusable solver that keeps its dual potentials between calls, so nearby
/// cost matrices converge in a few iterations.
#[derive(Debug, Clone)]
pub struct SinkhornSolver {
    x: Vec<f64>,
    y: Vec<f64>,
    rows: Vec<usize>,
    cols: Vec<usize>,
    config: SinkhornConfig,
    // log-domain potentials on the support, in units of epsilon
    f: Vec<f64>,
    g: Vec<f64>,
}

impl SinkhornSolver {
    pub fn new(x: &[f64], y: &[f64], config: SinkhornConfig) -> Result<Self> {
        check_marginals(x, y, 1e-9)?;
        if !(config.epsilon > 0.0) {
            return Err(Error::invalid("sinkhorn epsilon must be positive"));
        }
        let rows = support(x);
        let cols = support(y);
        Ok(SinkhornSolver {
            x: x.to_vec(),
            y: y.to_vec(),
            f: vec![0.0; rows.len()],
            g: vec![0.0; cols.len()],
            rows,
            cols,
            config,
        })
    }

    pub fn reset(&mut self) {
        self.f.iter_mut().for_each(|v| *v = 0.0);
        self.g.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn solve(&mut self, cost: &Array2<f64>) -> Result<SinkhornResult> {
        let (m, n) = (self.x.len(), self.y.len());
        if cost.dim() != (m, n) {
            return Err(Error::invalid(format!(
                "cost is {:?}, marginals are {m} x {n}",
                cost.dim()
            )));
        }
        let eps = self.config.epsilon;
        let (rs, cs) = (self.rows.len(), self.cols.len());
        // scaled cost on the support
        let mut kc = vec![0.0; rs * cs];
        for (a, &i) in self.rows.iter().enumerate() {
            for (b, &j) in self.cols.iter().enumerate() {
                let c = cost[[i, j]];
                if !c.is_finite() {
                    return Err(Error::invalid(format!("cost[{i},{j}] is not finite")));
                }
                kc[a * cs + b] = c / eps;
            }
        }
        let log_x: Vec<f64> = self.rows.iter().map(|&i| self.x[i].ln()).collect();
        let log_y: Vec<f64> = self.cols.iter().map(|&j| self.y[j].ln()).collect();
        let mut buf_r = vec![0.0; cs];
        let mut buf_c = vec![0.0; rs];
        let mut err = f64::INFINITY;
        let mut iterations = 0;
        while iterations < self.config.max_iters {
            iterations += 1;
            for a in 0..rs {
                for b in 0..cs {
                    buf_r[b] = self.g[b] - kc[a * cs + b];
                }
                self.f[a] = log_x[a] - logsumexp(&buf_r);
            }
            for b in 0..cs {
                for a in 0..rs {
                    buf_c[a] = self.f[a] - kc[a * cs + b];
                }
                self.g[b] = log_y[b] - logsumexp(&buf_c);
            }
            // columns are exact now; measure the row residual
            err = 0.0;
            for a in 0..rs {
                let mut row = 0.0;
                for b in 0..cs {
                    row += (self.f[a] + self.g[b] - kc[a * cs + b]).exp();
                }
                err += (row - self.x[self.rows[a]]).abs();
            }
            if err <= self.config.tol {
                break;
            }
        }
        if !(err <= self.config.tol) {
            return Err(Error::NonConvergence {
                iterations,
                residual: err,
            });
        }
        let mut plan = Array2::zeros((m, n));
        let mut total_cost = 0.0;
        for (a, &i) in self.rows.iter().enumerate() {
            for (b, &j) in self.cols.iter().enumerate() {
                let p = (self.f[a] + self.g[b] - kc[a * cs + b]).exp();
                plan[[i, j]] = p;
                total_cost += p * cost[[i, j]];
            }
        }
        Ok(SinkhornResult {
            plan,
            cost: total_cost,
            iterations,
            marginal_error: err,
        })
    }
}
