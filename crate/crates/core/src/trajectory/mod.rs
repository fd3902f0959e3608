//! Hierarchical multinomial-logistic model of how authors move attention
//! between research areas across two periods.

mod fit;
mod model;

pub use fit::{
    cross_validate, fit_map, sample_hmc, CvReport, Inference, MapFit, MapMode, PosteriorSamples, TrajectoryConfig,
};
pub use model::{grad_log_posterior, log_posterior, ModelLayout, Parametrization, TransferPosterior};

use ndarray::{Array2, Array3, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{ln_factorial, softmax_in_place};

/// Inputs for one period pair, rows aligned by author.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryData {
    pub author_ids: Vec<String>,
    /// Initial-period portfolios (rows sum to 1).
    pub x: Array2<f64>,
    /// Initial-period keyword counts, for count-weighted flows.
    pub x_counts: Array2<f64>,
    /// Late-period keyword counts.
    pub y: Array2<f64>,
    pub intellectual: Array2<f64>,
    pub social: Array2<f64>,
    pub nu: Array2<f64>,
}

impl TrajectoryData {
    pub fn num_authors(&self) -> usize {
        self.x.nrows()
    }

    pub fn num_topics(&self) -> usize {
        self.x.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, k) = self.x.dim();
        if k < 2 {
            return Err(Error::invalid("need at least two topics"));
        }
        if self.author_ids.len() != n {
            return Err(Error::invalid("author ids do not match portfolio rows"));
        }
        for (name, m) in [
            ("x_counts", &self.x_counts),
            ("y", &self.y),
            ("intellectual", &self.intellectual),
            ("social", &self.social),
        ] {
            if m.dim() != (n, k) {
                return Err(Error::invalid(format!(
                    "{name} has shape {:?}, expected ({n}, {k})",
                    m.dim()
                )));
            }
        }
        if self.nu.dim() != (k, k) {
            return Err(Error::invalid("overlap matrix must be K x K"));
        }
        for (a, row) in self.x.rows().into_iter().enumerate() {
            if row.iter().any(|v| !(*v >= 0.0)) || (row.sum() - 1.0).abs() > 1e-6 {
                return Err(Error::invalid(format!(
                    "portfolio of {} is not a probability vector",
                    self.author_ids[a]
                )));
            }
        }
        if self.y.iter().any(|v| !(*v >= 0.0) || v.fract() != 0.0) {
            return Err(Error::invalid("late-period counts must be non-negative integers"));
        }
        if self
            .intellectual
            .iter()
            .chain(self.social.iter())
            .chain(self.nu.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::invalid("non-finite capital or overlap entry"));
        }
        Ok(())
    }

    /// Rows `idx` only.
    pub fn subset(&self, idx: &[usize]) -> TrajectoryData {
        let pick = |m: &Array2<f64>| m.select(ndarray::Axis(0), idx);
        TrajectoryData {
            author_ids: idx.iter().map(|&i| self.author_ids[i].clone()).collect(),
            x: pick(&self.x),
            x_counts: pick(&self.x_counts),
            y: pick(&self.y),
            intellectual: pick(&self.intellectual),
            social: pick(&self.social),
            nu: self.nu.clone(),
        }
    }

    /// Scale each author's late counts down to at most `cap` tokens,
    /// rounding by largest remainder so totals equal `cap` exactly.
    pub fn cap_counts(&mut self, cap: u64) {
        for mut row in self.y.rows_mut() {
            let total: f64 = row.sum();
            if total <= cap as f64 {
                continue;
            }
            let scaled: Vec<f64> = row.iter().map(|v| v * cap as f64 / total).collect();
            let mut floors: Vec<f64> = scaled.iter().map(|v| v.floor()).collect();
            let mut left = cap as f64 - floors.iter().sum::<f64>();
            let mut order: Vec<usize> = (0..scaled.len()).collect();
            order.sort_by(|&a, &b| {
                (scaled[b] - floors[b])
                    .total_cmp(&(scaled[a] - floors[a]))
                    .then(a.cmp(&b))
            });
            for i in order {
                if left < 0.5 {
                    break;
                }
                floors[i] += 1.0;
                left -= 1.0;
            }
            row.iter_mut().zip(floors).for_each(|(v, f)| *v = f);
        }
    }
}

/// Point values of every model parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferModel {
    /// N x K x (K-1); the last target column is pinned to `mu[k][K-1]`.
    pub beta: Array3<f64>,
    pub mu: Array2<f64>,
    /// K x (K-1), positive.
    pub sigma: Array2<f64>,
    pub gamma: Array2<f64>,
    pub delta: Array2<f64>,
    pub lambda: f64,
    pub lambda_prime: f64,
    pub delta0: f64,
}

impl TransferModel {
    pub fn num_topics(&self) -> usize {
        self.mu.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_topics();
        if self.mu.dim() != (k, k)
            || self.gamma.dim() != (k, k)
            || self.delta.dim() != (k, k)
            || self.sigma.dim() != (k, k - 1)
            || self.beta.dim().1 != k
            || self.beta.dim().2 != k - 1
        {
            return Err(Error::invalid("transfer model shapes are inconsistent"));
        }
        if self.sigma.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::invalid("sigma must be positive"));
        }
        Ok(())
    }

    /// Author-level coefficients, or the population means when `author` is `None`.
    fn beta_row(&self, author: Option<usize>) -> ArrayView2<'_, f64> {
        match author {
            Some(a) => self.beta.index_axis(ndarray::Axis(0), a),
            None => self.mu.slice(ndarray::s![.., ..self.num_topics() - 1]),
        }
    }
}

/// `θ_a[k, k'] = softmax_k'(β_akk' + γ_kk' I_ak' + δ_kk' S_ak')`, with
/// `β_akK = μ_kK`. `author = None` uses the population coefficients `μ`.
pub fn mixing_matrix(model: &TransferModel, author: Option<usize>, i_a: &[f64], s_a: &[f64]) -> Result<Array2<f64>> {
    let k = model.num_topics();
    if i_a.len() != k || s_a.len() != k {
        return Err(Error::invalid("capital vectors must have K entries"));
    }
    let beta = model.beta_row(author);
    let mut theta = Array2::zeros((k, k));
    let mut eta = vec![0.0; k];
    for o in 0..k {
        for t in 0..k {
            let b = if t + 1 < k { beta[[o, t]] } else { model.mu[[o, k - 1]] };
            eta[t] = b + model.gamma[[o, t]] * i_a[t] + model.delta[[o, t]] * s_a[t];
        }
        if eta.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite linear predictor in row {o}")));
        }
        softmax_in_place(&mut eta);
        theta.row_mut(o).iter_mut().zip(&eta).for_each(|(d, s)| *d = *s);
    }
    Ok(theta)
}

/// Predicted late portfolio `Σ_k x_k θ[k, ·]`.
pub fn predicted_portfolio(x_a: &[f64], theta: &Array2<f64>) -> Vec<f64> {
    let k = theta.ncols();
    let mut p = vec![0.0; k];
    for (o, &w) in x_a.iter().enumerate() {
        if w > 0.0 {
            p.iter_mut().zip(theta.row(o)).for_each(|(pi, t)| *pi += w * t);
        }
    }
    p
}

/// Multinomial log-pmf of `y_a` with probabilities `Σ_k x_ak θ_ak·`,
/// including the combinatorial constant.
pub fn log_likelihood(y_a: &[f64], x_a: &[f64], theta: &Array2<f64>) -> f64 {
    let p = predicted_portfolio(x_a, theta);
    let n: f64 = y_a.iter().sum();
    let mut ll = ln_factorial(n);
    for (&y, &pj) in y_a.iter().zip(&p) {
        if y > 0.0 {
            if pj <= 0.0 {
                log::warn!("zero predicted probability for an observed category");
                return f64::NEG_INFINITY;
            }
            ll += y * pj.ln() - ln_factorial(y);
        }
    }
    ll
}

/// `T[k, k']` with its marginals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingMatrix {
    pub t: Array2<f64>,
    pub row_marginal: Vec<f64>,
    pub col_marginal: Vec<f64>,
}

impl CouplingMatrix {
    pub fn from_plan(t: Array2<f64>) -> Self {
        CouplingMatrix {
            row_marginal: t.rows().into_iter().map(|r| r.sum()).collect(),
            col_marginal: t.columns().into_iter().map(|c| c.sum()).collect(),
            t,
        }
    }

    /// Divide by total mass.
    pub fn normalized(&self) -> CouplingMatrix {
        let total = self.t.sum();
        CouplingMatrix::from_plan(&self.t / total)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateFlows {
    /// `Σ_a x_ak θ_akk'`.
    pub weighted: CouplingMatrix,
    /// `Σ_a X_ak θ_akk'`.
    pub count_weighted: CouplingMatrix,
}

/// Sum per-author flows over the cohort.
pub fn aggregate_flows(x: &Array2<f64>, x_counts: &Array2<f64>, thetas: &[Array2<f64>]) -> Result<AggregateFlows> {
    let (n, k) = x.dim();
    if thetas.len() != n || x_counts.dim() != (n, k) {
        return Err(Error::invalid("one mixing matrix per author is required"));
    }
    let mut t = Array2::zeros((k, k));
    let mut tc = Array2::zeros((k, k));
    for (a, theta) in thetas.iter().enumerate() {
        for o in 0..k {
            let (w, wc) = (x[[a, o]], x_counts[[a, o]]);
            if w == 0.0 && wc == 0.0 {
                continue;
            }
            for d in 0..k {
                t[[o, d]] += w * theta[[o, d]];
                tc[[o, d]] += wc * theta[[o, d]];
            }
        }
    }
    Ok(AggregateFlows {
        weighted: CouplingMatrix::from_plan(t),
        count_weighted: CouplingMatrix::from_plan(tc),
    })
}

/// `T_kk'` is significant when at least `threshold` of its posterior mass
/// lies above the uniform-mixing benchmark `x_k y_k' / Σ y`.
pub fn flow_significance(draws: &[Array2<f64>], x: &[f64], y: &[f64], threshold: f64) -> Result<Array2<bool>> {
    let k = x.len();
    if y.len() != k || draws.iter().any(|d| d.dim() != (k, k)) {
        return Err(Error::invalid("coupling draws and marginals disagree in size"));
    }
    if draws.is_empty() {
        return Err(Error::invalid("no coupling draws"));
    }
    let ysum: f64 = y.iter().sum();
    let mut mask = Array2::from_elem((k, k), false);
    for o in 0..k {
        for d in 0..k {
            let bench = x[o] * y[d] / ysum;
            let above = draws.iter().filter(|t| t[[o, d]] > bench * (1.0 + 1e-12)).count();
            mask[[o, d]] = above as f64 / draws.len() as f64 >= threshold;
        }
    }
    Ok(mask)
}
