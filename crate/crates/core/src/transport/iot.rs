//! Probabilistic inverse optimal transport: recover a cost matrix whose
//! entropic plan reproduces an observed coupling, under an entropic prior
//! centred on a knowledge-gap template.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{exact_ot, sinkhorn, support, CostMatrix, SinkhornConfig, SinkhornSolver};
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::stats::{self, Summary};

/// Entropic prior `-½ Σ ln c - α KL(c || p)`, up to the normalizer.
pub fn iot_prior_logdensity(c: &Array2<f64>, p: &Array2<f64>, alpha: f64) -> Result<f64> {
    if c.dim() != p.dim() {
        return Err(Error::invalid("prior: c and p shapes differ"));
    }
    if !(alpha > 0.0) {
        return Err(Error::invalid("prior concentration alpha must be positive"));
    }
    if c.iter().chain(p.iter()).any(|&v| !(v > 0.0)) {
        return Err(Error::invalid("prior needs strictly positive c and p"));
    }
    let log_measure: f64 = -0.5 * c.iter().map(|v| v.ln()).sum::<f64>();
    let kl = stats::kl_divergence(c.as_slice().expect("contiguous"), p.as_slice().expect("contiguous"));
    Ok(log_measure - alpha * kl)
}

/// `softmax(β (1 - ν))` over all cells.
pub fn knowledge_gap_prior_mean(nu: &Array2<f64>, beta: f64) -> Array2<f64> {
    let mut logits: Vec<f64> = nu.iter().map(|v| beta * (1.0 - v)).collect();
    stats::softmax_in_place(&mut logits);
    Array2::from_shape_vec(nu.dim(), logits).expect("shape preserved")
}

fn normalized_coupling(t_obs: &Array2<f64>) -> Result<Array2<f64>> {
    if t_obs.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::invalid("coupling entries must be non-negative"));
    }
    let total = t_obs.sum();
    if total <= 0.0 {
        return Err(Error::Degenerate("coupling carries no mass".into()));
    }
    Ok(t_obs / total)
}

fn coupling_marginals(t: &Array2<f64>) -> (Vec<f64>, Vec<f64>) {
    (
        t.rows().into_iter().map(|r| r.sum()).collect(),
        t.columns().into_iter().map(|c| c.sum()).collect(),
    )
}

fn plan_loglik(t_bar: &Array2<f64>, plan: &Array2<f64>, n_pseudo: f64) -> f64 {
    let mut ll = 0.0;
    for (t, p) in t_bar.iter().zip(plan.iter()) {
        if *t > 0.0 {
            if *p <= 0.0 {
                return f64::NEG_INFINITY;
            }
            ll += t * p.ln();
        }
    }
    n_pseudo * ll
}

/// Multinomial log-likelihood of `n_pseudo` pseudo-observations of the
/// normalized coupling under the entropic plan for `cost`.
pub fn iot_likelihood(
    t_obs: &Array2<f64>,
    cost: &Array2<f64>,
    x: &[f64],
    y: &[f64],
    epsilon: f64,
    n_pseudo: f64,
) -> Result<f64> {
    if n_pseudo == 0.0 {
        return Ok(0.0);
    }
    let t_bar = normalized_coupling(t_obs)?;
    let sx: f64 = x.iter().sum();
    let xs: Vec<f64> = x.iter().map(|v| v / sx).collect();
    let sy: f64 = y.iter().sum();
    let ys: Vec<f64> = y.iter().map(|v| v / sy).collect();
    let cfg = SinkhornConfig {
        epsilon,
        ..Default::default()
    };
    let plan = sinkhorn(&xs, &ys, cost, cfg)?.plan;
    let ll = plan_loglik(&t_bar, &plan, n_pseudo);
    if ll == f64::NEG_INFINITY {
        log::warn!("entropic plan vanishes where the observed coupling has mass");
    }
    Ok(ll)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinimalC0Config {
    pub epsilon: f64,
    pub lower: f64,
    pub upper: f64,
    pub tol: f64,
}

impl Default for MinimalC0Config {
    fn default() -> Self {
        MinimalC0Config {
            epsilon: 1e-2,
            lower: 0.0,
            upper: 1e3,
            tol: 1e-6,
        }
    }
}

/// Smallest-total cost matrix reproducing `t_obs` as an entropic plan,
/// i.e. `-ε ln T + a_i + b_j >= 0` with `Σ` minimal. Returns the matrix and
/// its total. Off-support cells are zero.
fn minimal_witness(t_obs: &Array2<f64>, epsilon: f64) -> Result<(Array2<f64>, f64)> {
    let t = normalized_coupling(t_obs)?;
    let (rx, cy) = coupling_marginals(&t);
    let rows = support(&rx);
    let cols = support(&cy);
    let (ms, ns) = (rows.len(), cols.len());
    let mut w = Array2::zeros((ms, ns));
    for (a, &i) in rows.iter().enumerate() {
        for (b, &j) in cols.iter().enumerate() {
            let v = t[[i, j]];
            if v <= 0.0 {
                return Err(Error::Infeasible(format!(
                    "coupling cell ({i},{j}) is zero inside the support; no finite cost reproduces it"
                )));
            }
            w[[a, b]] = epsilon * v.ln();
        }
    }
    // min n Σa + m Σb  s.t.  a_i + b_j >= w_ij  is the dual of a transport
    // problem with uniform marginals and cost -w.
    let neg_w = w.mapv(|v| -v);
    let r = vec![1.0 / ms as f64; ms];
    let c = vec![1.0 / ns as f64; ns];
    let sol = exact_ot(&r, &c, &neg_w)?;
    let mut costs = Array2::zeros(t.dim());
    for (a, &i) in rows.iter().enumerate() {
        for (b, &j) in cols.iter().enumerate() {
            let v = -w[[a, b]] - sol.row_potential[a] - sol.col_potential[b];
            costs[[i, j]] = v.max(0.0);
        }
    }
    let total = costs.sum();
    Ok((costs, total))
}

/// A non-negative cost matrix with total `c0` whose entropic plan is
/// `t_obs`, if one exists.
pub fn feasible_cost_matrix(t_obs: &Array2<f64>, epsilon: f64, c0: f64) -> Result<Option<Array2<f64>>> {
    let (base, total) = minimal_witness(t_obs, epsilon)?;
    if c0 < total - 1e-12 * total.max(1.0) {
        return Ok(None);
    }
    let offset = (c0 - total).max(0.0) / base.len() as f64;
    Ok(Some(base.mapv(|v| v + offset)))
}

/// Smallest total cost `C_0` admitting an exact inversion, by bisection
/// over the feasibility test.
pub fn minimal_c0(t_obs: &Array2<f64>, x: &[f64], y: &[f64], config: MinimalC0Config) -> Result<f64> {
    let t = normalized_coupling(t_obs)?;
    let (rx, cy) = coupling_marginals(&t);
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let mismatch = rx
        .iter()
        .zip(x)
        .map(|(a, b)| (a - b / sx).abs())
        .chain(cy.iter().zip(y).map(|(a, b)| (a - b / sy).abs()))
        .fold(0.0f64, f64::max);
    if mismatch > 1e-6 {
        return Err(Error::invalid(format!(
            "coupling marginals differ from x, y by {mismatch:e}"
        )));
    }
    let feasible = |c0: f64| -> Result<bool> { Ok(feasible_cost_matrix(&t, config.epsilon, c0)?.is_some()) };
    let (mut lo, mut hi) = (config.lower, config.upper);
    if !feasible(hi)? {
        return Err(Error::Infeasible(format!(
            "no feasible C0 in [{lo}, {hi}]; raise the upper bracket"
        )));
    }
    if feasible(lo)? {
        return Ok(lo);
    }
    while hi - lo > config.tol {
        let mid = 0.5 * (lo + hi);
        if feasible(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum C0Choice {
    /// Minimal feasible total, inflated by `margin` so the start point is
    /// strictly inside the simplex.
    Minimal(f64),
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetroMcConfig {
    pub iters: usize,
    pub warmup: usize,
    pub thin: usize,
    /// Entropic-prior concentration; `None` means K².
    pub alpha: Option<f64>,
    pub epsilon: f64,
    pub n_pseudo: f64,
    pub c0: C0Choice,
    pub proposal_scale: f64,
    /// Initial half-width of row/column potential shifts, in units of the
    /// mean cell mass. `0` disables these moves.
    pub potential_step: f64,
    /// Potential moves per iteration; they need no Sinkhorn solve.
    pub potential_moves: usize,
    /// Probability that a cost move redraws the pair's split uniformly
    /// instead of taking a scaled step.
    pub resplit_prob: f64,
    pub beta_step: f64,
    pub target_acceptance: f64,
    pub seed: u64,
    pub sinkhorn_tol: f64,
    pub sinkhorn_max_iters: usize,
    pub batches: usize,
}

impl Default for MetroMcConfig {
    fn default() -> Self {
        MetroMcConfig {
            iters: 1_000_000,
            warmup: 100_000,
            thin: 100,
            alpha: None,
            epsilon: 1e-2,
            n_pseudo: 1000.0,
            c0: C0Choice::Minimal(0.05),
            proposal_scale: 0.5,
            potential_step: 0.1,
            potential_moves: 8,
            resplit_prob: 0.1,
            beta_step: 0.5,
            target_acceptance: 0.3,
            seed: 0,
            sinkhorn_tol: 1e-9,
            sinkhorn_max_iters: 100_000,
            batches: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IotPosterior {
    pub cost_draws: Vec<CostMatrix>,
    pub beta_draws: Vec<f64>,
    pub alpha: f64,
    pub c0: f64,
    pub epsilon: f64,
    pub n_pseudo: f64,
    /// Post-warmup acceptance of cost moves.
    pub acceptance_rate: f64,
    pub beta_acceptance_rate: f64,
    pub proposal_scale: f64,
    /// Posterior mean of the normalized cost `c`, over all post-warmup iterations.
    pub mean_normalized: Array2<f64>,
    pub sd_normalized: Array2<f64>,
    /// Batch-means Monte-Carlo standard error of `mean_normalized`.
    pub mcse_normalized: Array2<f64>,
    pub beta_mean: f64,
    pub beta_mcse: f64,
    pub sinkhorn_failures: usize,
}

impl IotPosterior {
    /// Posterior mean on the cost scale, `C_0 * E[c]`.
    pub fn mean_cost(&self) -> Array2<f64> {
        &self.mean_normalized * self.c0
    }

    /// Per-cell summaries of `C` from the thinned draws.
    pub fn cell_summaries(&self) -> Array2<Summary> {
        let dim = self.mean_normalized.dim();
        Array2::from_shape_fn(dim, |(i, j)| {
            let v: Vec<f64> = self.cost_draws.iter().map(|d| d.normalized[[i, j]] * d.total).collect();
            Summary::from_samples(&v)
        })
    }

    pub fn beta_summary(&self) -> Summary {
        Summary::from_samples(&self.beta_draws)
    }
}

struct BatchMeans {
    size: usize,
    filled: usize,
    current: Vec<f64>,
    means: Vec<Vec<f64>>,
}

impl BatchMeans {
    fn new(dim: usize, size: usize) -> Self {
        BatchMeans {
            size: size.max(1),
            filled: 0,
            current: vec![0.0; dim],
            means: Vec::new(),
        }
    }

    fn push(&mut self, v: &[f64]) {
        self.current.iter_mut().zip(v).for_each(|(a, b)| *a += b);
        self.filled += 1;
        if self.filled == self.size {
            let n = self.size as f64;
            self.means.push(self.current.iter().map(|a| a / n).collect());
            self.current.iter_mut().for_each(|a| *a = 0.0);
            self.filled = 0;
        }
    }

    /// Standard error of the overall mean per coordinate.
    fn mcse(&self) -> Vec<f64> {
        let b = self.means.len();
        let dim = self.current.len();
        if b < 2 {
            return vec![f64::NAN; dim];
        }
        (0..dim)
            .map(|d| {
                let col: Vec<f64> = self.means.iter().map(|m| m[d]).collect();
                stats::sample_sd(&col) / (b as f64).sqrt()
            })
            .collect()
    }
}

/// Metropolis–Hastings over the normalized cost `c` (on the simplex) and the
/// knowledge-gap effect `β`. Cost moves transfer mass between two cells;
/// the scale adapts during warmup only.
pub fn metro_mc(
    t_obs: &Array2<f64>,
    x: &[f64],
    y: &[f64],
    nu: &Array2<f64>,
    config: MetroMcConfig,
) -> Result<IotPosterior> {
    let t_bar = normalized_coupling(t_obs)?;
    let dim = t_bar.dim();
    if nu.dim() != dim {
        return Err(Error::invalid("overlap matrix shape does not match the coupling"));
    }
    if config.warmup >= config.iters {
        return Err(Error::config("iot.warmup", "must be smaller than iters"));
    }
    let cells = dim.0 * dim.1;
    if cells < 2 {
        return Err(Error::invalid("need at least two cost cells"));
    }
    let alpha = config.alpha.unwrap_or(cells as f64);
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let xs: Vec<f64> = x.iter().map(|v| v / sx).collect();
    let ys: Vec<f64> = y.iter().map(|v| v / sy).collect();

    let c0 = match config.c0 {
        C0Choice::Fixed(v) if v > 0.0 => v,
        C0Choice::Fixed(v) => return Err(Error::config("iot.c0", format!("must be positive, got {v}"))),
        C0Choice::Minimal(margin) => {
            let (_, min_total) = minimal_witness(&t_bar, config.epsilon)?;
            if min_total > 1e-12 {
                min_total * (1.0 + margin)
            } else {
                1.0
            }
        }
    };
    let mut c: Vec<f64> = match feasible_cost_matrix(&t_bar, config.epsilon, c0)? {
        Some(w) if w.iter().all(|&v| v > 0.0) => w.iter().map(|v| v / c0).collect(),
        _ => vec![1.0 / cells as f64; cells],
    };

    let mut solver = SinkhornSolver::new(
        &xs,
        &ys,
        SinkhornConfig {
            epsilon: config.epsilon,
            max_iters: config.sinkhorn_max_iters,
            tol: config.sinkhorn_tol,
        },
    )?;
    let use_likelihood = config.n_pseudo > 0.0;
    let mut failures = 0usize;
    let loglik = |c: &[f64], solver: &mut SinkhornSolver| -> Option<f64> {
        if !use_likelihood {
            return Some(0.0);
        }
        let costs = Array2::from_shape_vec(dim, c.iter().map(|v| v * c0).collect()).expect("shape");
        match solver.solve(&costs) {
            Ok(r) => Some(plan_loglik(&t_bar, &r.plan, config.n_pseudo)),
            Err(_) => {
                solver.reset();
                None
            }
        }
    };

    let nu_flat: Vec<f64> = nu.iter().copied().collect();
    let log_p = |beta: f64| -> Vec<f64> {
        let logits: Vec<f64> = nu_flat.iter().map(|v| beta * (1.0 - v)).collect();
        let lse = stats::logsumexp(&logits);
        logits.into_iter().map(|l| l - lse).collect()
    };
    // per-cell prior term: -½ ln c - α c (ln c - ln p)
    let cell_prior = |ci: f64, lpi: f64| -> f64 { -0.5 * ci.ln() - alpha * ci * (ci.ln() - lpi) };
    let full_prior = |c: &[f64], lp: &[f64]| -> f64 { c.iter().zip(lp).map(|(&ci, &li)| cell_prior(ci, li)).sum() };

    let mut rng = substream(config.seed, "metro-mc");
    let mut beta = 0.0f64;
    let mut lp = log_p(beta);
    let mut ll = loglik(&c, &mut solver).ok_or(Error::NonConvergence {
        iterations: config.sinkhorn_max_iters,
        residual: f64::NAN,
    })?;
    let mut prior_c = full_prior(&c, &lp);

    let mut scale = config.proposal_scale.clamp(1e-8, 0.95);
    let mut beta_step = config.beta_step;
    let mut pot_step = config.potential_step.max(0.0) / cells as f64;
    let (mut win_pot_acc, mut win_scaled) = (0usize, 0usize);
    let mut c_new = vec![0.0; cells];
    let (mut win_acc, mut win_beta_acc, mut win_n) = (0usize, 0usize, 0usize);
    let (mut acc, mut beta_acc, mut post_n) = (0usize, 0usize, 0usize);
    let mut sum = vec![0.0; cells];
    let mut sumsq = vec![0.0; cells];
    let post_iters = config.iters - config.warmup;
    let mut batches = BatchMeans::new(cells, post_iters / config.batches.max(2));
    let mut beta_batches = BatchMeans::new(1, post_iters / config.batches.max(2));
    let (mut beta_sum, mut draws, mut beta_draws) = (0.0, Vec::new(), Vec::new());

    for it in 0..config.iters {
        // cost move: shift mass u from cell i to cell j
        let i = rng.random_range(0..cells);
        let mut j = rng.random_range(0..cells - 1);
        if j >= i {
            j += 1;
        }
        let resplit = rng.random::<f64>() < config.resplit_prob;
        let (ci_new, cj_new, hastings, valid) = if resplit {
            // symmetric: the new split is uniform on the pair's total
            let t = c[i] + c[j];
            let v = rng.random::<f64>() * t;
            (v, t - v, 0.0, v > 0.0 && v < t)
        } else {
            let m_fwd = c[i].min(c[j]);
            let u = rng.random::<f64>() * scale * m_fwd;
            let (a, b) = (c[i] - u, c[j] + u);
            let m_rev = a.min(b);
            (a, b, m_fwd.ln() - m_rev.ln(), u > 0.0 && a > 0.0 && u <= scale * m_rev)
        };
        let mut accepted = false;
        if valid {
            let d_prior = cell_prior(ci_new, lp[i]) + cell_prior(cj_new, lp[j])
                - cell_prior(c[i], lp[i])
                - cell_prior(c[j], lp[j]);
            let (old_i, old_j) = (c[i], c[j]);
            c[i] = ci_new;
            c[j] = cj_new;
            match loglik(&c, &mut solver) {
                Some(ll_new) => {
                    let log_ratio = ll_new - ll + d_prior + hastings;
                    if rng.random::<f64>().ln() < log_ratio {
                        ll = ll_new;
                        prior_c += d_prior;
                        accepted = true;
                    }
                }
                None => failures += 1,
            }
            if !accepted {
                c[i] = old_i;
                c[j] = old_j;
            }
        }

        // potential moves: the entropic plan is invariant under C_ij + a_i + b_j,
        // so shifting a row or column (total kept fixed) only changes the prior.
        let mut pot_accepted = 0usize;
        for _ in 0..if pot_step > 0.0 { config.potential_moves } else { 0 } {
            let u = (2.0 * rng.random::<f64>() - 1.0) * pot_step;
            // 0: row, 1: column, 2: row i up and column i down (square only)
            let kind = rng.random_range(0..if dim.0 == dim.1 { 3 } else { 2 });
            let line = rng.random_range(0..if kind == 1 { dim.1 } else { dim.0 });
            let shift = match kind {
                0 => u * dim.1 as f64 / cells as f64,
                1 => u * dim.0 as f64 / cells as f64,
                _ => 0.0,
            };
            let mut ok = true;
            for (idx, v) in c.iter().enumerate() {
                let (r, col) = (idx / dim.1, idx % dim.1);
                let d = match kind {
                    0 => u * (r == line) as u8 as f64,
                    1 => u * (col == line) as u8 as f64,
                    _ => u * ((r == line) as u8 as f64 - (col == line) as u8 as f64),
                };
                let nv = v - shift + d;
                ok &= nv > 0.0;
                c_new[idx] = nv;
            }
            if ok {
                let prior_new = full_prior(&c_new, &lp);
                if rng.random::<f64>().ln() < prior_new - prior_c {
                    c.copy_from_slice(&c_new);
                    prior_c = prior_new;
                    pot_accepted += 1;
                }
            }
        }

        // β move: the likelihood does not depend on β
        let z: f64 = StandardNormal.sample(&mut rng);
        let beta_new = beta + beta_step * z;
        let lp_new = log_p(beta_new);
        let prior_new = full_prior(&c, &lp_new);
        let log_ratio = prior_new - prior_c - 0.5 * (beta_new * beta_new - beta * beta);
        let beta_accepted = rng.random::<f64>().ln() < log_ratio;
        if beta_accepted {
            beta = beta_new;
            lp = lp_new;
            prior_c = prior_new;
        }

        if it < config.warmup {
            if !resplit {
                win_acc += accepted as usize;
                win_scaled += 1;
            }
            win_beta_acc += beta_accepted as usize;
            win_pot_acc += pot_accepted;
            win_n += 1;
            if win_n == 100 {
                let rate = win_acc as f64 / win_scaled.max(1) as f64;
                scale = (scale * ((rate - config.target_acceptance) * 2.0).exp()).clamp(1e-10, 0.95);
                let brate = win_beta_acc as f64 / win_n as f64;
                beta_step = (beta_step * ((brate - 0.4) * 2.0).exp()).clamp(1e-6, 10.0);
                if pot_step > 0.0 && config.potential_moves > 0 {
                    let prate = win_pot_acc as f64 / (win_n * config.potential_moves) as f64;
                    pot_step = (pot_step * ((prate - 0.4) * 2.0).exp()).clamp(1e-12, 1.0);
                }
                win_pot_acc = 0;
                win_acc = 0;
                win_scaled = 0;
                win_beta_acc = 0;
                win_n = 0;
            }
            // prior recomputed from scratch now and then to stop drift
            if it % 1000 == 999 {
                prior_c = full_prior(&c, &lp);
            }
            continue;
        }

        post_n += 1;
        acc += accepted as usize;
        beta_acc += beta_accepted as usize;
        for (k, &v) in c.iter().enumerate() {
            sum[k] += v;
            sumsq[k] += v * v;
        }
        beta_sum += beta;
        batches.push(&c);
        beta_batches.push(&[beta]);
        if post_n % config.thin.max(1) == 0 {
            draws.push(CostMatrix {
                normalized: Array2::from_shape_vec(dim, c.clone()).expect("shape"),
                total: c0,
            });
            beta_draws.push(beta);
        }
        if it % 1000 == 999 {
            prior_c = full_prior(&c, &lp);
        }
    }

    let n = post_n as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let sd: Vec<f64> = sumsq
        .iter()
        .zip(&mean)
        .map(|(s2, m)| ((s2 / n - m * m).max(0.0) * n / (n - 1.0).max(1.0)).sqrt())
        .collect();
    let acceptance_rate = acc as f64 / n;
    if acceptance_rate < 0.01 {
        log::warn!("MetroMC acceptance rate {acceptance_rate:.4} after warmup is very low");
    }
    if failures > 0 {
        log::warn!("MetroMC: {failures} proposal(s) rejected after Sinkhorn failed to converge");
    }
    Ok(IotPosterior {
        cost_draws: draws,
        beta_draws,
        alpha,
        c0,
        epsilon: config.epsilon,
        n_pseudo: config.n_pseudo,
        acceptance_rate,
        beta_acceptance_rate: beta_acc as f64 / n,
        proposal_scale: scale,
        mean_normalized: Array2::from_shape_vec(dim, mean).expect("shape"),
        sd_normalized: Array2::from_shape_vec(dim, sd).expect("shape"),
        mcse_normalized: Array2::from_shape_vec(dim, batches.mcse()).expect("shape"),
        beta_mean: beta_sum / n,
        beta_mcse: beta_batches.mcse()[0],
        sinkhorn_failures: failures,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostGapCorrelation {
    pub r: f64,
    pub r2: f64,
    pub r_offdiag: f64,
    pub r2_offdiag: f64,
    /// Two-sided permutation p-value of `r`.
    pub p_value: f64,
    pub significant: bool,
}

/// Pearson correlation between costs and the knowledge gap `1 - ν`.
pub fn cost_gap_correlation(
    cost: &Array2<f64>,
    nu: &Array2<f64>,
    permutations: usize,
    seed: u64,
) -> Result<CostGapCorrelation> {
    if cost.dim() != nu.dim() {
        return Err(Error::invalid("cost and overlap shapes differ"));
    }
    let c: Vec<f64> = cost.iter().copied().collect();
    let gap: Vec<f64> = nu.iter().map(|v| 1.0 - v).collect();
    let r = stats::pearson(&c, &gap)?;
    let k = cost.ncols();
    let (mut c_off, mut g_off) = (Vec::new(), Vec::new());
    for ((i, j), &v) in cost.indexed_iter() {
        if i != j {
            c_off.push(v);
            g_off.push(1.0 - nu[[i, j]]);
        }
    }
    let r_offdiag = if k > 1 {
        stats::pearson(&c_off, &g_off).unwrap_or(f64::NAN)
    } else {
        f64::NAN
    };
    let mut rng = substream(seed, "cost-gap-permutation");
    let mut shuffled = c.clone();
    let mut extreme = 0usize;
    for _ in 0..permutations {
        for i in (1..shuffled.len()).rev() {
            let j = rng.random_range(0..=i);
            shuffled.swap(i, j);
        }
        if stats::pearson(&shuffled, &gap)?.abs() >= r.abs() {
            extreme += 1;
        }
    }
    let p_value = (1 + extreme) as f64 / (1 + permutations) as f64;
    Ok(CostGapCorrelation {
        r,
        r2: r * r,
        r_offdiag,
        r2_offdiag: r_offdiag * r_offdiag,
        p_value,
        significant: p_value < 0.05,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::sample_dirichlet;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn prior_at_template_is_measure_term() {
        let p = array![[0.1, 0.2], [0.3, 0.4]];
        let lp = iot_prior_logdensity(&p, &p, 3.0).unwrap();
        assert_abs_diff_eq!(lp, -0.5 * p.iter().map(|v| v.ln()).sum::<f64>(), epsilon = 1e-12);
    }

    #[test]
    fn prior_is_linear_in_alpha() {
        let c = array![[0.6, 0.4]];
        let p = array![[0.5, 0.5]];
        let measure = -0.5 * (0.6f64.ln() + 0.4f64.ln());
        let a1 = iot_prior_logdensity(&c, &p, 1.0).unwrap() - measure;
        let a2 = iot_prior_logdensity(&c, &p, 2.0).unwrap() - measure;
        assert_abs_diff_eq!(a2, 2.0 * a1, epsilon = 1e-14);
        let kl = 0.6 * (0.6f64 / 0.5).ln() + 0.4 * (0.4f64 / 0.5).ln();
        assert_abs_diff_eq!(kl, 0.0201, epsilon = 1e-4);
        assert_abs_diff_eq!(a1, -kl, epsilon = 1e-14);
        assert!(iot_prior_logdensity(&array![[1.0, 0.0]], &p, 1.0).is_err());
    }

    #[test]
    fn likelihood_peaks_at_generating_cost() {
        let x = [0.3, 0.7];
        let y = [0.5, 0.5];
        let c = array![[0.01, 0.03], [0.02, 0.015]];
        let t = sinkhorn(&x, &y, &c, SinkhornConfig::default()).unwrap().plan;
        let at_truth = iot_likelihood(&t, &c, &x, &y, 1e-2, 100.0).unwrap();
        let self_entropy: f64 = 100.0 * t.iter().map(|v| v * v.ln()).sum::<f64>();
        assert_abs_diff_eq!(at_truth, self_entropy, epsilon = 1e-6);
        for (i, j, d) in [(0, 0, 0.01), (0, 1, -0.02), (1, 1, 0.005)] {
            let mut other = c.clone();
            other[[i, j]] += d;
            let ll = iot_likelihood(&t, &other, &x, &y, 1e-2, 100.0).unwrap();
            assert!(ll < at_truth, "{ll} vs {at_truth}");
        }
        // uniform shifts of a row leave the plan unchanged
        let shifted = c.clone() + &array![[0.05, 0.05], [0.0, 0.0]];
        let ll = iot_likelihood(&t, &shifted, &x, &y, 1e-2, 100.0).unwrap();
        assert_abs_diff_eq!(ll, at_truth, epsilon = 1e-6);
        assert_eq!(iot_likelihood(&t, &c, &x, &y, 1e-2, 0.0).unwrap(), 0.0);
        let twice = iot_likelihood(&t, &c, &x, &y, 1e-2, 200.0).unwrap();
        assert_abs_diff_eq!(twice, 2.0 * at_truth, epsilon = 1e-6);
    }

    #[test]
    fn uniform_mixing_needs_no_budget() {
        let x = [0.2, 0.3, 0.5];
        let y = [0.4, 0.4, 0.2];
        let t = Array2::from_shape_fn((3, 3), |(i, j)| x[i] * y[j]);
        let cfg = MinimalC0Config {
            lower: 0.0,
            upper: 10.0,
            ..Default::default()
        };
        assert_eq!(minimal_c0(&t, &x, &y, cfg).unwrap(), 0.0);
    }

    #[test]
    fn planted_budget_is_feasible() {
        let mut rng = substream(11, "planted-c0");
        let x = sample_dirichlet(&mut rng, &[2.0; 4]);
        let y = sample_dirichlet(&mut rng, &[2.0; 4]);
        let c_true = Array2::from_shape_fn((4, 4), |_| rng.random::<f64>());
        let c_true = &c_true / c_true.sum();
        let t = sinkhorn(&x, &y, &c_true, SinkhornConfig::default()).unwrap().plan;
        let c0 = minimal_c0(&t, &x, &y, MinimalC0Config::default()).unwrap();
        assert!(c0 <= 1.0 + 1e-6, "{c0}");
        // the witness at that budget reproduces the coupling
        let w = feasible_cost_matrix(&t, 1e-2, c0 + 1e-9).unwrap().unwrap();
        assert!(w.iter().all(|&v| v >= 0.0));
        let plan = sinkhorn(&x, &y, &w, SinkhornConfig::default()).unwrap().plan;
        for (a, b) in plan.iter().zip(t.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-7);
        }
        let tight = MinimalC0Config {
            upper: c0 * 0.5,
            ..Default::default()
        };
        assert!(matches!(minimal_c0(&t, &x, &y, tight), Err(Error::Infeasible(_))));
    }

    #[test]
    fn minimal_budget_matches_permutation_oracle() {
        // For square strictly positive couplings the minimal budget is
        // K * max_σ Σ ε ln T_{iσ(i)} - ε Σ ln T_ij; enumerate permutations.
        let mut rng = substream(5, "perm-oracle");
        for _ in 0..10 {
            let k = 4;
            let x = sample_dirichlet(&mut rng, &[1.5; 4]);
            let y = sample_dirichlet(&mut rng, &[1.5; 4]);
            let c = Array2::from_shape_fn((k, k), |_| rng.random::<f64>() * 0.1);
            let t = sinkhorn(&x, &y, &c, SinkhornConfig::default()).unwrap().plan;
            let eps = 1e-2;
            let mut best = f64::NEG_INFINITY;
            let mut perm: Vec<usize> = (0..k).collect();
            permute(&mut perm, 0, &mut |p| {
                let v: f64 = (0..k).map(|i| eps * t[[i, p[i]]].ln()).sum();
                best = best.max(v);
            });
            let all: f64 = t.iter().map(|v| eps * v.ln()).sum();
            let oracle = k as f64 * best - all;
            let cfg = MinimalC0Config {
                epsilon: eps,
                tol: 1e-10,
                ..Default::default()
            };
            let got = minimal_c0(&t, &x, &y, cfg).unwrap();
            assert_abs_diff_eq!(got, oracle, epsilon = 1e-8);
        }
    }

    fn permute(p: &mut Vec<usize>, at: usize, f: &mut impl FnMut(&[usize])) {
        if at == p.len() {
            f(p);
            return;
        }
        for i in at..p.len() {
            p.swap(at, i);
            permute(p, at + 1, f);
            p.swap(at, i);
        }
    }

    #[test]
    fn correlation_examples() {
        let nu = array![[1.0, 0.2, 0.5], [0.7, 1.0, 0.1], [0.3, 0.9, 1.0]];
        let affine = nu.mapv(|v| 0.3 + 2.0 * (1.0 - v));
        let r = cost_gap_correlation(&affine, &nu, 199, 1).unwrap();
        assert_abs_diff_eq!(r.r, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.r_offdiag, 1.0, epsilon = 1e-12);
        assert!(cost_gap_correlation(&Array2::ones((3, 3)), &nu, 10, 1).is_err());
    }

    #[test]
    fn noise_cost_is_not_significant() {
        let mut rng = substream(8, "noise-gap");
        let nu = Array2::from_shape_fn((6, 6), |(i, j)| if i == j { 1.0 } else { rng.random::<f64>() });
        let noise = Array2::from_shape_fn((6, 6), |_| rng.random::<f64>());
        let r = cost_gap_correlation(&noise, &nu, 999, 2).unwrap();
        assert!(!r.significant, "{r:?}");
        assert!(r.r.abs() < 0.35);
    }

    #[test]
    fn metro_mc_is_deterministic_per_seed() {
        let x = [0.4, 0.6];
        let y = [0.5, 0.5];
        let c = array![[0.1, 0.4], [0.3, 0.2]];
        let t = sinkhorn(&x, &y, &c, SinkhornConfig::default()).unwrap().plan;
        let nu = array![[1.0, 0.3], [0.5, 1.0]];
        let cfg = MetroMcConfig {
            iters: 4000,
            warmup: 1000,
            thin: 10,
            n_pseudo: 50.0,
            seed: 9,
            ..Default::default()
        };
        let a = metro_mc(&t, &x, &y, &nu, cfg).unwrap();
        let b = metro_mc(&t, &x, &y, &nu, cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.acceptance_rate > 0.0 && a.acceptance_rate < 1.0);
        for d in &a.cost_draws {
            assert_abs_diff_eq!(d.normalized.sum(), 1.0, epsilon = 1e-9);
        }
    }

    /// Exact 2×2 target by quadrature: posterior means of `c` from the
    /// chain must match the grid within Monte-Carlo error.
    #[test]
    fn metro_mc_matches_grid_posterior_2x2() {
        let x = [0.4, 0.6];
        let y = [0.55, 0.45];
        let planted = array![[0.05, 0.45], [0.35, 0.15]];
        let eps = 0.5;
        let t = sinkhorn(
            &x,
            &y,
            &planted,
            SinkhornConfig {
                epsilon: eps,
                ..Default::default()
            },
        )
        .unwrap()
        .plan;
        let nu = array![[1.0, 0.2], [0.6, 1.0]];
        let (alpha, n_pseudo) = (4.0, 30.0);
        let cfg = MetroMcConfig {
            iters: 300_000,
            warmup: 20_000,
            thin: 50,
            alpha: Some(alpha),
            epsilon: eps,
            n_pseudo,
            c0: C0Choice::Fixed(1.0),
            seed: 4,
            ..Default::default()
        };
        let post = metro_mc(&t, &x, &y, &nu, cfg).unwrap();

        // unnormalized target: likelihood(c) · ∫ prior(c | β) N(β) dβ
        let gap: Vec<f64> = nu.iter().map(|v| 1.0 - v).collect();
        let betas: Vec<f64> = (0..161).map(|i| -8.0 + 0.1 * i as f64).collect();
        let log_ps: Vec<Vec<f64>> = betas
            .iter()
            .map(|b| {
                let l: Vec<f64> = gap.iter().map(|g| b * g).collect();
                let z = stats::logsumexp(&l);
                l.iter().map(|v| v - z).collect()
            })
            .collect();
        let n = 72;
        let h = 1.0 / n as f64;
        let (mut w_sum, mut m) = (0.0, [0.0; 4]);
        for i in 0..n {
            for j in 0..n - i {
                for k in 0..n - i - j {
                    let c = [(i as f64 + 0.5) * h, (j as f64 + 0.5) * h, (k as f64 + 0.5) * h];
                    let c3 = 1.0 - c[0] - c[1] - c[2];
                    if c3 <= 0.0 {
                        continue;
                    }
                    let cv = [c[0], c[1], c[2], c3];
                    let cost = Array2::from_shape_vec((2, 2), cv.to_vec()).unwrap();
                    let plan = sinkhorn(
                        &x,
                        &y,
                        &cost,
                        SinkhornConfig {
                            epsilon: eps,
                            ..Default::default()
                        },
                    )
                    .unwrap()
                    .plan;
                    let ll = plan_loglik(&t, &plan, n_pseudo);
                    let terms: Vec<f64> = betas
                        .iter()
                        .zip(&log_ps)
                        .map(|(b, lp)| {
                            -0.5 * b * b
                                + cv.iter()
                                    .zip(lp)
                                    .map(|(&ci, &li)| -0.5 * ci.ln() - alpha * ci * (ci.ln() - li))
                                    .sum::<f64>()
                        })
                        .collect();
                    let w = (ll + stats::logsumexp(&terms)).exp();
                    w_sum += w;
                    for (a, v) in m.iter_mut().zip(cv) {
                        *a += w * v;
                    }
                }
            }
        }
        for (cell, (&mc, &se)) in post.mean_normalized.iter().zip(&post.mcse_normalized).enumerate() {
            let grid = m[cell] / w_sum;
            // grid discretization error near the faces is below 2e-3
            assert!(
                (mc - grid).abs() < 3.0 * se + 2e-3,
                "cell {cell}: chain {mc:.4} ± {se:.4}, grid {grid:.4}"
            );
        }
    }
}
