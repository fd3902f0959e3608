//! MAP and HMC fitting, and cross-validated prediction.

use std::borrow::Cow;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{ModelLayout, Parametrization, TransferPosterior};
use super::{aggregate_flows, mixing_matrix, predicted_portfolio, TrajectoryData, TransferModel};
use crate::error::{Error, Result};
use crate::hmc::{self, DrawSink, HmcConfig};
use crate::optim::{self, LbfgsConfig};
use crate::rng::substream;
use crate::stats::{self, Summary};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Inference {
    #[default]
    Map,
    Hmc,
}

/// What the MAP optimizer maximizes over.
///
/// The joint mode over author offsets and population scales is degenerate:
/// centered, it runs down the σ → 0 ridge; non-centered, the stationarity
/// condition forces σ ≥ 1. `Pooled` fixes every author offset at the population
/// mean (z = 0) and optimizes the remaining coordinates, which is the limit the
/// centered ridge approaches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapMode {
    #[default]
    Pooled,
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectoryConfig {
    pub inference: Inference,
    pub map_mode: MapMode,
    pub parametrization: Parametrization,
    pub lbfgs: LbfgsConfig,
    pub hmc: HmcConfig,
    /// Per-author cap on late-period tokens; `None` keeps counts as-is.
    pub max_count_per_author: Option<u64>,
    pub seed: u64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        TrajectoryConfig {
            inference: Inference::Map,
            map_mode: MapMode::Pooled,
            parametrization: Parametrization::NonCentered,
            lbfgs: LbfgsConfig::default(),
            hmc: HmcConfig::default(),
            max_count_per_author: None,
            seed: 0,
        }
    }
}

fn prepared<'a>(data: &'a TrajectoryData, config: &TrajectoryConfig) -> Cow<'a, TrajectoryData> {
    match config.max_count_per_author {
        Some(cap) => {
            let mut d = data.clone();
            d.cap_counts(cap);
            Cow::Owned(d)
        }
        None => Cow::Borrowed(data),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapFit {
    /// Under `MapMode::Pooled` every author's β equals μ and σ sits at its
    /// prior mode; σ is not estimated.
    pub model: TransferModel,
    pub mode: MapMode,
    /// Unconstrained optimum.
    pub point: Vec<f64>,
    pub parametrization: Parametrization,
    pub log_posterior: f64,
    pub grad_norm: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl MapFit {
    pub fn thetas(&self, data: &TrajectoryData) -> Result<Vec<Array2<f64>>> {
        (0..data.num_authors())
            .map(|a| {
                mixing_matrix(
                    &self.model,
                    Some(a),
                    data.intellectual.row(a).as_slice().expect("contiguous"),
                    data.social.row(a).as_slice().expect("contiguous"),
                )
            })
            .collect()
    }
}

fn initial_point(layout: &ModelLayout) -> Vec<f64> {
    // all zeros: σ = 1, every row uniform
    vec![0.0; layout.dim()]
}

/// Posterior mode by L-BFGS on the unconstrained vector.
pub fn fit_map(data: &TrajectoryData, config: &TrajectoryConfig) -> Result<MapFit> {
    let data = prepared(data, config);
    if data.num_authors() == 0 {
        return Err(Error::invalid("no authors to fit"));
    }
    let param = match config.map_mode {
        MapMode::Pooled => Parametrization::NonCentered,
        MapMode::Joint => config.parametrization,
    };
    let post = TransferPosterior::new(&data, param)?;
    // pooled: author block pinned at its zero start
    let frozen = match config.map_mode {
        MapMode::Pooled => post.layout.beta_len(),
        MapMode::Joint => 0,
    };
    let res = optim::minimize(
        |q, g| {
            let v = post.value_grad(q, g);
            g.iter_mut().for_each(|x| *x = -*x);
            g[..frozen].iter_mut().for_each(|x| *x = 0.0);
            -v
        },
        &initial_point(&post.layout),
        &config.lbfgs,
    );
    if !res.converged {
        log::warn!(
            "MAP did not reach gradient tolerance {:e} after {} iterations (max |grad| = {:e})",
            config.lbfgs.grad_tol,
            res.iterations,
            res.grad_norm
        );
    }
    Ok(MapFit {
        model: post.layout.unpack(&res.x),
        point: res.x,
        mode: config.map_mode,
        parametrization: param,
        log_posterior: -res.f,
        grad_norm: res.grad_norm,
        converged: res.converged,
        iterations: res.iterations,
    })
}

/// Population-level draws, couplings, and per-author posterior means.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSamples {
    /// Names of the monitored coordinates.
    pub names: Vec<String>,
    /// One row per kept draw, chain after chain.
    pub draws: Vec<Vec<f64>>,
    pub chain_ids: Vec<usize>,
    pub rhat: Vec<f64>,
    pub ess: Vec<f64>,
    pub divergences: usize,
    pub mean_accept: Vec<f64>,
    pub step_sizes: Vec<f64>,
    /// Posterior mean of each author's θ.
    pub theta_mean: Vec<Array2<f64>>,
    /// Posterior mean of each author's β, N x K x (K-1).
    pub beta_mean: ndarray::Array3<f64>,
    /// Normalized x-weighted coupling for every draw.
    pub coupling_draws: Vec<Array2<f64>>,
    pub k: usize,
}

impl PosteriorSamples {
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d[j]).collect()
    }

    pub fn summary(&self, name: &str) -> Option<Summary> {
        self.index_of(name).map(|j| Summary::from_samples(&self.column(j)))
    }

    /// Posterior-mean model (population means, author β means).
    pub fn mean_model(&self) -> TransferModel {
        let k = self.k;
        let mean = |j: usize| stats::mean(&self.column(j));
        let grid = |prefix: &str, cols: usize| {
            Array2::from_shape_fn((k, cols), |(o, t)| {
                mean(self.index_of(&format!("{prefix}[{o},{t}]")).expect("name"))
            })
        };
        TransferModel {
            beta: self.beta_mean.clone(),
            mu: grid("mu", k),
            sigma: grid("sigma", k - 1),
            gamma: grid("gamma", k),
            delta: grid("delta", k),
            lambda: mean(self.index_of("lambda").expect("name")),
            lambda_prime: mean(self.index_of("lambda_prime").expect("name")),
            delta0: mean(self.index_of("delta0").expect("name")),
        }
    }
}

fn monitored_names(k: usize) -> Vec<String> {
    let mut names = Vec::new();
    for (prefix, cols) in [("mu", k), ("sigma", k - 1), ("gamma", k), ("delta", k)] {
        for o in 0..k {
            for t in 0..cols {
                names.push(format!("{prefix}[{o},{t}]"));
            }
        }
    }
    names.extend(["lambda", "lambda_prime", "delta0"].map(String::from));
    for o in 0..k {
        for t in 0..k {
            names.push(format!("T[{o},{t}]"));
        }
    }
    names
}

fn weighted_coupling(data: &TrajectoryData, thetas: &[Array2<f64>]) -> Array2<f64> {
    let flows = aggregate_flows(&data.x, &data.x_counts, thetas).expect("aligned inputs");
    flows.weighted.normalized().t
}

/// Sampler coordinates for HMC. Whole-row shifts of μ, γ and δ leave the
/// likelihood unchanged, so those directions are set only by the prior and
/// are far wider than the row contrasts. Each such row is rewritten as
/// (r_t - m for t < K, m) with m the row mean, letting the diagonal metric
/// scale the shift direction separately.
struct RowMeanCoords<'a> {
    post: &'a TransferPosterior<'a>,
}

impl RowMeanCoords<'_> {
    fn rows(&self) -> impl Iterator<Item = usize> + '_ {
        let l = &self.post.layout;
        let k = l.k;
        [l.mu(), l.gamma(), l.delta()]
            .into_iter()
            .flat_map(move |start| (0..k).map(move |o| start + o * k))
    }

    fn to_model(&self, u: &[f64]) -> Vec<f64> {
        let k = self.post.layout.k;
        let mut q = u.to_vec();
        for r in self.rows() {
            let m = u[r + k - 1];
            let dev = &u[r..r + k - 1];
            for t in 0..k - 1 {
                q[r + t] = m + dev[t];
            }
            q[r + k - 1] = m - dev.iter().sum::<f64>();
        }
        q
    }

    fn model_to_coords(&self, q: &[f64]) -> Vec<f64> {
        let k = self.post.layout.k;
        let mut u = q.to_vec();
        for r in self.rows() {
            let m = q[r..r + k].iter().sum::<f64>() / k as f64;
            for t in 0..k - 1 {
                u[r + t] = q[r + t] - m;
            }
            u[r + k - 1] = m;
        }
        u
    }
}

impl hmc::LogDensity for RowMeanCoords<'_> {
    fn dim(&self) -> usize {
        self.post.layout.dim()
    }

    fn log_density_grad(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        let k = self.post.layout.k;
        let v = self.post.value_grad(&self.to_model(u), grad);
        // chain rule through the linear map; constant Jacobian
        for r in self.rows() {
            let last = grad[r + k - 1];
            let total: f64 = grad[r..r + k].iter().sum();
            for t in 0..k - 1 {
                grad[r + t] -= last;
            }
            grad[r + k - 1] = total;
        }
        v
    }
}

struct ThetaSink<'a> {
    coords: &'a RowMeanCoords<'a>,
    post: &'a TransferPosterior<'a>,
    theta_sum: Vec<Array2<f64>>,
    beta_sum: ndarray::Array3<f64>,
    count: usize,
}

impl DrawSink for ThetaSink<'_> {
    fn record(&mut self, u: &[f64]) {
        let q = self.coords.to_model(u);
        let m = self.post.layout.unpack(&q);
        for (acc, th) in self.theta_sum.iter_mut().zip(self.post.thetas(&q)) {
            *acc += &th;
        }
        self.beta_sum += &m.beta;
        self.count += 1;
    }
}

/// Multi-chain HMC started from the MAP estimate.
pub fn sample_hmc(data: &TrajectoryData, config: &TrajectoryConfig) -> Result<PosteriorSamples> {
    let map = fit_map(data, config)?;
    let data = prepared(data, config);
    let post = TransferPosterior::new(&data, config.parametrization)?;
    let layout = post.layout;
    let coords = RowMeanCoords { post: &post };
    let (n, k) = (layout.n, layout.k);
    let hmc_cfg = HmcConfig {
        seed: config.seed,
        ..config.hmc
    };
    let monitor = |u: &[f64]| -> Vec<f64> {
        let q = coords.to_model(u);
        let m = layout.unpack(&q);
        let mut v: Vec<f64> = Vec::with_capacity(4 * k * k + 3);
        v.extend(m.mu.iter());
        v.extend(m.sigma.iter());
        v.extend(m.gamma.iter());
        v.extend(m.delta.iter());
        v.extend([m.lambda, m.lambda_prime, m.delta0]);
        v.extend(weighted_coupling(&data, &post.thetas(&q)).iter());
        v
    };
    let start = coords.model_to_coords(&layout.pack(&map.model)?);
    let run = hmc::sample(&coords, &start, &hmc_cfg, monitor, |_| ThetaSink {
        coords: &coords,
        post: &post,
        theta_sum: vec![Array2::zeros((k, k)); n],
        beta_sum: ndarray::Array3::zeros((n, k, k - 1)),
        count: 0,
    })?;

    let names = monitored_names(k);
    let t_off = names.len() - k * k;
    let mut draws = Vec::new();
    let mut chain_ids = Vec::new();
    let mut theta_sum = vec![Array2::zeros((k, k)); n];
    let mut beta_sum = ndarray::Array3::zeros((n, k, k - 1));
    let mut count = 0usize;
    for (c, chain) in run.chains.iter().enumerate() {
        for d in &chain.draws {
            draws.push(d.clone());
            chain_ids.push(c);
        }
        for (acc, s) in theta_sum.iter_mut().zip(&chain.sink.theta_sum) {
            *acc += s;
        }
        beta_sum += &chain.sink.beta_sum;
        count += chain.sink.count;
    }
    let coupling_draws = draws
        .iter()
        .map(|d| Array2::from_shape_vec((k, k), d[t_off..].to_vec()).expect("shape"))
        .collect();
    Ok(PosteriorSamples {
        names,
        draws,
        chain_ids,
        divergences: run.divergences(),
        mean_accept: run.chains.iter().map(|c| c.mean_accept).collect(),
        step_sizes: run.chains.iter().map(|c| c.step_size).collect(),
        rhat: run.rhat,
        ess: run.ess,
        theta_mean: theta_sum.into_iter().map(|t| t / count as f64).collect(),
        beta_mean: beta_sum / count as f64,
        coupling_draws,
        k,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub author_ids: Vec<String>,
    pub fold: Vec<usize>,
    pub model_tv: Vec<f64>,
    pub baseline_tv: Vec<f64>,
    pub model_mean: f64,
    pub baseline_mean: f64,
}

/// K-fold cross-validation over authors. Held-out authors are predicted
/// with population coefficients (`β = μ`) and their own capital; the
/// baseline predicts no change.
pub fn cross_validate(data: &TrajectoryData, folds: usize, config: &TrajectoryConfig) -> Result<CvReport> {
    if folds < 2 {
        return Err(Error::invalid("cross-validation needs at least two folds"));
    }
    let data = prepared(data, config);
    data.validate()?;
    let n = data.num_authors();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(config.seed, "cv-folds"));
    let mut fold = vec![0usize; n];
    for (pos, &a) in order.iter().enumerate() {
        fold[a] = pos % folds;
    }
    for f in 0..folds {
        let size = fold.iter().filter(|&&x| x == f).count();
        if size < 2 {
            return Err(Error::invalid(format!(
                "fold {f} has {size} author(s); need at least 2"
            )));
        }
    }
    let map_cfg = TrajectoryConfig {
        max_count_per_author: None,
        ..*config
    };
    let per_fold: Vec<Vec<(usize, f64)>> = (0..folds)
        .into_par_iter()
        .map(|f| -> Result<Vec<(usize, f64)>> {
            let train: Vec<usize> = (0..n).filter(|&a| fold[a] != f).collect();
            let test: Vec<usize> = (0..n).filter(|&a| fold[a] == f).collect();
            let fit = fit_map(&data.subset(&train), &map_cfg)?;
            test.iter()
                .map(|&a| {
                    let th = mixing_matrix(
                        &fit.model,
                        None,
                        data.intellectual.row(a).as_slice().expect("contiguous"),
                        data.social.row(a).as_slice().expect("contiguous"),
                    )?;
                    let pred = predicted_portfolio(data.x.row(a).as_slice().expect("contiguous"), &th);
                    let y = stats::normalize(data.y.row(a).as_slice().expect("contiguous"))?;
                    Ok((a, stats::total_variation(&pred, &y)))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut model_tv = vec![0.0; n];
    for (a, v) in per_fold.into_iter().flatten() {
        model_tv[a] = v;
    }
    let baseline_tv: Vec<f64> = (0..n)
        .map(|a| {
            let y = stats::normalize(data.y.row(a).as_slice().expect("contiguous"))?;
            Ok(stats::total_variation(
                data.x.row(a).as_slice().expect("contiguous"),
                &y,
            ))
        })
        .collect::<Result<_>>()?;
    Ok(CvReport {
        author_ids: data.author_ids.clone(),
        fold,
        model_mean: stats::mean(&model_tv),
        baseline_mean: stats::mean(&baseline_tv),
        model_tv,
        baseline_tv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmc::LogDensity;
    use crate::synth::{generate_cohort, SynthConfig};
    use rand::Rng;

    #[test]
    fn row_mean_coords_round_trip_and_gradient() {
        let cohort = generate_cohort(&SynthConfig {
            n_authors: 12,
            k: 3,
            seed: 5,
            ..SynthConfig::default()
        })
        .unwrap();
        let post = TransferPosterior::new(&cohort.data, Parametrization::NonCentered).unwrap();
        let coords = RowMeanCoords { post: &post };
        let mut rng = crate::rng::substream(1, "row-mean-test");
        let q: Vec<f64> = (0..post.layout.dim()).map(|_| rng.random_range(-0.5..0.5)).collect();
        let u = coords.model_to_coords(&q);
        for (a, b) in coords.to_model(&u).iter().zip(&q) {
            assert!((a - b).abs() < 1e-12);
        }

        let mut g = vec![0.0; u.len()];
        coords.log_density_grad(&u, &mut g);
        let mut scratch = vec![0.0; u.len()];
        for j in 0..u.len() {
            let h = 1e-5;
            let (mut a, mut b) = (u.clone(), u.clone());
            a[j] += h;
            b[j] -= h;
            let fd =
                (coords.log_density_grad(&a, &mut scratch) - coords.log_density_grad(&b, &mut scratch)) / (2.0 * h);
            assert!(
                (fd - g[j]).abs() <= 1e-5 * fd.abs().max(1.0),
                "coordinate {j}: {fd} vs {}",
                g[j]
            );
        }
    }
}
