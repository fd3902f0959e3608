//! Synthetic cohorts with planted parameters, and brute-force oracles.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capital::{compute_profiles, expertise_overlap, ExpertiseRule};
use crate::corpus::{build_coauthor_graph, build_portfolio, AuthorshipFilter, DocumentRecord, Period};
use crate::error::{Error, Result};
use crate::regression::{AuthorRecord, Predictor};
use crate::rng::{indexed_substream, substream};
use crate::stats::{sample_dirichlet, sample_multinomial};
use crate::trajectory::{mixing_matrix, predicted_portfolio, TrajectoryData, TransferModel};
use crate::transport::{sinkhorn, SinkhornConfig};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftMode {
    /// Every author keeps their portfolio: θ = I.
    Stationary,
    /// θ from the transfer model with planted coefficients.
    #[default]
    CovariateDriven,
    /// θ rows of an entropic plan under a planted cost matrix.
    PlantedCost,
}

/// Population parameters of the transfer model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedParams {
    pub mu: Array2<f64>,
    pub sigma: Array2<f64>,
    pub gamma: Array2<f64>,
    pub delta: Array2<f64>,
    pub lambda: f64,
    pub lambda_prime: f64,
    pub delta0: f64,
}

fn row_center(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let mean = row.mean().unwrap_or(0.0);
        row -= mean;
    }
}

impl PlantedParams {
    /// Draw parameters consistent with the priors around `nu`. The `γ` rows
    /// and the noise part of `δ` are centred, since row shifts do not move θ.
    pub fn draw(nu: &Array2<f64>, config: &SynthConfig) -> Self {
        let k = nu.nrows();
        let mut rng = substream(config.seed, "synth-planted");
        let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
        let (lambda, lambda_prime, delta0) = (config.planted_lambda, config.planted_lambda_prime, 0.0);
        let (gamma_scale, gamma_diagonal, delta_scale) =
            (config.gamma_scale, config.gamma_diagonal, config.delta_scale);
        let mu = Array2::from_shape_fn((k, k), |(o, t)| lambda * nu[[o, t]] + normal());
        let mut gamma = Array2::from_shape_fn((k, k), |(o, t)| {
            gamma_scale * normal() + if o == t { gamma_diagonal } else { 0.0 }
        });
        row_center(&mut gamma);
        let mut noise = Array2::from_shape_fn((k, k), |_| delta_scale * normal());
        row_center(&mut noise);
        let delta = nu.mapv(|v| delta0 + lambda_prime * v) + noise;
        PlantedParams {
            mu,
            sigma: Array2::from_elem((k, k - 1), config.planted_sigma),
            gamma,
            delta,
            lambda,
            lambda_prime,
            delta0,
        }
    }

    fn validate(&self, k: usize) -> Result<()> {
        let shapes_ok = self.mu.dim() == (k, k)
            && self.gamma.dim() == (k, k)
            && self.delta.dim() == (k, k)
            && self.sigma.dim() == (k, k - 1);
        if !shapes_ok {
            return Err(Error::config(
                "synth.planted",
                format!("parameter shapes must match K = {k}"),
            ));
        }
        let all = self.mu.iter().chain(&self.sigma).chain(&self.gamma).chain(&self.delta);
        if all
            .chain([&self.lambda, &self.lambda_prime, &self.delta0])
            .any(|v| !v.is_finite())
        {
            return Err(Error::config("synth.planted", "parameters must be finite"));
        }
        if self.sigma.iter().any(|s| *s <= 0.0) {
            return Err(Error::config("synth.planted.sigma", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_authors: usize,
    pub k: usize,
    pub seed: u64,
    /// Dirichlet concentration of initial portfolios.
    pub dirichlet_concentration: f64,
    /// Late-period tokens per author.
    pub token_budget: u64,
    /// Initial-period solo tokens per author.
    pub initial_tokens: u64,
    /// Tokens on each coauthored paper.
    pub joint_tokens: u64,
    /// Expected coauthor-graph degree of the Erdős–Rényi draw.
    pub mean_degree: f64,
    /// Extra random coauthors per joint paper, uniform on `0..=max`.
    pub max_extra_coauthors: usize,
    pub drift: DriftMode,
    /// Planted transfer-model parameters; drawn when absent.
    pub planted: Option<PlantedParams>,
    /// Standard deviation of drawn `γ` entries.
    pub gamma_scale: f64,
    /// Added to drawn diagonal `γ_kk` (conservatism).
    pub gamma_diagonal: f64,
    /// Standard deviation of the free part of drawn `δ`.
    pub delta_scale: f64,
    /// Between-author spread `σ` of drawn parameters.
    pub planted_sigma: f64,
    /// Slope of `μ` on `ν`.
    pub planted_lambda: f64,
    /// Slope of `δ` on `ν`.
    pub planted_lambda_prime: f64,
    /// Multiplicative noise on the planted cost.
    pub cost_noise: f64,
    pub epsilon: f64,
    pub initial_period: Period,
    pub late_period: Period,
    pub expertise_rule: ExpertiseRule,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_authors: 500,
            k: 8,
            seed: 0,
            dirichlet_concentration: 0.5,
            token_budget: 200,
            initial_tokens: 200,
            joint_tokens: 20,
            mean_degree: 2.0,
            max_extra_coauthors: 2,
            drift: DriftMode::CovariateDriven,
            planted: None,
            gamma_scale: 1.0,
            gamma_diagonal: 4.0,
            delta_scale: 1.0,
            planted_sigma: 0.2,
            planted_lambda: 2.0,
            planted_lambda_prime: -3.0,
            cost_noise: 0.1,
            epsilon: 1e-2,
            initial_period: Period { start: 2000, end: 2009 },
            late_period: Period { start: 2015, end: 2019 },
            expertise_rule: ExpertiseRule::AboveMean,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_authors < 3 {
            return Err(Error::config("synth.n_authors", "need at least 3 authors"));
        }
        if self.k < 2 {
            return Err(Error::config("synth.k", "need at least 2 topics"));
        }
        if self.token_budget < self.k as u64 {
            return Err(Error::config("synth.token_budget", "must be at least K"));
        }
        if self.initial_tokens < 2 {
            return Err(Error::config("synth.initial_tokens", "must be at least 2"));
        }
        if !(self.dirichlet_concentration > 0.0) {
            return Err(Error::config("synth.dirichlet_concentration", "must be positive"));
        }
        if !(self.mean_degree >= 0.0) || self.mean_degree > (self.n_authors - 1) as f64 {
            return Err(Error::config("synth.mean_degree", "must lie in [0, N - 1]"));
        }
        if !(self.epsilon > 0.0) || !(self.cost_noise >= 0.0) {
            return Err(Error::config(
                "synth.epsilon",
                "epsilon must be positive, noise non-negative",
            ));
        }
        if self.initial_period.overlaps(&self.late_period) || self.initial_period.start > self.late_period.start {
            return Err(Error::config(
                "synth.late_period",
                "periods must be ordered and disjoint",
            ));
        }
        let drawn = [
            self.gamma_scale,
            self.gamma_diagonal,
            self.delta_scale,
            self.planted_lambda,
            self.planted_lambda_prime,
        ];
        if drawn.iter().any(|v| !v.is_finite())
            || !(self.planted_sigma > 0.0)
            || self.gamma_scale < 0.0
            || self.delta_scale < 0.0
        {
            return Err(Error::config(
                "synth.planted_sigma",
                "planted settings must be finite, scales non-negative, sigma positive",
            ));
        }
        if let Some(p) = &self.planted {
            p.validate(self.k)?;
        }
        Ok(())
    }
}

/// What generated the late-period counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub drift: DriftMode,
    /// Population parameters and author β (covariate-driven only).
    pub model: Option<TransferModel>,
    /// Planted cost on its original scale (planted-cost only).
    pub cost: Option<Array2<f64>>,
    /// Target cohort distribution of the planted plan (planted-cost only).
    pub target_marginal: Option<Vec<f64>>,
    /// Per-author mixing matrices used for sampling.
    pub thetas: Vec<Array2<f64>>,
}

#[derive(Debug, Clone)]
pub struct SynthCohort {
    pub config: SynthConfig,
    pub documents: Vec<DocumentRecord>,
    /// Realized model inputs, exactly as the pipeline derives them.
    pub data: TrajectoryData,
    pub truth: SynthTruth,
}

impl SynthCohort {
    pub fn write_documents(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        for d in &self.documents {
            serde_json::to_writer(&mut f, d)?;
            f.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        f.flush().map_err(|e| Error::io(path, e))
    }
}

fn author_ids(n: usize) -> Vec<String> {
    let width = n.to_string().len().max(4);
    (0..n).map(|a| format!("a{a:0width$}")).collect()
}

/// Forward-simulate a cohort: portfolios, a coauthor graph, capital, and
/// late-period counts drawn from the chosen drift mechanism.
pub fn generate_cohort(config: &SynthConfig) -> Result<SynthCohort> {
    config.validate()?;
    let (n, k) = (config.n_authors, config.k);
    let ids = author_ids(n);
    let p0 = config.initial_period;
    let p1 = config.late_period;

    // initial portfolios
    let mut rng_x = substream(config.seed, "synth-portfolio");
    let alpha = vec![config.dirichlet_concentration; k];
    let x_true: Vec<Vec<f64>> = (0..n).map(|_| sample_dirichlet(&mut rng_x, &alpha)).collect();

    let mut docs = Vec::new();
    let year_of = |i: usize, p: Period| p.start + (i as i32).rem_euclid(p.end - p.start + 1);
    // two solo papers per author
    let solo: Vec<Vec<DocumentRecord>> = (0..n)
        .into_par_iter()
        .map(|a| {
            let mut rng = indexed_substream(config.seed, "synth-solo", a as u64);
            let half = config.initial_tokens / 2;
            [half, config.initial_tokens - half]
                .iter()
                .enumerate()
                .map(|(s, &tok)| DocumentRecord {
                    doc_id: format!("p0-{}-s{s}", ids[a]),
                    year: year_of(a + s, p0),
                    authors: vec![ids[a].clone()],
                    topic_counts: sample_multinomial(&mut rng, tok, &x_true[a]),
                    raw_mixture: None,
                    tokens: None,
                    citations: Vec::new(),
                })
                .collect()
        })
        .collect();
    docs.extend(solo.into_iter().flatten());

    // Erdős–Rényi collaborations, one joint paper per edge
    let mut rng_g = substream(config.seed, "synth-graph");
    let p_edge = config.mean_degree / (n - 1) as f64;
    let mut joint = 0usize;
    for a in 0..n {
        for c in a + 1..n {
            if rng_g.random::<f64>() >= p_edge {
                continue;
            }
            let mut members: BTreeSet<usize> = [a, c].into();
            let extra = rng_g.random_range(0..=config.max_extra_coauthors);
            while members.len() < 2 + extra.min(n - 2) {
                members.insert(rng_g.random_range(0..n));
            }
            let mut mix = vec![0.0; k];
            for &m in &members {
                mix.iter_mut()
                    .zip(&x_true[m])
                    .for_each(|(v, x)| *v += x / members.len() as f64);
            }
            docs.push(DocumentRecord {
                doc_id: format!("p0-j{joint:06}"),
                year: year_of(joint, p0),
                authors: members.iter().map(|&m| ids[m].clone()).collect(),
                topic_counts: sample_multinomial(&mut rng_g, config.joint_tokens, &mix),
                raw_mixture: None,
                tokens: None,
                citations: Vec::new(),
            });
            joint += 1;
        }
    }

    // realized inputs, as the pipeline will see them
    let initial_docs: Vec<DocumentRecord> = docs.clone();
    let graph = build_coauthor_graph(&initial_docs);
    let profiles = compute_profiles(&initial_docs, &ids, &graph, config.expertise_rule)?;
    let built = build_portfolio(&initial_docs, &ids, p0, AuthorshipFilter::Any);
    if built.portfolio.author_ids.len() != n {
        return Err(Error::Degenerate(
            "synthetic author with an empty initial portfolio".into(),
        ));
    }
    let x_counts = built.portfolio.counts.clone();
    let x = built.portfolio.normalized();
    let mut intellectual = Array2::zeros((n, k));
    let mut social = Array2::zeros((n, k));
    for (a, p) in profiles.iter().enumerate() {
        intellectual
            .row_mut(a)
            .iter_mut()
            .zip(&p.intellectual)
            .for_each(|(d, v)| *d = *v);
        social.row_mut(a).iter_mut().zip(&p.social).for_each(|(d, v)| *d = *v);
    }
    let nu = expertise_overlap(&intellectual, config.expertise_rule).nu;

    // mixing matrices
    let mut truth = SynthTruth {
        drift: config.drift,
        model: None,
        cost: None,
        target_marginal: None,
        thetas: Vec::new(),
    };
    truth.thetas = match config.drift {
        DriftMode::Stationary => vec![Array2::eye(k); n],
        DriftMode::CovariateDriven => {
            let planted = config
                .planted
                .clone()
                .unwrap_or_else(|| PlantedParams::draw(&nu, config));
            let mut beta = Array3::zeros((n, k, k - 1));
            for a in 0..n {
                let mut rng = indexed_substream(config.seed, "synth-beta", a as u64);
                for o in 0..k {
                    for t in 0..k - 1 {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        beta[[a, o, t]] = planted.mu[[o, t]] + planted.sigma[[o, t]] * z;
                    }
                }
            }
            let model = TransferModel {
                beta,
                mu: planted.mu,
                sigma: planted.sigma,
                gamma: planted.gamma,
                delta: planted.delta,
                lambda: planted.lambda,
                lambda_prime: planted.lambda_prime,
                delta0: planted.delta0,
            };
            let thetas = (0..n)
                .map(|a| {
                    mixing_matrix(
                        &model,
                        Some(a),
                        intellectual.row(a).as_slice().expect("contiguous"),
                        social.row(a).as_slice().expect("contiguous"),
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            truth.model = Some(model);
            thetas
        }
        DriftMode::PlantedCost => {
            let mut rng = substream(config.seed, "synth-cost");
            let cost = planted_cost_matrix(&nu, config.cost_noise, &mut rng);
            let xbar: Vec<f64> = {
                let s = x.sum_axis(ndarray::Axis(0));
                s.iter().map(|v| v / n as f64).collect()
            };
            let noise = sample_dirichlet(&mut rng, &vec![1.0; k]);
            let ybar: Vec<f64> = xbar.iter().zip(&noise).map(|(a, b)| 0.7 * a + 0.3 * b).collect();
            let plan = planted_cost_coupling(&xbar, &ybar, &cost, config.epsilon)?;
            let theta = Array2::from_shape_fn((k, k), |(o, t)| {
                if xbar[o] > 0.0 {
                    plan[[o, t]] / xbar[o]
                } else if o == t {
                    1.0
                } else {
                    0.0
                }
            });
            truth.cost = Some(cost);
            truth.target_marginal = Some(ybar);
            vec![theta; n]
        }
    };

    // late-period counts and solo documents
    let late: Vec<(Vec<u64>, Vec<DocumentRecord>)> = (0..n)
        .into_par_iter()
        .map(|a| {
            let mut rng = indexed_substream(config.seed, "synth-late", a as u64);
            let xa = x.row(a).to_vec();
            let mut p = predicted_portfolio(&xa, &truth.thetas[a]);
            let total: f64 = p.iter().sum();
            p.iter_mut().for_each(|v| *v /= total);
            let y = sample_multinomial(&mut rng, config.token_budget, &p);
            let first: Vec<u64> = y.iter().map(|v| v.div_ceil(2)).collect();
            let second: Vec<u64> = y.iter().zip(&first).map(|(v, f)| v - f).collect();
            let docs = [first, second]
                .into_iter()
                .enumerate()
                .map(|(s, counts)| DocumentRecord {
                    doc_id: format!("p1-{}-s{s}", ids[a]),
                    year: year_of(a + s, p1),
                    authors: vec![ids[a].clone()],
                    topic_counts: counts,
                    raw_mixture: None,
                    tokens: None,
                    citations: Vec::new(),
                })
                .collect();
            (y, docs)
        })
        .collect();
    let mut y = Array2::zeros((n, k));
    for (a, (counts, late_docs)) in late.into_iter().enumerate() {
        y.row_mut(a).iter_mut().zip(&counts).for_each(|(d, v)| *d = *v as f64);
        docs.extend(late_docs);
    }
    docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));

    Ok(SynthCohort {
        config: config.clone(),
        documents: docs,
        data: TrajectoryData {
            author_ids: ids,
            x,
            x_counts,
            y,
            intellectual,
            social,
            nu,
        },
        truth,
    })
}

/// `C = (0.1 + (1 - ν)) (1 + noise z)`, clipped at zero and scaled to sum 1.
pub fn planted_cost_matrix<R: Rng + ?Sized>(nu: &Array2<f64>, noise: f64, rng: &mut R) -> Array2<f64> {
    let c = nu.mapv(|v| {
        let z: f64 = StandardNormal.sample(rng);
        ((0.1 + 1.0 - v) * (1.0 + noise * z)).max(0.0)
    });
    let total = c.sum();
    c / total
}

/// Entropic plan for a planted cost: the forward model behind inverse OT.
pub fn planted_cost_coupling(x: &[f64], y: &[f64], cost: &Array2<f64>, epsilon: f64) -> Result<Array2<f64>> {
    let cfg = SinkhornConfig {
        epsilon,
        ..Default::default()
    };
    Ok(sinkhorn(x, y, cost, cfg)?.plan)
}

/// Exact OT cost by enumerating every basic solution of the
/// transportation polytope (spanning trees of the bipartite cell graph).
pub fn brute_force_ot(x: &[f64], y: &[f64], cost: &Array2<f64>) -> Result<f64> {
    let (m, n) = (x.len(), y.len());
    if m > 4 || n > 4 {
        return Err(Error::invalid("brute-force OT is limited to 4 x 4"));
    }
    if m == 0 || n == 0 || cost.dim() != (m, n) {
        return Err(Error::invalid("cost shape does not match marginals"));
    }
    let (sx, sy): (f64, f64) = (x.iter().sum(), y.iter().sum());
    if (sx - sy).abs() > 1e-9 * sx.max(1.0) {
        return Err(Error::invalid("marginals carry different mass"));
    }
    let cells: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let need = m + n - 1;
    let mut best = f64::INFINITY;
    let mut chosen = Vec::with_capacity(need);
    enumerate_subsets(cells.len(), need, 0, &mut chosen, &mut |subset| {
        let edges: Vec<(usize, usize)> = subset.iter().map(|&c| cells[c]).collect();
        if let Some(flow) = tree_flows(&edges, x, y) {
            if flow.iter().all(|&f| f >= -1e-12) {
                let c: f64 = edges
                    .iter()
                    .zip(&flow)
                    .map(|(&(i, j), f)| cost[[i, j]] * f.max(0.0))
                    .sum();
                best = best.min(c);
            }
        }
    });
    Ok(best)
}

fn enumerate_subsets(total: usize, need: usize, start: usize, chosen: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
    if chosen.len() == need {
        f(chosen);
        return;
    }
    for c in start..total {
        if total - c < need - chosen.len() {
            break;
        }
        chosen.push(c);
        enumerate_subsets(total, need, c + 1, chosen, f);
        chosen.pop();
    }
}

/// Flows on a spanning tree of rows + columns, by peeling leaves; `None`
/// if the cells do not form a spanning tree.
fn tree_flows(edges: &[(usize, usize)], x: &[f64], y: &[f64]) -> Option<Vec<f64>> {
    let (m, n) = (x.len(), y.len());
    let nodes = m + n;
    let mut supply: Vec<f64> = x.iter().copied().chain(y.iter().copied()).collect();
    let mut degree = vec![0usize; nodes];
    for &(i, j) in edges {
        degree[i] += 1;
        degree[m + j] += 1;
    }
    if degree.contains(&0) {
        return None;
    }
    let mut flow = vec![f64::NAN; edges.len()];
    let mut done = vec![false; edges.len()];
    for _ in 0..edges.len() {
        let leaf = (0..nodes).find(|&v| degree[v] == 1)?;
        let e = (0..edges.len()).find(|&e| !done[e] && (edges[e].0 == leaf || m + edges[e].1 == leaf))?;
        let (i, j) = edges[e];
        let other = if i == leaf { m + j } else { i };
        flow[e] = supply[leaf];
        supply[other] -= supply[leaf];
        supply[leaf] = 0.0;
        done[e] = true;
        degree[leaf] -= 1;
        degree[other] -= 1;
    }
    Some(flow)
}

/// Ground truth for a synthetic regression cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RegressionScenario {
    /// Outcomes independent of every predictor.
    Null,
    /// Linear predictor `Σ β_p z_p` on standardized predictors (binary
    /// predictors enter as 0/1).
    Planted(Vec<(Predictor, f64)>),
    /// `power → productivity_coauthored → outcome`, plus a direct power slope.
    /// `power_to_productivity` is the correlation of the two standardized
    /// predictors.
    Mediated {
        direct: f64,
        power_to_productivity: f64,
        productivity_effect: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionCohort {
    pub records: Vec<AuthorRecord>,
    /// Sample sd of the latent continuous outcome; a planted slope β maps to
    /// `β / latent_sd` on the standardized change score.
    pub latent_sd: f64,
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Authors with random covariates and outcomes drawn from `scenario`.
/// Continuous outcomes are `0.5 + 0.05 (η + ε)`, binary ones Bernoulli(logistic(η)).
pub fn regression_cohort(n: usize, areas: usize, scenario: &RegressionScenario, seed: u64) -> Result<RegressionCohort> {
    if n < 2 || areas == 0 {
        return Err(Error::invalid("need at least two authors and one area"));
    }
    let mut rng = substream(seed, "synth-regression-covariates");
    let normal = |rng: &mut crate::rng::StreamRng| -> f64 { StandardNormal.sample(rng) };
    let rho = match scenario {
        RegressionScenario::Mediated {
            power_to_productivity, ..
        } => *power_to_productivity,
        _ => 0.0,
    };
    if !(-1.0..=1.0).contains(&rho) {
        return Err(Error::invalid("power_to_productivity must lie in [-1, 1]"));
    }
    let mut records = Vec::with_capacity(n);
    for a in 0..n {
        let idiv = 1.0 + 4.0 * rng.random::<f64>();
        let zp = normal(&mut rng);
        let power = (0.5 * zp).exp();
        let prod = 5.0 + 2.0 * (rho * zp + (1.0 - rho * rho).sqrt() * normal(&mut rng));
        records.push(AuthorRecord {
            author_id: format!("r{a:05}"),
            primary_area: rng.random_range(0..areas),
            primary_area_tied: false,
            change_score: 0.0,
            cognitive_distance: 0.0,
            entered_any: false,
            exited_any: false,
            intellectual_diversity: idiv,
            stirling_diversity: 0.5 * idiv + rng.random::<f64>(),
            excess_social_diversity: normal(&mut rng),
            power,
            brokerage: (3.0 * rng.random::<f64>() * power).floor(),
            stable_affiliation: rng.random::<bool>(),
            academic_age: 5.0 + 30.0 * rng.random::<f64>(),
            productivity_coauthored: prod,
            productivity_solo: 2.0 + 3.0 * rng.random::<f64>(),
        });
    }
    let slopes: Vec<(Predictor, f64)> = match scenario {
        RegressionScenario::Null => Vec::new(),
        RegressionScenario::Planted(b) => b.clone(),
        RegressionScenario::Mediated {
            direct,
            productivity_effect,
            ..
        } => vec![
            (Predictor::Power, *direct),
            (Predictor::ProductivityCoauthored, *productivity_effect),
        ],
    };
    let mut eta = vec![0.0; n];
    for (p, b) in &slopes {
        let raw: Vec<f64> = records.iter().map(|r| r.predictor(*p)).collect();
        let col = if p.is_binary() {
            raw
        } else {
            crate::stats::standardize(&raw)?
        };
        eta.iter_mut().zip(col).for_each(|(e, v)| *e += b * v);
    }
    let mut rng = substream(seed, "synth-regression-outcomes");
    let mut latent = Vec::with_capacity(n);
    for (r, e) in records.iter_mut().zip(&eta) {
        let l = e + normal(&mut rng);
        latent.push(l);
        r.change_score = (0.5 + 0.05 * l).clamp(0.0, 1.0);
        r.cognitive_distance = r.change_score;
        r.entered_any = rng.random::<f64>() < logistic(*e);
        r.exited_any = rng.random::<f64>() < logistic(*e);
    }
    Ok(RegressionCohort {
        records,
        latent_sd: crate::stats::sample_sd(&latent),
    })
}
