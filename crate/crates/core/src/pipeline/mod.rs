//! File-based pipeline: ingest → capital → fit → flows → iot → metrics →
//! regress → report, plus synth and selftest.

mod artifact;
mod config;
pub mod selftest;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::capital::{compute_profiles, expertise_overlap, CapitalProfile};
use crate::corpus::{
    assign_tokens, author_covariates, build_coauthor_graph, build_portfolio, docs_in_period, load_affiliations,
    load_documents, load_topic_word, select_cohort, DocumentRecord, Period,
};
use crate::error::{Error, Result};
use crate::metrics::{change_scores, diversity_trend, npmi_citation, ChangeReport, DiversityTrend, Quartiles};
use crate::regression::{
    direct_vs_total_effect, fit_change_regression, primary_area, AuthorRecord, DirectTotal, Outcome, Predictor,
    RegressionConfig, RegressionFit, RegressionSpec,
};
use crate::stats::Summary;
use crate::trajectory::{
    aggregate_flows, cross_validate, fit_map, flow_significance, sample_hmc, CvReport, Inference, MapMode,
    TrajectoryData,
};
use crate::transport::{cost_gap_correlation, metro_mc, CostGapCorrelation};

pub use artifact::Meta;
pub use config::{
    CorpusSettings, InputPaths, IotSettings, MeasureVariant, MetricsSettings, PipelineConfig, RegressionSettings,
    TrajectorySettings,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    Capital,
    Fit,
    Flows,
    Iot,
    Metrics,
    Regress,
    Synth,
    Report,
}

impl Stage {
    pub const PIPELINE: [Stage; 8] = [
        Stage::Ingest,
        Stage::Capital,
        Stage::Fit,
        Stage::Flows,
        Stage::Iot,
        Stage::Metrics,
        Stage::Regress,
        Stage::Report,
    ];
}

/// Run one stage, writing its artifacts under `config.output_dir`.
pub fn run(stage: Stage, config: &PipelineConfig) -> Result<()> {
    config.validate()?;
    let ctx = Ctx::new(config)?;
    match stage {
        Stage::Ingest => ctx.ingest(),
        Stage::Capital => ctx.capital(),
        Stage::Fit => ctx.fit(),
        Stage::Flows => ctx.flows(),
        Stage::Iot => ctx.iot(),
        Stage::Metrics => ctx.metrics(),
        Stage::Regress => ctx.regress(),
        Stage::Synth => ctx.synth(),
        Stage::Report => ctx.report(),
    }
}

/// Every stage after `synth`, in order.
pub fn run_all(config: &PipelineConfig) -> Result<()> {
    for stage in Stage::PIPELINE {
        log::info!("stage {stage:?}");
        run(stage, config)?;
    }
    Ok(())
}

struct Ctx<'a> {
    cfg: &'a PipelineConfig,
    meta: Meta,
    periods: Vec<Period>,
    out: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Cohort {
    periods: Vec<Period>,
    authors: Vec<String>,
    /// Selected by publication counts but dropped for an empty portfolio.
    excluded: Vec<String>,
    documents: usize,
    discarded_tokens: u64,
}

fn label_pair(a: Period, b: Period) -> String {
    format!("{}_{}", a.label(), b.label())
}

fn parse_bool(path: &Path, s: &str) -> Result<bool> {
    match s {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Parse {
            location: path.display().to_string(),
            reason: format!("`{s}` is not a boolean"),
        }),
    }
}

fn topic_list(v: &[usize]) -> String {
    v.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(";")
}

impl<'a> Ctx<'a> {
    fn new(cfg: &'a PipelineConfig) -> Result<Self> {
        Ok(Ctx {
            cfg,
            meta: Meta {
                config_hash: cfg.hash(),
                seed: cfg.seed,
            },
            periods: cfg.parsed_periods()?,
            out: cfg.output_dir.clone(),
        })
    }

    fn pairs(&self) -> Vec<(Period, Period)> {
        self.periods.windows(2).map(|w| (w[0], w[1])).collect()
    }

    fn pair_dir(&self, a: Period, b: Period) -> PathBuf {
        self.out.join(format!("pair_{}", label_pair(a, b)))
    }

    fn portfolio_path(&self, p: Period) -> PathBuf {
        self.out.join(format!("portfolio_{}.csv", p.label()))
    }

    fn documents_path(&self) -> PathBuf {
        self.out.join("documents.jsonl")
    }

    fn k_header(&self, first: &str) -> Vec<String> {
        std::iter::once(first.to_string())
            .chain((0..self.cfg.k).map(|j| format!("k{j}")))
            .collect()
    }

    fn seed_for(&self, label: &str) -> u64 {
        use rand::RngCore;
        crate::rng::substream(self.cfg.seed, label).next_u64()
    }

    // ---- ingest ----

    fn ingest(&self) -> Result<()> {
        let src = &self.cfg.inputs.documents;
        artifact::require(src)?;
        let mut docs = load_documents(src, self.cfg.k)?;
        let mut discarded = 0u64;
        if let Some(tw) = &self.cfg.inputs.topic_word {
            artifact::require(tw)?;
            let topic_word = load_topic_word(tw)?;
            for d in docs.iter_mut() {
                if let (Some(_), Some(tokens)) = (&d.raw_mixture, d.tokens.clone()) {
                    let assigned = assign_tokens(d, &topic_word, &tokens, self.cfg.corpus.entropy_threshold)?;
                    discarded += assigned.iter().filter(|t| t.assigned_topic.is_none()).count() as u64;
                }
            }
        }
        let selected = select_cohort(&docs, self.cfg.corpus.min_pubs_per_period, &self.periods)?;
        let mut authors: Vec<String> = selected.into_iter().collect();
        let mut excluded = Vec::new();
        for &p in &self.periods {
            let built = build_portfolio(&docs, &authors, p, self.cfg.corpus.authorship_filter);
            excluded.extend(built.excluded);
            authors = built.portfolio.author_ids;
        }
        if authors.is_empty() {
            return Err(Error::Degenerate("no author qualifies for the cohort".into()));
        }
        for &p in &self.periods {
            let built = build_portfolio(&docs, &authors, p, self.cfg.corpus.authorship_filter);
            artifact::write_rows(
                &self.portfolio_path(p),
                &self.meta,
                &self.k_header("author_id"),
                &built.portfolio.author_ids,
                &built.portfolio.counts,
            )?;
        }
        for &p in &self.periods[..self.periods.len() - 1] {
            let period_docs: Vec<DocumentRecord> = docs_in_period(&docs, p).into_iter().cloned().collect();
            let graph = build_coauthor_graph(&period_docs);
            let rows: Vec<Vec<String>> = graph
                .edges()
                .into_iter()
                .map(|(a, c, w)| vec![a.to_string(), c.to_string(), artifact::fmt(w)])
                .collect();
            artifact::write_csv(
                &self.out.join(format!("coauthor_edges_{}.csv", p.label())),
                &self.meta,
                &["a".into(), "c".into(), "w".into()],
                &rows,
            )?;
        }
        self.write_documents(&docs)?;
        excluded.sort();
        artifact::write_json(
            &self.out.join("cohort.json"),
            &self.meta,
            "cohort",
            &Cohort {
                periods: self.periods.clone(),
                authors,
                excluded,
                documents: docs.len(),
                discarded_tokens: discarded,
            },
        )
    }

    fn write_documents(&self, docs: &[DocumentRecord]) -> Result<()> {
        use std::io::Write;
        let path = self.documents_path();
        std::fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?);
        writeln!(f, "# config_hash={} seed={}", self.meta.config_hash, self.meta.seed)
            .map_err(|e| Error::io(&path, e))?;
        for d in docs {
            serde_json::to_writer(&mut f, d)?;
            f.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
        }
        f.flush().map_err(|e| Error::io(&path, e))
    }

    fn load_cohort(&self) -> Result<(Cohort, Vec<DocumentRecord>)> {
        let cohort: Cohort = artifact::read_json(&self.out.join("cohort.json"))?;
        artifact::require(&self.documents_path())?;
        let docs = load_documents(&self.documents_path(), self.cfg.k)?;
        Ok((cohort, docs))
    }

    // ---- capital ----

    fn capital(&self) -> Result<()> {
        let (cohort, docs) = self.load_cohort()?;
        let affiliations = match &self.cfg.inputs.affiliations {
            Some(p) => {
                artifact::require(p)?;
                Some(load_affiliations(p)?)
            }
            None => {
                log::warn!("no affiliation data; stable_affiliation is false for every author");
                None
            }
        };
        let reference_year = self
            .cfg
            .corpus
            .reference_year
            .unwrap_or_else(|| self.periods.last().expect("validated").end);
        for (p0, p1) in self.pairs() {
            let dir = self.pair_dir(p0, p1);
            let initial: Vec<DocumentRecord> = docs_in_period(&docs, p0).into_iter().cloned().collect();
            let graph = build_coauthor_graph(&initial);
            let profiles = compute_profiles(&initial, &cohort.authors, &graph, self.cfg.corpus.expertise_rule)?;
            write_capital(&dir.join("capital.csv"), &self.meta, self.cfg.k, &profiles)?;
            let intellectual =
                Array2::from_shape_fn((profiles.len(), self.cfg.k), |(a, t)| profiles[a].intellectual[t]);
            let overlap = expertise_overlap(&intellectual, self.cfg.corpus.expertise_rule);
            artifact::write_matrix(&dir.join("nu.csv"), &self.meta, "expert_in", &overlap.nu)?;

            let stability = Period::new(p0.start, p1.end)?;
            let mut rows = Vec::with_capacity(cohort.authors.len());
            for a in &cohort.authors {
                let c = author_covariates(&docs, a, reference_year, p0, stability, affiliations.as_ref())?;
                rows.push(vec![
                    a.clone(),
                    c.academic_age.to_string(),
                    c.stable_affiliation.to_string(),
                    c.productivity_coauthored.to_string(),
                    c.productivity_solo.to_string(),
                ]);
            }
            artifact::write_csv(
                &dir.join("covariates.csv"),
                &self.meta,
                &[
                    "author_id".into(),
                    "academic_age".into(),
                    "stable_affiliation".into(),
                    "productivity_coauthored".into(),
                    "productivity_solo".into(),
                ],
                &rows,
            )?;
        }
        Ok(())
    }

    // ---- fit ----

    fn load_portfolio(&self, p: Period) -> Result<(Vec<String>, Array2<f64>)> {
        let (_, ids, m) = artifact::read_rows(&self.portfolio_path(p))?;
        if m.ncols() != self.cfg.k {
            return Err(Error::invalid(format!(
                "portfolio {} has {} topics, config says {}",
                p,
                m.ncols(),
                self.cfg.k
            )));
        }
        Ok((ids, m))
    }

    fn trajectory_data(&self, p0: Period, p1: Period) -> Result<TrajectoryData> {
        let dir = self.pair_dir(p0, p1);
        let (ids, x_counts) = self.load_portfolio(p0)?;
        let (ids1, y) = self.load_portfolio(p1)?;
        let cap = read_capital(&dir.join("capital.csv"), self.cfg.k)?;
        if ids != ids1 || ids != cap.ids {
            return Err(Error::invalid("portfolio and capital artifacts list different authors"));
        }
        let nu = artifact::read_matrix(&dir.join("nu.csv"))?;
        let mut x = x_counts.clone();
        for mut row in x.rows_mut() {
            let s = row.sum();
            row /= s;
        }
        let data = TrajectoryData {
            author_ids: ids,
            x,
            x_counts,
            y,
            intellectual: cap.intellectual,
            social: cap.social,
            nu,
        };
        data.validate()?;
        Ok(data)
    }

    fn fit(&self) -> Result<()> {
        for (p0, p1) in self.pairs() {
            let dir = self.pair_dir(p0, p1);
            let data = self.trajectory_data(p0, p1)?;
            let tcfg = self
                .cfg
                .trajectory
                .model_config(self.seed_for(&format!("fit:{}", label_pair(p0, p1))));
            let (params, thetas) = match tcfg.inference {
                Inference::Map => {
                    let fit = fit_map(&data, &tcfg)?;
                    let thetas = fit.thetas(&data)?;
                    let m = &fit.model;
                    let point = |v: f64| ParamSummary::point(v);
                    let grid = |a: &Array2<f64>| a.map(|v| point(*v)).outer_iter().map(|r| r.to_vec()).collect();
                    let params = FitParams {
                        inference: Inference::Map,
                        map_mode: Some(fit.mode),
                        sigma_estimated: fit.mode == MapMode::Joint,
                        converged: fit.converged,
                        log_posterior: Some(fit.log_posterior),
                        mu: grid(&m.mu),
                        sigma: grid(&m.sigma),
                        gamma: grid(&m.gamma),
                        delta: grid(&m.delta),
                        lambda: point(m.lambda),
                        lambda_prime: point(m.lambda_prime),
                        delta0: point(m.delta0),
                        diagnostics: None,
                    };
                    (params, thetas)
                }
                Inference::Hmc => {
                    let s = sample_hmc(&data, &tcfg)?;
                    let k = self.cfg.k;
                    let summ = |name: String| ParamSummary::from(s.summary(&name).expect("monitored"));
                    let grid = |prefix: &str, cols: usize| {
                        (0..k)
                            .map(|o| (0..cols).map(|t| summ(format!("{prefix}[{o},{t}]"))).collect())
                            .collect()
                    };
                    let params = FitParams {
                        inference: Inference::Hmc,
                        map_mode: None,
                        sigma_estimated: true,
                        converged: s.rhat.iter().all(|r| *r < 1.05),
                        log_posterior: None,
                        mu: grid("mu", k),
                        sigma: grid("sigma", k - 1),
                        gamma: grid("gamma", k),
                        delta: grid("delta", k),
                        lambda: summ("lambda".into()),
                        lambda_prime: summ("lambda_prime".into()),
                        delta0: summ("delta0".into()),
                        diagnostics: Some(HmcDiagnostics {
                            max_rhat: s.rhat.iter().copied().fold(0.0, f64::max),
                            min_ess: s.ess.iter().copied().fold(f64::INFINITY, f64::min),
                            divergences: s.divergences,
                            mean_accept: s.mean_accept.clone(),
                            step_sizes: s.step_sizes.clone(),
                        }),
                    };
                    let draws: Vec<Vec<String>> = s
                        .coupling_draws
                        .iter()
                        .enumerate()
                        .map(|(i, t)| {
                            std::iter::once(i.to_string())
                                .chain(t.iter().map(|v| artifact::fmt(*v)))
                                .collect()
                        })
                        .collect();
                    let header: Vec<String> = std::iter::once("draw".to_string())
                        .chain((0..k).flat_map(|o| (0..k).map(move |t| format!("T_{o}_{t}"))))
                        .collect();
                    artifact::write_csv(&dir.join("coupling_draws.csv"), &self.meta, &header, &draws)?;
                    (params, s.theta_mean.clone())
                }
            };
            if tcfg.inference == Inference::Map {
                // stale draws from an earlier HMC run would feed flows
                let stale = dir.join("coupling_draws.csv");
                if stale.exists() {
                    std::fs::remove_file(&stale).map_err(|e| Error::io(&stale, e))?;
                }
            }
            artifact::write_json(&dir.join("params.json"), &self.meta, "params", &params)?;
            let k = self.cfg.k;
            let header: Vec<String> = std::iter::once("author_id".to_string())
                .chain((0..k).flat_map(|o| (0..k).map(move |t| format!("theta_{o}_{t}"))))
                .collect();
            let flat = Array2::from_shape_fn((thetas.len(), k * k), |(a, j)| thetas[a][[j / k, j % k]]);
            artifact::write_rows(&dir.join("theta.csv"), &self.meta, &header, &data.author_ids, &flat)?;

            if self.cfg.trajectory.cv_folds >= 2 {
                let mut cv_cfg = tcfg;
                cv_cfg.inference = Inference::Map;
                let cv = cross_validate(&data, self.cfg.trajectory.cv_folds, &cv_cfg)?;
                artifact::write_json(&dir.join("cv.json"), &self.meta, "cv", &CvSummary::from(&cv))?;
            }
        }
        Ok(())
    }

    // ---- flows ----

    fn flows(&self) -> Result<()> {
        let k = self.cfg.k;
        for (p0, p1) in self.pairs() {
            let dir = self.pair_dir(p0, p1);
            let data = self.trajectory_data(p0, p1)?;
            let (_, ids, flat) = artifact::read_rows(&dir.join("theta.csv"))?;
            if ids != data.author_ids || flat.ncols() != k * k {
                return Err(Error::invalid("theta.csv does not match the cohort"));
            }
            let thetas: Vec<Array2<f64>> = flat
                .outer_iter()
                .map(|r| Array2::from_shape_fn((k, k), |(o, t)| r[o * k + t]))
                .collect();
            let flows = aggregate_flows(&data.x, &data.x_counts, &thetas)?;
            let coupling = flows.weighted.normalized();
            artifact::write_matrix(&dir.join("coupling.csv"), &self.meta, "origin", &coupling.t)?;

            let draws_path = dir.join("coupling_draws.csv");
            let significant = if draws_path.exists() {
                let (_, _, d) = artifact::read_rows(&draws_path)?;
                let draws: Vec<Array2<f64>> = d
                    .outer_iter()
                    .map(|r| Array2::from_shape_fn((k, k), |(o, t)| r[o * k + t]))
                    .collect();
                flow_significance(
                    &draws,
                    &coupling.row_marginal,
                    &coupling.col_marginal,
                    self.cfg.trajectory.significance_threshold,
                )?
            } else {
                // point estimate: above the uniform-mixing benchmark
                Array2::from_shape_fn((k, k), |(o, t)| {
                    coupling.t[[o, t]] > coupling.row_marginal[o] * coupling.col_marginal[t] * (1.0 + 1e-12)
                })
            };
            let sankey = Sankey {
                nodes: [p0, p1]
                    .iter()
                    .enumerate()
                    .flat_map(|(side, p)| {
                        (0..k).map(move |t| SankeyNode {
                            id: side * k + t,
                            topic: t,
                            period: p.label(),
                        })
                    })
                    .collect(),
                links: (0..k)
                    .flat_map(|o| (0..k).map(move |t| (o, t)))
                    .filter(|&(o, t)| coupling.t[[o, t]] > 0.0)
                    .map(|(o, t)| SankeyLink {
                        source: o,
                        target: k + t,
                        value: coupling.t[[o, t]],
                        significant: significant[[o, t]],
                    })
                    .collect(),
            };
            artifact::write_json(&dir.join("sankey.json"), &self.meta, "sankey", &sankey)?;
        }
        Ok(())
    }

    // ---- iot ----

    fn iot(&self) -> Result<()> {
        for (p0, p1) in self.pairs() {
            let dir = self.pair_dir(p0, p1);
            let t = artifact::read_matrix(&dir.join("coupling.csv"))?;
            let nu = artifact::read_matrix(&dir.join("nu.csv"))?;
            let x: Vec<f64> = t.rows().into_iter().map(|r| r.sum()).collect();
            let y: Vec<f64> = t.columns().into_iter().map(|c| c.sum()).collect();
            let mut sampler = self.cfg.iot.sampler;
            sampler.seed = self.seed_for(&format!("iot:{}", label_pair(p0, p1)));
            if self.cfg.iot.n_pseudo_from_data {
                let (_, late) = self.load_portfolio(p1)?;
                sampler.n_pseudo = late.sum();
            }
            let post = metro_mc(&t, &x, &y, &nu, sampler)?;
            let mean = post.mean_cost();
            let cells = post.cell_summaries();
            let k = self.cfg.k;
            let corr = cost_gap_correlation(
                &mean,
                &nu,
                self.cfg.iot.permutations,
                self.seed_for(&format!("cost-gap:{}", label_pair(p0, p1))),
            )?;
            let out = CostPosterior {
                c0: post.c0,
                alpha: post.alpha,
                epsilon: post.epsilon,
                n_pseudo: post.n_pseudo,
                acceptance_rate: post.acceptance_rate,
                beta_acceptance_rate: post.beta_acceptance_rate,
                draws: post.cost_draws.len(),
                sinkhorn_failures: post.sinkhorn_failures,
                beta: post.beta_summary().into(),
                beta_mcse: post.beta_mcse,
                mean_cost: artifact::nested(&mean),
                cells: (0..k)
                    .flat_map(|o| (0..k).map(move |d| (o, d)))
                    .map(|(o, d)| CostCell {
                        origin: o,
                        target: d,
                        summary: cells[[o, d]].into(),
                        mcse_normalized: post.mcse_normalized[[o, d]],
                    })
                    .collect(),
                cost_gap: corr,
            };
            artifact::write_json(&dir.join("cost_posterior.json"), &self.meta, "cost_posterior", &out)?;
        }
        Ok(())
    }

    // ---- metrics ----

    fn metrics(&self) -> Result<()> {
        let mut period_portfolios = Vec::new();
        let mut ids0: Option<Vec<String>> = None;
        for &p in &self.periods {
            let (ids, m) = self.load_portfolio(p)?;
            if let Some(prev) = &ids0 {
                if *prev != ids {
                    return Err(Error::invalid("portfolios list different authors across periods"));
                }
            }
            ids0 = Some(ids);
            period_portfolios.push(normalize_rows(&m));
        }
        let ids = ids0.unwrap_or_default();
        for (i, (p0, p1)) in self.pairs().into_iter().enumerate() {
            let dir = self.pair_dir(p0, p1);
            let cp: CostPosterior = artifact::read_json(&dir.join("cost_posterior.json"))?;
            let cost = artifact::from_nested(&cp.mean_cost)?;
            let report = change_scores(&ids, &period_portfolios[i], &period_portfolios[i + 1], &cost)?;
            write_changes(&dir.join("changes.csv"), &self.meta, &report)?;
        }

        let (_, docs) = self.load_cohort()?;
        let mixtures: Vec<Vec<Vec<f64>>> = self
            .periods
            .iter()
            .map(|&p| {
                docs_in_period(&docs, p)
                    .into_iter()
                    .filter_map(|d| {
                        let total: u64 = d.topic_counts.iter().sum();
                        (total > 0).then(|| d.topic_counts.iter().map(|&c| c as f64 / total as f64).collect())
                    })
                    .collect()
            })
            .collect();
        let trend = diversity_trend(
            &period_portfolios,
            Some(&mixtures),
            self.cfg.metrics.permutations,
            self.seed_for("diversity-trend"),
        )?;

        let citations = citation_counts(&docs, self.cfg.k);
        let npmi_written = if citations.sum() > 0.0 {
            let m = npmi_citation(&citations)?;
            let masked = m.values.mapv(|v| if v.is_finite() { v } else { f64::NAN });
            artifact::write_matrix(&self.out.join("npmi.csv"), &self.meta, "citing", &masked)?;
            true
        } else {
            let stale = self.out.join("npmi.csv");
            if stale.exists() {
                std::fs::remove_file(&stale).map_err(|e| Error::io(&stale, e))?;
            }
            false
        };
        artifact::write_json(
            &self.out.join("metrics.json"),
            &self.meta,
            "metrics",
            &MetricsSummary {
                periods: self.periods.iter().map(|p| p.label()).collect(),
                diversity: trend,
                npmi_written,
            },
        )
    }

    // ---- regress ----

    fn regression_records(&self, p0: Period, p1: Period) -> Result<Vec<AuthorRecord>> {
        let dir = self.pair_dir(p0, p1);
        let changes = read_changes(&dir.join("changes.csv"))?;
        let cap_path = dir.join("capital.csv");
        let cap = read_capital(&cap_path, self.cfg.k)?;
        let cov_path = dir.join("covariates.csv");
        let (_, cov_rows) = artifact::read_csv(&cov_path)?;
        let (ids, x) = self.load_portfolio(p0)?;
        if ids != cap.ids || ids.len() != changes.len() || ids.len() != cov_rows.len() {
            return Err(Error::invalid("regression inputs list different authors"));
        }
        let mut out = Vec::with_capacity(ids.len());
        for (a, id) in ids.iter().enumerate() {
            let ch = &changes[a];
            let cov = &cov_rows[a];
            if ch.author_id != *id || cov[0] != *id {
                return Err(Error::invalid(format!("author order mismatch at {id}")));
            }
            let (area, tied) = primary_area(&x.row(a).to_vec());
            out.push(AuthorRecord {
                author_id: id.clone(),
                primary_area: area,
                primary_area_tied: tied,
                change_score: ch.change_score,
                cognitive_distance: ch.cognitive_distance,
                entered_any: ch.entered_any,
                exited_any: ch.exited_any,
                intellectual_diversity: cap.scalars[a][0],
                stirling_diversity: cap.scalars[a][4],
                excess_social_diversity: cap.scalars[a][2],
                power: cap.scalars[a][3],
                brokerage: cap.scalars[a][5],
                stable_affiliation: parse_bool(&cov_path, &cov[2])?,
                academic_age: artifact::parse_f64(&cov_path, &cov[1])?,
                productivity_coauthored: artifact::parse_f64(&cov_path, &cov[3])?,
                productivity_solo: artifact::parse_f64(&cov_path, &cov[4])?,
            });
        }
        Ok(out)
    }

    fn regress(&self) -> Result<()> {
        for (p0, p1) in self.pairs() {
            let dir = self.pair_dir(p0, p1);
            let records = self.regression_records(p0, p1)?;
            let mut fits: Vec<(String, RegressionFit)> = Vec::new();
            let mut skipped: Vec<String> = Vec::new();
            let mut dropped: Vec<String> = Vec::new();
            for variant in &self.cfg.regression.variants {
                let (predictors, constant): (Vec<Predictor>, Vec<Predictor>) =
                    variant_predictors(*variant).into_iter().partition(|&p| {
                        let first = records[0].predictor(p);
                        records.iter().any(|r| r.predictor(p) != first)
                    });
                for p in constant {
                    log::warn!("{}: predictor {} is constant; dropped", variant.name(), p.name());
                    dropped.push(format!("{}/{}", variant.name(), p.name()));
                }
                let base = RegressionSpec {
                    predictors,
                    ..RegressionSpec::default()
                };
                let rcfg = RegressionConfig {
                    hmc: self.cfg.regression.hmc,
                    seed: self.seed_for(&format!("regress:{}:{}", label_pair(p0, p1), variant.name())),
                };
                let change = fit_change_regression(&records, &base, &rcfg)?;
                fits.push((variant.name().into(), change));
                for outcome in [Outcome::EnteredAny, Outcome::ExitedAny] {
                    let spec = RegressionSpec {
                        outcome,
                        ..base.clone()
                    };
                    match direct_vs_total_effect(&records, &spec, &rcfg) {
                        Ok(DirectTotal { direct, total }) => {
                            fits.push((variant.name().into(), direct));
                            fits.push((variant.name().into(), total));
                        }
                        Err(Error::InvalidInput(msg)) if msg.contains("single class") => {
                            log::warn!("{} {}: {msg}; skipped", variant.name(), outcome.name());
                            skipped.push(format!("{}/{}", variant.name(), outcome.name()));
                        }
                        Err(e) => return Err(e),
                    }
                }
            }
            let mut rows = Vec::new();
            for (variant, f) in &fits {
                for c in &f.coefficients {
                    rows.push(vec![
                        format!("{variant}/{}", f.model_id),
                        c.name.clone(),
                        artifact::fmt(c.mean),
                        artifact::fmt(c.sd),
                        artifact::fmt(c.q025),
                        artifact::fmt(c.q975),
                        c.significant.to_string(),
                    ]);
                }
            }
            artifact::write_csv(
                &dir.join("effects.csv"),
                &self.meta,
                &["model_id", "coefficient", "mean", "sd", "q2.5", "q97.5", "significant"].map(String::from),
                &rows,
            )?;
            let tagged: Vec<TaggedFit> = fits
                .into_iter()
                .map(|(variant, fit)| TaggedFit { variant, fit })
                .collect();
            artifact::write_json(
                &dir.join("regression.json"),
                &self.meta,
                "regression",
                &RegressionSummary {
                    fits: tagged,
                    skipped,
                    dropped,
                },
            )?;
        }
        Ok(())
    }

    // ---- synth ----

    fn synth(&self) -> Result<()> {
        let scfg = self.cfg.synth_config();
        let cohort = crate::synth::generate_cohort(&scfg)?;
        let dest = &self.cfg.inputs.documents;
        if let Some(dir) = dest.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        cohort.write_documents(dest)?;
        artifact::write_json(
            &self.out.join("synth_truth.json"),
            &self.meta,
            "synth_truth",
            &cohort.truth,
        )
    }

    // ---- report ----

    fn report(&self) -> Result<()> {
        let mut pairs = Vec::new();
        for (p0, p1) in self.pairs() {
            let dir = self.pair_dir(p0, p1);
            let params: FitParams = artifact::read_json(&dir.join("params.json"))?;
            let coupling = artifact::read_matrix(&dir.join("coupling.csv"))?;
            let sankey: Sankey = artifact::read_json(&dir.join("sankey.json"))?;
            let cost: CostPosterior = artifact::read_json(&dir.join("cost_posterior.json"))?;
            let changes = read_changes(&dir.join("changes.csv"))?;
            let regression: RegressionSummary = artifact::read_json(&dir.join("regression.json"))?;
            let cv_path = dir.join("cv.json");
            let cv: Option<CvSummary> = if cv_path.exists() {
                Some(artifact::read_json(&cv_path)?)
            } else {
                None
            };
            let c: Vec<f64> = changes.iter().map(|r| r.change_score).collect();
            let d: Vec<f64> = changes.iter().map(|r| r.cognitive_distance).collect();
            let k = coupling.nrows();
            let diag: f64 = (0..k).map(|i| coupling[[i, i]]).sum();
            pairs.push(PairReport {
                pair: label_pair(p0, p1),
                params,
                coupling: artifact::nested(&coupling),
                coupling_diagonal_mass: diag,
                sankey,
                cost_posterior: cost,
                change_quartiles: Quartiles::of(&c),
                distance_quartiles: Quartiles::of(&d),
                entered_fraction: changes.iter().filter(|r| r.entered_any).count() as f64 / changes.len().max(1) as f64,
                exited_fraction: changes.iter().filter(|r| r.exited_any).count() as f64 / changes.len().max(1) as f64,
                cross_validation: cv,
                regression,
            });
        }
        let metrics: MetricsSummary = artifact::read_json(&self.out.join("metrics.json"))?;
        let cohort: Cohort = artifact::read_json(&self.out.join("cohort.json"))?;
        artifact::write_json(
            &self.out.join("report.json"),
            &self.meta,
            "report",
            &Report {
                authors: cohort.authors.len(),
                documents: cohort.documents,
                periods: cohort.periods.iter().map(|p| p.label()).collect(),
                pairs,
                metrics,
            },
        )
    }
}

fn variant_predictors(v: MeasureVariant) -> Vec<Predictor> {
    RegressionSpec::default()
        .predictors
        .into_iter()
        .map(|p| match (v, p) {
            (MeasureVariant::Stirling, Predictor::IntellectualDiversity) => Predictor::StirlingDiversity,
            (MeasureVariant::Brokerage, Predictor::Power) => Predictor::Brokerage,
            (_, p) => p,
        })
        .collect()
}

fn normalize_rows(m: &Array2<f64>) -> Array2<f64> {
    let mut out = m.clone();
    for mut row in out.rows_mut() {
        let s = row.sum();
        if s > 0.0 {
            row /= s;
        }
    }
    out
}

/// `N[k][k']`: citations from documents whose largest topic is k to cited
/// documents whose largest topic is k'. Citations to unknown ids are ignored.
fn citation_counts(docs: &[DocumentRecord], k: usize) -> Array2<f64> {
    let topic: BTreeMap<&str, usize> = docs
        .iter()
        .filter(|d| d.topic_counts.iter().any(|&c| c > 0))
        .map(|d| {
            (
                d.doc_id.as_str(),
                primary_area(&d.topic_counts.iter().map(|&c| c as f64).collect::<Vec<_>>()).0,
            )
        })
        .collect();
    let mut n = Array2::zeros((k, k));
    for d in docs {
        let Some(&from) = topic.get(d.doc_id.as_str()) else {
            continue;
        };
        for c in &d.citations {
            if let Some(&to) = topic.get(c.as_str()) {
                n[[from, to]] += 1.0;
            }
        }
    }
    n
}

struct CapitalTable {
    ids: Vec<String>,
    intellectual: Array2<f64>,
    social: Array2<f64>,
    /// D_I, D_S, D_S_excess, power, stirling, brokerage
    scalars: Vec<[f64; 6]>,
}

fn write_capital(path: &Path, meta: &Meta, k: usize, profiles: &[CapitalProfile]) -> Result<()> {
    let mut header = vec!["author_id".to_string()];
    header.extend((0..k).map(|t| format!("I_{t}")));
    header.extend((0..k).map(|t| format!("S_{t}")));
    header.extend(["D_I", "D_S", "D_S_excess", "power", "stirling", "brokerage"].map(String::from));
    let rows: Vec<Vec<String>> = profiles
        .iter()
        .map(|p| {
            let mut r = vec![p.author_id.clone()];
            r.extend(p.intellectual.iter().chain(&p.social).map(|v| artifact::fmt(*v)));
            r.extend(
                [
                    p.intellectual_diversity,
                    p.social_diversity,
                    p.excess_social_diversity,
                    p.power,
                    p.stirling_diversity,
                ]
                .iter()
                .map(|v| artifact::fmt(*v)),
            );
            r.push(p.brokerage.to_string());
            r
        })
        .collect();
    artifact::write_csv(path, meta, &header, &rows)
}

fn read_capital(path: &Path, k: usize) -> Result<CapitalTable> {
    let (header, ids, m) = artifact::read_rows(path)?;
    if header.len() != 1 + 2 * k + 6 {
        return Err(Error::Parse {
            location: path.display().to_string(),
            reason: format!("expected {} columns for K = {k}", 1 + 2 * k + 6),
        });
    }
    let n = ids.len();
    Ok(CapitalTable {
        intellectual: Array2::from_shape_fn((n, k), |(a, t)| m[[a, t]]),
        social: Array2::from_shape_fn((n, k), |(a, t)| m[[a, k + t]]),
        scalars: (0..n).map(|a| std::array::from_fn(|j| m[[a, 2 * k + j]])).collect(),
        ids,
    })
}

fn write_changes(path: &Path, meta: &Meta, report: &ChangeReport) -> Result<()> {
    let header = [
        "author_id",
        "c_a",
        "d_a",
        "entered_any",
        "exited_any",
        "entered_topics",
        "exited_topics",
    ]
    .map(String::from);
    let rows: Vec<Vec<String>> = report
        .records
        .iter()
        .map(|r| {
            vec![
                r.author_id.clone(),
                artifact::fmt(r.change_score),
                artifact::fmt(r.cognitive_distance),
                r.entered_any.to_string(),
                r.exited_any.to_string(),
                topic_list(&r.entered_topics),
                topic_list(&r.exited_topics),
            ]
        })
        .collect();
    artifact::write_csv(path, meta, &header, &rows)
}

struct ChangeRow {
    author_id: String,
    change_score: f64,
    cognitive_distance: f64,
    entered_any: bool,
    exited_any: bool,
}

fn read_changes(path: &Path) -> Result<Vec<ChangeRow>> {
    let (_, rows) = artifact::read_csv(path)?;
    rows.iter()
        .map(|r| {
            if r.len() < 5 {
                return Err(Error::Parse {
                    location: path.display().to_string(),
                    reason: "short row".into(),
                });
            }
            Ok(ChangeRow {
                author_id: r[0].clone(),
                change_score: artifact::parse_f64(path, &r[1])?,
                cognitive_distance: artifact::parse_f64(path, &r[2])?,
                entered_any: parse_bool(path, &r[3])?,
                exited_any: parse_bool(path, &r[4])?,
            })
        })
        .collect()
}

/// Point estimate or posterior summary of one parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub mean: f64,
    pub sd: Option<f64>,
    pub q025: Option<f64>,
    pub q50: Option<f64>,
    pub q975: Option<f64>,
}

impl ParamSummary {
    fn point(v: f64) -> Self {
        ParamSummary {
            mean: v,
            sd: None,
            q025: None,
            q50: None,
            q975: None,
        }
    }
}

impl From<Summary> for ParamSummary {
    fn from(s: Summary) -> Self {
        ParamSummary {
            mean: s.mean,
            sd: Some(s.sd),
            q025: Some(s.q025),
            q50: Some(s.q50),
            q975: Some(s.q975),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmcDiagnostics {
    pub max_rhat: f64,
    pub min_ess: f64,
    pub divergences: usize,
    pub mean_accept: Vec<f64>,
    pub step_sizes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitParams {
    pub inference: Inference,
    pub map_mode: Option<MapMode>,
    /// False for the pooled MAP, where σ is held at its prior mode.
    pub sigma_estimated: bool,
    pub converged: bool,
    pub log_posterior: Option<f64>,
    pub mu: Vec<Vec<ParamSummary>>,
    pub sigma: Vec<Vec<ParamSummary>>,
    pub gamma: Vec<Vec<ParamSummary>>,
    pub delta: Vec<Vec<ParamSummary>>,
    pub lambda: ParamSummary,
    pub lambda_prime: ParamSummary,
    pub delta0: ParamSummary,
    pub diagnostics: Option<HmcDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub folds: usize,
    pub model_mean_tv: f64,
    pub baseline_mean_tv: f64,
}

impl From<&CvReport> for CvSummary {
    fn from(r: &CvReport) -> Self {
        CvSummary {
            folds: r.fold.iter().max().map_or(0, |m| m + 1),
            model_mean_tv: r.model_mean,
            baseline_mean_tv: r.baseline_mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SankeyNode {
    pub id: usize,
    pub topic: usize,
    pub period: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SankeyLink {
    pub source: usize,
    pub target: usize,
    pub value: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sankey {
    pub nodes: Vec<SankeyNode>,
    pub links: Vec<SankeyLink>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostCell {
    pub origin: usize,
    pub target: usize,
    /// Summary of the normalized cost `c = C / C_0`.
    pub summary: ParamSummary,
    pub mcse_normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostPosterior {
    pub c0: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub n_pseudo: f64,
    pub acceptance_rate: f64,
    pub beta_acceptance_rate: f64,
    pub draws: usize,
    pub sinkhorn_failures: usize,
    pub beta: ParamSummary,
    pub beta_mcse: f64,
    /// `C_0 E[c]`.
    pub mean_cost: Vec<Vec<f64>>,
    pub cells: Vec<CostCell>,
    pub cost_gap: CostGapCorrelation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub periods: Vec<String>,
    pub diversity: DiversityTrend,
    pub npmi_written: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggedFit {
    pub variant: String,
    pub fit: RegressionFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionSummary {
    pub fits: Vec<TaggedFit>,
    /// Binary outcomes with a single class.
    pub skipped: Vec<String>,
    /// Predictors constant over the cohort.
    pub dropped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub pair: String,
    pub params: FitParams,
    pub coupling: Vec<Vec<f64>>,
    pub coupling_diagonal_mass: f64,
    pub sankey: Sankey,
    pub cost_posterior: CostPosterior,
    pub change_quartiles: Quartiles,
    pub distance_quartiles: Quartiles,
    pub entered_fraction: f64,
    pub exited_fraction: f64,
    pub cross_validation: Option<CvSummary>,
    pub regression: RegressionSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub authors: usize,
    pub documents: usize,
    pub periods: Vec<String>,
    pub pairs: Vec<PairReport>,
    pub metrics: MetricsSummary,
}
