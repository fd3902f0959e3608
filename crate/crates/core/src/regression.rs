//! Bayesian linear and logistic regressions of portfolio change on capital
//! measures, with Laplace-shrunk primary-area effects, sampled by HMC.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmc::{self, HmcConfig, LogDensity};
use crate::rng::substream;
use crate::stats::{self, Summary};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    ChangeScore,
    CognitiveDistance,
    EnteredAny,
    ExitedAny,
}

impl Outcome {
    pub fn is_binary(self) -> bool {
        matches!(self, Outcome::EnteredAny | Outcome::ExitedAny)
    }

    pub fn name(self) -> &'static str {
        match self {
            Outcome::ChangeScore => "change_score",
            Outcome::CognitiveDistance => "cognitive_distance",
            Outcome::EnteredAny => "entered_any",
            Outcome::ExitedAny => "exited_any",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predictor {
    IntellectualDiversity,
    StirlingDiversity,
    ExcessSocialDiversity,
    Power,
    Brokerage,
    StableAffiliation,
    AcademicAge,
    ProductivityCoauthored,
    ProductivitySolo,
}

impl Predictor {
    pub fn name(self) -> &'static str {
        match self {
            Predictor::IntellectualDiversity => "intellectual_diversity",
            Predictor::StirlingDiversity => "stirling_diversity",
            Predictor::ExcessSocialDiversity => "excess_social_diversity",
            Predictor::Power => "power",
            Predictor::Brokerage => "brokerage",
            Predictor::StableAffiliation => "stable_affiliation",
            Predictor::AcademicAge => "academic_age",
            Predictor::ProductivityCoauthored => "productivity_coauthored",
            Predictor::ProductivitySolo => "productivity_solo",
        }
    }

    pub fn is_binary(self) -> bool {
        self == Predictor::StableAffiliation
    }

    pub fn is_productivity(self) -> bool {
        matches!(self, Predictor::ProductivityCoauthored | Predictor::ProductivitySolo)
    }
}

/// One author's outcomes and covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthorRecord {
    pub author_id: String,
    /// argmax of the initial portfolio.
    pub primary_area: usize,
    pub primary_area_tied: bool,
    pub change_score: f64,
    pub cognitive_distance: f64,
    pub entered_any: bool,
    pub exited_any: bool,
    pub intellectual_diversity: f64,
    pub stirling_diversity: f64,
    pub excess_social_diversity: f64,
    pub power: f64,
    pub brokerage: f64,
    pub stable_affiliation: bool,
    pub academic_age: f64,
    pub productivity_coauthored: f64,
    pub productivity_solo: f64,
}

impl AuthorRecord {
    pub fn predictor(&self, p: Predictor) -> f64 {
        match p {
            Predictor::IntellectualDiversity => self.intellectual_diversity,
            Predictor::StirlingDiversity => self.stirling_diversity,
            Predictor::ExcessSocialDiversity => self.excess_social_diversity,
            Predictor::Power => self.power,
            Predictor::Brokerage => self.brokerage,
            Predictor::StableAffiliation => f64::from(u8::from(self.stable_affiliation)),
            Predictor::AcademicAge => self.academic_age,
            Predictor::ProductivityCoauthored => self.productivity_coauthored,
            Predictor::ProductivitySolo => self.productivity_solo,
        }
    }

    pub fn outcome(&self, o: Outcome) -> f64 {
        match o {
            Outcome::ChangeScore => self.change_score,
            Outcome::CognitiveDistance => self.cognitive_distance,
            Outcome::EnteredAny => f64::from(u8::from(self.entered_any)),
            Outcome::ExitedAny => f64::from(u8::from(self.exited_any)),
        }
    }
}

/// Index of the largest entry, lowest index on ties, and whether a tie occurred.
pub fn primary_area(x: &[f64]) -> (usize, bool) {
    let mut best = 0;
    for (k, &v) in x.iter().enumerate() {
        if v > x[best] {
            best = k;
        }
    }
    let tied = x.iter().enumerate().any(|(k, &v)| k != best && v == x[best]);
    (best, tied)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegressionSpec {
    pub outcome: Outcome,
    pub predictors: Vec<Predictor>,
    pub area_control: bool,
    /// Keep productivity predictors (direct effect) or drop them (total effect).
    pub adjust_productivity: bool,
}

impl Default for RegressionSpec {
    fn default() -> Self {
        RegressionSpec {
            outcome: Outcome::ChangeScore,
            predictors: vec![
                Predictor::IntellectualDiversity,
                Predictor::ExcessSocialDiversity,
                Predictor::Power,
                Predictor::StableAffiliation,
                Predictor::AcademicAge,
                Predictor::ProductivityCoauthored,
                Predictor::ProductivitySolo,
            ],
            area_control: true,
            adjust_productivity: true,
        }
    }
}

impl RegressionSpec {
    pub fn active_predictors(&self) -> Vec<Predictor> {
        self.predictors
            .iter()
            .copied()
            .filter(|p| self.adjust_productivity || !p.is_productivity())
            .collect()
    }

    pub fn model_id(&self) -> String {
        let effect = if self.adjust_productivity { "direct" } else { "total" };
        format!("{}:{effect}", self.outcome.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[derive(Default)]
pub struct RegressionConfig {
    pub hmc: HmcConfig,
    pub seed: u64,
}

/// Standardized design ready for fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub names: Vec<String>,
    /// One standardized column per predictor.
    pub columns: Vec<Vec<f64>>,
    pub outcome: Vec<f64>,
    pub binary: bool,
    pub area: Vec<usize>,
    /// 0 when area control is off.
    pub num_areas: usize,
    pub area_ties: usize,
}

const MIN_AUTHORS: usize = 20;

pub fn build_design(records: &[AuthorRecord], spec: &RegressionSpec) -> Result<Design> {
    if records.len() < MIN_AUTHORS {
        return Err(Error::invalid(format!(
            "regression needs at least {MIN_AUTHORS} authors, got {}",
            records.len()
        )));
    }
    let preds = spec.active_predictors();
    let mut names = Vec::with_capacity(preds.len());
    let mut columns = Vec::with_capacity(preds.len());
    for p in &preds {
        let raw: Vec<f64> = records.iter().map(|r| r.predictor(*p)).collect();
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("predictor {} has non-finite values", p.name())));
        }
        if stats::sample_sd(&raw) == 0.0 {
            return Err(Error::invalid(format!("predictor {} has zero variance", p.name())));
        }
        names.push(p.name().to_string());
        columns.push(if p.is_binary() { raw } else { stats::standardize(&raw)? });
    }
    rank_check(&names, &columns)?;

    let raw_y: Vec<f64> = records.iter().map(|r| r.outcome(spec.outcome)).collect();
    let binary = spec.outcome.is_binary();
    let outcome = if binary {
        let pos = raw_y.iter().filter(|&&v| v == 1.0).count();
        if pos == 0 || pos == raw_y.len() {
            return Err(Error::invalid(format!(
                "outcome {} has a single class",
                spec.outcome.name()
            )));
        }
        raw_y
    } else {
        stats::standardize(&raw_y)
            .map_err(|_| Error::invalid(format!("outcome {} has zero variance", spec.outcome.name())))?
    };

    let (area, num_areas) = if spec.area_control {
        let area: Vec<usize> = records.iter().map(|r| r.primary_area).collect();
        let n = area.iter().max().map_or(0, |m| m + 1);
        (area, n)
    } else {
        (vec![0; records.len()], 0)
    };
    let area_ties = records.iter().filter(|r| r.primary_area_tied).count();
    if spec.area_control && area_ties > 0 {
        log::info!("{area_ties} author(s) with tied primary area; lowest index used");
    }
    Ok(Design {
        names,
        columns,
        outcome,
        binary,
        area,
        num_areas,
        area_ties,
    })
}

/// Modified Gram-Schmidt over an intercept plus `columns`; a column whose
/// residual vanishes is reported with the earlier columns that span it.
pub fn rank_check(names: &[String], columns: &[Vec<f64>]) -> Result<()> {
    let n = columns.first().map_or(0, |c| c.len());
    let mut all_names = vec!["intercept".to_string()];
    all_names.extend(names.iter().cloned());
    let mut all_cols = vec![vec![1.0; n]];
    all_cols.extend(columns.iter().cloned());

    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut kept: Vec<usize> = Vec::new();
    // r[i][j]: coefficient of basis i in kept column j
    let mut r: Vec<Vec<f64>> = Vec::new();
    for (j, col) in all_cols.iter().enumerate() {
        let norm0 = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut v = col.clone();
        let mut coef = Vec::with_capacity(basis.len());
        for q in &basis {
            let c: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(q).for_each(|(vi, qi)| *vi -= c * qi);
            coef.push(c);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= 1e-8 * norm0.max(1e-300) {
            // solve R a = coef by back substitution
            let m = kept.len();
            let mut a = vec![0.0; m];
            for i in (0..m).rev() {
                let s: f64 = (i + 1..m).map(|t| r[i][t] * a[t]).sum();
                a[i] = (coef[i] - s) / r[i][i];
            }
            let scale = a.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            let with = kept
                .iter()
                .zip(&a)
                .filter(|(_, &ai)| ai.abs() > 1e-6 * scale.max(1e-12))
                .map(|(&idx, _)| all_names[idx].clone())
                .collect();
            return Err(Error::RankDeficient {
                column: all_names[j].clone(),
                with,
            });
        }
        for (i, c) in coef.into_iter().enumerate() {
            r[i].push(c);
        }
        let mut row = vec![0.0; kept.len()];
        row.push(norm);
        r.push(row);
        basis.push(v.into_iter().map(|x| x / norm).collect());
        kept.push(j);
    }
    Ok(())
}

/// Predictors that perfectly split a binary outcome on their own.
pub fn separated_predictors(design: &Design) -> Vec<String> {
    if !design.binary {
        return Vec::new();
    }
    let mut out = Vec::new();
    for (name, col) in design.names.iter().zip(&design.columns) {
        let (mut lo0, mut hi0, mut lo1, mut hi1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for (&x, &y) in col.iter().zip(&design.outcome) {
            if y == 1.0 {
                lo1 = lo1.min(x);
                hi1 = hi1.max(x);
            } else {
                lo0 = lo0.min(x);
                hi0 = hi0.max(x);
            }
        }
        if hi0 < lo1 || hi1 < lo0 {
            out.push(name.clone());
        }
    }
    out
}

/// Unconstrained layout: `[intercept | slopes | area effects | ln τ | ln σ]`,
/// where the area block and ln τ exist only with area control and ln σ only
/// for continuous outcomes.
struct Posterior<'a> {
    d: &'a Design,
}

impl Posterior<'_> {
    fn p(&self) -> usize {
        self.d.columns.len()
    }

    fn area_off(&self) -> usize {
        1 + self.p()
    }

    fn tau_idx(&self) -> Option<usize> {
        (self.d.num_areas > 0).then(|| self.area_off() + self.d.num_areas)
    }

    fn sigma_idx(&self) -> Option<usize> {
        (!self.d.binary).then(|| self.area_off() + self.d.num_areas + usize::from(self.d.num_areas > 0))
    }

    fn linear_predictor(&self, q: &[f64], a: usize) -> f64 {
        let mut eta = q[0];
        for (j, col) in self.d.columns.iter().enumerate() {
            eta += q[1 + j] * col[a];
        }
        if self.d.num_areas > 0 {
            eta += q[self.area_off() + self.d.area[a]];
        }
        eta
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl LogDensity for Posterior<'_> {
    fn dim(&self) -> usize {
        self.area_off() + self.d.num_areas + usize::from(self.d.num_areas > 0) + usize::from(!self.d.binary)
    }

    fn log_density_grad(&self, q: &[f64], g: &mut [f64]) -> f64 {
        g.iter_mut().for_each(|v| *v = 0.0);
        let p = self.p();
        let ao = self.area_off();
        let sigma = self.sigma_idx().map(|i| q[i].exp());
        let mut lp = 0.0;
        let mut g_ls = 0.0;
        for a in 0..self.d.outcome.len() {
            let eta = self.linear_predictor(q, a);
            let y = self.d.outcome[a];
            // d log p / d eta
            let ge = match sigma {
                Some(s) => {
                    let r = (y - eta) / s;
                    lp += -0.5 * r * r - q[self.sigma_idx().unwrap()] - HALF_LN_2PI;
                    g_ls += r * r - 1.0;
                    r / s
                }
                None => {
                    lp += y * eta - softplus(eta);
                    y - sigmoid(eta)
                }
            };
            g[0] += ge;
            for (j, col) in self.d.columns.iter().enumerate() {
                g[1 + j] += ge * col[a];
            }
            if self.d.num_areas > 0 {
                g[ao + self.d.area[a]] += ge;
            }
        }
        // N(0, 1) on intercept and slopes
        for j in 0..=p {
            lp += -0.5 * q[j] * q[j] - HALF_LN_2PI;
            g[j] -= q[j];
        }
        if let Some(ti) = self.tau_idx() {
            let (u, tau) = (q[ti], q[ti].exp());
            let mut g_u = 0.0;
            for m in 0..self.d.num_areas {
                let v = q[ao + m];
                lp += u - std::f64::consts::LN_2 - tau * v.abs();
                g[ao + m] -= tau * v.signum();
                g_u += 1.0 - tau * v.abs();
            }
            // Exp(1) on τ, with the log Jacobian
            lp += u - tau;
            g[ti] = g_u + 1.0 - tau;
        }
        if let Some(si) = self.sigma_idx() {
            let (u, s) = (q[si], q[si].exp());
            lp += u - s;
            g[si] = g_ls + 1.0 - s;
        }
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        lp
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
    /// The 95% interval excludes zero.
    pub significant: bool,
    pub prob_positive: f64,
}

impl Coefficient {
    fn from_draws(name: String, draws: &[f64]) -> Self {
        let s = Summary::from_samples(draws);
        Coefficient {
            name,
            mean: s.mean,
            sd: s.sd,
            q025: s.q025,
            q975: s.q975,
            significant: !s.covers(0.0),
            prob_positive: draws.iter().filter(|&&v| v > 0.0).count() as f64 / draws.len() as f64,
        }
    }

    pub fn covers(&self, v: f64) -> bool {
        self.q025 <= v && v <= self.q975
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub model_id: String,
    pub outcome: Outcome,
    pub n: usize,
    /// Intercept, slopes, area effects, then τ and σ where present.
    pub coefficients: Vec<Coefficient>,
    /// Only for continuous outcomes.
    pub r2: Option<f64>,
    pub max_rhat: f64,
    pub min_ess: f64,
    pub divergences: usize,
    pub separated: Vec<String>,
    pub area_ties: usize,
}

impl RegressionFit {
    pub fn coefficient(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.name == name)
    }

    /// Slope coefficients only.
    pub fn slopes(&self) -> impl Iterator<Item = &Coefficient> {
        self.coefficients
            .iter()
            .filter(|c| c.name != "intercept" && !c.name.starts_with("area[") && c.name != "tau" && c.name != "sigma")
    }
}

fn model_seed(seed: u64, model_id: &str) -> u64 {
    substream(seed, &format!("regression:{model_id}")).next_u64()
}

/// HMC fit of one design.
pub fn fit_design(
    design: &Design,
    model_id: &str,
    outcome: Outcome,
    config: &RegressionConfig,
) -> Result<RegressionFit> {
    let post = Posterior { d: design };
    let dim = post.dim();
    let separated = separated_predictors(design);
    for name in &separated {
        log::warn!("{model_id}: complete separation on `{name}`; its coefficient is prior-driven");
    }
    let hmc_cfg = HmcConfig {
        seed: model_seed(config.seed, model_id),
        ..config.hmc
    };
    let tau_idx = post.tau_idx();
    let sigma_idx = post.sigma_idx();
    let monitor = |q: &[f64]| -> Vec<f64> {
        let mut v = q.to_vec();
        for i in [tau_idx, sigma_idx].into_iter().flatten() {
            v[i] = q[i].exp();
        }
        v
    };
    let run = hmc::sample(&post, &vec![0.0; dim], &hmc_cfg, monitor, |_| ())?;

    let mut names = vec!["intercept".to_string()];
    names.extend(design.names.iter().cloned());
    names.extend((0..design.num_areas).map(|m| format!("area[{m}]")));
    if tau_idx.is_some() {
        names.push("tau".into());
    }
    if sigma_idx.is_some() {
        names.push("sigma".into());
    }
    let coefficients: Vec<Coefficient> = names
        .into_iter()
        .enumerate()
        .map(|(j, name)| Coefficient::from_draws(name, &run.pooled(j)))
        .collect();

    let r2 = (!design.binary).then(|| {
        let means: Vec<f64> = coefficients.iter().map(|c| c.mean).collect();
        let resid: Vec<f64> = (0..design.outcome.len())
            .map(|a| design.outcome[a] - post.linear_predictor(&means, a))
            .collect();
        1.0 - population_variance(&resid) / population_variance(&design.outcome)
    });
    Ok(RegressionFit {
        model_id: model_id.to_string(),
        outcome,
        n: design.outcome.len(),
        coefficients,
        r2,
        max_rhat: run.max_rhat(),
        min_ess: run.min_ess(),
        divergences: run.divergences(),
        separated,
        area_ties: design.area_ties,
    })
}

fn population_variance(v: &[f64]) -> f64 {
    let m = stats::mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
}

/// Linear model of the standardized change score (or cognitive distance).
pub fn fit_change_regression(
    records: &[AuthorRecord],
    spec: &RegressionSpec,
    config: &RegressionConfig,
) -> Result<RegressionFit> {
    if spec.outcome.is_binary() {
        return Err(Error::invalid("fit_change_regression needs a continuous outcome"));
    }
    let design = build_design(records, spec)?;
    fit_design(&design, &spec.model_id(), spec.outcome, config)
}

/// Logistic model of entering or exiting at least one topic.
pub fn fit_enter_exit_regression(
    records: &[AuthorRecord],
    spec: &RegressionSpec,
    config: &RegressionConfig,
) -> Result<RegressionFit> {
    if !spec.outcome.is_binary() {
        return Err(Error::invalid("fit_enter_exit_regression needs a binary outcome"));
    }
    let design = build_design(records, spec)?;
    fit_design(&design, &spec.model_id(), spec.outcome, config)
}

fn fit_any(records: &[AuthorRecord], spec: &RegressionSpec, config: &RegressionConfig) -> Result<RegressionFit> {
    if spec.outcome.is_binary() {
        fit_enter_exit_regression(records, spec, config)
    } else {
        fit_change_regression(records, spec, config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectTotal {
    /// Productivity adjusted for.
    pub direct: RegressionFit,
    /// Productivity left out.
    pub total: RegressionFit,
}

/// The same model with and without the productivity mediators.
pub fn direct_vs_total_effect(
    records: &[AuthorRecord],
    spec: &RegressionSpec,
    config: &RegressionConfig,
) -> Result<DirectTotal> {
    let direct_spec = RegressionSpec {
        adjust_productivity: true,
        ..spec.clone()
    };
    let total_spec = RegressionSpec {
        adjust_productivity: false,
        ..spec.clone()
    };
    let (direct, total) = rayon::join(
        || fit_any(records, &direct_spec, config),
        || fit_any(records, &total_spec, config),
    );
    Ok(DirectTotal {
        direct: direct?,
        total: total?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn records(n: usize, seed: u64) -> Vec<AuthorRecord> {
        let mut rng = substream(seed, "regression-test");
        let mut z = || -> f64 { StandardNormal.sample(&mut rng) };
        (0..n)
            .map(|a| AuthorRecord {
                author_id: format!("a{a}"),
                primary_area: a % 3,
                primary_area_tied: false,
                change_score: 0.3 + 0.05 * z(),
                cognitive_distance: 0.1,
                entered_any: a % 2 == 0,
                exited_any: a % 3 == 0,
                intellectual_diversity: 2.0 + z(),
                stirling_diversity: 1.0 + z().abs(),
                excess_social_diversity: z(),
                power: z().exp(),
                brokerage: (3.0 * z().abs()).floor(),
                stable_affiliation: z() > 0.0,
                academic_age: 10.0 + 3.0 * z(),
                productivity_coauthored: 5.0 + z(),
                productivity_solo: 2.0 + z(),
            })
            .collect()
    }

    fn fd_check(design: &Design) {
        let post = Posterior { d: design };
        let mut rng = substream(4, "fd");
        let q: Vec<f64> = (0..post.dim()).map(|_| rng.random_range(-0.8..0.8)).collect();
        let mut g = vec![0.0; q.len()];
        post.log_density_grad(&q, &mut g);
        let mut scratch = vec![0.0; q.len()];
        for j in 0..q.len() {
            let h = 1e-6;
            let mut qp = q.clone();
            qp[j] += h;
            let fp = post.log_density_grad(&qp, &mut scratch);
            qp[j] -= 2.0 * h;
            let fm = post.log_density_grad(&qp, &mut scratch);
            let fd = (fp - fm) / (2.0 * h);
            assert!(
                (fd - g[j]).abs() <= 1e-5 * (1.0 + g[j].abs()),
                "coord {j}: {fd} vs {}",
                g[j]
            );
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let recs = records(60, 1);
        for outcome in [Outcome::ChangeScore, Outcome::EnteredAny] {
            for area_control in [true, false] {
                let spec = RegressionSpec {
                    outcome,
                    area_control,
                    ..Default::default()
                };
                fd_check(&build_design(&recs, &spec).unwrap());
            }
        }
    }

    #[test]
    fn design_is_standardized() {
        let d = build_design(&records(80, 2), &RegressionSpec::default()).unwrap();
        for (name, col) in d.names.iter().zip(&d.columns) {
            if name == "stable_affiliation" {
                assert!(col.iter().all(|&v| v == 0.0 || v == 1.0));
                continue;
            }
            assert_abs_diff_eq!(stats::mean(col), 0.0, epsilon = 1e-9);
            assert_abs_diff_eq!(stats::sample_sd(col), 1.0, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(stats::mean(&d.outcome), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn total_effect_drops_productivity() {
        let spec = RegressionSpec {
            adjust_productivity: false,
            ..Default::default()
        };
        assert!(spec.active_predictors().iter().all(|p| !p.is_productivity()));
        assert_eq!(spec.model_id(), "change_score:total");
    }

    #[test]
    fn collinear_columns_are_named() {
        let mut recs = records(40, 3);
        for r in &mut recs {
            r.productivity_solo = 2.0 * r.power - 1.0;
        }
        match build_design(&recs, &RegressionSpec::default()) {
            Err(Error::RankDeficient { column, with }) => {
                assert_eq!(column, "productivity_solo");
                assert!(with.contains(&"power".to_string()), "{with:?}");
            }
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn input_checks() {
        assert!(build_design(&records(10, 0), &RegressionSpec::default()).is_err());
        let mut recs = records(40, 0);
        recs.iter_mut().for_each(|r| r.academic_age = 7.0);
        assert!(build_design(&recs, &RegressionSpec::default()).is_err());
        let mut recs = records(40, 0);
        recs.iter_mut().for_each(|r| r.entered_any = true);
        let spec = RegressionSpec {
            outcome: Outcome::EnteredAny,
            ..Default::default()
        };
        assert!(build_design(&recs, &spec).is_err());
    }

    #[test]
    fn separation_is_flagged() {
        let mut recs = records(40, 5);
        for r in &mut recs {
            r.entered_any = r.power > 1.0;
        }
        let spec = RegressionSpec {
            outcome: Outcome::EnteredAny,
            ..Default::default()
        };
        let d = build_design(&recs, &spec).unwrap();
        assert_eq!(separated_predictors(&d), vec!["power".to_string()]);
    }

    #[test]
    fn primary_area_ties_take_lowest() {
        assert_eq!(primary_area(&[0.1, 0.4, 0.4, 0.1]), (1, true));
        assert_eq!(primary_area(&[0.5, 0.2, 0.3]), (0, false));
    }

    #[test]
    fn fit_is_deterministic_and_recovers_signal() {
        let mut recs = records(200, 6);
        let mut rng = substream(6, "signal");
        for r in &mut recs {
            let e: f64 = StandardNormal.sample(&mut rng);
            r.change_score = 0.4 + 0.05 * (r.intellectual_diversity - 2.0) + 0.02 * e;
        }
        let spec = RegressionSpec {
            predictors: vec![Predictor::IntellectualDiversity, Predictor::Power],
            area_control: false,
            ..Default::default()
        };
        let cfg = RegressionConfig {
            hmc: HmcConfig {
                chains: 2,
                warmup: 300,
                draws: 300,
                ..Default::default()
            },
            seed: 1,
        };
        let a = fit_change_regression(&recs, &spec, &cfg).unwrap();
        let b = fit_change_regression(&recs, &spec, &cfg).unwrap();
        assert_eq!(a, b);
        let div = a.coefficient("intellectual_diversity").unwrap();
        assert!(div.significant && div.mean > 0.8, "{div:?}");
        assert!(a.coefficient("power").unwrap().covers(0.0) || a.coefficient("power").unwrap().mean.abs() < 0.1);
        assert!(a.r2.unwrap() > 0.7);
    }
}
