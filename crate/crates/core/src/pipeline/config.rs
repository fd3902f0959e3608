//! Pipeline configuration (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::capital::ExpertiseRule;
use crate::corpus::{AuthorshipFilter, Period, DEFAULT_ENTROPY_THRESHOLD};
use crate::error::{Error, Result};
use crate::hmc::HmcConfig;
use crate::optim::LbfgsConfig;
use crate::regression::RegressionConfig;
use crate::synth::SynthConfig;
use crate::trajectory::{Inference, MapMode, Parametrization, TrajectoryConfig};
use crate::transport::MetroMcConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputPaths {
    pub documents: PathBuf,
    pub topic_word: Option<PathBuf>,
    pub affiliations: Option<PathBuf>,
}

impl Default for InputPaths {
    fn default() -> Self {
        InputPaths {
            documents: PathBuf::from("documents.jsonl"),
            topic_word: None,
            affiliations: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSettings {
    pub min_pubs_per_period: usize,
    pub authorship_filter: AuthorshipFilter,
    /// Tokens whose topic posterior has at least this entropy are discarded.
    pub entropy_threshold: f64,
    /// Year academic age is measured at; defaults to the end of the last period.
    pub reference_year: Option<i32>,
    pub expertise_rule: ExpertiseRule,
}

impl Default for CorpusSettings {
    fn default() -> Self {
        CorpusSettings {
            min_pubs_per_period: 5,
            authorship_filter: AuthorshipFilter::Any,
            entropy_threshold: DEFAULT_ENTROPY_THRESHOLD,
            reference_year: None,
            expertise_rule: ExpertiseRule::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectorySettings {
    pub inference: Inference,
    pub map_mode: MapMode,
    pub parametrization: Parametrization,
    pub lbfgs: LbfgsConfig,
    pub hmc: HmcConfig,
    pub max_count_per_author: Option<u64>,
    /// 0 skips cross-validation.
    pub cv_folds: usize,
    /// Posterior mass above the uniform-mixing benchmark needed to call a flow significant.
    pub significance_threshold: f64,
}

impl Default for TrajectorySettings {
    fn default() -> Self {
        let t = TrajectoryConfig::default();
        TrajectorySettings {
            inference: t.inference,
            map_mode: t.map_mode,
            parametrization: t.parametrization,
            lbfgs: t.lbfgs,
            hmc: t.hmc,
            max_count_per_author: t.max_count_per_author,
            cv_folds: 10,
            significance_threshold: 0.95,
        }
    }
}

impl TrajectorySettings {
    pub fn model_config(&self, seed: u64) -> TrajectoryConfig {
        TrajectoryConfig {
            inference: self.inference,
            map_mode: self.map_mode,
            parametrization: self.parametrization,
            lbfgs: self.lbfgs,
            hmc: self.hmc,
            max_count_per_author: self.max_count_per_author,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IotSettings {
    pub sampler: MetroMcConfig,
    /// Use the cohort's late-period keyword total as the pseudo-observation
    /// count instead of `sampler.n_pseudo`.
    pub n_pseudo_from_data: bool,
    /// Permutations for the cost–gap correlation test.
    pub permutations: usize,
}

impl Default for IotSettings {
    fn default() -> Self {
        IotSettings {
            sampler: MetroMcConfig {
                iters: 200_000,
                warmup: 20_000,
                ..MetroMcConfig::default()
            },
            n_pseudo_from_data: true,
            permutations: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSettings {
    pub permutations: usize,
}

impl Default for MetricsSettings {
    fn default() -> Self {
        MetricsSettings { permutations: 1000 }
    }
}

/// Which diversity and network measures enter a regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureVariant {
    /// Exp-entropy diversity and power.
    Baseline,
    /// Stirling diversity in place of exp-entropy.
    Stirling,
    /// Brokerage in place of power.
    Brokerage,
}

impl MeasureVariant {
    pub fn name(self) -> &'static str {
        match self {
            MeasureVariant::Baseline => "baseline",
            MeasureVariant::Stirling => "stirling",
            MeasureVariant::Brokerage => "brokerage",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressionSettings {
    pub hmc: HmcConfig,
    pub variants: Vec<MeasureVariant>,
}

impl Default for RegressionSettings {
    fn default() -> Self {
        RegressionSettings {
            hmc: RegressionConfig::default().hmc,
            variants: vec![
                MeasureVariant::Baseline,
                MeasureVariant::Stirling,
                MeasureVariant::Brokerage,
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Number of topics.
    pub k: usize,
    /// Ordered, non-overlapping periods such as `"2000-2009"`.
    pub periods: Vec<String>,
    pub output_dir: PathBuf,
    pub inputs: InputPaths,
    pub corpus: CorpusSettings,
    pub trajectory: TrajectorySettings,
    pub iot: IotSettings,
    pub metrics: MetricsSettings,
    pub regression: RegressionSettings,
    /// Used by the `synth` stage; `k`, `seed` and the first and last period
    /// are taken from the top level.
    pub synth: SynthConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            k: 15,
            periods: vec!["2000-2009".into(), "2015-2019".into()],
            output_dir: PathBuf::from("out"),
            inputs: InputPaths::default(),
            corpus: CorpusSettings::default(),
            trajectory: TrajectorySettings::default(),
            iot: IotSettings::default(),
            metrics: MetricsSettings::default(),
            regression: RegressionSettings::default(),
            synth: SynthConfig::default(),
        }
    }
}

fn cfg_err(field: &str, reason: impl Into<String>) -> Error {
    Error::config(field, reason)
}

impl PipelineConfig {
    /// Parse TOML, reporting the offending field path on failure.
    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let reason = inner.message().to_string();
            Error::config(if path == "." { "<root>" } else { &path }, reason)
        })
    }

    /// Read, parse, resolve paths relative to the file, and validate.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        fix(&mut self.inputs.documents);
        if let Some(p) = self.inputs.topic_word.as_mut() {
            fix(p);
        }
        if let Some(p) = self.inputs.affiliations.as_mut() {
            fix(p);
        }
    }

    pub fn parsed_periods(&self) -> Result<Vec<Period>> {
        let mut out = Vec::with_capacity(self.periods.len());
        for (i, s) in self.periods.iter().enumerate() {
            let p: Period = s
                .parse()
                .map_err(|e: Error| cfg_err(&format!("periods[{i}]"), e.to_string()))?;
            out.push(p);
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(cfg_err("k", "need at least two topics"));
        }
        let periods = self.parsed_periods()?;
        if periods.len() < 2 {
            return Err(cfg_err("periods", "need at least two periods"));
        }
        for (i, w) in periods.windows(2).enumerate() {
            if w[1].start <= w[0].end {
                return Err(cfg_err(
                    &format!("periods[{}]", i + 1),
                    "periods must be ordered and non-overlapping",
                ));
            }
        }
        if !(self.corpus.entropy_threshold > 0.0) {
            return Err(cfg_err("corpus.entropy_threshold", "must be positive"));
        }
        self.trajectory.hmc.validate().map_err(|e| prefix(e, "trajectory"))?;
        if self.trajectory.cv_folds == 1 {
            return Err(cfg_err("trajectory.cv_folds", "use 0 to skip or at least 2"));
        }
        if !(self.trajectory.significance_threshold > 0.0 && self.trajectory.significance_threshold <= 1.0) {
            return Err(cfg_err("trajectory.significance_threshold", "must lie in (0, 1]"));
        }
        let s = &self.iot.sampler;
        if s.iters <= s.warmup {
            return Err(cfg_err("iot.sampler.iters", "must exceed warmup"));
        }
        if s.thin == 0 {
            return Err(cfg_err("iot.sampler.thin", "must be at least 1"));
        }
        if !(s.epsilon > 0.0) {
            return Err(cfg_err("iot.sampler.epsilon", "must be positive"));
        }
        if matches!(s.alpha, Some(a) if !(a > 0.0)) {
            return Err(cfg_err("iot.sampler.alpha", "must be positive"));
        }
        if !(s.n_pseudo >= 0.0) {
            return Err(cfg_err("iot.sampler.n_pseudo", "must be non-negative"));
        }
        if !(s.potential_step >= 0.0 && s.potential_step.is_finite()) {
            return Err(cfg_err("iot.sampler.potential_step", "must be finite and non-negative"));
        }
        if !(0.0..=1.0).contains(&s.resplit_prob) {
            return Err(cfg_err("iot.sampler.resplit_prob", "must lie in [0, 1]"));
        }
        self.regression.hmc.validate().map_err(|e| prefix(e, "regression"))?;
        if self.regression.variants.is_empty() {
            return Err(cfg_err("regression.variants", "list at least one variant"));
        }
        self.synth_config().validate().map_err(|e| prefix(e, ""))?;
        Ok(())
    }

    /// Synthetic-cohort settings aligned with the top-level seed, K and periods.
    pub fn synth_config(&self) -> SynthConfig {
        let mut s = self.synth.clone();
        s.seed = self.seed;
        s.k = self.k;
        if let Ok(p) = self.parsed_periods() {
            if let (Some(first), Some(last)) = (p.first(), p.last()) {
                s.initial_period = *first;
                s.late_period = *last;
            }
        }
        s
    }

    /// SHA-256 over the JSON form of the resolved configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn prefix(e: Error, scope: &str) -> Error {
    match e {
        Error::Config { field, reason } if !scope.is_empty() => Error::Config {
            field: format!("{scope}.{field}"),
            reason,
        },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        let text = toml::to_string(&c).unwrap();
        let back = PipelineConfig::from_toml(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn bad_field_is_named() {
        let err = PipelineConfig::from_toml("[trajectory]\ninference = \"gibbs\"\n").unwrap_err();
        match err {
            Error::Config { field, .. } => assert_eq!(field, "trajectory.inference"),
            other => panic!("{other:?}"),
        }
        let err = PipelineConfig::from_toml("[iot]\nbogus = 1\n").unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
    }

    #[test]
    fn overlapping_periods_rejected() {
        let c = PipelineConfig {
            periods: vec!["2000-2009".into(), "2009-2012".into()],
            ..Default::default()
        };
        match c.validate().unwrap_err() {
            Error::Config { field, .. } => assert_eq!(field, "periods[1]"),
            other => panic!("{other:?}"),
        }
        let c = PipelineConfig {
            periods: vec!["2000-2009".into(), "soon".into()],
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config { field, .. }) if field == "periods[1]"));
    }

    #[test]
    fn hash_tracks_seed() {
        let a = PipelineConfig::default();
        let b = PipelineConfig {
            seed: 1,
            ..Default::default()
        };
        assert_ne!(a.hash(), b.hash());
    }
}
