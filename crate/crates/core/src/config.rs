//! Flat `key = value` configuration files.
//!
//! Grammar: one `key = value` pair per line; `#` starts a comment; blank
//! lines are ignored; keys are ASCII identifiers and may appear once. Lists
//! are comma-separated. Unknown keys are rejected. Every knob has a
//! default, so an empty file is a valid config.
//!
//! ```text
//! # ingestion
//! metric_kind = return           # return | fail_ratio_source | trueskill
//! size_unit = parameters         # parameters | flops_per_forward_pass
//! family = starpilot             # keep one family of a multi-family file
//! trim = 0                       # seeds dropped from each end before averaging
//!
//! # smoothing
//! smoothing = true
//! points_per_decade = 16
//! target_residual_ratio = 1.0
//! min_bandwidth_decades = 0.02
//!
//! # fit
//! exclude_before = 3e6
//! exclude_after = 1e9
//! metric_form = isotonic         # or fail_ratio, exp_trueskill, exp_trueskill_ceiling, power_ceiling
//! metric_decreasing = false
//! fail_ratio_cutoff = 0.5
//! fail_ratio_max_return = 10
//! alpha_min = 0.01
//! alpha_max = 5
//! n_c_min = 1e-12
//! n_c_max = 1e6
//! max_evals = 4000
//! restarts = 4
//! init_step = 0.5
//! tol_loss = 1e-14
//! tol_params = 1e-7
//! seed = 0
//!
//! # compute accounting and queries
//! model_family = procgen_width   # picks the FLOPs per param-interaction
//! fppi = 2135.8                  # or set it directly
//! compute_pfdays = 1e-6, 1e-3, 1
//! n_env = 1e5
//! sizes = 1e4, 1e5, 1e6
//!
//! # horizon simulation
//! horizons = 1, 3, 7, 15, 31
//! rollout_length = 62
//! n_rollouts = 10000
//! n_contexts = 8
//! n_actions = 4
//! reward_noise_sd = 1.0
//! policy_scale = 0.5
//! sample_efficiency = false
//! learning_rate = 0.5
//! batch_size = 64
//! target_accuracy = 0.9
//! max_updates = 4000
//! ```

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::accounting::{default_fppi, Family};
use crate::curves::{AggregateOptions, LoadOptions, MetricKind, SizeUnit, SmoothingConfig};
use crate::error::{Error, Result};
use crate::fitjoint::FitConfig;
use crate::horizonlab::{HorizonSweep, TrainingConfig};

const KEYS: &[&str] = &[
    "metric_kind",
    "size_unit",
    "family",
    "trim",
    "smoothing",
    "points_per_decade",
    "target_residual_ratio",
    "min_bandwidth_decades",
    "exclude_before",
    "exclude_after",
    "metric_form",
    "metric_decreasing",
    "fail_ratio_cutoff",
    "fail_ratio_max_return",
    "alpha_min",
    "alpha_max",
    "n_c_min",
    "n_c_max",
    "max_evals",
    "restarts",
    "init_step",
    "tol_loss",
    "tol_params",
    "seed",
    "model_family",
    "fppi",
    "compute_pfdays",
    "n_env",
    "sizes",
    "horizons",
    "rollout_length",
    "n_rollouts",
    "n_contexts",
    "n_actions",
    "reward_noise_sd",
    "policy_scale",
    "sample_efficiency",
    "learning_rate",
    "batch_size",
    "target_accuracy",
    "max_updates",
];

/// Raw parsed entries, keyed by name, with their line numbers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    entries: BTreeMap<String, (usize, String)>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(Error::Config {
                    line,
                    message: format!("expected `key = value`, got `{content}`"),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(Error::Config {
                    line,
                    message: format!("unknown key `{key}`"),
                });
            }
            if value.is_empty() {
                return Err(Error::Config {
                    line,
                    message: format!("`{key}` has no value"),
                });
            }
            if entries.insert(key.to_string(), (line, value.to_string())).is_some() {
                return Err(Error::Config {
                    line,
                    message: format!("`{key}` set twice"),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|e| Error::Config {
                line: *line,
                message: format!("`{key}`: {e}"),
            }),
        }
    }

    pub fn get_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, v)) => v
                .split(',')
                .map(|x| {
                    x.trim().parse::<f64>().map_err(|e| Error::Config {
                        line: *line,
                        message: format!("`{key}`: `{}`: {e}", x.trim()),
                    })
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
        }
    }

    fn line_of(&self, key: &str) -> usize {
        self.entries.get(key).map_or(0, |e| e.0)
    }

    fn set<T: FromStr>(&self, key: &str, slot: &mut T) -> Result<()>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = self.get(key)? {
            *slot = v;
        }
        Ok(())
    }
}

/// The fully typed configuration, echoed into reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub metric_kind: MetricKind,
    pub size_unit: SizeUnit,
    pub family: Option<String>,
    pub aggregate: AggregateOptions,
    /// `None` disables smoothing.
    pub smoothing: Option<SmoothingConfig>,
    pub fit: FitConfig,
    pub model_family: Option<Family>,
    pub fppi: Option<f64>,
    pub compute_pfdays: Vec<f64>,
    pub n_env: f64,
    pub sizes: Vec<f64>,
    pub sweep: HorizonSweep,
    pub n_contexts: usize,
    pub n_actions: usize,
    pub reward_noise_sd: f64,
    pub policy_scale: f64,
    pub sample_efficiency: bool,
    pub training: TrainingConfig,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            metric_kind: MetricKind::Return,
            size_unit: SizeUnit::Parameters,
            family: None,
            aggregate: AggregateOptions::default(),
            smoothing: Some(SmoothingConfig::default()),
            fit: FitConfig::default(),
            model_family: None,
            fppi: None,
            compute_pfdays: (-6..=0).map(|k| 10f64.powi(k)).collect(),
            n_env: 0.0,
            sizes: Vec::new(),
            sweep: HorizonSweep::default(),
            n_contexts: 8,
            n_actions: 4,
            reward_noise_sd: 1.0,
            policy_scale: 0.5,
            sample_efficiency: false,
            training: TrainingConfig::default(),
        }
    }
}

fn parse_size_unit(s: &str) -> Result<SizeUnit> {
    match s {
        "parameters" => Ok(SizeUnit::Parameters),
        "flops_per_forward_pass" => Ok(SizeUnit::FlopsPerForwardPass),
        other => Err(Error::InvalidArgument(format!("unknown size unit `{other}`"))),
    }
}

impl Settings {
    pub fn from_file(file: &ConfigFile) -> Result<Self> {
        let mut s = Settings::default();
        file.set("metric_kind", &mut s.metric_kind)?;
        if let Some(u) = file.get::<String>("size_unit")? {
            s.size_unit = parse_size_unit(&u).map_err(|e| Error::Config {
                line: file.line_of("size_unit"),
                message: e.to_string(),
            })?;
        }
        s.family = file.get("family")?;
        file.set("trim", &mut s.aggregate.trim)?;

        let mut smoothing = SmoothingConfig::default();
        file.set("points_per_decade", &mut smoothing.points_per_decade)?;
        file.set("target_residual_ratio", &mut smoothing.target_residual_ratio)?;
        file.set("min_bandwidth_decades", &mut smoothing.min_bandwidth_decades)?;
        let enabled = file.get::<bool>("smoothing")?.unwrap_or(true);
        s.smoothing = enabled.then_some(smoothing);

        let fit = &mut s.fit;
        file.set("exclude_before", &mut fit.exclude_before)?;
        fit.exclude_after = file.get("exclude_after")?;
        file.set("metric_form", &mut fit.metric_form)?;
        file.set("metric_decreasing", &mut fit.metric_decreasing)?;
        file.set("fail_ratio_cutoff", &mut fit.fail_ratio_cutoff)?;
        file.set("fail_ratio_max_return", &mut fit.fail_ratio_max_return)?;
        file.set("alpha_min", &mut fit.bounds.alpha_min)?;
        file.set("alpha_max", &mut fit.bounds.alpha_max)?;
        file.set("n_c_min", &mut fit.bounds.n_c_min)?;
        file.set("n_c_max", &mut fit.bounds.n_c_max)?;
        file.set("max_evals", &mut fit.search.max_evals)?;
        file.set("restarts", &mut fit.search.restarts)?;
        file.set("init_step", &mut fit.search.init_step)?;
        file.set("tol_loss", &mut fit.search.tol_loss)?;
        file.set("tol_params", &mut fit.search.tol_params)?;
        file.set("seed", &mut fit.search.seed)?;
        s.sweep.seed = fit.search.seed;

        s.model_family = file.get("model_family")?;
        s.fppi = file.get("fppi")?;
        if let Some(c) = file.get_list("compute_pfdays")? {
            s.compute_pfdays = c;
        }
        file.set("n_env", &mut s.n_env)?;
        if let Some(v) = file.get_list("sizes")? {
            s.sizes = v;
        }

        if let Some(h) = file.get_list("horizons")? {
            s.sweep.horizons = h;
            let h_max = s.sweep.horizons.iter().copied().fold(1.0, f64::max);
            s.sweep.rollout_length = (2.0 * h_max).ceil() as usize;
        }
        file.set("rollout_length", &mut s.sweep.rollout_length)?;
        file.set("n_rollouts", &mut s.sweep.n_rollouts)?;
        file.set("n_contexts", &mut s.n_contexts)?;
        file.set("n_actions", &mut s.n_actions)?;
        file.set("reward_noise_sd", &mut s.reward_noise_sd)?;
        file.set("policy_scale", &mut s.policy_scale)?;
        file.set("sample_efficiency", &mut s.sample_efficiency)?;
        file.set("learning_rate", &mut s.training.learning_rate)?;
        file.set("batch_size", &mut s.training.batch_size)?;
        file.set("target_accuracy", &mut s.training.target_accuracy)?;
        file.set("max_updates", &mut s.training.max_updates)?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(sm) = &self.smoothing {
            sm.validate()?;
        }
        self.fit.validate()?;
        if let Some(f) = self.fppi {
            crate::error::require_positive("fppi", f)?;
        }
        if self.compute_pfdays.iter().any(|c| !(*c > 0.0)) {
            return Err(Error::InvalidArgument("compute_pfdays entries must be positive".into()));
        }
        if !(self.n_env >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "n_env must be >= 0, got {}",
                self.n_env
            )));
        }
        Ok(())
    }

    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            metric_kind: self.metric_kind,
            size_unit: self.size_unit,
        }
    }

    /// FLOPs per parameter-interaction: explicit value, else the model
    /// family's, else none.
    pub fn resolved_fppi(&self) -> Result<Option<f64>> {
        match (self.fppi, &self.model_family) {
            (Some(f), _) => Ok(Some(f)),
            (None, Some(fam)) => default_fppi(fam).map(Some),
            (None, None) => Ok(None),
        }
    }
}

pub fn load_settings(path: Option<&Path>) -> Result<Settings> {
    match path {
        Some(p) => Settings::from_file(&ConfigFile::load(p)?),
        None => Ok(Settings::default()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitjoint::MetricForm;

    #[test]
    fn empty_is_default() {
        assert_eq!(
            Settings::from_file(&ConfigFile::parse("").unwrap()).unwrap(),
            Settings::default()
        );
    }

    #[test]
    fn parses_values_and_comments() {
        let text = "# a comment\nexclude_before = 3e6  # trailing\nmetric_form = exp_trueskill\nmetric_kind = trueskill\nsmoothing = false\nhorizons = 1, 3, 7\nseed = 9\n";
        let s = Settings::from_file(&ConfigFile::parse(text).unwrap()).unwrap();
        assert_eq!(s.fit.exclude_before, 3e6);
        assert_eq!(s.fit.metric_form, MetricForm::ExpTrueskill);
        assert_eq!(s.metric_kind, MetricKind::TrueSkill);
        assert!(s.smoothing.is_none());
        assert_eq!(s.sweep.horizons, [1.0, 3.0, 7.0]);
        assert_eq!(s.sweep.rollout_length, 14);
        assert_eq!((s.fit.search.seed, s.sweep.seed), (9, 9));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = ConfigFile::parse("seed = 1\nbogus = 2\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 2, .. }), "{err}");
        let err = ConfigFile::parse("seed = 1\nseed = 2\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 2, .. }));
        let err = ConfigFile::parse("no equals here").unwrap_err();
        assert!(matches!(err, Error::Config { line: 1, .. }));
        let file = ConfigFile::parse("\n\nmax_evals = lots\n").unwrap();
        let err = Settings::from_file(&file).unwrap_err();
        assert!(matches!(err, Error::Config { line: 3, .. }), "{err}");
    }

    #[test]
    fn fppi_resolution() {
        let s = Settings::from_file(&ConfigFile::parse("model_family = dota_lstm").unwrap()).unwrap();
        assert_eq!(s.resolved_fppi().unwrap(), Some(8.0));
        let s = Settings::from_file(&ConfigFile::parse("model_family = dota_lstm\nfppi = 3").unwrap()).unwrap();
        assert_eq!(s.resolved_fppi().unwrap(), Some(3.0));
        assert_eq!(Settings::default().resolved_fppi().unwrap(), None);
    }

    #[test]
    fn settings_round_trip_json() {
        let s = Settings::default();
        let back: Settings = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
    }
}
