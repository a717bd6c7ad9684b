//! Joint fit of the power-law constants and the metric-to-`I` map.
//!
//! The outer loop searches `(alpha_N, alpha_E, N_c)` in log space; `beta`
//! and `E_c` follow from the frontier identities. For each candidate the
//! power law yields a target `log I` at every data point, and an inner fit
//! regresses those targets on the observed metric:
//!
//! - isotonic: weighted monotone regression (the general case)
//! - fail ratio: `F / F_c = I^(-beta)`, intercept-only regression in `log F`
//! - exp TrueSkill: `T_c exp(-alpha_T T) = I^(-beta)`, linear regression in `T`
//! - the two ceiling forms with a maximum TrueSkill `T*`, by a small nested search
//!
//! Points are weighted by `1 / E`, normalized over the whole data set, and
//! the squared `log I` residual of the inner fit is the outer loss.

use serde::{Deserialize, Serialize};

use crate::curves::{exclude_early, truncate_late, LearningCurveSet, MetricKind};
use crate::error::{Error, Result};
use crate::monotone::{isotonic_fit, isotonic_values, Interpolation, StepFunction};
use crate::scalinglaw::{derive_constants, intrinsic_range, Flagged, PowerLawFit};
use crate::search::{minimize, Bound, SearchConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricForm {
    #[default]
    Isotonic,
    FailRatio,
    ExpTrueskill,
    ExpTrueskillCeiling,
    PowerCeiling,
}

impl MetricForm {
    pub fn as_str(&self) -> &'static str {
        match self {
            MetricForm::Isotonic => "isotonic",
            MetricForm::FailRatio => "fail_ratio",
            MetricForm::ExpTrueskill => "exp_trueskill",
            MetricForm::ExpTrueskillCeiling => "exp_trueskill_ceiling",
            MetricForm::PowerCeiling => "power_ceiling",
        }
    }

    pub fn is_parametric(&self) -> bool {
        !matches!(self, MetricForm::Isotonic)
    }

    fn expected_kind(&self) -> Option<MetricKind> {
        match self {
            MetricForm::Isotonic => None,
            MetricForm::FailRatio => Some(MetricKind::FailRatioSource),
            _ => Some(MetricKind::TrueSkill),
        }
    }
}

impl std::str::FromStr for MetricForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "isotonic" => MetricForm::Isotonic,
            "fail_ratio" => MetricForm::FailRatio,
            "exp_trueskill" => MetricForm::ExpTrueskill,
            "exp_trueskill_ceiling" => MetricForm::ExpTrueskillCeiling,
            "power_ceiling" => MetricForm::PowerCeiling,
            other => return Err(Error::InvalidArgument(format!("unknown metric form `{other}`"))),
        })
    }
}

/// Search box for the free constants, in natural units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LawBounds {
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub n_c_min: f64,
    pub n_c_max: f64,
}

impl Default for LawBounds {
    fn default() -> Self {
        Self {
            alpha_min: 0.01,
            alpha_max: 5.0,
            n_c_min: 1e-12,
            n_c_max: 1e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub exclude_before: f64,
    /// Upper end of the analysis window; `None` keeps everything.
    pub exclude_after: Option<f64>,
    pub metric_form: MetricForm,
    /// Points with a fail-to-success ratio above this are dropped.
    pub fail_ratio_cutoff: f64,
    /// Return of a fully successful episode, used to form `(R_max - R) / R`.
    pub fail_ratio_max_return: f64,
    /// Set for metrics where lower is better; they are negated before the
    /// isotonic fit.
    pub metric_decreasing: bool,
    pub bounds: LawBounds,
    pub search: SearchConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            exclude_before: 0.0,
            exclude_after: None,
            metric_form: MetricForm::Isotonic,
            fail_ratio_cutoff: 0.5,
            fail_ratio_max_return: 10.0,
            metric_decreasing: false,
            bounds: LawBounds::default(),
            search: SearchConfig::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.exclude_before >= 0.0) {
            return Err(Error::InvalidArgument("exclude_before must be non-negative".into()));
        }
        if let Some(after) = self.exclude_after {
            if !(self.exclude_before < after) {
                return Err(Error::InvalidArgument(format!(
                    "exclude_before ({}) must be below exclude_after ({after})",
                    self.exclude_before
                )));
            }
        }
        let b = &self.bounds;
        if !(0.0 < b.alpha_min && b.alpha_min < b.alpha_max && 0.0 < b.n_c_min && b.n_c_min < b.n_c_max) {
            return Err(Error::InvalidArgument(format!("invalid search bounds {b:?}")));
        }
        self.search.validate()
    }

    /// Applies the analysis window.
    pub fn window(&self, data: &LearningCurveSet) -> LearningCurveSet {
        let early = exclude_early(data, self.exclude_before);
        match self.exclude_after {
            Some(after) => truncate_late(&early, after),
            None => early,
        }
    }
}

/// Free constants of the power law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LawParams {
    pub alpha_n: f64,
    pub alpha_e: f64,
    pub n_c: f64,
}

impl LawParams {
    fn to_search(self) -> [f64; 3] {
        [self.alpha_n.ln(), self.alpha_e.ln(), self.n_c.ln()]
    }

    fn from_search(z: &[f64]) -> Self {
        Self {
            alpha_n: z[0].exp(),
            alpha_e: z[1].exp(),
            n_c: z[2].exp(),
        }
    }
}

/// Constants of a parametric metric form. Only the ones the form uses are set.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FormConstants {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub alpha_t: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub t_c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub t_star: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub f_c: Option<f64>,
}

/// Power law fitted through a natural performance metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaturalFit {
    pub law: PowerLawFit,
    pub form: MetricForm,
    #[serde(flatten)]
    pub constants: FormConstants,
    /// Metric range covered by the retained data.
    pub metric_range: (f64, f64),
    pub fail_ratio_max_return: f64,
}

/// Closed-form relation between intrinsic performance and the natural metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum Relation {
    /// `I = coefficient * F^exponent`
    FailRatio { coefficient: f64, exponent: f64 },
    /// `I = coefficient * base^T`
    ExpTrueskill { coefficient: f64, base: f64 },
    /// `I = coefficient * (base^(-T) - base^(-T*))^exponent`
    ExpTrueskillCeiling {
        coefficient: f64,
        base: f64,
        t_star: f64,
        exponent: f64,
    },
    /// `I = coefficient * (T* - T)^exponent`
    PowerCeiling {
        coefficient: f64,
        t_star: f64,
        exponent: f64,
    },
}

impl NaturalFit {
    pub fn relation(&self) -> Relation {
        let inv_beta = 1.0 / self.law.beta();
        let c = &self.constants;
        match self.form {
            MetricForm::FailRatio => {
                let f_c = c.f_c.unwrap_or(f64::NAN);
                Relation::FailRatio {
                    coefficient: f_c.powf(inv_beta),
                    exponent: -inv_beta,
                }
            }
            MetricForm::ExpTrueskill => {
                let (a, t_c) = (c.alpha_t.unwrap_or(f64::NAN), c.t_c.unwrap_or(f64::NAN));
                Relation::ExpTrueskill {
                    coefficient: t_c.powf(-inv_beta),
                    base: (a * inv_beta).exp(),
                }
            }
            MetricForm::ExpTrueskillCeiling => {
                let (a, t_c) = (c.alpha_t.unwrap_or(f64::NAN), c.t_c.unwrap_or(f64::NAN));
                Relation::ExpTrueskillCeiling {
                    coefficient: t_c.powf(-inv_beta),
                    base: a.exp(),
                    t_star: c.t_star.unwrap_or(f64::NAN),
                    exponent: -inv_beta,
                }
            }
            MetricForm::PowerCeiling | MetricForm::Isotonic => {
                let (a, t_c) = (c.alpha_t.unwrap_or(f64::NAN), c.t_c.unwrap_or(f64::NAN));
                Relation::PowerCeiling {
                    coefficient: t_c.powf(-inv_beta),
                    t_star: c.t_star.unwrap_or(f64::NAN),
                    exponent: -a * inv_beta,
                }
            }
        }
    }

    /// `I^(-beta)` implied by the form at metric value `metric`.
    pub fn inverse_power(&self, metric: f64) -> f64 {
        let c = &self.constants;
        let a = c.alpha_t.unwrap_or(f64::NAN);
        let t_c = c.t_c.unwrap_or(f64::NAN);
        match self.form {
            MetricForm::FailRatio => fail_ratio(metric, self.fail_ratio_max_return) / c.f_c.unwrap_or(f64::NAN),
            MetricForm::ExpTrueskill => t_c * (-a * metric).exp(),
            MetricForm::ExpTrueskillCeiling => t_c * ((-a * metric).exp() - (-a * c.t_star.unwrap_or(f64::NAN)).exp()),
            MetricForm::PowerCeiling | MetricForm::Isotonic => t_c * (c.t_star.unwrap_or(f64::NAN) - metric).powf(a),
        }
    }

    pub fn intrinsic_performance(&self, metric: f64) -> Flagged<f64> {
        let value = self.inverse_power(metric).powf(-1.0 / self.law.beta());
        Flagged {
            value,
            out_of_range: metric < self.metric_range.0 || metric > self.metric_range.1,
        }
    }
}

/// Fail-to-success ratio `(R_max - R) / R`.
pub fn fail_ratio(ret: f64, max_return: f64) -> f64 {
    (max_return - ret) / ret
}

/// Monotone map from the observed metric to `log I`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicMap {
    /// `log I` as a function of the (possibly negated) metric.
    pub f: StepFunction,
    pub metric_kind: MetricKind,
    /// True when the metric was negated before fitting.
    pub negated: bool,
    /// Metric range covered by the fitted data, in original units.
    pub metric_range: (f64, f64),
}

/// Intrinsic performance of a policy that scores `metric`.
pub fn intrinsic_performance(map: &IntrinsicMap, metric: f64) -> Flagged<f64> {
    let x = if map.negated { -metric } else { metric };
    Flagged {
        value: map.f.evaluate(x).exp(),
        out_of_range: metric < map.metric_range.0 || metric > map.metric_range.1,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeResidual {
    pub model_size: u64,
    pub n_points: usize,
    /// Root-mean-square `log I` residual over the size's retained points.
    pub rms_log_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub loss: f64,
    pub initial_loss: f64,
    pub evals: usize,
    pub budget_exhausted: bool,
    pub diverged: bool,
    /// Constants that ended on a search bound.
    pub active_bounds: Vec<String>,
    pub n_points: usize,
    pub n_sizes: usize,
    pub per_size: Vec<SizeResidual>,
    /// RMS residual of the earliest eighth of each curve over that of the rest.
    pub early_residual_ratio: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicFit {
    pub law: PowerLawFit,
    pub map: IntrinsicMap,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaturalFitResult {
    pub fit: NaturalFit,
    pub diagnostics: Diagnostics,
}

const EARLY_SKEW_WARN: f64 = 2.0;
const MIN_POINTS_PER_SIZE: usize = 8;
/// Grid starts refined by a full search, best first.
const STARTS_REFINED: usize = 3;

/// Data flattened for repeated loss evaluation, sorted by regressor.
#[derive(Debug, Clone)]
struct Prepared {
    ln_n: Vec<f64>,
    ln_e: Vec<f64>,
    /// Regressor of the inner fit: metric (isotonic, TrueSkill forms) or `log F`.
    x: Vec<f64>,
    w: Vec<f64>,
    size_idx: Vec<usize>,
    early: Vec<bool>,
    sizes: Vec<u64>,
    metric_range: (f64, f64),
    form: MetricForm,
    negated: bool,
    metric_kind: MetricKind,
}

impl Prepared {
    fn new(data: &LearningCurveSet, cfg: &FitConfig) -> Result<Self> {
        let mut rows: Vec<(f64, f64, f64, f64, usize, bool, f64)> = Vec::new();
        let mut sizes = Vec::new();
        let mut metric_kind = None;
        for curve in data.curves() {
            metric_kind.get_or_insert(curve.metric_kind);
            let idx = match sizes.iter().position(|s| *s == curve.model_size) {
                Some(i) => i,
                None => {
                    sizes.push(curve.model_size);
                    sizes.len() - 1
                }
            };
            let n_early = curve.points.len().div_ceil(8);
            for (k, p) in curve.points.iter().enumerate() {
                let x = match cfg.metric_form {
                    MetricForm::Isotonic if cfg.metric_decreasing => -p.mean_metric,
                    MetricForm::FailRatio => {
                        let f = fail_ratio(p.mean_metric, cfg.fail_ratio_max_return);
                        // keep-rule: 0 < F <= cutoff
                        if !(f > 0.0 && f <= cfg.fail_ratio_cutoff && p.mean_metric > 0.0) {
                            continue;
                        }
                        f.ln()
                    }
                    _ => p.mean_metric,
                };
                rows.push((
                    (curve.model_size as f64).ln(),
                    p.interactions.ln(),
                    x,
                    1.0 / p.interactions,
                    idx,
                    k < n_early,
                    p.mean_metric,
                ));
            }
        }
        if rows.is_empty() {
            return Err(if data.is_empty() {
                Error::DegenerateFit("no data in the analysis window".into())
            } else {
                Error::AllDataExcluded(format!("no point passes the {} filter", cfg.metric_form.as_str()))
            });
        }
        let present: std::collections::BTreeSet<usize> = rows.iter().map(|r| r.4).collect();
        if present.len() < 2 {
            return Err(Error::DegenerateFit(format!(
                "need at least 2 distinct model sizes, found {}",
                present.len()
            )));
        }
        // stable: ties keep curve order
        rows.sort_by(|a, b| a.2.total_cmp(&b.2));
        let total_w: f64 = rows.iter().map(|r| r.3).sum();
        let metric_lo = rows.iter().map(|r| r.6).fold(f64::INFINITY, f64::min);
        let metric_hi = rows.iter().map(|r| r.6).fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            ln_n: rows.iter().map(|r| r.0).collect(),
            ln_e: rows.iter().map(|r| r.1).collect(),
            x: rows.iter().map(|r| r.2).collect(),
            w: rows.iter().map(|r| r.3 / total_w).collect(),
            size_idx: rows.iter().map(|r| r.4).collect(),
            early: rows.iter().map(|r| r.5).collect(),
            sizes,
            metric_range: (metric_lo, metric_hi),
            form: cfg.metric_form,
            negated: cfg.metric_form == MetricForm::Isotonic && cfg.metric_decreasing,
            metric_kind: metric_kind.unwrap_or_default(),
        })
    }

    /// `log(I^(-beta))` at every point.
    fn ln_y(&self, law: &PowerLawFit) -> Vec<f64> {
        let (an, ae) = (law.alpha_n(), law.alpha_e());
        let (ln_nc, ln_ec) = (law.n_c().ln(), law.e_c().ln());
        self.ln_n
            .iter()
            .zip(&self.ln_e)
            .map(|(ln_n, ln_e)| {
                let a = an * (ln_nc - ln_n);
                let b = ae * (ln_ec - ln_e);
                // log(exp(a) + exp(b))
                let m = a.max(b);
                m + ((a - m).exp() + (b - m).exp()).ln()
            })
            .collect()
    }

    fn inner(&self, law: &PowerLawFit) -> Inner {
        let ln_y = self.ln_y(law);
        let inv_beta = 1.0 / law.beta();
        let targets: Vec<f64> = ln_y.iter().map(|v| -inv_beta * v).collect();
        match self.form {
            MetricForm::Isotonic => {
                let fitted = isotonic_values(&self.x, &targets, &self.w).expect("prepared data is valid");
                Inner::new(fitted, &targets, &self.w, FormConstants::default())
            }
            MetricForm::FailRatio => {
                // log F = log F_c + log y
                let ln_fc = weighted_mean(self.x.iter().zip(&ln_y).map(|(lf, ly)| lf - ly), &self.w);
                let fitted = self.x.iter().map(|lf| -inv_beta * (lf - ln_fc)).collect();
                Inner::new(
                    fitted,
                    &targets,
                    &self.w,
                    FormConstants {
                        f_c: Some(ln_fc.exp()),
                        ..Default::default()
                    },
                )
            }
            MetricForm::ExpTrueskill => {
                let (intercept, slope) = weighted_linear(&self.x, &ln_y, &self.w);
                let fitted = self.x.iter().map(|t| -inv_beta * (intercept + slope * t)).collect();
                Inner::new(
                    fitted,
                    &targets,
                    &self.w,
                    FormConstants {
                        alpha_t: Some(-slope),
                        t_c: Some(intercept.exp()),
                        ..Default::default()
                    },
                )
            }
            MetricForm::ExpTrueskillCeiling => self.exp_ceiling(&ln_y, &targets, inv_beta),
            MetricForm::PowerCeiling => self.power_ceiling(&ln_y, &targets, inv_beta),
        }
    }

    fn t_max(&self) -> f64 {
        self.x.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    fn t_span(&self) -> f64 {
        (self.t_max() - self.x.iter().copied().fold(f64::INFINITY, f64::min)).max(1e-6)
    }

    /// `y = T_c (exp(-a T) - exp(-a T*))`, nested search over `(log a, log(T* - T_max))`.
    fn exp_ceiling(&self, ln_y: &[f64], targets: &[f64], inv_beta: f64) -> Inner {
        let t_max = self.t_max();
        let span = self.t_span();
        let (_, slope) = weighted_linear(&self.x, ln_y, &self.w);
        let a0 = if -slope > 1e-6 { -slope } else { 1.0 / span };
        let shape = |z: &[f64]| -> Option<(f64, Vec<f64>)> {
            let a = z[0].exp();
            let t_star = t_max + z[1].exp();
            let tail = (-a * t_star).exp();
            let ln_g: Vec<f64> = self.x.iter().map(|t| ((-a * t).exp() - tail).ln()).collect();
            if ln_g.iter().any(|v| !v.is_finite()) {
                return None;
            }
            let ln_tc = weighted_mean(ln_y.iter().zip(&ln_g).map(|(y, g)| y - g), &self.w);
            Some((ln_tc, ln_g))
        };
        let inner_loss = |z: &[f64]| -> f64 {
            match shape(z) {
                Some((ln_tc, ln_g)) => weighted_sse(ln_y.iter().zip(&ln_g).map(|(y, g)| y - ln_tc - g), &self.w),
                None => f64::INFINITY,
            }
        };
        let best = nested_search(
            inner_loss,
            &[a0.ln(), span.ln()],
            &[
                Bound::new(a0.ln() - 12.0, a0.ln() + 6.0),
                Bound::new((span * 1e-4).ln(), (span * 1e4).ln()),
            ],
        );
        let (ln_tc, ln_g) = shape(&best).unwrap_or((f64::NAN, vec![f64::NAN; self.x.len()]));
        let fitted = ln_g.iter().map(|g| -inv_beta * (ln_tc + g)).collect();
        Inner::new(
            fitted,
            targets,
            &self.w,
            FormConstants {
                alpha_t: Some(best[0].exp()),
                t_c: Some(ln_tc.exp()),
                t_star: Some(t_max + best[1].exp()),
                f_c: None,
            },
        )
    }

    /// `y = T_c (T* - T)^a`, nested search over `log(T* - T_max)` with a
    /// linear regression for `(log T_c, a)`.
    fn power_ceiling(&self, ln_y: &[f64], targets: &[f64], inv_beta: f64) -> Inner {
        let t_max = self.t_max();
        let span = self.t_span();
        let regress = |z: f64| -> (f64, f64, Vec<f64>) {
            let t_star = t_max + z.exp();
            let u: Vec<f64> = self.x.iter().map(|t| (t_star - t).ln()).collect();
            let (intercept, slope) = weighted_linear(&u, ln_y, &self.w);
            (intercept, slope, u)
        };
        let inner_loss = |z: &[f64]| -> f64 {
            let (intercept, slope, u) = regress(z[0]);
            weighted_sse(ln_y.iter().zip(&u).map(|(y, u)| y - intercept - slope * u), &self.w)
        };
        let best = nested_search(
            inner_loss,
            &[span.ln()],
            &[Bound::new((span * 1e-4).ln(), (span * 1e4).ln())],
        );
        let (intercept, slope, u) = regress(best[0]);
        let fitted = u.iter().map(|u| -inv_beta * (intercept + slope * u)).collect();
        Inner::new(
            fitted,
            targets,
            &self.w,
            FormConstants {
                alpha_t: Some(slope),
                t_c: Some(intercept.exp()),
                t_star: Some(t_max + best[0].exp()),
                f_c: None,
            },
        )
    }

    fn init(&self, bounds: &LawBounds) -> LawParams {
        // y-scale proxy: at the initial beta of 0.25, I = N E gives y = (N E)^(-1/4)
        let mut proxy: Vec<f64> = self.ln_n.iter().zip(&self.ln_e).map(|(n, e)| -0.25 * (n + e)).collect();
        proxy.sort_by(f64::total_cmp);
        let ln_proxy = proxy[proxy.len() / 2];
        let mut ln_n: Vec<f64> = self.ln_n.clone();
        ln_n.sort_by(f64::total_cmp);
        let ln_median_n = ln_n[ln_n.len() / 2];
        // (N_c / median N)^0.5 = proxy
        let n_c = (ln_median_n + 2.0 * ln_proxy)
            .exp()
            .clamp(bounds.n_c_min, bounds.n_c_max);
        LawParams {
            alpha_n: 0.5f64.clamp(bounds.alpha_min, bounds.alpha_max),
            alpha_e: 0.5f64.clamp(bounds.alpha_min, bounds.alpha_max),
            n_c,
        }
    }

    /// Coarse grid of starting points around the proxy, the default start
    /// first. `N_c` follows the same proxy at each grid point's `beta`.
    fn starts(&self, bounds: &LawBounds) -> Vec<LawParams> {
        let mut out = vec![self.init(bounds)];
        let ln_ne: Vec<f64> = self.ln_n.iter().zip(&self.ln_e).map(|(n, e)| n + e).collect();
        let mut ln_n: Vec<f64> = self.ln_n.clone();
        ln_n.sort_by(f64::total_cmp);
        let ln_median_n = ln_n[ln_n.len() / 2];
        let alphas = [0.125, 0.25, 0.5, 1.0, 2.0];
        for &a_n in &alphas {
            for &a_e in &alphas {
                let beta = 1.0 / (1.0 / a_n + 1.0 / a_e);
                let mut proxy: Vec<f64> = ln_ne.iter().map(|v| -beta * v).collect();
                proxy.sort_by(f64::total_cmp);
                let ln_proxy = proxy[proxy.len() / 2];
                for shift in [-2.0, 0.0, 2.0] {
                    out.push(LawParams {
                        alpha_n: a_n.clamp(bounds.alpha_min, bounds.alpha_max),
                        alpha_e: a_e.clamp(bounds.alpha_min, bounds.alpha_max),
                        n_c: (ln_median_n + (ln_proxy + shift) / a_n)
                            .exp()
                            .clamp(bounds.n_c_min, bounds.n_c_max),
                    });
                }
            }
        }
        out
    }
}

struct Inner {
    loss: f64,
    fitted: Vec<f64>,
    constants: FormConstants,
}

impl Inner {
    fn new(fitted: Vec<f64>, targets: &[f64], w: &[f64], constants: FormConstants) -> Self {
        let loss = weighted_sse(fitted.iter().zip(targets).map(|(f, t)| f - t), w);
        let loss = if loss.is_finite() { loss } else { f64::INFINITY };
        Self {
            loss,
            fitted,
            constants,
        }
    }
}

fn weighted_mean(values: impl Iterator<Item = f64>, w: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (v, wi) in values.zip(w) {
        num += wi * v;
        den += wi;
    }
    num / den
}

fn weighted_sse(residuals: impl Iterator<Item = f64>, w: &[f64]) -> f64 {
    residuals.zip(w).map(|(r, wi)| wi * r * r).sum()
}

/// Weighted least squares `y = intercept + slope x`.
fn weighted_linear(x: &[f64], y: &[f64], w: &[f64]) -> (f64, f64) {
    let mx = weighted_mean(x.iter().copied(), w);
    let my = weighted_mean(y.iter().copied(), w);
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for ((xi, yi), wi) in x.iter().zip(y).zip(w) {
        sxy += wi * (xi - mx) * (yi - my);
        sxx += wi * (xi - mx) * (xi - mx);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (my - slope * mx, slope)
}

fn nested_search(objective: impl Fn(&[f64]) -> f64, init: &[f64], bounds: &[Bound]) -> Vec<f64> {
    let cfg = SearchConfig {
        max_evals: 400,
        restarts: 2,
        init_step: 0.5,
        tol_loss: 1e-16,
        tol_params: 1e-6,
        seed: 7,
    };
    let init: Vec<f64> = init.iter().zip(bounds).map(|(x, b)| x.clamp(b.lo, b.hi)).collect();
    if !objective(&init).is_finite() {
        return init;
    }
    minimize(&objective, &init, bounds, &cfg)
        .map(|r| r.params)
        .unwrap_or(init)
}

fn law_of(params: LawParams) -> Option<PowerLawFit> {
    derive_constants(params.alpha_n, params.alpha_e, params.n_c).ok()
}

/// Outer loss at `params` on the windowed data.
pub fn joint_loss(params: LawParams, data: &LearningCurveSet, cfg: &FitConfig) -> Result<f64> {
    let prepared = Prepared::new(&cfg.window(data), cfg)?;
    let law = derive_constants(params.alpha_n, params.alpha_e, params.n_c)?;
    Ok(prepared.inner(&law).loss)
}

/// Normalized `1 / E` weights, in input order.
pub fn normalized_weights(interactions: &[f64]) -> Vec<f64> {
    let total: f64 = interactions.iter().map(|e| 1.0 / e).sum();
    interactions.iter().map(|e| 1.0 / e / total).collect()
}

struct Solved {
    law: PowerLawFit,
    inner: Inner,
    diagnostics: Diagnostics,
    windowed: LearningCurveSet,
    prepared: Prepared,
}

fn solve(data: &LearningCurveSet, cfg: &FitConfig) -> Result<Solved> {
    cfg.validate()?;
    let families = data.families();
    if families.len() > 1 {
        return Err(Error::InvalidArgument(format!(
            "data holds {} families ({}); fit one at a time",
            families.len(),
            families.join(", ")
        )));
    }
    let windowed = cfg.window(data);
    let mut sizes = std::collections::BTreeSet::new();
    for c in windowed.curves() {
        sizes.insert(c.model_size);
    }
    if sizes.len() < 2 {
        return Err(Error::DegenerateFit(format!(
            "need at least 2 distinct model sizes, found {}",
            sizes.len()
        )));
    }
    if let Some(c) = windowed.curves().iter().find(|c| c.points.len() < MIN_POINTS_PER_SIZE) {
        return Err(Error::DegenerateFit(format!(
            "model size {} has {} points in the window, at least {MIN_POINTS_PER_SIZE} required",
            c.model_size,
            c.points.len()
        )));
    }
    let prepared = Prepared::new(&windowed, cfg)?;

    let b = cfg.bounds;
    let bounds = [
        Bound::new(b.alpha_min.ln(), b.alpha_max.ln()),
        Bound::new(b.alpha_min.ln(), b.alpha_max.ln()),
        Bound::new(b.n_c_min.ln(), b.n_c_max.ln()),
    ];
    let objective = |z: &[f64]| -> f64 {
        match law_of(LawParams::from_search(z)) {
            Some(law) => prepared.inner(&law).loss,
            None => f64::INFINITY,
        }
    };
    let mut starts: Vec<(f64, [f64; 3])> = prepared
        .starts(&b)
        .into_iter()
        .map(|p| {
            let z = p.to_search();
            (objective(&z), z)
        })
        .filter(|(l, _)| l.is_finite())
        .collect();
    if starts.is_empty() {
        return Err(Error::NonFiniteObjective(f64::INFINITY));
    }
    starts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let z0 = starts[0].1;
    let mut result = minimize(objective, &z0, &bounds, &cfg.search)?;
    let mut scan_evals = starts.len() + result.evals;
    for (_, z) in starts.iter().skip(1).take(STARTS_REFINED - 1) {
        let r = minimize(objective, z, &bounds, &cfg.search)?;
        scan_evals += r.evals;
        if r.loss < result.loss {
            result = r;
        }
    }
    result.evals = scan_evals;
    let params = LawParams::from_search(&result.params);
    let law = derive_constants(params.alpha_n, params.alpha_e, params.n_c)?;
    let inner = prepared.inner(&law);

    let names = ["alpha_N", "alpha_E", "N_c"];
    let active_bounds: Vec<String> = result
        .params
        .iter()
        .zip(&bounds)
        .zip(names)
        .filter(|((z, bound), _)| bound.is_active(**z, 1e-6))
        .map(|(_, name)| name.to_string())
        .collect();

    let mut warnings = Vec::new();
    let ln_y = prepared.ln_y(&law);
    let share_n: Vec<f64> = prepared
        .ln_n
        .iter()
        .zip(&ln_y)
        .map(|(ln_n, ly)| (law.alpha_n() * (law.n_c().ln() - ln_n) - ly).exp())
        .collect();
    let max_n_share = share_n.iter().copied().fold(0.0, f64::max);
    let max_e_share = share_n.iter().map(|s| 1.0 - s).fold(0.0, f64::max);
    let one_term = max_n_share < 1e-3 || max_e_share < 1e-3;
    if one_term {
        warnings.push(format!(
            "one power-law term is negligible everywhere (max share N: {max_n_share:.2e}, E: {max_e_share:.2e})"
        ));
    }
    if !active_bounds.is_empty() {
        warnings.push(format!("search ended on a bound: {}", active_bounds.join(", ")));
    }
    let diverged = !active_bounds.is_empty() || one_term;
    let improved = result.loss < objective(&z0) - cfg.search.tol_loss;
    if !improved && !active_bounds.is_empty() {
        return Err(Error::DegenerateFit(format!(
            "loss did not improve on the initial point and {} sits on a bound",
            active_bounds.join(", ")
        )));
    }

    let targets: Vec<f64> = ln_y.iter().map(|v| -v / law.beta()).collect();
    let residuals: Vec<f64> = inner.fitted.iter().zip(&targets).map(|(f, t)| f - t).collect();
    let per_size = prepared
        .sizes
        .iter()
        .enumerate()
        .map(|(i, &size)| {
            let r: Vec<f64> = residuals
                .iter()
                .zip(&prepared.size_idx)
                .filter(|(_, s)| **s == i)
                .map(|(r, _)| *r)
                .collect();
            SizeResidual {
                model_size: size,
                n_points: r.len(),
                rms_log_residual: rms(&r),
            }
        })
        .collect();
    let early: Vec<f64> = residuals
        .iter()
        .zip(&prepared.early)
        .filter(|(_, e)| **e)
        .map(|(r, _)| *r)
        .collect();
    let late: Vec<f64> = residuals
        .iter()
        .zip(&prepared.early)
        .filter(|(_, e)| !**e)
        .map(|(r, _)| *r)
        .collect();
    let (re, rl) = (rms(&early), rms(&late));
    let early_residual_ratio = if re == 0.0 {
        0.0
    } else if rl == 0.0 {
        f64::MAX
    } else {
        re / rl
    };
    if early_residual_ratio > EARLY_SKEW_WARN {
        warnings.push(format!(
            "early data fits {early_residual_ratio:.2}x worse than the rest; consider excluding more of it"
        ));
    }

    let diagnostics = Diagnostics {
        loss: inner.loss,
        initial_loss: objective(&z0),
        evals: result.evals,
        budget_exhausted: result.budget_exhausted,
        diverged,
        active_bounds,
        n_points: prepared.x.len(),
        n_sizes: prepared.sizes.len(),
        per_size,
        early_residual_ratio,
        warnings,
    };
    Ok(Solved {
        law,
        inner,
        diagnostics,
        windowed,
        prepared,
    })
}

fn rms(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
}

/// Fits the power law with an isotonic map from metric to `log I`.
pub fn fit_intrinsic(data: &LearningCurveSet, cfg: &FitConfig) -> Result<IntrinsicFit> {
    if cfg.metric_form.is_parametric() {
        return Err(Error::InvalidArgument(format!(
            "fit_intrinsic uses the isotonic form; use fit_natural for `{}`",
            cfg.metric_form.as_str()
        )));
    }
    let solved = solve(data, cfg)?;
    let range = intrinsic_range(&solved.law, &solved.windowed)?;
    let law = solved.law.with_range(range.to_validity())?;
    let p = &solved.prepared;
    let f = isotonic_fit(&p.x, &solved.inner.fitted, &p.w)?.with_interpolation(Interpolation::LinearInX);
    let map = IntrinsicMap {
        f,
        metric_kind: p.metric_kind,
        negated: p.negated,
        metric_range: p.metric_range,
    };
    Ok(IntrinsicFit {
        law,
        map,
        diagnostics: solved.diagnostics,
    })
}

/// Fits the power law through a parametric natural-metric form.
pub fn fit_natural(data: &LearningCurveSet, cfg: &FitConfig) -> Result<NaturalFitResult> {
    let Some(expected) = cfg.metric_form.expected_kind() else {
        return Err(Error::InvalidArgument(
            "fit_natural needs a parametric metric form".into(),
        ));
    };
    if let Some(c) = data.curves().iter().find(|c| c.metric_kind != expected) {
        return Err(Error::FormMismatch {
            kind: c.metric_kind.as_str().to_string(),
            form: cfg.metric_form.as_str().to_string(),
        });
    }
    let solved = solve(data, cfg)?;
    let c = solved.inner.constants;
    for (name, v) in [("alpha_T", c.alpha_t), ("T_c", c.t_c), ("F_c", c.f_c)] {
        if let Some(v) = v {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::DegenerateFit(format!("fitted {name} = {v} is not positive")));
            }
        }
    }
    let range = intrinsic_range(&solved.law, &solved.windowed)?;
    let law = solved.law.with_range(range.to_validity())?;
    Ok(NaturalFitResult {
        fit: NaturalFit {
            law,
            form: cfg.metric_form,
            constants: c,
            metric_range: solved.prepared.metric_range,
            fail_ratio_max_return: cfg.fail_ratio_max_return,
        },
        diagnostics: solved.diagnostics,
    })
}
