//! Command implementations behind the `intrinsic-scaling` binary.
//!
//! Every command is a function from parsed arguments to an [`Outcome`]
//! (output bytes plus exit code), so the binary only parses and prints.
//!
//! Exit codes: 0 success; 1 I/O, parse or validation error; 2 the command
//! ran but its result is flagged (a diverged fit, a failed validation row).
//!
//! # Fit report schema (`schema_version` 1)
//!
//! ```text
//! schema_version   integer
//! provenance       { tool, version, input, input_sha256, seed }
//! config           echo of every setting used
//! law              { alpha_n, alpha_e, n_c, beta, e_c, i_min, i_max, n_min, n_max }
//!                  (open upper limits are null)
//! intrinsic_map    isotonic map { f: { blocks, interpolation }, metric_kind, negated, metric_range } or null
//! map_breakpoints  [[metric, log I], ...] for the isotonic map
//! natural          parametric fit { law, form, alpha_t, t_c, t_star, f_c, ... } or null
//! relation         closed-form I(metric) of the natural fit, or null
//! optimal_size     { coefficient, exponent, n_min, n_max, fppi, compute_unit } or null
//! sizes            model sizes in the fitted window
//! e_window         [min E, max E] in the fitted window
//! dropped          [family, size] pairs removed during aggregation
//! diagnostics      { loss, initial_loss, evals, budget_exhausted, diverged,
//!                    active_bounds, n_points, n_sizes, per_size, early_residual_ratio, warnings }
//! ```

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::accounting::{check_row, dataset, published_constants, PublishedRow, RowCheck, RowTolerances};
use crate::config::{load_settings, Settings};
use crate::curves::{aggregate_seeds, parse_runs, smooth, Format, LearningCurveSet};
use crate::error::{Error, Result};
use crate::fitjoint::{fit_intrinsic, fit_natural, Diagnostics, IntrinsicMap, NaturalFit, Relation};
use crate::horizonlab::{
    affine_fit, horizon_term, run_sweep, sample_efficiency_sweep, AffineFit, EfficiencyPoint, IndepMDP, SoftmaxPolicy,
    TraceEstimate,
};
use crate::plot::{self, PlotData, PlotKind};
use crate::scalinglaw::{
    cost_optimal_size, derive_constants, limit_curves, optimal_size_pfdays, pfdays_to_param_interactions, Limit,
    PowerLawFit,
};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const TOOL: &str = "intrinsic-scaling";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub stdout: Vec<u8>,
    /// Human-readable notes for stderr.
    pub notes: Vec<String>,
    pub exit_code: i32,
}

impl Outcome {
    fn ok(body: String) -> Self {
        Self {
            stdout: body.into_bytes(),
            notes: Vec::new(),
            exit_code: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub input: Option<String>,
    pub input_sha256: Option<String>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalSizeEquation {
    /// `N = coefficient * C^exponent` with `C` in PF-days.
    pub coefficient: f64,
    pub exponent: f64,
    pub n_min: Option<f64>,
    pub n_max: Option<f64>,
    pub fppi: f64,
    pub compute_unit: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub schema_version: u32,
    pub provenance: Provenance,
    pub config: Settings,
    pub law: PowerLawFit,
    pub intrinsic_map: Option<IntrinsicMap>,
    pub map_breakpoints: Vec<(f64, f64)>,
    pub natural: Option<NaturalFit>,
    pub relation: Option<Relation>,
    pub optimal_size: Option<OptimalSizeEquation>,
    pub sizes: Vec<u64>,
    pub e_window: (f64, f64),
    pub dropped: Vec<(String, u64)>,
    pub diagnostics: Diagnostics,
}

impl FitReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: FitReport = serde_json::from_str(text)?;
        if report.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::InvalidArgument(format!(
                "report schema version {} is not supported (expected {REPORT_SCHEMA_VERSION})",
                report.schema_version
            )));
        }
        Ok(report)
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn optimal_equation(law: &PowerLawFit, fppi: Option<f64>) -> Result<Option<OptimalSizeEquation>> {
    let Some(fppi) = fppi else { return Ok(None) };
    let range = law.range();
    Ok(Some(OptimalSizeEquation {
        coefficient: optimal_size_pfdays(law, 1.0, fppi)?.value,
        exponent: law.optimal_exponent(),
        n_min: (range.n_min > 0.0).then_some(range.n_min),
        n_max: range.n_max.is_finite().then_some(range.n_max),
        fppi,
        compute_unit: "PF-days".into(),
    }))
}

/// Loads, filters, aggregates and smooths the input runs.
pub fn prepare_curves(bytes: &[u8], format: Format, settings: &Settings) -> Result<LearningCurveSet> {
    let mut runs = parse_runs(bytes, format, settings.load_options())?;
    if let Some(f) = &settings.family {
        runs = runs.filter_family(f);
        if runs.is_empty() {
            return Err(Error::InvalidArgument(format!("no runs for family `{f}`")));
        }
    }
    let curves = aggregate_seeds(&runs, settings.aggregate)?;
    match &settings.smoothing {
        Some(cfg) => {
            let dropped = curves.dropped.clone();
            let mut smoothed = curves.map_curves(|c| smooth(c, cfg))?;
            smoothed.dropped = dropped;
            Ok(smoothed)
        }
        None => Ok(curves),
    }
}

fn window_summary(settings: &Settings, curves: &LearningCurveSet) -> (Vec<u64>, (f64, f64)) {
    let windowed = settings.fit.window(curves);
    let mut sizes: Vec<u64> = windowed.curves().iter().map(|c| c.model_size).collect();
    sizes.dedup();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for c in windowed.curves() {
        if let Some((a, b)) = c.interaction_window() {
            lo = lo.min(a);
            hi = hi.max(b);
        }
    }
    (sizes, (lo, hi))
}

/// Fits the power law with an isotonic (or, for a parametric
/// `metric_form`, natural) metric map.
pub fn cmd_fit(input: &Path, settings: &Settings) -> Result<(FitReport, i32)> {
    let bytes = std::fs::read(input).map_err(|e| Error::io(input, e))?;
    fit_bytes(
        &bytes,
        Format::from_path(input),
        Some(input.display().to_string()),
        settings,
    )
}

pub fn fit_bytes(bytes: &[u8], format: Format, name: Option<String>, settings: &Settings) -> Result<(FitReport, i32)> {
    let curves = prepare_curves(bytes, format, settings)?;
    let (sizes, e_window) = window_summary(settings, &curves);
    let (law, map, natural, diagnostics) = if settings.fit.metric_form.is_parametric() {
        let r = fit_natural(&curves, &settings.fit)?;
        (r.fit.law, None, Some(r.fit), r.diagnostics)
    } else {
        let r = fit_intrinsic(&curves, &settings.fit)?;
        (r.law, Some(r.map), None, r.diagnostics)
    };
    let exit = if diagnostics.diverged { 2 } else { 0 };
    let report = FitReport {
        schema_version: REPORT_SCHEMA_VERSION,
        provenance: Provenance {
            tool: TOOL.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            input: name,
            input_sha256: Some(sha256_hex(bytes)),
            seed: settings.fit.search.seed,
        },
        config: settings.clone(),
        map_breakpoints: map.as_ref().map(|m| m.f.breakpoints()).unwrap_or_default(),
        relation: natural.as_ref().map(NaturalFit::relation),
        optimal_size: optimal_equation(&law, settings.resolved_fppi()?)?,
        law,
        intrinsic_map: map,
        natural,
        sizes,
        e_window,
        dropped: curves.dropped.clone(),
        diagnostics,
    };
    Ok((report, exit))
}

/// Constants for the query commands: a fit report, a bare power-law JSON,
/// or explicit `alpha_N,alpha_E,N_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Constants {
    pub law: PowerLawFit,
    pub fppi: Option<f64>,
    pub report: Option<FitReport>,
}

pub fn load_constants(input: Option<&Path>, explicit: Option<&str>) -> Result<Constants> {
    if let Some(text) = explicit {
        let values: Vec<f64> = text
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidArgument(format!("--constants `{v}`: {e}")))
            })
            .collect::<Result<_>>()?;
        let [a, b, c] = values[..] else {
            return Err(Error::InvalidArgument("--constants takes alpha_N,alpha_E,N_c".into()));
        };
        return Ok(Constants {
            law: derive_constants(a, b, c)?,
            fppi: None,
            report: None,
        });
    }
    let Some(path) = input else {
        return Err(Error::InvalidArgument(
            "need --input (report or constants JSON) or --constants".into(),
        ));
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if let Ok(report) = FitReport::from_json(&text) {
        let fppi = report.optimal_size.as_ref().map(|o| o.fppi);
        return Ok(Constants {
            law: report.law,
            fppi,
            report: Some(report),
        });
    }
    let law: PowerLawFit = serde_json::from_str(&text)?;
    Ok(Constants {
        law,
        fppi: None,
        report: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeRow {
    pub compute_pfdays: f64,
    /// Compute in cost units: `(N + N_e) E` parameter-interactions.
    pub compute: f64,
    pub n: f64,
    pub e: f64,
    pub out_of_range: bool,
}

fn size_table_csv(rows: &[SizeRow]) -> String {
    let mut out = String::from("compute_pfdays,compute,n,e,out_of_range\n");
    for r in rows {
        out.push_str(&format!(
            "{:e},{:e},{:e},{:e},{}\n",
            r.compute_pfdays, r.compute, r.n, r.e, r.out_of_range
        ));
    }
    out
}

fn render<T: Serialize>(rows: &T, csv: impl FnOnce() -> String, format: OutputFormat) -> Result<String> {
    match format {
        OutputFormat::Json => Ok(serde_json::to_string_pretty(rows)? + "\n"),
        OutputFormat::Csv => Ok(csv()),
    }
}

/// Optimal model size per compute budget in PF-days.
pub fn cmd_optimal_size(law: &PowerLawFit, fppi: f64, compute_pfdays: &[f64]) -> Result<Vec<SizeRow>> {
    compute_pfdays
        .iter()
        .map(|&c_pf| {
            let c = pfdays_to_param_interactions(c_pf, fppi);
            let n = optimal_size_pfdays(law, c_pf, fppi)?;
            Ok(SizeRow {
                compute_pfdays: c_pf,
                compute: c,
                n: n.value,
                e: c / n.value,
                out_of_range: n.out_of_range,
            })
        })
        .collect()
}

/// Cost-efficient model size when each interaction costs `n_env`
/// parameter-equivalents. `n_env = 0` reproduces [`cmd_optimal_size`].
pub fn cmd_cost(law: &PowerLawFit, n_env: f64, fppi: f64, compute_pfdays: &[f64]) -> Result<Vec<SizeRow>> {
    if !(n_env >= 0.0) {
        return Err(Error::InvalidArgument(format!("N_e must be >= 0, got {n_env}")));
    }
    if n_env == 0.0 {
        return cmd_optimal_size(law, fppi, compute_pfdays);
    }
    let range = law.range();
    compute_pfdays
        .iter()
        .map(|&c_pf| {
            let c = pfdays_to_param_interactions(c_pf, fppi);
            let p = cost_optimal_size(law, n_env, c)?;
            Ok(SizeRow {
                compute_pfdays: c_pf,
                compute: p.cost,
                n: p.n,
                e: p.e,
                out_of_range: p.n < range.n_min || p.n > range.n_max,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitRow {
    pub limit: Limit,
    /// `E` for the infinite-size limit, `N` for the infinite-data limit.
    pub at: f64,
    pub intrinsic: f64,
}

/// Infinite-size curve at each `E` and infinite-data asymptote at each `N`.
pub fn cmd_extrapolate(law: &PowerLawFit, interactions: &[f64], sizes: &[f64]) -> Result<Vec<LimitRow>> {
    let mut rows = Vec::new();
    for &e in interactions {
        rows.push(LimitRow {
            limit: Limit::NInf,
            at: e,
            intrinsic: limit_curves(law, Limit::NInf, e)?,
        });
    }
    for &n in sizes {
        rows.push(LimitRow {
            limit: Limit::EInf,
            at: n,
            intrinsic: limit_curves(law, Limit::EInf, n)?,
        });
    }
    Ok(rows)
}

fn limit_csv(rows: &[LimitRow]) -> String {
    let mut out = String::from("limit,at,intrinsic\n");
    for r in rows {
        let name = match r.limit {
            Limit::NInf => "n_inf",
            Limit::EInf => "e_inf",
        };
        out.push_str(&format!("{name},{:e},{:e}\n", r.at, r.intrinsic));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonRow {
    #[serde(flatten)]
    pub estimate: TraceEstimate,
    pub horizon_term: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonReport {
    pub schema_version: u32,
    pub seed: u64,
    pub mdp: IndepMDP,
    pub rows: Vec<HorizonRow>,
    /// Trace against `h + 1/h - 2`; absent with fewer than 3 horizons.
    pub affine: Option<AffineFit>,
    pub sample_efficiency: Option<Vec<EfficiencyPoint>>,
    /// Interactions-to-target against `h`; reported, not asserted.
    pub sample_efficiency_affine: Option<AffineFit>,
}

pub fn cmd_simulate_horizon(settings: &Settings) -> Result<(HorizonReport, Vec<String>)> {
    let seed = settings.sweep.seed;
    let mdp = IndepMDP::random(settings.n_contexts, settings.n_actions, settings.reward_noise_sd, seed)?;
    let policy = SoftmaxPolicy::random(&mdp, settings.policy_scale, seed.wrapping_add(1));
    let estimates = run_sweep(&mdp, &policy, &settings.sweep)?;
    let rows: Vec<HorizonRow> = estimates
        .into_iter()
        .map(|e| HorizonRow {
            horizon_term: horizon_term(e.h),
            estimate: e,
        })
        .collect();
    let mut notes = Vec::new();
    let points: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| (r.horizon_term, r.estimate.trace_estimate))
        .collect();
    let affine = match affine_fit(&points) {
        Ok(f) => Some(f),
        Err(e) => {
            notes.push(format!("affine fit skipped: {e}"));
            None
        }
    };
    let (sample_efficiency, sample_efficiency_affine) = if settings.sample_efficiency {
        let pts = sample_efficiency_sweep(&mdp, &settings.sweep, &settings.training)?;
        let reached: Vec<(f64, f64)> = pts
            .iter()
            .filter_map(|p| p.interactions.map(|i| (p.h, i as f64)))
            .collect();
        let fit = affine_fit(&reached).ok();
        (Some(pts), fit)
    } else {
        (None, None)
    };
    Ok((
        HorizonReport {
            schema_version: REPORT_SCHEMA_VERSION,
            seed,
            mdp,
            rows,
            affine,
            sample_efficiency,
            sample_efficiency_affine,
        },
        notes,
    ))
}

fn horizon_csv(report: &HorizonReport) -> String {
    let mut out = String::from("h,gamma,trace_estimate,stderr,n_rollouts\n");
    for r in &report.rows {
        let e = &r.estimate;
        out.push_str(&format!(
            "{},{:e},{:e},{:e},{}\n",
            e.h, e.gamma, e.trace_estimate, e.stderr, e.n_rollouts
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub rows: Vec<RowCheck>,
    pub passed: usize,
    pub total: usize,
    /// Fail-ratio fits, checked the same way but not counted above.
    pub supplementary: Vec<RowCheck>,
}

/// Recomputes every bundled row. `rows` defaults to the 26 main rows.
pub fn cmd_validate_paper(rows: &[PublishedRow], tol: &RowTolerances) -> Result<ValidationReport> {
    let checks: Vec<RowCheck> = rows.iter().map(|r| check_row(r, tol)).collect::<Result<_>>()?;
    let supplementary = dataset()
        .fail_ratio_rows
        .iter()
        .map(|r| check_row(r, tol))
        .collect::<Result<_>>()?;
    Ok(ValidationReport {
        passed: checks.iter().filter(|c| c.pass).count(),
        total: checks.len(),
        rows: checks,
        supplementary,
    })
}

fn validation_csv(report: &ValidationReport) -> String {
    let mut out = String::from(
        "label,fppi,beta,beta_rel_err,e_c,e_c_rel_err,coeff,coeff_rel_err,exponent,exponent_rel_err,pass\n",
    );
    for c in report.rows.iter().chain(&report.supplementary) {
        out.push_str(&format!(
            "\"{}\",{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{}\n",
            c.label,
            c.fppi,
            c.beta,
            c.beta_rel_err,
            c.e_c,
            c.e_c_rel_err,
            c.coeff,
            c.coeff_rel_err,
            c.exponent,
            c.exponent_rel_err,
            c.pass
        ));
    }
    out
}

/// Applies `LABEL:FIELD:FACTOR` to a copy of the main rows.
pub fn perturb_rows(rows: &[PublishedRow], perturbation: &str) -> Result<Vec<PublishedRow>> {
    let mut parts = perturbation.rsplitn(3, ':');
    let (Some(factor), Some(field), Some(label)) = (parts.next(), parts.next(), parts.next()) else {
        return Err(Error::InvalidArgument(format!(
            "--perturb wants LABEL:FIELD:FACTOR, got `{perturbation}`"
        )));
    };
    let factor: f64 = factor
        .parse()
        .map_err(|e| Error::InvalidArgument(format!("--perturb factor: {e}")))?;
    let mut out = rows.to_vec();
    let row = out
        .iter_mut()
        .find(|r| r.label() == label)
        .ok_or_else(|| Error::InvalidArgument(format!("no row labelled `{label}`")))?;
    let slot = match field {
        "alpha_n" => &mut row.alpha_n,
        "alpha_e" => &mut row.alpha_e,
        "beta" => &mut row.beta,
        "n_c" => &mut row.n_c,
        "e_c" => &mut row.e_c,
        "optimal_coeff" => &mut row.optimal_coeff,
        "optimal_exp" => &mut row.optimal_exp,
        other => return Err(Error::InvalidArgument(format!("cannot perturb field `{other}`"))),
    };
    *slot *= factor;
    Ok(out)
}

/// Plot data behind the standard figures, from a fit report.
pub fn cmd_plot_data(
    report: &FitReport,
    kind: PlotKind,
    data: Option<&LearningCurveSet>,
    fppi: Option<f64>,
) -> Result<PlotData> {
    let sizes: Vec<f64> = report.sizes.iter().map(|&s| s as f64).collect();
    match kind {
        PlotKind::LearningCurves => plot::learning_curves(
            &report.law,
            &sizes,
            report.e_window,
            data.zip(report.intrinsic_map.as_ref()),
        ),
        PlotKind::Frontier => plot::frontier(&report.law, &sizes),
        PlotKind::OptimalSize => {
            let fppi = fppi
                .or(report.optimal_size.as_ref().map(|o| o.fppi))
                .ok_or_else(|| Error::InvalidArgument("optimal_size plot needs --fppi or a report with one".into()))?;
            plot::optimal_size(&report.law, fppi, (1e-6, 1e2), &dataset().reference_laws)
        }
        PlotKind::Extrapolation => {
            let (lo, hi) = report.e_window;
            plot::extrapolation(&report.law, &sizes, (lo, hi * 100.0))
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "intrinsic-scaling",
    version,
    about = "Fit intrinsic-performance scaling laws to learning curves"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// Input file (runs CSV/JSON for fits, report JSON for queries).
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    /// Flat key = value config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Write the result here instead of stdout.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Json)]
    pub format: OutputFormat,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the power law and an isotonic metric map to learning curves.
    Fit {
        #[command(flatten)]
        common: Common,
    },
    /// Fit through a parametric natural metric (set metric_form in the config).
    FitNatural {
        #[command(flatten)]
        common: Common,
        /// Overrides metric_form.
        #[arg(long)]
        form: Option<String>,
    },
    /// Optimal model size for compute budgets in PF-days.
    OptimalSize {
        #[command(flatten)]
        common: Common,
        /// alpha_N,alpha_E,N_c instead of a report.
        #[arg(long, allow_hyphen_values = true)]
        constants: Option<String>,
        #[arg(long)]
        fppi: Option<f64>,
        /// Comma-separated PF-day budgets.
        #[arg(long)]
        compute: Option<String>,
    },
    /// Cost-efficient frontier with a per-interaction environment cost.
    Cost {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_hyphen_values = true)]
        constants: Option<String>,
        #[arg(long)]
        fppi: Option<f64>,
        #[arg(long)]
        compute: Option<String>,
        /// Environment cost in parameter-equivalents.
        #[arg(long, allow_hyphen_values = true)]
        n_env: Option<f64>,
    },
    /// Infinite-size and infinite-data limits.
    Extrapolate {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_hyphen_values = true)]
        constants: Option<String>,
        /// Comma-separated interaction counts for the infinite-size curve.
        #[arg(long)]
        interactions: Option<String>,
        /// Comma-separated model sizes for the infinite-data asymptote.
        #[arg(long)]
        sizes: Option<String>,
    },
    /// Gradient-variance sweep over horizons on a toy environment.
    SimulateHorizon {
        #[command(flatten)]
        common: Common,
    },
    /// Recompute the bundled published constants and their derived equations.
    ValidatePaper {
        #[command(flatten)]
        common: Common,
        /// Negative control: scale one field of one row, `LABEL:FIELD:FACTOR`.
        #[arg(long)]
        perturb: Option<String>,
    },
    /// CSV (or JSON) data behind a plot, optionally rendered as SVG.
    PlotData {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_kind)]
        kind: PlotKind,
        /// Raw runs to overlay on the learning-curve view.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        fppi: Option<f64>,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
}

fn parse_kind(s: &str) -> std::result::Result<PlotKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|e| Error::InvalidArgument(format!("`{}`: {e}", v.trim())))
        })
        .collect()
}

fn settings_for(common: &Common) -> Result<Settings> {
    let mut s = load_settings(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        s.fit.search.seed = seed;
        s.sweep.seed = seed;
    }
    Ok(s)
}

fn require_input(common: &Common) -> Result<&Path> {
    common
        .input
        .as_deref()
        .ok_or_else(|| Error::InvalidArgument("--input is required".into()))
}

fn resolve_fppi(flag: Option<f64>, constants: &Constants, settings: &Settings) -> Result<f64> {
    flag.or(settings.resolved_fppi()?).or(constants.fppi).ok_or_else(|| {
        Error::InvalidArgument("need FLOPs per param-interaction: --fppi, or fppi / model_family in the config".into())
    })
}

/// `--compute`, else the `--config` list, else the list the report was
/// made with, else the default.
fn budgets(flag: Option<&str>, common: &Common, constants: &Constants, settings: &Settings) -> Result<Vec<f64>> {
    match (flag, &constants.report) {
        (Some(t), _) => parse_list(t),
        (None, Some(r)) if common.config.is_none() => Ok(r.config.compute_pfdays.clone()),
        _ => Ok(settings.compute_pfdays.clone()),
    }
}

fn fit_outcome(report: &FitReport, exit: i32, format: OutputFormat) -> Result<Outcome> {
    let body = match format {
        OutputFormat::Json => report.to_json()?,
        OutputFormat::Csv => {
            let l = &report.law;
            format!(
                "alpha_n,alpha_e,n_c,beta,e_c,loss,diverged\n{:e},{:e},{:e},{:e},{:e},{:e},{}\n",
                l.alpha_n(),
                l.alpha_e(),
                l.n_c(),
                l.beta(),
                l.e_c(),
                report.diagnostics.loss,
                report.diagnostics.diverged
            )
        }
    };
    Ok(Outcome {
        stdout: body.into_bytes(),
        notes: report.diagnostics.warnings.clone(),
        exit_code: exit,
    })
}

/// Runs one parsed command.
pub fn execute(command: &Command) -> Result<Outcome> {
    match command {
        Command::Fit { common } => {
            let settings = settings_for(common)?;
            let (report, exit) = cmd_fit(require_input(common)?, &settings)?;
            fit_outcome(&report, exit, common.format)
        }
        Command::FitNatural { common, form } => {
            let mut settings = settings_for(common)?;
            if let Some(f) = form {
                settings.fit.metric_form = f.parse()?;
            }
            if !settings.fit.metric_form.is_parametric() {
                return Err(Error::InvalidArgument(
                    "fit-natural needs a parametric metric_form".into(),
                ));
            }
            let (report, exit) = cmd_fit(require_input(common)?, &settings)?;
            fit_outcome(&report, exit, common.format)
        }
        Command::OptimalSize {
            common,
            constants,
            fppi,
            compute,
        } => {
            let settings = settings_for(common)?;
            let c = load_constants(common.input.as_deref(), constants.as_deref())?;
            let fppi = resolve_fppi(*fppi, &c, &settings)?;
            let budgets = budgets(compute.as_deref(), common, &c, &settings)?;
            let rows = cmd_optimal_size(&c.law, fppi, &budgets)?;
            Ok(Outcome::ok(render(&rows, || size_table_csv(&rows), common.format)?))
        }
        Command::Cost {
            common,
            constants,
            fppi,
            compute,
            n_env,
        } => {
            let settings = settings_for(common)?;
            let c = load_constants(common.input.as_deref(), constants.as_deref())?;
            let fppi = resolve_fppi(*fppi, &c, &settings)?;
            let budgets = budgets(compute.as_deref(), common, &c, &settings)?;
            let rows = cmd_cost(&c.law, n_env.unwrap_or(settings.n_env), fppi, &budgets)?;
            Ok(Outcome::ok(render(&rows, || size_table_csv(&rows), common.format)?))
        }
        Command::Extrapolate {
            common,
            constants,
            interactions,
            sizes,
        } => {
            let settings = settings_for(common)?;
            let c = load_constants(common.input.as_deref(), constants.as_deref())?;
            let es = match interactions {
                Some(t) => parse_list(t)?,
                None => {
                    let (lo, hi) = c.report.as_ref().map_or((1e6, 1e9), |r| r.e_window);
                    vec![lo, (lo * hi).sqrt(), hi, hi * 10.0, hi * 100.0]
                }
            };
            let ns = match sizes {
                Some(t) => parse_list(t)?,
                None if !settings.sizes.is_empty() => settings.sizes.clone(),
                None => c
                    .report
                    .as_ref()
                    .map_or_else(Vec::new, |r| r.sizes.iter().map(|&s| s as f64).collect()),
            };
            let rows = cmd_extrapolate(&c.law, &es, &ns)?;
            Ok(Outcome::ok(render(&rows, || limit_csv(&rows), common.format)?))
        }
        Command::SimulateHorizon { common } => {
            let settings = settings_for(common)?;
            let (report, notes) = cmd_simulate_horizon(&settings)?;
            let mut notes = notes;
            let body = match common.format {
                OutputFormat::Json => serde_json::to_string_pretty(&report)? + "\n",
                OutputFormat::Csv => {
                    if let Some(a) = &report.affine {
                        notes.push(format!(
                            "affine fit: intercept {:e}, slope {:e}, r_squared {:.6}",
                            a.intercept, a.slope, a.r_squared
                        ));
                    }
                    horizon_csv(&report)
                }
            };
            Ok(Outcome {
                stdout: body.into_bytes(),
                notes,
                exit_code: 0,
            })
        }
        Command::ValidatePaper { common, perturb } => {
            let rows = match perturb {
                Some(p) => perturb_rows(published_constants(), p)?,
                None => published_constants().to_vec(),
            };
            let report = cmd_validate_paper(&rows, &RowTolerances::default())?;
            let mut notes = vec![format!("{}/{} rows pass", report.passed, report.total)];
            for c in report.rows.iter().filter(|c| !c.pass) {
                notes.push(format!("FAIL {}", c.label));
            }
            let exit = if report.passed == report.total { 0 } else { 2 };
            let body = render(&report, || validation_csv(&report), common.format)?;
            Ok(Outcome {
                stdout: body.into_bytes(),
                notes,
                exit_code: exit,
            })
        }
        Command::PlotData {
            common,
            kind,
            data,
            fppi,
            svg,
        } => {
            let settings = settings_for(common)?;
            let path = require_input(common)?;
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let report = FitReport::from_json(&text)?;
            let curves = match data {
                Some(p) => {
                    let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
                    Some(prepare_curves(&bytes, Format::from_path(p), &settings)?)
                }
                None => None,
            };
            let plot = cmd_plot_data(&report, *kind, curves.as_ref(), *fppi)?;
            if let Some(svg_path) = svg {
                write_atomic(svg_path, plot::to_svg(&plot).as_bytes())?;
            }
            let body = match common.format {
                OutputFormat::Json => serde_json::to_string_pretty(&plot)? + "\n",
                OutputFormat::Csv => plot::to_csv(&plot),
            };
            Ok(Outcome::ok(body))
        }
    }
}

fn common_of(command: &Command) -> &Common {
    match command {
        Command::Fit { common }
        | Command::FitNatural { common, .. }
        | Command::OptimalSize { common, .. }
        | Command::Cost { common, .. }
        | Command::Extrapolate { common, .. }
        | Command::SimulateHorizon { common }
        | Command::ValidatePaper { common, .. }
        | Command::PlotData { common, .. } => common,
    }
}

/// Writes through a temporary sibling file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp"));
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes)
        .and_then(|_| f.sync_all())
        .map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Parses, executes and delivers output; returns the exit code.
pub fn run(cli: &Cli, stdout: &mut impl std::io::Write, stderr: &mut impl std::io::Write) -> i32 {
    match execute(&cli.command) {
        Ok(outcome) => {
            for note in &outcome.notes {
                let _ = writeln!(stderr, "{note}");
            }
            let delivered = match &common_of(&cli.command).output {
                Some(path) => write_atomic(path, &outcome.stdout),
                None => stdout.write_all(&outcome.stdout).map_err(|e| Error::io("<stdout>", e)),
            };
            match delivered {
                Ok(()) => outcome.exit_code,
                Err(e) => {
                    let _ = writeln!(stderr, "error: {e}");
                    1
                }
            }
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coinrun() -> PowerLawFit {
        derive_constants(0.542, 0.462, 2.53e-2)
            .unwrap()
            .with_range(crate::scalinglaw::ValidityRange {
                i_min: 4.83e10,
                i_max: 2.55e14,
                n_min: 19408.0,
                n_max: 310528.0,
            })
            .unwrap()
    }

    const WIDTH_FPPI: f64 = 2652897280.0 / 1242112.0;

    #[test]
    fn optimal_size_examples() {
        let rows = cmd_optimal_size(&coinrun(), WIDTH_FPPI, &[1.0]).unwrap();
        assert!((rows[0].n / 4.615e6 - 1.0).abs() < 0.02, "{}", rows[0].n);
        assert!(rows[0].out_of_range);
        let grid: Vec<f64> = (0..=6).map(|k| 10f64.powi(-k)).collect();
        let rows = cmd_optimal_size(&coinrun(), WIDTH_FPPI, &grid).unwrap();
        let slope = (rows[0].n / rows[6].n).ln() / (rows[0].compute_pfdays / rows[6].compute_pfdays).ln();
        assert!((slope - 0.462 / 1.004).abs() < 1e-9);
        assert!((slope - 0.4600).abs() / 0.46 < 3e-3);
        let sym = derive_constants(0.6, 0.6, 1e-3).unwrap();
        let rows = cmd_optimal_size(&sym, 8.0, &[1e-3, 1.0]).unwrap();
        let slope = (rows[1].n / rows[0].n).ln() / 1e3f64.ln();
        assert!((slope - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cost_with_zero_env_is_byte_identical() {
        let grid = [1e-6, 1e-3, 1.0];
        let a = size_table_csv(&cmd_optimal_size(&coinrun(), WIDTH_FPPI, &grid).unwrap());
        let b = size_table_csv(&cmd_cost(&coinrun(), 0.0, WIDTH_FPPI, &grid).unwrap());
        assert_eq!(a, b);
        assert!(cmd_cost(&coinrun(), -1.0, WIDTH_FPPI, &grid).is_err());
    }

    fn brute_force_cost_optimum(law: &PowerLawFit, n_env: f64, c: f64) -> f64 {
        let cost = |n: f64| law.inverse_power(n, c / (n + n_env));
        let (mut best, mut best_v) = (0.0, f64::INFINITY);
        for k in 0..=20000 {
            let n = 10f64.powf(-4.0 + 14.0 * k as f64 / 20000.0);
            let v = cost(n);
            if v < best_v {
                best = n;
                best_v = v;
            }
        }
        best
    }

    #[test]
    fn cost_optimum_matches_brute_force_and_converges() {
        let law = coinrun();
        let n_env = 1e5;
        let grid: Vec<f64> = (0..40).map(|k| 10f64.powf(-12.0 + 0.4 * k as f64)).collect();
        let zero = cmd_optimal_size(&law, WIDTH_FPPI, &grid).unwrap();
        let env = cmd_cost(&law, n_env, WIDTH_FPPI, &grid).unwrap();
        for row in env.iter().step_by(8) {
            let brute = brute_force_cost_optimum(&law, n_env, row.compute);
            assert!((row.n / brute - 1.0).abs() < 3e-3, "{row:?} vs {brute}");
        }
        // alpha_E < 1: interactions are the scarcer input, so the optimum moves up
        for (a, b) in zero.iter().zip(&env) {
            assert!(b.n >= a.n * (1.0 - 1e-9), "{b:?} vs {a:?}");
        }
        let last = grid.len() - 1;
        assert!((env[last].n / zero[last].n - 1.0).abs() < 0.01);
        assert!(env[0].n > 2.0 * zero[0].n);
    }

    #[test]
    fn cost_large_c_slope() {
        let law = coinrun();
        let n_env = 1e5;
        // crossover: frontier compute at N = N_e
        let cross = n_env * crate::scalinglaw::efficient_frontier(&law, n_env).unwrap();
        let c = 1e6 * cross;
        let a = cost_optimal_size(&law, n_env, c).unwrap();
        let b = cost_optimal_size(&law, n_env, c * 1.01).unwrap();
        let slope = (b.n / a.n).ln() / 1.01f64.ln();
        assert!((slope - law.optimal_exponent()).abs() < 1e-3, "{slope}");
    }

    #[test]
    fn extrapolation_rows() {
        let rows = cmd_extrapolate(&coinrun(), &[1e6, 1e8], &[1e4]).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[2].limit, Limit::EInf);
        assert!(limit_csv(&rows).starts_with("limit,at,intrinsic\nn_inf,"));
    }

    #[test]
    fn validation_passes_and_negative_control_fails() {
        let ok = cmd_validate_paper(published_constants(), &RowTolerances::default()).unwrap();
        assert_eq!((ok.passed, ok.total), (26, 26));
        assert_eq!(ok.supplementary.len(), 2);
        let bad = perturb_rows(published_constants(), "CoinRun, easy [width]:beta:1.05").unwrap();
        let r = cmd_validate_paper(&bad, &RowTolerances::default()).unwrap();
        assert_eq!(r.passed, 25);
        assert!(!r.rows[0].pass);
        assert!(perturb_rows(published_constants(), "nope").is_err());
        assert!(perturb_rows(published_constants(), "Nowhere [x]:beta:2").is_err());
    }

    #[test]
    fn constants_flag() {
        let c = load_constants(None, Some("0.542,0.462,2.53e-2")).unwrap();
        assert!((c.law.beta() - 0.2494).abs() < 1e-3);
        assert!(load_constants(None, Some("1,2")).is_err());
        assert!(load_constants(None, None).is_err());
    }
}
