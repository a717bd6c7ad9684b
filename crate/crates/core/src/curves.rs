//! Learning-curve ingestion and preprocessing.
//!
//! Raw per-seed records come in as CSV or JSON with the columns
//! `family_id,model_size,seed,interactions,metric`. [`aggregate_seeds`]
//! turns them into one mean curve per model size, [`exclude_early`] and
//! [`truncate_late`] cut the analysis window, and [`smooth`] applies a
//! Gaussian kernel in `log10 E` so the curves are close enough to
//! monotone for the isotonic inner fit.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 5] = ["family_id", "model_size", "seed", "interactions", "metric"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    /// Mean episode return.
    #[default]
    Return,
    /// Mean return of a binary-reward task, turned into the fail-to-success
    /// ratio `(R_max - R) / R` for the fail-ratio metric form.
    FailRatioSource,
    TrueSkill,
}

impl MetricKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MetricKind::Return => "return",
            MetricKind::FailRatioSource => "fail_ratio_source",
            MetricKind::TrueSkill => "trueskill",
        }
    }
}

impl std::str::FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "return" => Ok(MetricKind::Return),
            "fail_ratio_source" => Ok(MetricKind::FailRatioSource),
            "trueskill" => Ok(MetricKind::TrueSkill),
            other => Err(Error::InvalidArgument(format!("unknown metric kind `{other}`"))),
        }
    }
}

/// What the `model_size` column counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeUnit {
    #[default]
    Parameters,
    FlopsPerForwardPass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    /// Picks the format from a file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => Format::Json,
            _ => Format::Csv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub family_id: String,
    pub model_size: u64,
    pub seed: i64,
    pub interactions: u64,
    pub metric: f64,
    pub metric_kind: MetricKind,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RunKey {
    pub family_id: String,
    pub model_size: u64,
    pub seed: i64,
}

/// Per-seed records grouped by `(family, size, seed)`, each run sorted by
/// interactions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSet {
    runs: BTreeMap<RunKey, Vec<(u64, f64)>>,
    pub metric_kind: MetricKind,
    pub size_unit: SizeUnit,
}

impl RunSet {
    pub fn new(metric_kind: MetricKind) -> Self {
        Self {
            metric_kind,
            ..Default::default()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    pub fn runs(&self) -> impl Iterator<Item = (&RunKey, &[(u64, f64)])> {
        self.runs.iter().map(|(k, v)| (k, v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.runs.values().map(Vec::len).sum()
    }

    /// Adds one record; rejects a second record at the same interaction count.
    pub fn insert(
        &mut self,
        family_id: &str,
        model_size: u64,
        seed: i64,
        interactions: u64,
        metric: f64,
    ) -> Result<()> {
        let key = RunKey {
            family_id: family_id.to_string(),
            model_size,
            seed,
        };
        let run = self.runs.entry(key).or_default();
        match run.binary_search_by_key(&interactions, |p| p.0) {
            Ok(_) => Err(Error::DuplicateRow {
                family: family_id.to_string(),
                size: model_size,
                seed,
                interactions,
            }),
            Err(pos) => {
                run.insert(pos, (interactions, metric));
                Ok(())
            }
        }
    }

    pub fn records(&self) -> Vec<RunRecord> {
        self.runs
            .iter()
            .flat_map(|(k, v)| {
                v.iter().map(move |&(e, m)| RunRecord {
                    family_id: k.family_id.clone(),
                    model_size: k.model_size,
                    seed: k.seed,
                    interactions: e,
                    metric: m,
                    metric_kind: self.metric_kind,
                })
            })
            .collect()
    }

    pub fn families(&self) -> Vec<String> {
        let mut out: Vec<String> = self.runs.keys().map(|k| k.family_id.clone()).collect();
        out.dedup();
        out
    }

    /// Keeps only the runs of one family.
    pub fn filter_family(&self, family: &str) -> RunSet {
        RunSet {
            runs: self
                .runs
                .iter()
                .filter(|(k, _)| k.family_id == family)
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
            metric_kind: self.metric_kind,
            size_unit: self.size_unit,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    pub metric_kind: MetricKind,
    pub size_unit: SizeUnit,
}

pub fn load_runs(path: &Path, format: Format, opts: LoadOptions) -> Result<RunSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_runs(&bytes, format, opts)
}

pub fn parse_runs(bytes: &[u8], format: Format, opts: LoadOptions) -> Result<RunSet> {
    let mut set = match format {
        Format::Csv => parse_csv(bytes, opts.metric_kind)?,
        Format::Json => parse_json(bytes, opts.metric_kind)?,
    };
    set.size_unit = opts.size_unit;
    Ok(set)
}

fn parse_csv(bytes: &[u8], kind: MetricKind) -> Result<RunSet> {
    let mut set = RunSet::new(kind);
    if bytes.iter().all(|b| b.is_ascii_whitespace()) {
        return Ok(set);
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let mut index = [0usize; 5];
    for (slot, name) in index.iter_mut().zip(CSV_HEADER) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
    }
    if let Some(extra) = headers.iter().find(|h| !CSV_HEADER.contains(h)) {
        return Err(Error::Parse {
            line: 1,
            message: format!("unexpected column `{extra}`"),
        });
    }
    for row in reader.records() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| row.get(index[i]).unwrap_or("");
        let family = field(0);
        if family.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty family_id".into(),
            });
        }
        let size = parse_count(field(1), "model_size", line)?;
        let seed: i64 = field(2).parse().map_err(|_| Error::Parse {
            line,
            message: format!("seed `{}` is not an integer", field(2)),
        })?;
        let e = parse_count(field(3), "interactions", line)?;
        let metric: f64 = field(4).parse().map_err(|_| Error::Parse {
            line,
            message: format!("metric `{}` is not a number", field(4)),
        })?;
        if !metric.is_finite() {
            return Err(Error::Parse {
                line,
                message: "metric must be finite".into(),
            });
        }
        set.insert(family, size, seed, e, metric)?;
    }
    Ok(set)
}

fn parse_count(s: &str, name: &str, line: usize) -> Result<u64> {
    let v: i128 = s.parse().map_err(|_| Error::Parse {
        line,
        message: format!("{name} `{s}` is not an integer"),
    })?;
    if v <= 0 || v > u64::MAX as i128 {
        return Err(Error::Parse {
            line,
            message: format!("{name} must be positive, got {v}"),
        });
    }
    Ok(v as u64)
}

#[derive(Deserialize)]
struct JsonRecord {
    family_id: String,
    model_size: i128,
    seed: i64,
    interactions: i128,
    metric: f64,
}

fn parse_json(bytes: &[u8], kind: MetricKind) -> Result<RunSet> {
    let mut set = RunSet::new(kind);
    if bytes.iter().all(|b| b.is_ascii_whitespace()) {
        return Ok(set);
    }
    let records: Vec<JsonRecord> = serde_json::from_slice(bytes).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    for (i, r) in records.into_iter().enumerate() {
        let check = |v: i128, name: &str| -> Result<u64> {
            if v <= 0 || v > u64::MAX as i128 {
                Err(Error::InvalidArgument(format!(
                    "record {i}: {name} must be positive, got {v}"
                )))
            } else {
                Ok(v as u64)
            }
        };
        let size = check(r.model_size, "model_size")?;
        let e = check(r.interactions, "interactions")?;
        if !r.metric.is_finite() {
            return Err(Error::InvalidArgument(format!("record {i}: metric must be finite")));
        }
        set.insert(&r.family_id, size, r.seed, e, r.metric)?;
    }
    Ok(set)
}

/// Writes records back out in the canonical CSV layout.
pub fn write_csv(set: &RunSet) -> String {
    let mut out = CSV_HEADER.join(",");
    out.push('\n');
    for r in set.records() {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.family_id, r.model_size, r.seed, r.interactions, r.metric
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub interactions: f64,
    pub mean_metric: f64,
    pub stderr: f64,
    pub n_seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub family_id: String,
    pub model_size: u64,
    pub metric_kind: MetricKind,
    /// Strictly increasing in interactions.
    pub points: Vec<CurvePoint>,
}

impl LearningCurve {
    pub fn interaction_window(&self) -> Option<(f64, f64)> {
        Some((self.points.first()?.interactions, self.points.last()?.interactions))
    }

    fn retain(&self, keep: impl Fn(&CurvePoint) -> bool) -> LearningCurve {
        LearningCurve {
            points: self.points.iter().copied().filter(|p| keep(p)).collect(),
            ..self.clone()
        }
    }
}

/// Seed-aggregated curves, ordered by `(family, size)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurveSet {
    curves: Vec<LearningCurve>,
    /// Curves removed because windowing left them empty.
    pub dropped: Vec<(String, u64)>,
}

impl LearningCurveSet {
    pub fn from_curves(mut curves: Vec<LearningCurve>) -> Self {
        curves.sort_by(|a, b| (&a.family_id, a.model_size).cmp(&(&b.family_id, b.model_size)));
        Self {
            curves,
            dropped: Vec::new(),
        }
    }

    pub fn curves(&self) -> &[LearningCurve] {
        &self.curves
    }

    pub fn is_empty(&self) -> bool {
        self.curves.is_empty()
    }

    pub fn n_points(&self) -> usize {
        self.curves.iter().map(|c| c.points.len()).sum()
    }

    pub fn families(&self) -> Vec<String> {
        let mut out: Vec<String> = self.curves.iter().map(|c| c.family_id.clone()).collect();
        out.dedup();
        out
    }

    pub fn map_curves(&self, f: impl Fn(&LearningCurve) -> Result<LearningCurve>) -> Result<Self> {
        Ok(Self {
            curves: self.curves.iter().map(f).collect::<Result<_>>()?,
            dropped: self.dropped.clone(),
        })
    }

    fn window(&self, keep: impl Fn(&CurvePoint) -> bool) -> Self {
        let mut dropped = self.dropped.clone();
        let mut curves = Vec::with_capacity(self.curves.len());
        for c in &self.curves {
            let kept = c.retain(&keep);
            if kept.points.is_empty() {
                dropped.push((c.family_id.clone(), c.model_size));
            } else {
                curves.push(kept);
            }
        }
        dropped.sort();
        Self { curves, dropped }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AggregateOptions {
    /// Seeds dropped from each end of the ranking (by mean metric over the
    /// curve) before averaging.
    pub trim: usize,
}

type SeedRun<'a> = (i64, &'a [(u64, f64)]);

/// Averages seeds per `(family, size)`, with sample standard errors.
pub fn aggregate_seeds(runs: &RunSet, opts: AggregateOptions) -> Result<LearningCurveSet> {
    let mut groups: BTreeMap<(String, u64), Vec<SeedRun>> = BTreeMap::new();
    for (key, run) in runs.runs() {
        groups
            .entry((key.family_id.clone(), key.model_size))
            .or_default()
            .push((key.seed, run));
    }

    let mut curves = Vec::with_capacity(groups.len());
    for ((family, size), mut seeds) in groups {
        if opts.trim > 0 {
            if seeds.len() <= 2 * opts.trim {
                return Err(Error::InvalidArgument(format!(
                    "family `{family}` size {size}: cannot trim {} seeds from each end of {}",
                    opts.trim,
                    seeds.len()
                )));
            }
            seeds.sort_by(|a, b| {
                let ma = a.1.iter().map(|p| p.1).sum::<f64>() / a.1.len() as f64;
                let mb = b.1.iter().map(|p| p.1).sum::<f64>() / b.1.len() as f64;
                ma.total_cmp(&mb).then(a.0.cmp(&b.0))
            });
            seeds = seeds[opts.trim..seeds.len() - opts.trim].to_vec();
            seeds.sort_by_key(|s| s.0);
        }
        let points = align_and_average(&family, size, &seeds)?;
        curves.push(LearningCurve {
            family_id: family,
            model_size: size,
            metric_kind: runs.metric_kind,
            points,
        });
    }
    Ok(LearningCurveSet::from_curves(curves))
}

fn align_and_average(family: &str, size: u64, seeds: &[(i64, &[(u64, f64)])]) -> Result<Vec<CurvePoint>> {
    let reference = seeds[0].1;
    let log_ref: Vec<f64> = reference.iter().map(|p| (p.0 as f64).log10()).collect();
    let half_step = |i: usize| -> f64 {
        let left = if i > 0 {
            log_ref[i] - log_ref[i - 1]
        } else {
            f64::INFINITY
        };
        let right = if i + 1 < log_ref.len() {
            log_ref[i + 1] - log_ref[i]
        } else {
            f64::INFINITY
        };
        let step = left.min(right);
        if step.is_finite() {
            0.5 * step
        } else {
            0.0
        }
    };
    for (seed, run) in &seeds[1..] {
        if run.len() != reference.len() {
            return Err(Error::InconsistentGrid {
                family: family.to_string(),
                size,
                detail: format!(
                    "seed {seed} has {} points, seed {} has {}",
                    run.len(),
                    seeds[0].0,
                    reference.len()
                ),
            });
        }
        for (i, p) in run.iter().enumerate() {
            let d = ((p.0 as f64).log10() - log_ref[i]).abs();
            if d > half_step(i) {
                return Err(Error::InconsistentGrid {
                    family: family.to_string(),
                    size,
                    detail: format!(
                        "seed {seed} point {i} at E={} does not align with E={}",
                        p.0, reference[i].0
                    ),
                });
            }
        }
    }

    let n = seeds.len();
    let mut points = Vec::with_capacity(reference.len());
    let mut values = Vec::with_capacity(n);
    for i in 0..reference.len() {
        values.clear();
        values.extend(seeds.iter().map(|s| s.1[i].1));
        // fixed summation order makes the mean independent of seed order
        values.sort_by(f64::total_cmp);
        let mean = values.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        let mut logs: Vec<f64> = seeds.iter().map(|s| (s.1[i].0 as f64).ln()).collect();
        logs.sort_by(f64::total_cmp);
        let interactions = if logs.iter().all(|l| *l == logs[0]) {
            seeds[0].1[i].0 as f64
        } else {
            (logs.iter().sum::<f64>() / n as f64).exp()
        };
        points.push(CurvePoint {
            interactions,
            mean_metric: mean,
            stderr,
            n_seeds: n,
        });
    }
    Ok(points)
}

/// Drops every point with `E < threshold`; curves left empty are recorded
/// in `dropped`.
pub fn exclude_early(curves: &LearningCurveSet, threshold: f64) -> LearningCurveSet {
    curves.window(|p| p.interactions >= threshold)
}

/// Drops every point with `E > threshold`.
pub fn truncate_late(curves: &LearningCurveSet, threshold: f64) -> LearningCurveSet {
    curves.window(|p| p.interactions <= threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    pub points_per_decade: usize,
    /// Target RMS residual of the smoothed curve, relative to the median stderr.
    pub target_residual_ratio: f64,
    /// Smallest Gaussian kernel width, in decades of interactions.
    pub min_bandwidth_decades: f64,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            points_per_decade: 16,
            target_residual_ratio: 1.0,
            min_bandwidth_decades: 0.02,
        }
    }
}

impl SmoothingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.points_per_decade < 4 {
            return Err(Error::InvalidArgument("points_per_decade must be at least 4".into()));
        }
        if !(self.target_residual_ratio > 0.0 && self.target_residual_ratio <= 2.0) {
            return Err(Error::InvalidArgument(
                "target_residual_ratio must lie in (0, 2]".into(),
            ));
        }
        if !(self.min_bandwidth_decades > 0.0) {
            return Err(Error::InvalidArgument("min_bandwidth_decades must be positive".into()));
        }
        Ok(())
    }
}

struct Kernel<'a> {
    xs: &'a [f64],
    ys: &'a [f64],
}

impl Kernel<'_> {
    fn weights(&self, x: f64, bandwidth: f64) -> impl Iterator<Item = f64> + '_ {
        self.xs.iter().map(move |xi| {
            let z = (x - xi) / bandwidth;
            (-0.5 * z * z).exp()
        })
    }

    fn estimate(&self, x: f64, bandwidth: f64) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for (w, y) in self.weights(x, bandwidth).zip(self.ys) {
            num += w * y;
            den += w;
        }
        if den > 0.0 {
            num / den
        } else {
            // far outside the kernel's reach: nearest neighbour
            self.ys[nearest(self.xs, x)]
        }
    }

    fn rms_residual(&self, bandwidth: f64) -> f64 {
        let ss: f64 = self
            .xs
            .iter()
            .zip(self.ys)
            .map(|(x, y)| {
                let d = self.estimate(*x, bandwidth) - y;
                d * d
            })
            .sum();
        (ss / self.xs.len() as f64).sqrt()
    }
}

fn nearest(xs: &[f64], x: f64) -> usize {
    let mut best = 0;
    for (i, xi) in xs.iter().enumerate() {
        if (xi - x).abs() < (xs[best] - x).abs() {
            best = i;
        }
    }
    best
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Largest kernel width (decades) whose RMS residual stays within the
/// target, found by bisection in log-bandwidth.
pub fn choose_bandwidth(curve: &LearningCurve, cfg: &SmoothingConfig) -> Result<f64> {
    cfg.validate()?;
    if curve.points.len() < 4 {
        return Err(Error::TooFewPoints {
            found: curve.points.len(),
            required: 4,
        });
    }
    let xs: Vec<f64> = curve.points.iter().map(|p| p.interactions.log10()).collect();
    let ys: Vec<f64> = curve.points.iter().map(|p| p.mean_metric).collect();
    let kernel = Kernel { xs: &xs, ys: &ys };
    let mut se: Vec<f64> = curve.points.iter().map(|p| p.stderr).collect();
    let target = cfg.target_residual_ratio * median(&mut se);

    let b_min = cfg.min_bandwidth_decades;
    let span = xs[xs.len() - 1] - xs[0];
    let b_max = span.max(b_min);
    if kernel.rms_residual(b_min) > target {
        return Ok(b_min);
    }
    if kernel.rms_residual(b_max) <= target {
        return Ok(b_max);
    }
    let (mut lo, mut hi) = (b_min.ln(), b_max.ln());
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if kernel.rms_residual(mid.exp()) <= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo.exp())
}

/// Kernel-smooths a curve onto a uniform `log10 E` grid covering exactly
/// the input's interaction range.
pub fn smooth(curve: &LearningCurve, cfg: &SmoothingConfig) -> Result<LearningCurve> {
    let bandwidth = choose_bandwidth(curve, cfg)?;
    smooth_with_bandwidth(curve, cfg.points_per_decade, bandwidth)
}

pub fn smooth_with_bandwidth(curve: &LearningCurve, points_per_decade: usize, bandwidth: f64) -> Result<LearningCurve> {
    if curve.points.len() < 4 {
        return Err(Error::TooFewPoints {
            found: curve.points.len(),
            required: 4,
        });
    }
    let xs: Vec<f64> = curve.points.iter().map(|p| p.interactions.log10()).collect();
    let ys: Vec<f64> = curve.points.iter().map(|p| p.mean_metric).collect();
    let kernel = Kernel { xs: &xs, ys: &ys };
    let e_lo = curve.points[0].interactions;
    let e_hi = curve.points[curve.points.len() - 1].interactions;
    let (x_lo, x_hi) = (xs[0], xs[xs.len() - 1]);
    let n_grid = (((x_hi - x_lo) * points_per_decade as f64).round() as usize + 1).max(2);
    let n_seeds = curve.points.iter().map(|p| p.n_seeds).min().unwrap_or(1);

    let points = (0..n_grid)
        .map(|k| {
            let x = x_lo + (x_hi - x_lo) * k as f64 / (n_grid - 1) as f64;
            let interactions = match k {
                0 => e_lo,
                _ if k == n_grid - 1 => e_hi,
                _ => 10f64.powf(x).clamp(e_lo, e_hi),
            };
            let (mut den, mut var) = (0.0, 0.0);
            for (w, p) in kernel.weights(x, bandwidth).zip(&curve.points) {
                den += w;
                var += w * w * p.stderr * p.stderr;
            }
            let stderr = if den > 0.0 { var.sqrt() / den } else { 0.0 };
            CurvePoint {
                interactions,
                mean_metric: kernel.estimate(x, bandwidth),
                stderr,
                n_seeds,
            }
        })
        .collect();
    Ok(LearningCurve {
        points,
        ..curve.clone()
    })
}

/// RMS deviation of `smoothed` (interpolated in `log10 E`) from the raw
/// means, divided by the raw curve's median stderr.
pub fn residual_ratio(raw: &LearningCurve, smoothed: &LearningCurve) -> f64 {
    let sx: Vec<f64> = smoothed.points.iter().map(|p| p.interactions.log10()).collect();
    let ss: f64 = raw
        .points
        .iter()
        .map(|p| {
            let x = p.interactions.log10();
            let j = sx.partition_point(|v| *v <= x).clamp(1, sx.len() - 1);
            let t = ((x - sx[j - 1]) / (sx[j] - sx[j - 1])).clamp(0.0, 1.0);
            let y = smoothed.points[j - 1].mean_metric
                + t * (smoothed.points[j].mean_metric - smoothed.points[j - 1].mean_metric);
            (y - p.mean_metric).powi(2)
        })
        .sum();
    let rms = (ss / raw.points.len() as f64).sqrt();
    let mut se: Vec<f64> = raw.points.iter().map(|p| p.stderr).collect();
    rms / median(&mut se)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn csv(s: &str) -> Result<RunSet> {
        parse_runs(s.as_bytes(), Format::Csv, LoadOptions::default())
    }

    #[test]
    fn csv_row_maps_fields() {
        let set = csv("family_id,model_size,seed,interactions,metric\ncoinrun_easy,19408,0,1048576,7.2\n").unwrap();
        let recs = set.records();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].family_id, "coinrun_easy");
        assert_eq!(recs[0].model_size, 19408);
        assert_eq!(recs[0].seed, 0);
        assert_eq!(recs[0].interactions, 1048576);
        assert_eq!(recs[0].metric, 7.2);
    }

    #[test]
    fn empty_file_is_empty_set() {
        assert!(csv("").unwrap().is_empty());
        assert!(parse_runs(b"", Format::Json, LoadOptions::default())
            .unwrap()
            .is_empty());
        assert!(csv("family_id,model_size,seed,interactions,metric\n")
            .unwrap()
            .is_empty());
    }

    #[test]
    fn duplicate_rows_rejected() {
        let r = csv("family_id,model_size,seed,interactions,metric\na,10,0,100,1\na,10,0,100,2\n");
        assert!(matches!(r, Err(Error::DuplicateRow { .. })));
    }

    #[test]
    fn bad_rows_report_line_numbers() {
        let r = csv("family_id,model_size,seed,interactions,metric\na,10,0,100,1\na,0,0,200,1\n");
        assert!(matches!(r, Err(Error::Parse { line: 3, .. })), "{r:?}");
        let r = csv("family_id,model_size,seed,interactions,metric\na,10,0,-5,1\n");
        assert!(matches!(r, Err(Error::Parse { line: 2, .. })));
        let r = csv("family_id,model_size,seed,interactions,metric\na,10,0,5,abc\n");
        assert!(matches!(r, Err(Error::Parse { line: 2, .. })));
        let r = csv("family_id,model_size,seed,metric\na,10,0,1\n");
        assert!(matches!(r, Err(Error::MissingColumn(c)) if c == "interactions"));
    }

    #[test]
    fn json_mirror() {
        let j = r#"[{"family_id":"a","model_size":10,"seed":1,"interactions":100,"metric":0.5}]"#;
        let set = parse_runs(j.as_bytes(), Format::Json, LoadOptions::default()).unwrap();
        assert_eq!(set.len(), 1);
        let bad = r#"[{"family_id":"a","model_size":0,"seed":1,"interactions":100,"metric":0.5}]"#;
        assert!(parse_runs(bad.as_bytes(), Format::Json, LoadOptions::default()).is_err());
    }

    fn three_seeds(values: [f64; 3]) -> RunSet {
        let mut set = RunSet::new(MetricKind::Return);
        for (seed, v) in values.iter().enumerate() {
            set.insert("f", 10, seed as i64, 1_000_000, *v).unwrap();
        }
        set
    }

    #[test]
    fn aggregate_mean_and_stderr() {
        let agg = aggregate_seeds(&three_seeds([4.0, 6.0, 8.0]), AggregateOptions::default()).unwrap();
        let p = agg.curves()[0].points[0];
        assert_eq!(p.mean_metric, 6.0);
        // sample sd 2, stderr 2/sqrt(3)
        assert!((p.stderr - 2.0 / 3f64.sqrt()).abs() < 1e-12);
        assert!((p.stderr - 1.1547).abs() < 1e-4);
        assert_eq!(p.n_seeds, 3);
    }

    #[test]
    fn single_seed_has_zero_stderr() {
        let mut set = RunSet::new(MetricKind::Return);
        set.insert("f", 10, 0, 5, 3.5).unwrap();
        let p = aggregate_seeds(&set, AggregateOptions::default()).unwrap().curves()[0].points[0];
        assert_eq!((p.mean_metric, p.stderr, p.n_seeds), (3.5, 0.0, 1));
    }

    #[test]
    fn trim_keeps_middle_seeds() {
        let mut set = RunSet::new(MetricKind::Return);
        for seed in 0..20 {
            set.insert("mnist", 100, seed, 1000, seed as f64).unwrap();
        }
        let agg = aggregate_seeds(&set, AggregateOptions { trim: 2 }).unwrap();
        let p = agg.curves()[0].points[0];
        assert_eq!(p.n_seeds, 16);
        assert_eq!(p.mean_metric, (2..18).sum::<i64>() as f64 / 16.0);
        assert!(aggregate_seeds(&three_seeds([1.0, 2.0, 3.0]), AggregateOptions { trim: 2 }).is_err());
    }

    #[test]
    fn misaligned_seeds_rejected_but_near_grid_accepted() {
        let mut set = RunSet::new(MetricKind::Return);
        for (seed, es) in [(0, [1000u64, 2000, 4000]), (1, [1001, 2000, 4003])] {
            for e in es {
                set.insert("f", 1, seed, e, 1.0).unwrap();
            }
        }
        assert!(aggregate_seeds(&set, AggregateOptions::default()).is_ok());
        let mut bad = RunSet::new(MetricKind::Return);
        for (seed, es) in [(0, [1000u64, 2000, 4000]), (1, [1000, 3000, 4000])] {
            for e in es {
                bad.insert("f", 1, seed, e, 1.0).unwrap();
            }
        }
        assert!(matches!(
            aggregate_seeds(&bad, AggregateOptions::default()),
            Err(Error::InconsistentGrid { .. })
        ));
    }

    fn curve(points: &[(f64, f64, f64)]) -> LearningCurve {
        LearningCurve {
            family_id: "f".into(),
            model_size: 1,
            metric_kind: MetricKind::Return,
            points: points
                .iter()
                .map(|&(e, m, s)| CurvePoint {
                    interactions: e,
                    mean_metric: m,
                    stderr: s,
                    n_seeds: 3,
                })
                .collect(),
        }
    }

    #[test]
    fn exclude_early_window() {
        let set = LearningCurveSet::from_curves(vec![curve(&[(1e6, 1.0, 0.0), (3e6, 2.0, 0.0), (5e6, 3.0, 0.0)])]);
        let out = exclude_early(&set, 3e6);
        assert!(out.curves()[0].points.iter().all(|p| p.interactions >= 3e6));
        assert_eq!(out.curves()[0].points.len(), 2);
        assert_eq!(exclude_early(&set, 0.0), set);
        let gone = exclude_early(&set, 1e9);
        assert!(gone.is_empty());
        assert_eq!(gone.dropped, vec![("f".to_string(), 1)]);
    }

    #[test]
    fn late_period_window() {
        let es: Vec<(f64, f64, f64)> = (16..=26).map(|k| (2f64.powi(k), k as f64, 0.0)).collect();
        let set = LearningCurveSet::from_curves(vec![curve(&es)]);
        let out = truncate_late(&exclude_early(&set, 2f64.powi(22)), 2f64.powi(25));
        let kept: Vec<f64> = out.curves()[0].points.iter().map(|p| p.interactions).collect();
        assert_eq!(kept, vec![2f64.powi(22), 2f64.powi(23), 2f64.powi(24), 2f64.powi(25)]);
    }

    fn log_grid(n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n)
            .map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (n - 1) as f64))
            .collect()
    }

    #[test]
    fn constant_curve_stays_constant() {
        let pts: Vec<_> = log_grid(20, 5.0, 8.0).into_iter().map(|e| (e, 3.25, 0.1)).collect();
        let out = smooth(&curve(&pts), &SmoothingConfig::default()).unwrap();
        for p in &out.points {
            assert!((p.mean_metric - 3.25).abs() < 1e-12);
        }
    }

    #[test]
    fn monotone_input_stays_monotone() {
        let pts: Vec<_> = log_grid(30, 5.0, 8.0)
            .into_iter()
            .map(|e| (e, (e.log10() - 6.0).tanh() + 0.1 * e.log10(), 0.0))
            .collect();
        let out = smooth(&curve(&pts), &SmoothingConfig::default()).unwrap();
        for w in out.points.windows(2) {
            assert!(w[1].mean_metric > w[0].mean_metric);
        }
    }

    #[test]
    fn output_on_uniform_grid_within_input_range() {
        let pts: Vec<_> = log_grid(13, 5.0, 7.0).into_iter().map(|e| (e, e.ln(), 0.05)).collect();
        let c = curve(&pts);
        let out = smooth(&c, &SmoothingConfig::default()).unwrap();
        assert_eq!(out.points.len(), 33);
        assert_eq!(out.points[0].interactions, c.points[0].interactions);
        assert_eq!(
            out.points.last().unwrap().interactions,
            c.points.last().unwrap().interactions
        );
        for p in &out.points {
            assert!(p.interactions >= 1e5 && p.interactions <= 1e7);
        }
    }

    #[test]
    fn too_few_points() {
        let c = curve(&[(1.0, 1.0, 0.0), (2.0, 1.0, 0.0), (3.0, 1.0, 0.0)]);
        assert!(matches!(
            smooth(&c, &SmoothingConfig::default()),
            Err(Error::TooFewPoints { .. })
        ));
    }

    #[test]
    fn residual_criterion_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<_> = log_grid(40, 5.0, 8.0)
            .into_iter()
            .map(|e| {
                (
                    e,
                    1.0 / (1.0 + (-(e.log10() - 6.5) * 3.0).exp()) + rng.gen_range(-0.05..0.05),
                    0.03,
                )
            })
            .collect();
        let c = curve(&pts);
        let cfg = SmoothingConfig::default();
        let b = choose_bandwidth(&c, &cfg).unwrap();
        let out = smooth_with_bandwidth(&c, 64, b).unwrap();
        assert!(residual_ratio(&c, &out) <= cfg.target_residual_ratio * 1.05);
        // residual measured at the raw points themselves
        let xs: Vec<f64> = c.points.iter().map(|p| p.interactions.log10()).collect();
        let ys: Vec<f64> = c.points.iter().map(|p| p.mean_metric).collect();
        let k = Kernel { xs: &xs, ys: &ys };
        assert!(k.rms_residual(b) <= 0.03 * cfg.target_residual_ratio + 1e-12);
    }

    /// Monte-Carlo oracle: logistic trend, three noisy seeds, 100 draws.
    #[test]
    fn residual_to_stderr_ratio_on_noisy_logistic() {
        let noise = Normal::new(0.0, 0.15).unwrap();
        let es = log_grid(48, 5.0, 8.0);
        let mut ratios = Vec::new();
        for draw in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + draw);
            let mut set = RunSet::new(MetricKind::Return);
            for seed in 0..3 {
                for &e in &es {
                    let trend = 10.0 / (1.0 + (-(e.log10() - 6.5) * 2.0).exp());
                    set.insert("f", 1, seed, e.round() as u64, trend + noise.sample(&mut rng))
                        .unwrap();
                }
            }
            let agg = aggregate_seeds(&set, AggregateOptions::default()).unwrap();
            let raw = &agg.curves()[0];
            let b = choose_bandwidth(raw, &SmoothingConfig::default()).unwrap();
            let xs: Vec<f64> = raw.points.iter().map(|p| p.interactions.log10()).collect();
            let ys: Vec<f64> = raw.points.iter().map(|p| p.mean_metric).collect();
            let mut se: Vec<f64> = raw.points.iter().map(|p| p.stderr).collect();
            let rms = Kernel { xs: &xs, ys: &ys }.rms_residual(b);
            ratios.push(rms / median(&mut se));
        }
        let inside = ratios.iter().filter(|r| (0.5..=1.5).contains(*r)).count();
        assert!(inside >= 95, "only {inside}/100 ratios in [0.5, 1.5]: {ratios:?}");
    }

    fn arb_curve() -> impl Strategy<Value = LearningCurve> {
        prop::collection::vec((-1.0f64..1.0, 0.01f64..0.5), 6..30).prop_map(|v| {
            let es = log_grid(v.len(), 4.0, 7.0);
            curve(
                &es.iter()
                    .zip(&v)
                    .map(|(e, (m, s))| (*e, *m + e.log10(), *s))
                    .collect::<Vec<_>>(),
            )
        })
    }

    proptest! {
        #[test]
        fn aggregate_is_seed_permutation_invariant(values in prop::collection::vec(-5.0f64..5.0, 2..8), shift in 1i64..100) {
            let mut a = RunSet::new(MetricKind::Return);
            let mut b = RunSet::new(MetricKind::Return);
            let n = values.len() as i64;
            for (i, v) in values.iter().enumerate() {
                a.insert("f", 1, i as i64, 10, *v).unwrap();
                b.insert("f", 1, (i as i64 * shift) % n + n * (i as i64), 10, *v).unwrap();
            }
            let ra = aggregate_seeds(&a, AggregateOptions::default()).unwrap();
            let rb = aggregate_seeds(&b, AggregateOptions::default()).unwrap();
            prop_assert_eq!(ra, rb);
        }

        #[test]
        fn exclude_composes_as_max(a in 0.0f64..1e8, b in 0.0f64..1e8, c in arb_curve()) {
            let set = LearningCurveSet::from_curves(vec![c]);
            prop_assert_eq!(exclude_early(&exclude_early(&set, a), b), exclude_early(&set, a.max(b)));
        }

        #[test]
        fn smooth_is_scale_equivariant(c in arb_curve(), k in 0.1f64..10.0) {
            let cfg = SmoothingConfig::default();
            let scaled = LearningCurve {
                points: c.points.iter().map(|p| CurvePoint { mean_metric: k * p.mean_metric, stderr: k * p.stderr, ..*p }).collect(),
                ..c.clone()
            };
            let a = smooth(&c, &cfg).unwrap();
            let b = smooth(&scaled, &cfg).unwrap();
            for (pa, pb) in a.points.iter().zip(&b.points) {
                prop_assert!((k * pa.mean_metric - pb.mean_metric).abs() <= 1e-6 * (1.0 + pb.mean_metric.abs()));
            }
        }

        #[test]
        fn smooth_never_extrapolates(c in arb_curve()) {
            let out = smooth(&c, &SmoothingConfig::default()).unwrap();
            let (lo, hi) = c.interaction_window().unwrap();
            for p in &out.points {
                prop_assert!(p.interactions >= lo && p.interactions <= hi);
            }
        }
    }
}
