//! Parameter and FLOP accounting for the model families, unit conversion
//! to PF-days, and the bundled table of published fitted constants.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalinglaw::{derive_constants, optimal_size_pfdays, PowerLawFit, FLOPS_PER_PF_DAY};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Procgen network scaled by a width multiplier `w`.
    ProcgenWidth,
    /// Procgen network scaled by the number of residual blocks `b`. Counts
    /// exclude the final dense layer.
    ProcgenDepth,
    /// LSTM of size `s`.
    DotaLstm,
    /// MNIST network scaled by a width multiplier `w`.
    MnistWidth,
    /// Polynomials in the scale: `params = sum p[k] s^k`, `flops = sum f[k] s^k`.
    Custom { params: Vec<f64>, flops: Vec<f64> },
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::ProcgenWidth => "procgen_width",
            Family::ProcgenDepth => "procgen_depth",
            Family::DotaLstm => "dota_lstm",
            Family::MnistWidth => "mnist_width",
            Family::Custom { .. } => "custom",
        }
    }

    /// Scales at which the family was trained.
    pub fn tested_scales(&self) -> Vec<f64> {
        match self {
            // half-octave multipliers round to whole sixteenths (channel counts)
            Family::ProcgenWidth => (-6..=5)
                .map(|k| (16.0 * 2f64.powf(0.5 * k as f64)).round() / 16.0)
                .collect(),
            Family::MnistWidth => (-6..=2).map(|k| 2f64.powf(0.5 * k as f64)).collect(),
            Family::ProcgenDepth => (0..7).map(|k| (1u32 << k) as f64).collect(),
            Family::DotaLstm => [8.0, 64.0, 128.0, 256.0, 512.0, 1024.0, 4096.0].to_vec(),
            Family::Custom { .. } => vec![1.0],
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "procgen_width" => Family::ProcgenWidth,
            "procgen_depth" => Family::ProcgenDepth,
            "dota_lstm" => Family::DotaLstm,
            "mnist_width" => Family::MnistWidth,
            other => return Err(Error::InvalidArgument(format!("unknown family `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub family: Family,
    pub scale: f64,
}

impl FamilySpec {
    pub fn new(family: Family, scale: f64) -> Result<Self> {
        let spec = Self { family, scale };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "scale must be positive, got {}",
                self.scale
            )));
        }
        match &self.family {
            Family::ProcgenDepth if self.scale.fract() != 0.0 => Err(Error::InvalidArgument(format!(
                "procgen_depth needs an integer number of blocks, got {}",
                self.scale
            ))),
            Family::Custom { params, flops } if params.is_empty() || flops.is_empty() => Err(Error::InvalidArgument(
                "custom family needs params and flops coefficients".into(),
            )),
            _ => Ok(()),
        }
    }
}

fn polynomial(coeffs: &[f64], s: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * s + c)
}

pub fn family_params(spec: &FamilySpec) -> Result<f64> {
    spec.validate()?;
    let s = spec.scale;
    let n = match &spec.family {
        Family::ProcgenWidth => 1242112.0 * s * s,
        Family::ProcgenDepth => 5184.0 * s + 1944.0,
        Family::DotaLstm => 8.0 * s * s,
        Family::MnistWidth => 3948800.0 * s * s,
        Family::Custom { params, .. } => polynomial(params, s),
    };
    if !(n > 0.0) {
        return Err(Error::InvalidArgument(format!("parameter count {n} is not positive")));
    }
    Ok(n)
}

/// FLOPs per environment interaction, counting an add-multiply as 2 FLOPs
/// and including both rollout and optimization passes.
pub fn family_flops_per_interaction(spec: &FamilySpec) -> Result<f64> {
    spec.validate()?;
    let s = spec.scale;
    let f = match &spec.family {
        Family::ProcgenWidth => 2652897280.0 * s * s,
        Family::ProcgenDepth => 61046784.0 * s + 81395712.0,
        Family::DotaLstm => 64.0 * s * s,
        Family::MnistWidth => 95648000.0 * s * s,
        Family::Custom { flops, .. } => polynomial(flops, s),
    };
    if !(f > 0.0) {
        return Err(Error::InvalidArgument(format!("FLOP count {f} is not positive")));
    }
    Ok(f)
}

/// FLOPs per parameter-interaction, averaged over `scales`.
pub fn fppi(family: &Family, scales: &[f64]) -> Result<f64> {
    if scales.is_empty() {
        return Err(Error::InvalidArgument("fppi needs at least one scale".into()));
    }
    let mut total = 0.0;
    for &scale in scales {
        let spec = FamilySpec::new(family.clone(), scale)?;
        total += family_flops_per_interaction(&spec)? / family_params(&spec)?;
    }
    Ok(total / scales.len() as f64)
}

/// FLOPs per parameter-interaction over the family's tested scales.
pub fn default_fppi(family: &Family) -> Result<f64> {
    fppi(family, &family.tested_scales())
}

/// Converts parameter-interactions to PF-days.
pub fn to_pfdays(value: f64, fppi: f64) -> Result<f64> {
    crate::error::require_positive("value", value)?;
    crate::error::require_positive("fppi", fppi)?;
    Ok(value * fppi / FLOPS_PER_PF_DAY)
}

/// Converts PF-days to parameter-interactions.
pub fn from_pfdays(pfdays: f64, fppi: f64) -> Result<f64> {
    crate::error::require_positive("pfdays", pfdays)?;
    crate::error::require_positive("fppi", fppi)?;
    Ok(pfdays * FLOPS_PER_PF_DAY / fppi)
}

/// One row of published fitted constants, as printed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublishedRow {
    pub environment: String,
    pub variant: String,
    pub family: String,
    pub alpha_n: f64,
    pub alpha_e: f64,
    pub beta: f64,
    pub n_c: f64,
    pub e_c: f64,
    pub i_min: f64,
    pub i_max: f64,
    pub optimal_coeff: f64,
    pub optimal_exp: f64,
    pub n_min: f64,
    pub n_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<u32>,
    /// Fail-ratio fits only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_c: Option<f64>,
    /// Fail-ratio fits only: printed coefficient of `I = c F^(-1/beta)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation_coeff: Option<f64>,
}

impl PublishedRow {
    pub fn label(&self) -> String {
        format!("{} [{}]", self.environment, self.variant)
    }

    pub fn family(&self) -> Result<Family> {
        self.family.parse()
    }

    /// Power law rebuilt from the printed `(alpha_N, alpha_E, N_c)`.
    pub fn derived(&self) -> Result<PowerLawFit> {
        derive_constants(self.alpha_n, self.alpha_e, self.n_c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaturalConstantRow {
    pub variant: String,
    pub alpha_t: f64,
    pub t_c: f64,
    #[serde(default)]
    pub t_star: Option<f64>,
    pub relation_coeff: f64,
    #[serde(default)]
    pub relation_base: Option<f64>,
}

/// `N = (C / scale)^exponent`, with `C` in PF-days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceLaw {
    pub name: String,
    pub scale: f64,
    pub exponent: f64,
}

impl ReferenceLaw {
    pub fn optimal_size(&self, c_pf: f64) -> f64 {
        (c_pf / self.scale).powf(self.exponent)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantsDataset {
    pub schema_version: u32,
    pub rows: Vec<PublishedRow>,
    pub fail_ratio_rows: Vec<PublishedRow>,
    pub dota_natural: Vec<NaturalConstantRow>,
    pub reference_laws: Vec<ReferenceLaw>,
}

pub const CONSTANTS_SCHEMA_VERSION: u32 = 1;

static DATASET: OnceLock<ConstantsDataset> = OnceLock::new();

/// The bundled dataset.
pub fn dataset() -> &'static ConstantsDataset {
    DATASET.get_or_init(|| {
        let ds: ConstantsDataset =
            serde_json::from_str(include_str!("../data/published_constants.json")).expect("bundled constants parse");
        assert_eq!(ds.schema_version, CONSTANTS_SCHEMA_VERSION);
        ds
    })
}

/// The 26 main fitted-constant rows: Procgen width and depth, Dota 2, MNIST.
pub fn published_constants() -> &'static [PublishedRow] {
    &dataset().rows
}

pub fn find_row(environment: &str, variant: &str) -> Option<&'static PublishedRow> {
    dataset()
        .rows
        .iter()
        .chain(&dataset().fail_ratio_rows)
        .find(|r| r.environment == environment && r.variant == variant)
}

/// Tolerances for reproducing a printed row from its printed inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RowTolerances {
    pub beta: f64,
    pub e_c: f64,
    pub coeff: f64,
    pub exponent: f64,
}

impl Default for RowTolerances {
    fn default() -> Self {
        Self {
            beta: 0.01,
            e_c: 0.02,
            coeff: 0.05,
            exponent: 0.003,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowCheck {
    pub label: String,
    pub fppi: f64,
    pub beta: f64,
    pub beta_rel_err: f64,
    pub e_c: f64,
    pub e_c_rel_err: f64,
    pub coeff: f64,
    pub coeff_rel_err: f64,
    pub exponent: f64,
    pub exponent_rel_err: f64,
    pub pass: bool,
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// Recomputes `beta`, `E_c` and the PF-day optimal-size law from the
/// printed `(alpha_N, alpha_E, N_c)` and compares with the printed values.
pub fn check_row(row: &PublishedRow, tol: &RowTolerances) -> Result<RowCheck> {
    let fit = row.derived()?;
    let fppi = default_fppi(&row.family()?)?;
    let coeff = optimal_size_pfdays(&fit, 1.0, fppi)?.value;
    let exponent = fit.optimal_exponent();
    let beta_rel_err = rel_err(fit.beta(), row.beta);
    let e_c_rel_err = rel_err(fit.e_c(), row.e_c);
    let coeff_rel_err = rel_err(coeff, row.optimal_coeff);
    let exponent_rel_err = rel_err(exponent, row.optimal_exp);
    Ok(RowCheck {
        label: row.label(),
        fppi,
        beta: fit.beta(),
        beta_rel_err,
        e_c: fit.e_c(),
        e_c_rel_err,
        coeff,
        coeff_rel_err,
        exponent,
        exponent_rel_err,
        pass: beta_rel_err <= tol.beta
            && e_c_rel_err <= tol.e_c
            && coeff_rel_err <= tol.coeff
            && exponent_rel_err <= tol.exponent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(family: Family, scale: f64) -> FamilySpec {
        FamilySpec::new(family, scale).unwrap()
    }

    #[test]
    fn family_polynomials_at_three_scales() {
        for (w, n, f) in [
            (1.0, 1242112.0, 2652897280.0),
            (0.5, 310528.0, 663224320.0),
            (2.0, 4968448.0, 10611589120.0),
        ] {
            assert_eq!(family_params(&spec(Family::ProcgenWidth, w)).unwrap(), n);
            assert_eq!(family_flops_per_interaction(&spec(Family::ProcgenWidth, w)).unwrap(), f);
        }
        for (b, n, f) in [
            (1.0, 7128.0, 142442496.0),
            (2.0, 12312.0, 203489280.0),
            (64.0, 333720.0, 3988389888.0),
        ] {
            assert_eq!(family_params(&spec(Family::ProcgenDepth, b)).unwrap(), n);
            assert_eq!(family_flops_per_interaction(&spec(Family::ProcgenDepth, b)).unwrap(), f);
        }
        for (s, n) in [(8.0, 512.0), (512.0, 2097152.0), (4096.0, 134217728.0)] {
            assert_eq!(family_params(&spec(Family::DotaLstm, s)).unwrap(), n);
            assert_eq!(
                family_flops_per_interaction(&spec(Family::DotaLstm, s)).unwrap(),
                8.0 * n
            );
        }
        for (w, n) in [(1.0, 3948800.0), (0.125, 61700.0), (2.0, 15795200.0)] {
            assert_eq!(family_params(&spec(Family::MnistWidth, w)).unwrap(), n);
        }
        assert_eq!(
            family_flops_per_interaction(&spec(Family::MnistWidth, 1.0)).unwrap(),
            95648000.0
        );
    }

    #[test]
    fn tested_sizes_match_printed_ranges() {
        // every printed N_min / N_max is a tested size of its family
        for row in published_constants().iter().chain(&dataset().fail_ratio_rows) {
            let family = row.family().unwrap();
            if family == Family::MnistWidth {
                continue;
            }
            let sizes: Vec<f64> = family
                .tested_scales()
                .into_iter()
                .map(|s| family_params(&spec(family.clone(), s)).unwrap())
                .collect();
            for n in [row.n_min, row.n_max] {
                assert!(
                    sizes.iter().any(|s| (s - n).abs() < 0.5),
                    "{} has untested size {n}",
                    row.label()
                );
            }
        }
    }

    #[test]
    fn depth_needs_integer_blocks() {
        assert!(FamilySpec::new(Family::ProcgenDepth, 1.5).is_err());
        assert!(FamilySpec::new(Family::ProcgenWidth, 0.0).is_err());
        assert!(FamilySpec::new(Family::ProcgenWidth, -1.0).is_err());
    }

    #[test]
    fn constant_fppi_families() {
        let w = fppi(&Family::ProcgenWidth, &[0.125, 1.0, 5.0]).unwrap();
        assert!((w - 2652897280.0 / 1242112.0).abs() < 1e-9);
        assert!((w - 2135.8).abs() < 0.05);
        assert!((fppi(&Family::DotaLstm, &[8.0, 4096.0]).unwrap() - 8.0).abs() < 1e-12);
        assert!((fppi(&Family::MnistWidth, &[1.0]).unwrap() - 24.22).abs() < 0.005);
        assert!(fppi(&Family::DotaLstm, &[]).is_err());
    }

    #[test]
    fn depth_fppi_within_forty_percent_of_mean() {
        let scales = Family::ProcgenDepth.tested_scales();
        assert_eq!(scales, [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0]);
        let mean = default_fppi(&Family::ProcgenDepth).unwrap();
        for &b in &scales {
            let r = fppi(&Family::ProcgenDepth, &[b]).unwrap();
            assert!(rel_err(r, mean) <= 0.40, "b = {b}: {r} vs mean {mean}");
        }
        // the ratio falls monotonically toward 61046784 / 5184 as b grows
        let every: Vec<f64> = (1..=64).map(f64::from).collect();
        let ratios: Vec<f64> = every
            .iter()
            .map(|b| fppi(&Family::ProcgenDepth, &[*b]).unwrap())
            .collect();
        assert!(ratios.windows(2).all(|w| w[1] < w[0]));
        assert!(ratios[63] > 61046784.0 / 5184.0);
    }

    #[test]
    fn custom_family_polynomial() {
        let fam = Family::Custom {
            params: vec![10.0, 0.0, 2.0],
            flops: vec![0.0, 0.0, 12.0],
        };
        assert_eq!(family_params(&spec(fam.clone(), 3.0)).unwrap(), 28.0);
        assert_eq!(family_flops_per_interaction(&spec(fam, 3.0)).unwrap(), 108.0);
    }

    #[test]
    fn pfday_conversions() {
        assert_eq!(to_pfdays(8.64e19, 1.0).unwrap(), 1.0);
        let fit = derive_constants(0.542, 0.462, 2.53e-2).unwrap();
        let f = 2652897280.0 / 1242112.0;
        let c = 1e13;
        let via_pf = optimal_size_pfdays(&fit, to_pfdays(c, f).unwrap(), f).unwrap().value;
        let direct = crate::scalinglaw::optimal_size(&fit, c).unwrap().value;
        assert!(rel_err(via_pf, direct) < 1e-14);
        let pf = to_pfdays(2.55e14, f).unwrap();
        assert!(rel_err(2.55e14 * f, 5.4e17) < 0.01);
        assert!(rel_err(pf, 6.3e-3) < 0.01, "{pf}");
        assert!(rel_err(from_pfdays(pf, f).unwrap(), 2.55e14) < 1e-14);
        assert!(to_pfdays(-1.0, 1.0).is_err());
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn dataset_is_complete_and_exact() {
        let rows = published_constants();
        assert_eq!(rows.len(), 26);
        let count = |fam: &str| rows.iter().filter(|r| r.family == fam).count();
        assert_eq!(
            (
                count("procgen_width"),
                count("procgen_depth"),
                count("dota_lstm"),
                count("mnist_width")
            ),
            (6, 6, 4, 10)
        );
        let sp = find_row("StarPilot, easy", "width").unwrap();
        assert_eq!((sp.alpha_n, sp.alpha_e, sp.n_c), (0.318, 0.604, 2.25e-4));
        let m = find_row("MNIST", "horizon=256").unwrap();
        assert_eq!((m.alpha_n, m.alpha_e, m.horizon), (0.358, 0.681, Some(256)));
        for r in rows.iter().chain(&dataset().fail_ratio_rows) {
            for v in [
                r.alpha_n,
                r.alpha_e,
                r.beta,
                r.n_c,
                r.e_c,
                r.i_min,
                r.i_max,
                r.optimal_coeff,
                r.optimal_exp,
                r.n_min,
                r.n_max,
            ] {
                assert!(v > 0.0, "{}", r.label());
            }
            assert!(r.i_min < r.i_max && r.n_min <= r.n_max);
        }
        assert_eq!(dataset().fail_ratio_rows.len(), 2);
        assert_eq!(dataset().reference_laws.len(), 3);
    }

    #[test]
    fn spot_anchors() {
        let tol = RowTolerances::default();
        let cr = check_row(find_row("CoinRun, easy", "width").unwrap(), &tol).unwrap();
        assert!(rel_err(cr.coeff, 4.615e6) < 0.02, "{}", cr.coeff);
        let dota = check_row(find_row("Dota 2", "intrinsic").unwrap(), &tol).unwrap();
        assert!(rel_err(dota.coeff, 2.703e7) < 0.05 && rel_err(dota.exponent, 0.7617) < 0.003);
        let mnist = check_row(find_row("MNIST", "horizon=1").unwrap(), &tol).unwrap();
        assert!(rel_err(mnist.coeff, 1.586e10) < 0.05 && rel_err(mnist.exponent, 0.7999) < 0.003);
    }

    #[test]
    fn every_row_reproduces() {
        let tol = RowTolerances::default();
        for row in published_constants().iter().chain(&dataset().fail_ratio_rows) {
            let c = check_row(row, &tol).unwrap();
            assert!(c.pass, "{c:?}");
        }
    }

    #[test]
    fn perturbed_row_fails() {
        let mut row = find_row("FruitBot, hard", "depth").unwrap().clone();
        row.alpha_n *= 1.1;
        assert!(!check_row(&row, &RowTolerances::default()).unwrap().pass);
    }

    #[test]
    fn reference_laws_evaluate() {
        let chin = &dataset().reference_laws[0];
        assert!(rel_err(chin.optimal_size(1.0), (1.0 / 1.4e-18f64).sqrt()) < 1e-12);
    }
}
