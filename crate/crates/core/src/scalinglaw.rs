//! Closed-form algebra of the intrinsic-performance power law
//!
//! ```text
//! I^(-beta) = (N_c / N)^alpha_N + (E_c / E)^alpha_E
//! ```
//!
//! Requiring `I = N E` along the compute-efficient frontier pins `beta` and
//! `E_c` once `alpha_N`, `alpha_E` and `N_c` are chosen:
//!
//! ```text
//! 1 / beta      = 1 / alpha_N + 1 / alpha_E
//! 1 / (N_c E_c) = (1 + alpha_N / alpha_E)^(1 / alpha_N) (1 + alpha_E / alpha_N)^(1 / alpha_E)
//! ```
//!
//! [`PowerLawFit`] can only be built through [`derive_constants`] (or
//! deserialized after the same check), so every value in circulation
//! satisfies both identities.
//!
//! All compute quantities here are in parameter-interactions. FLOP and
//! PF-day conversions live in [`crate::accounting`].

use serde::{Deserialize, Serialize};

use crate::curves::LearningCurveSet;
use crate::error::{require_positive, Error, Result};

const IDENTITY_TOL: f64 = 1e-9;

/// Seconds in a day times 1e15 FLOP/s: FLOPs in one PF-day.
pub const FLOPS_PER_PF_DAY: f64 = 1e15 * 24.0 * 3600.0;

/// Validity window of a fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidityRange {
    pub i_min: f64,
    #[serde(with = "inf_as_null")]
    pub i_max: f64,
    pub n_min: f64,
    #[serde(with = "inf_as_null")]
    pub n_max: f64,
}

/// JSON has no infinity; an open upper end is written as `null`.
mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_none()
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl ValidityRange {
    pub fn unbounded() -> Self {
        Self {
            i_min: 0.0,
            i_max: f64::INFINITY,
            n_min: 0.0,
            n_max: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPowerLawFit")]
pub struct PowerLawFit {
    alpha_n: f64,
    alpha_e: f64,
    n_c: f64,
    beta: f64,
    e_c: f64,
    #[serde(flatten)]
    range: ValidityRange,
}

#[derive(Deserialize)]
struct RawPowerLawFit {
    alpha_n: f64,
    alpha_e: f64,
    n_c: f64,
    beta: f64,
    e_c: f64,
    #[serde(flatten)]
    range: ValidityRange,
}

impl TryFrom<RawPowerLawFit> for PowerLawFit {
    type Error = Error;

    fn try_from(raw: RawPowerLawFit) -> Result<Self> {
        let fit = PowerLawFit {
            alpha_n: raw.alpha_n,
            alpha_e: raw.alpha_e,
            n_c: raw.n_c,
            beta: raw.beta,
            e_c: raw.e_c,
            range: raw.range,
        };
        fit.check_identities()?;
        fit.check_range()?;
        Ok(fit)
    }
}

/// A value together with whether it falls outside the fit's validity range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Flagged<T> {
    pub value: T,
    pub out_of_range: bool,
}

/// Fills in `beta` and `E_c` from the three free constants.
pub fn derive_constants(alpha_n: f64, alpha_e: f64, n_c: f64) -> Result<PowerLawFit> {
    require_positive("alpha_N", alpha_n)?;
    require_positive("alpha_E", alpha_e)?;
    require_positive("N_c", n_c)?;
    let beta = 1.0 / (1.0 / alpha_n + 1.0 / alpha_e);
    let e_c = 1.0 / (frontier_product(alpha_n, alpha_e) * n_c);
    require_positive("E_c", e_c)?;
    Ok(PowerLawFit {
        alpha_n,
        alpha_e,
        n_c,
        beta,
        e_c,
        range: ValidityRange::unbounded(),
    })
}

/// `(1 + aN/aE)^(1/aN) * (1 + aE/aN)^(1/aE)`, i.e. `1 / (N_c E_c)`.
fn frontier_product(alpha_n: f64, alpha_e: f64) -> f64 {
    // log form keeps small exponents from overflowing the intermediate powers
    let ln = (1.0 + alpha_n / alpha_e).ln() / alpha_n + (1.0 + alpha_e / alpha_n).ln() / alpha_e;
    ln.exp()
}

fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs())
}

impl PowerLawFit {
    pub fn alpha_n(&self) -> f64 {
        self.alpha_n
    }
    pub fn alpha_e(&self) -> f64 {
        self.alpha_e
    }
    pub fn n_c(&self) -> f64 {
        self.n_c
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn e_c(&self) -> f64 {
        self.e_c
    }
    pub fn range(&self) -> ValidityRange {
        self.range
    }

    pub fn with_range(mut self, range: ValidityRange) -> Result<Self> {
        self.range = range;
        self.check_range()?;
        Ok(self)
    }

    fn check_identities(&self) -> Result<()> {
        for (name, v) in [
            ("alpha_N", self.alpha_n),
            ("alpha_E", self.alpha_e),
            ("N_c", self.n_c),
            ("beta", self.beta),
            ("E_c", self.e_c),
        ] {
            require_positive(name, v)?;
        }
        let inv_beta = 1.0 / self.alpha_n + 1.0 / self.alpha_e;
        if rel_diff(1.0 / self.beta, inv_beta) > IDENTITY_TOL {
            return Err(Error::InvalidConstants(format!(
                "1/beta = {} but 1/alpha_N + 1/alpha_E = {}",
                1.0 / self.beta,
                inv_beta
            )));
        }
        let lhs = 1.0 / (self.n_c * self.e_c);
        let rhs = frontier_product(self.alpha_n, self.alpha_e);
        if rel_diff(lhs, rhs) > IDENTITY_TOL {
            return Err(Error::InvalidConstants(format!(
                "1/(N_c E_c) = {lhs} but the exponent product is {rhs}"
            )));
        }
        Ok(())
    }

    fn check_range(&self) -> Result<()> {
        let r = &self.range;
        if !(r.i_min <= r.i_max && r.n_min <= r.n_max && r.i_min >= 0.0 && r.n_min >= 0.0) {
            return Err(Error::InvalidConstants(format!("invalid validity range {r:?}")));
        }
        Ok(())
    }

    /// `1 / (1 + alpha_N / alpha_E)`: exponent of the optimal-size law.
    pub fn optimal_exponent(&self) -> f64 {
        1.0 / (1.0 + self.alpha_n / self.alpha_e)
    }

    /// `N_c (1 + alpha_N / alpha_E)^(1 / alpha_N)`: optimal-size coefficient
    /// for compute in parameter-interactions.
    pub fn optimal_coefficient(&self) -> f64 {
        self.n_c * (1.0 + self.alpha_n / self.alpha_e).powf(1.0 / self.alpha_n)
    }

    /// `I^(-beta)` at `(N, E)`.
    pub fn inverse_power(&self, n: f64, e: f64) -> f64 {
        (self.n_c / n).powf(self.alpha_n) + (self.e_c / e).powf(self.alpha_e)
    }

    fn i_out_of_range(&self, i: f64) -> bool {
        i < self.range.i_min || i > self.range.i_max
    }

    fn n_out_of_range(&self, n: f64) -> bool {
        n < self.range.n_min || n > self.range.n_max
    }
}

/// Intrinsic performance predicted at model size `n` after `e` interactions.
pub fn predict_intrinsic(fit: &PowerLawFit, n: f64, e: f64) -> Result<Flagged<f64>> {
    require_positive("N", n)?;
    require_positive("E", e)?;
    let value = fit.inverse_power(n, e).powf(-1.0 / fit.beta);
    Ok(Flagged {
        value,
        out_of_range: fit.i_out_of_range(value),
    })
}

/// Interactions at which a model of size `n` reaches the efficient frontier.
pub fn efficient_frontier(fit: &PowerLawFit, n: f64) -> Result<f64> {
    require_positive("N", n)?;
    Ok(frontier_e(fit, n, 1.0))
}

/// Solves `k * aN (N_c/N)^aN = aE (E_c/E)^aE` for E.
fn frontier_e(fit: &PowerLawFit, n: f64, k: f64) -> f64 {
    let ln_term = k.ln() + (fit.alpha_n / fit.alpha_e).ln() + fit.alpha_n * (fit.n_c / n).ln();
    fit.e_c * (-ln_term / fit.alpha_e).exp()
}

/// Optimal model size for a compute budget `c` in parameter-interactions.
pub fn optimal_size(fit: &PowerLawFit, c: f64) -> Result<Flagged<f64>> {
    require_positive("C", c)?;
    let value = fit.optimal_coefficient() * c.powf(fit.optimal_exponent());
    Ok(Flagged {
        value,
        out_of_range: fit.n_out_of_range(value),
    })
}

/// Converts PF-days to parameter-interactions given FLOPs per param-interact.
pub fn pfdays_to_param_interactions(c_pf: f64, fppi: f64) -> f64 {
    c_pf * FLOPS_PER_PF_DAY / fppi
}

/// Optimal model size for a compute budget `c_pf` in PF-days.
pub fn optimal_size_pfdays(fit: &PowerLawFit, c_pf: f64, fppi: f64) -> Result<Flagged<f64>> {
    require_positive("C", c_pf)?;
    require_positive("fppi", fppi)?;
    optimal_size(fit, pfdays_to_param_interactions(c_pf, fppi))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Limit {
    /// Infinitely large model: a function of interactions.
    NInf,
    /// Infinitely many interactions: a function of model size.
    EInf,
}

/// Intrinsic performance in one of the two single-term limits.
pub fn limit_curves(fit: &PowerLawFit, which: Limit, at: f64) -> Result<f64> {
    require_positive("limit argument", at)?;
    Ok(match which {
        Limit::NInf => (at / fit.e_c).powf(fit.alpha_e / fit.beta),
        Limit::EInf => (at / fit.n_c).powf(fit.alpha_n / fit.beta),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostPoint {
    pub n: f64,
    pub e: f64,
    /// Total cost `(N + N_e) E` in parameter-interactions.
    pub cost: f64,
}

/// Point on the cost-efficient frontier for model size `n` when each
/// interaction also costs as much as a model of size `n_env`.
pub fn cost_frontier(fit: &PowerLawFit, n_env: f64, n: f64) -> Result<CostPoint> {
    require_positive("N", n)?;
    if !(n_env >= 0.0 && n_env.is_finite()) {
        return Err(Error::InvalidArgument(format!("N_e must be non-negative, got {n_env}")));
    }
    let e = frontier_e(fit, n, 1.0 + n_env / n);
    Ok(CostPoint {
        n,
        e,
        cost: (n + n_env) * e,
    })
}

/// Optimal model size for total cost `c` (parameter-interactions) under
/// environment cost `n_env`. With `n_env = 0` this is the closed form of
/// [`optimal_size`]; otherwise the monotone cost-frontier curve is inverted
/// by bisection in `log N`.
pub fn cost_optimal_size(fit: &PowerLawFit, n_env: f64, c: f64) -> Result<CostPoint> {
    require_positive("C", c)?;
    if n_env == 0.0 {
        let n = optimal_size(fit, c)?.value;
        return Ok(CostPoint { n, e: c / n, cost: c });
    }
    let cost_at = |ln_n: f64| -> f64 {
        let n = ln_n.exp();
        (n + n_env) * frontier_e(fit, n, 1.0 + n_env / n)
    };
    let mut lo = -700.0f64;
    let mut hi = 700.0f64;
    // shrink a finite bracket first; the frontier cost is increasing in N
    let start = optimal_size(fit, c)?.value.ln();
    let (mut a, mut b) = (start - 1.0, start + 1.0);
    while cost_at(a) > c && a > lo {
        a -= 2.0 * (b - a);
    }
    while cost_at(b) < c && b < hi {
        b += 2.0 * (b - a);
    }
    lo = lo.max(a);
    hi = hi.min(b);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cost_at(mid) < c {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    let n = (0.5 * (lo + hi)).exp();
    let e = frontier_e(fit, n, 1.0 + n_env / n);
    Ok(CostPoint {
        n,
        e,
        cost: (n + n_env) * e,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicRange {
    pub i_min: f64,
    pub i_max: f64,
    /// Smallest and largest tested sizes that reach the frontier inside
    /// the observed window; `None` when no size does.
    pub n_min: Option<f64>,
    pub n_max: Option<f64>,
}

impl IntrinsicRange {
    pub fn to_validity(&self) -> ValidityRange {
        ValidityRange {
            i_min: self.i_min,
            i_max: self.i_max,
            n_min: self.n_min.unwrap_or(0.0),
            n_max: self.n_max.unwrap_or(f64::INFINITY),
        }
    }
}

/// Range of intrinsic performance covered by `curves` under `fit`, and the
/// tested sizes whose fitted curve touches the frontier within that range.
///
/// A fitted curve meets the frontier only where it is tangent to it, at
/// `E*(N) =` [`efficient_frontier`]; a size counts when `E*(N)` lies inside
/// its own observed interaction window and `N E*(N)` lies in `[I_min, I_max]`.
pub fn intrinsic_range(fit: &PowerLawFit, curves: &LearningCurveSet) -> Result<IntrinsicRange> {
    let mut i_min = f64::INFINITY;
    let mut i_max = f64::NEG_INFINITY;
    for curve in curves.curves() {
        let n = curve.model_size as f64;
        for p in &curve.points {
            let i = predict_intrinsic(fit, n, p.interactions)?.value;
            i_min = i_min.min(i);
            i_max = i_max.max(i);
        }
    }
    if !i_min.is_finite() {
        return Err(Error::InvalidArgument(
            "intrinsic_range needs at least one data point".into(),
        ));
    }
    let mut n_min: Option<f64> = None;
    let mut n_max: Option<f64> = None;
    for curve in curves.curves() {
        let Some((lo, hi)) = curve.interaction_window() else {
            continue;
        };
        let n = curve.model_size as f64;
        let e_star = efficient_frontier(fit, n)?;
        let i_star = n * e_star;
        let tol = 1e-9;
        let inside_window = e_star >= lo * (1.0 - tol) && e_star <= hi * (1.0 + tol);
        let inside_range = i_star >= i_min * (1.0 - tol) && i_star <= i_max * (1.0 + tol);
        if inside_window && inside_range {
            n_min = Some(n_min.map_or(n, |m| m.min(n)));
            n_max = Some(n_max.map_or(n, |m| m.max(n)));
        }
    }
    Ok(IntrinsicRange {
        i_min,
        i_max,
        n_min,
        n_max,
    })
}
