//! Fit through an exponentiated TrueSkill metric and read back `I(T)`.

use intrinsic_scaling::curves::{aggregate_seeds, AggregateOptions, MetricKind};
use intrinsic_scaling::fitjoint::{fit_natural, FitConfig, MetricForm};
use intrinsic_scaling::scalinglaw::derive_constants;
use intrinsic_scaling::synthetic::SyntheticFamily;

fn main() -> intrinsic_scaling::error::Result<()> {
    let fam = SyntheticFamily::default();
    let beta = derive_constants(fam.alpha_n, fam.alpha_e, fam.n_c)?.beta();
    let (alpha_t, t_c) = (0.12f64, 3e3f64);
    let runs = fam.generate(MetricKind::TrueSkill, |i| (t_c.ln() + beta * i.ln()) / alpha_t)?;
    let curves = aggregate_seeds(&runs, AggregateOptions::default())?;
    let cfg = FitConfig {
        metric_form: MetricForm::ExpTrueskill,
        ..Default::default()
    };
    let result = fit_natural(&curves, &cfg)?;
    let fit = &result.fit;
    println!(
        "alpha_N {:.4} alpha_E {:.4} alpha_T {:.4} T_c {:.1}",
        fit.law.alpha_n(),
        fit.law.alpha_e(),
        fit.constants.alpha_t.unwrap_or(f64::NAN),
        fit.constants.t_c.unwrap_or(f64::NAN)
    );
    println!("relation: {:?}", fit.relation());
    let (lo, hi) = fit.metric_range;
    for t in [lo, 0.5 * (lo + hi), hi] {
        println!("TrueSkill {t:.1}: I = {:.3e}", fit.intrinsic_performance(t).value);
    }
    Ok(())
}
