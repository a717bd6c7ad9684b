//! Generate a family from known constants, fit it, and compare.

use intrinsic_scaling::curves::{aggregate_seeds, AggregateOptions, MetricKind};
use intrinsic_scaling::fitjoint::{fit_intrinsic, FitConfig};
use intrinsic_scaling::synthetic::SyntheticFamily;

fn main() -> intrinsic_scaling::error::Result<()> {
    let noise: f64 = std::env::args().nth(1).map_or(0.0, |s| s.parse().expect("noise level"));
    let fam = SyntheticFamily {
        noise,
        seeds: if noise > 0.0 { 3 } else { 1 },
        ..Default::default()
    };
    let runs = fam.generate(MetricKind::Return, |i| {
        let x = (i / 1e13).powf(0.25);
        10.0 * x / (1.0 + x)
    })?;
    let curves = aggregate_seeds(&runs, AggregateOptions::default())?;
    let fit = fit_intrinsic(&curves, &FitConfig::default())?;
    let d = &fit.diagnostics;
    println!(
        "true   alpha_N {:.4} alpha_E {:.4} N_c {:.4e}",
        fam.alpha_n, fam.alpha_e, fam.n_c
    );
    println!(
        "fitted alpha_N {:.4} alpha_E {:.4} N_c {:.4e}",
        fit.law.alpha_n(),
        fit.law.alpha_e(),
        fit.law.n_c()
    );
    println!(
        "loss {:.3e} (initial {:.3e}) after {} evaluations",
        d.loss, d.initial_loss, d.evals
    );
    if d.diverged {
        println!("diverged; active bounds {:?}", d.active_bounds);
    }
    for w in &d.warnings {
        println!("warning: {w}");
    }
    Ok(())
}
