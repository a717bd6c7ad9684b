//! Seed aggregation, early-data exclusion and standard-error driven smoothing.

use intrinsic_scaling::curves::{
    aggregate_seeds, exclude_early, smooth, AggregateOptions, MetricKind, SmoothingConfig,
};
use intrinsic_scaling::synthetic::SyntheticFamily;

fn main() -> intrinsic_scaling::error::Result<()> {
    let fam = SyntheticFamily {
        noise: 0.2,
        seeds: 4,
        rng_seed: 3,
        ..Default::default()
    };
    let runs = fam.generate(MetricKind::Return, |i| (i / 1e13).powf(0.25))?;
    let curves = aggregate_seeds(&runs, AggregateOptions { trim: 1 })?;
    let curves = exclude_early(&curves, 3e6);
    let cfg = SmoothingConfig::default();
    for c in curves.curves() {
        let s = smooth(c, &cfg)?;
        println!(
            "N = {:>7}: {} raw points -> {} smoothed points",
            c.model_size,
            c.points.len(),
            s.points.len()
        );
    }
    Ok(())
}
