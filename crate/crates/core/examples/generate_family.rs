//! Write a synthetic learning-curve CSV from known constants.
//!
//! ```text
//! cargo run --example generate_family -- out.csv [noise] [seeds] [bump]
//! ```
//!
//! `bump` alternately multiplies and divides intrinsic performance of the
//! earliest eighth of every curve by that factor, imitating an unstable
//! start of training.

use intrinsic_scaling::curves::{write_csv, MetricKind, RunSet};
use intrinsic_scaling::synthetic::SyntheticFamily;

fn metric_of(i: f64) -> f64 {
    let x = (i / 1e13).powf(0.25);
    10.0 * x / (1.0 + x)
}

fn main() -> intrinsic_scaling::error::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = args.first().expect("output path");
    let noise: f64 = args.get(1).map_or(0.0, |s| s.parse().expect("noise"));
    let seeds: usize = args.get(2).map_or(1, |s| s.parse().expect("seeds"));
    let bump: f64 = args.get(3).map_or(1.0, |s| s.parse().expect("bump"));
    let fam = SyntheticFamily {
        noise,
        seeds,
        rng_seed: 7,
        ..Default::default()
    };
    let grid = fam.interactions()?;
    let early_cut = grid[grid.len().div_ceil(8) - 1];
    let runs = fam.generate(MetricKind::Return, |i| i)?;
    let mut shaped = RunSet::new(MetricKind::Return);
    for (k, r) in runs.records().into_iter().enumerate() {
        let factor = match (r.interactions <= early_cut, k % 2) {
            (false, _) => 1.0,
            (true, 0) => bump,
            (true, _) => 1.0 / bump,
        };
        shaped.insert(
            &r.family_id,
            r.model_size,
            r.seed,
            r.interactions,
            metric_of(r.metric * factor),
        )?;
    }
    std::fs::write(out, write_csv(&shaped)).expect("write output");
    println!(
        "wrote {} rows for alpha_N {} alpha_E {} N_c {} to {out}",
        shaped.len(),
        fam.alpha_n,
        fam.alpha_e,
        fam.n_c
    );
    Ok(())
}
