//! Gradient covariance trace against horizon length on a toy task.

use intrinsic_scaling::horizonlab::{
    affine_fit, batch_schedule, horizon_term, lr_scale, noise_variance, run_sweep, HorizonSweep, IndepMDP, ScaleKind,
    SoftmaxPolicy,
};

fn main() -> intrinsic_scaling::error::Result<()> {
    for h in [1.0, 3.0, 7.0, 31.0] {
        let v = noise_variance(h, 1.0, 100_000, 1)?;
        println!("h = {h:>2}: Var[gamma V] {:.4} vs {:.4}", v.mc_estimate, v.analytic);
    }
    let mdp = IndepMDP::random(8, 4, 1.0, 0)?;
    let policy = SoftmaxPolicy::random(&mdp, 0.5, 1);
    let rows = run_sweep(&mdp, &policy, &HorizonSweep::default())?;
    for r in &rows {
        println!(
            "h = {:>2} gamma {:.4}: trace {:.4} +/- {:.4}",
            r.h, r.gamma, r.trace_estimate, r.stderr
        );
    }
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (horizon_term(r.h), r.trace_estimate)).collect();
    let fit = affine_fit(&pts)?;
    println!(
        "trace = {:.4} + {:.4} (h + 1/h - 2), R^2 {:.5}",
        fit.intercept, fit.slope, fit.r_squared
    );
    println!(
        "batch size after 2^20 interactions: {:.1}",
        batch_schedule(2f64.powi(20), 256.0)
    );
    println!(
        "learning-rate scale for 4x width: {}",
        lr_scale(ScaleKind::Width, 4.0, 1)?
    );
    Ok(())
}
