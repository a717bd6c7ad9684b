//! Optimal size when every environment interaction costs as much as a
//! forward pass of an `N_e`-parameter model.

use intrinsic_scaling::scalinglaw::{cost_optimal_size, derive_constants, optimal_size};

fn main() -> intrinsic_scaling::error::Result<()> {
    let law = derive_constants(0.542, 0.462, 2.53e-2)?;
    let n_env = 1e5;
    println!("{:>10} {:>12} {:>12} {:>8}", "C", "N (N_e=0)", "N (N_e=1e5)", "ratio");
    for k in 0..8 {
        let c = 10f64.powi(8 + 2 * k);
        let plain = optimal_size(&law, c)?.value;
        let costed = cost_optimal_size(&law, n_env, c)?;
        println!(
            "{c:>10.0e} {plain:>12.3e} {:>12.3e} {:>8.3}",
            costed.n,
            costed.n / plain
        );
    }
    Ok(())
}
