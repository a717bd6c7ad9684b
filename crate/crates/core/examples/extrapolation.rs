//! Infinite-size and infinite-data limits of a fitted law.

use intrinsic_scaling::scalinglaw::{derive_constants, limit_curves, predict_intrinsic, Limit};

fn main() -> intrinsic_scaling::error::Result<()> {
    let law = derive_constants(0.542, 0.462, 2.53e-2)?;
    for e in [1e6, 1e8, 1e10] {
        println!(
            "E = {e:.0e}: I at N=3e5 {:.3e}, as N -> inf {:.3e}",
            predict_intrinsic(&law, 3e5, e)?.value,
            limit_curves(&law, Limit::NInf, e)?
        );
    }
    for n in [1e4, 1e5, 1e6] {
        println!("N = {n:.0e}: I as E -> inf {:.3e}", limit_curves(&law, Limit::EInf, n)?);
    }
    Ok(())
}
