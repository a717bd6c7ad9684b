//! Weighted isotonic regression, the inner loop of the joint fit.

use intrinsic_scaling::monotone::{isotonic_fit, isotonic_loss, isotonic_values, Interpolation};

fn main() -> intrinsic_scaling::error::Result<()> {
    let xs = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
    let ys = [1.0, 3.0, 2.0, 4.0, 3.5, 6.0];
    let ws = [1.0, 1.0, 1.0, 2.0, 1.0, 1.0];
    println!("fitted levels {:?}", isotonic_values(&xs, &ys, &ws)?);
    println!("weighted squared error {:.4}", isotonic_loss(&xs, &ys, &ws)?);
    let f = isotonic_fit(&xs, &ys, &ws)?;
    for b in f.blocks() {
        println!("block {b:?}");
    }
    let step = f.clone().with_interpolation(Interpolation::Step);
    for x in [2.5, 4.2, 5.5] {
        println!(
            "f({x}) = {:.3} interpolated, {:.3} as a step",
            f.evaluate(x),
            step.evaluate(x)
        );
    }
    Ok(())
}
