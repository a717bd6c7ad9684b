//! Parameters, FLOPs per interaction and PF-day conversion per model family.

use intrinsic_scaling::accounting::{
    default_fppi, family_flops_per_interaction, family_params, to_pfdays, Family, FamilySpec,
};

fn main() -> intrinsic_scaling::error::Result<()> {
    for family in [
        Family::ProcgenWidth,
        Family::ProcgenDepth,
        Family::DotaLstm,
        Family::MnistWidth,
    ] {
        println!("{} (fppi {:.2})", family.name(), default_fppi(&family)?);
        for scale in family.tested_scales().into_iter().step_by(3) {
            let spec = FamilySpec::new(family.clone(), scale)?;
            println!(
                "  scale {scale:>8.4}: {:>12.0} params, {:>14.0} FLOPs per interaction",
                family_params(&spec)?,
                family_flops_per_interaction(&spec)?
            );
        }
    }
    println!(
        "1e15 param-interactions at fppi 8 = {:.3e} PF-days",
        to_pfdays(1e15, 8.0)?
    );
    Ok(())
}
