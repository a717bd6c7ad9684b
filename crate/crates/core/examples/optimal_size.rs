//! Optimal model size for a compute budget from published constants.

use intrinsic_scaling::accounting::{default_fppi, find_row};
use intrinsic_scaling::scalinglaw::optimal_size_pfdays;

fn main() -> intrinsic_scaling::error::Result<()> {
    let row = find_row("CoinRun, easy", "width").expect("bundled row");
    let law = row
        .derived()?
        .with_range(intrinsic_scaling::scalinglaw::ValidityRange {
            i_min: row.i_min,
            i_max: row.i_max,
            n_min: row.n_min,
            n_max: row.n_max,
        })?;
    let fppi = default_fppi(&row.family()?)?;
    println!(
        "{}: beta {:.4}, E_c {:.4}, fppi {:.1}",
        row.label(),
        law.beta(),
        law.e_c(),
        fppi
    );
    println!(
        "N = {:.4e} * C^{:.4} (C in PF-days)",
        optimal_size_pfdays(&law, 1.0, fppi)?.value,
        law.optimal_exponent()
    );
    for c in [1e-4, 1e-2, 1.0, 1e2] {
        let n = optimal_size_pfdays(&law, c, fppi)?;
        let flag = if n.out_of_range {
            "  (outside the fitted size range)"
        } else {
            ""
        };
        println!("C = {c:>7.0e} PF-days -> N = {:.3e}{flag}", n.value);
    }
    Ok(())
}
