//! Recompute every bundled row of published constants.

use intrinsic_scaling::accounting::{check_row, dataset, published_constants, RowTolerances};

fn main() -> intrinsic_scaling::error::Result<()> {
    let tol = RowTolerances::default();
    let mut passed = 0;
    for row in published_constants() {
        let c = check_row(row, &tol)?;
        passed += c.pass as usize;
        println!(
            "{} {:<36} beta {:.4} ({:.1e})  N = {:.3e} C^{:.4}",
            if c.pass { "ok  " } else { "FAIL" },
            c.label,
            c.beta,
            c.beta_rel_err,
            c.coeff,
            c.exponent
        );
    }
    println!("{passed}/{} rows pass", published_constants().len());
    for row in &dataset().fail_ratio_rows {
        let c = check_row(row, &tol)?;
        println!("fail ratio {:<30} pass {}", c.label, c.pass);
    }
    for r in &dataset().reference_laws {
        println!("reference {}: N at 1 PF-day {:.3e}", r.name, r.optimal_size(1.0));
    }
    Ok(())
}
