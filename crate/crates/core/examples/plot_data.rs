//! Plot data for the frontier and optimal-size views, written as CSV and SVG.

use intrinsic_scaling::accounting::dataset;
use intrinsic_scaling::plot::{extrapolation, frontier, optimal_size, to_csv, to_svg};
use intrinsic_scaling::scalinglaw::derive_constants;

fn main() -> intrinsic_scaling::error::Result<()> {
    let law = derive_constants(0.542, 0.462, 2.53e-2)?;
    let sizes = [19408.0, 77632.0, 310528.0];
    let out = std::env::temp_dir();
    let views = [
        ("frontier", frontier(&law, &sizes)?),
        (
            "optimal_size",
            optimal_size(&law, 2135.8, (1e-6, 1e2), &dataset().reference_laws)?,
        ),
        ("extrapolation", extrapolation(&law, &sizes, (1e6, 1e11))?),
    ];
    for (name, plot) in views {
        let svg = out.join(format!("{name}.svg"));
        std::fs::write(&svg, to_svg(&plot)).expect("write svg");
        let csv = to_csv(&plot);
        println!(
            "{name}: {} series, {} rows, svg at {}",
            plot.series.len(),
            csv.lines().count() - 1,
            svg.display()
        );
    }
    Ok(())
}
