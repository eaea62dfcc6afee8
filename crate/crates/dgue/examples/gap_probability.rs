//! Probability of no eigenvalue in a rescaled unit window: Monte Carlo
//! against the sine-kernel Fredholm determinant.

use dgue::ensemble::{EnsembleSpec, H0Recipe};
use dgue::universality::{fredholm_gap, gap_compare, DensitySettings, FredholmSpec};

fn main() -> dgue::Result<()> {
    for s in [0.5, 1.0, 2.0] {
        println!(
            "det(1 - S) on length {s}: {:.10}",
            fredholm_gap(&FredholmSpec::new(0.0, s))?
        );
    }
    let spec = EnsembleSpec::new(100, H0Recipe::TwoPoint { a: 1.0 }, 3);
    let r = gap_compare(&spec, 1.0, -0.5, 0.5, 4000, &DensitySettings::default())?;
    println!(
        "n {}: mc {:.4} +- {:.4}, fredholm {:.4}, z {:.2}",
        r.n, r.mc, r.stderr, r.fredholm, r.z
    );
    Ok(())
}
