//! Draws a few deformed GUE spectra with a two-point deformation and prints
//! how many eigenvalues fall near each atom.

use dgue::ensemble::{sample_trials, EnsembleSpec, H0Recipe};

fn main() -> dgue::Result<()> {
    let spec = EnsembleSpec::new(200, H0Recipe::TwoPoint { a: 1.0 }, 7);
    let measure = sample_trials(&spec, 5)?;
    for (k, s) in measure.samples.iter().enumerate() {
        let neg = s.eigenvalues.iter().filter(|&&x| x < 0.0).count();
        println!(
            "trial {k}: min {:.3}, max {:.3}, {neg} below 0 of {}",
            s.eigenvalues[0],
            s.eigenvalues[s.eigenvalues.len() - 1],
            measure.n
        );
    }
    Ok(())
}
