//! Limiting density of the deformed ensemble for a two-point deformation,
//! next to the semicircle, as CSV.

use dgue::stieltjes::{density_mass, pastur_solve, AtomicMeasure, Limit, DEFAULT_TOL};

fn main() -> dgue::Result<()> {
    let semicircle = Limit::Atomic(AtomicMeasure::dirac(0.0));
    let split = Limit::Atomic(AtomicMeasure::two_point(1.5));
    println!("lambda,semicircle,two_point");
    for k in 0..=40 {
        let l = -4.0 + 0.2 * k as f64;
        let (_, r0) = pastur_solve(&semicircle, l, DEFAULT_TOL)?;
        let (_, r1) = pastur_solve(&split, l, DEFAULT_TOL)?;
        println!("{l:.2},{r0:.6},{r1:.6}");
    }
    eprintln!("total mass {:.8}", density_mass(&split)?);
    Ok(())
}
