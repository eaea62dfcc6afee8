//! Rescaled two-point function against the sine kernel for growing n.

use dgue::kernel::{Method, QuadratureSpec};
use dgue::universality::{convergence_report, symmetric_offsets, Family};

fn main() -> dgue::Result<()> {
    let offsets = symmetric_offsets(2.0, 9);
    let report = convergence_report(
        &Family::TwoPoint { a: 1.0 },
        1.0,
        &offsets,
        &[8, 16, 32, 64],
        Method::Auto,
        &QuadratureSpec::default(),
    )?;
    for row in &report.rows {
        println!(
            "n {:>3}: rho_n {:.5}, sup error {:.5}",
            row.n, row.rho_n, row.sup_error
        );
    }
    println!("non-increasing: {}", report.non_increasing);
    Ok(())
}
