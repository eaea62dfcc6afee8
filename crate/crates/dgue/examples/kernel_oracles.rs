//! Compares the contour-integral kernel with the Christoffel-Darboux kernel
//! (no deformation) and with the residue sum (two-point deformation).

use dgue::kernel::{self, QuadratureSpec};

fn main() -> dgue::Result<()> {
    let quad = QuadratureSpec::default();
    let n = 12;
    let zeros = vec![0.0; n];
    for (l, m) in [(0.0, 0.0), (0.3, -0.7), (1.5, 1.0)] {
        let c = kernel::kernel_contour(&zeros, l, m, &quad)?.value;
        let cd = kernel::kernel_cd_gue(n, l, m)?.value;
        println!(
            "GUE n={n} K({l}, {m}): contour {:.12} cd {:.12}",
            c.re, cd.re
        );
    }
    let h: Vec<f64> = (0..n)
        .map(|k| if k % 2 == 0 { -1.0 } else { 1.0 })
        .collect();
    for (l, m) in [(1.0, 1.0), (-0.5, 0.8)] {
        let c = kernel::kernel_contour(&h, l, m, &quad)?.value;
        let r = kernel::kernel_residue(&h, l, m, &quad)?.value;
        println!(
            "two-point n={n} K({l}, {m}): contour {:.12} residue {:.12}",
            c.re, r.re
        );
    }
    Ok(())
}
