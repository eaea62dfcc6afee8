//! Grassmann algebra checks: Gaussian integrals, superdeterminant,
//! and the 2x2 super-Hermitian diagonalization.

use dgue::berezin::{self, GrassmannElement};

fn main() -> dgue::Result<()> {
    let psi = GrassmannElement::psi(2, 0)?;
    let chi = GrassmannElement::psi_bar(2, 1)?;
    let prod = &psi * &chi;
    println!("psi0 psi_bar1 = {prod}, reversed = {}", &chi * &psi);
    println!(
        "integral over psi_bar1 then psi0: {}",
        prod.integrate_repeated(&[3, 0])?.body()
    );

    let d = berezin::super_diag_2x2(2.0, -1.0)?;
    println!("eigenvalues {} and {}", d.eigenvalues[0], d.eigenvalues[1]);
    println!(
        "unitarity error {:.1e}, diagonal error {:.1e}",
        d.unitarity_error, d.diagonal_error
    );

    for check in berezin::identity_suite(1, 20)? {
        println!(
            "{:<44} {:>3} cases  max error {:.2e}  {}",
            check.name,
            check.cases,
            check.max_error,
            if check.passed() { "ok" } else { "FAIL" }
        );
    }
    Ok(())
}
