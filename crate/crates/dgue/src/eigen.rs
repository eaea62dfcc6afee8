//! Eigenvalues of dense Hermitian matrices.
//!
//! Householder reduction to real symmetric tridiagonal form, then implicit
//! QL with Wilkinson-type shifts. Only the lower triangle of the input is read.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

const MAX_QL_SWEEPS: usize = 60;

/// Sorted eigenvalues of a Hermitian matrix.
pub fn hermitian_eigenvalues(h: &DMatrix<Complex64>) -> Result<Vec<f64>> {
    let n = h.nrows();
    if n == 0 || h.ncols() != n {
        return Err(Error::InvalidDimension(format!(
            "expected a non-empty square matrix, got {}x{}",
            h.nrows(),
            h.ncols()
        )));
    }
    let mut a = h.as_slice().to_vec();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tridiagonalize(n, &mut a, &mut d, &mut e);
    tridiagonal_eigenvalues(&mut d, &mut e)?;
    if d.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite eigenvalue".into()));
    }
    d.sort_by(f64::total_cmp);
    Ok(d)
}

/// Reduces the column-major Hermitian `a` in place. On return `d` holds the
/// diagonal and `e[k]` the modulus of the (k+1, k) entry of the tridiagonal
/// form; phases are dropped since a diagonal unitary removes them.
fn tridiagonalize(n: usize, a: &mut [Complex64], d: &mut [f64], e: &mut [f64]) {
    let zero = Complex64::new(0.0, 0.0);
    let mut u = vec![zero; n];
    let mut p = vec![zero; n];
    for k in 0..n - 1 {
        let m = n - k - 1;
        let col = k * n + k + 1;
        let alpha = a[col];
        let xn2: f64 = a[col..col + m].iter().map(|z| z.norm_sqr()).sum();
        let xn = xn2.sqrt();
        d[k] = a[k * n + k].re;
        e[k] = xn;
        if xn == 0.0 {
            continue;
        }
        let an = alpha.norm();
        let phase = if an == 0.0 {
            Complex64::new(1.0, 0.0)
        } else {
            alpha / an
        };
        let u = &mut u[..m];
        u.copy_from_slice(&a[col..col + m]);
        u[0] = alpha + phase * xn;
        let tau = 2.0 / (xn2 - an * an + u[0].norm_sqr());

        // p = tau * A u, reading the lower triangle only
        let p = &mut p[..m];
        p.fill(zero);
        for j in 0..m {
            let c0 = (k + 1 + j) * n + k + 1 + j;
            let cj = &a[c0..c0 + m - j];
            let uj = u[j] * tau;
            let mut acc = zero;
            for i in 1..cj.len() {
                p[j + i] += cj[i] * uj;
                acc += cj[i].conj() * u[j + i];
            }
            p[j] += cj[0] * uj + acc * tau;
        }
        let kk = 0.5
            * tau
            * u.iter()
                .zip(p.iter())
                .map(|(x, y)| (x.conj() * y).re)
                .sum::<f64>();
        for (pi, ui) in p.iter_mut().zip(u.iter()) {
            *pi -= ui * kk;
        }
        // A -= u p^H + p u^H on the lower triangle
        for j in 0..m {
            let c0 = (k + 1 + j) * n + k + 1 + j;
            let (uj, pj) = (u[j].conj(), p[j].conj());
            let cj = &mut a[c0..c0 + m - j];
            for (i, c) in cj.iter_mut().enumerate() {
                *c -= u[j + i] * pj + p[j + i] * uj;
            }
        }
    }
    d[n - 1] = a[n * n - 1].re;
    e[n - 1] = 0.0;
}

/// Implicit QL on a symmetric tridiagonal matrix; `e[i]` couples `d[i]` and
/// `d[i + 1]`. Eigenvalues are left in `d`, unsorted.
pub fn tridiagonal_eigenvalues(d: &mut [f64], e: &mut [f64]) -> Result<()> {
    let n = d.len();
    for l in 0..n {
        let mut sweeps = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            sweeps += 1;
            if sweeps > MAX_QL_SWEEPS {
                return Err(Error::Numerical(format!(
                    "QL iteration did not converge for eigenvalue {l}"
                )));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut deflated = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn random_hermitian(n: usize, seed: u64) -> DMatrix<Complex64> {
        let mut rng = stream(seed, 0);
        let mut h = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in j..n {
                let v = if i == j {
                    Complex64::new(rng.random_range(-1.0..1.0), 0.0)
                } else {
                    Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
                };
                h[(i, j)] = v;
                h[(j, i)] = v.conj();
            }
        }
        h
    }

    #[test]
    fn matches_reference_solver() {
        for (n, seed) in [(1, 1), (2, 2), (3, 3), (17, 4), (64, 5)] {
            let h = random_hermitian(n, seed);
            let ours = hermitian_eigenvalues(&h).unwrap();
            let mut reference: Vec<f64> =
                h.clone().symmetric_eigenvalues().iter().copied().collect();
            reference.sort_by(f64::total_cmp);
            let scale = h.norm();
            for (a, b) in ours.iter().zip(&reference) {
                assert!((a - b).abs() <= 1e-12 * scale, "n={n}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn residual_by_inverse_iteration() {
        // dist(lambda, spec H) = smallest singular value of H - lambda
        let n = 30;
        let h = random_hermitian(n, 9);
        let norm = h.norm();
        for &lam in &hermitian_eigenvalues(&h).unwrap() {
            let shifted = &h - DMatrix::<Complex64>::identity(n, n) * Complex64::new(lam, 0.0);
            let sv = shifted.singular_values();
            let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
            assert!(smin <= 1e-10 * norm, "residual {smin:e}");
        }
    }

    #[test]
    fn diagonal_and_already_tridiagonal_inputs() {
        let mut h = DMatrix::<Complex64>::zeros(4, 4);
        for (i, v) in [3.0, -1.0, 2.0, 0.5].iter().enumerate() {
            h[(i, i)] = Complex64::new(*v, 0.0);
        }
        assert_eq!(
            hermitian_eigenvalues(&h).unwrap(),
            vec![-1.0, 0.5, 2.0, 3.0]
        );
        h[(1, 0)] = Complex64::new(0.0, 1.0);
        h[(0, 1)] = Complex64::new(0.0, -1.0);
        let ev = hermitian_eigenvalues(&h).unwrap();
        let tr: f64 = ev.iter().sum();
        assert!((tr - 4.5).abs() < 1e-14);
    }

    #[test]
    fn rejects_empty() {
        assert!(hermitian_eigenvalues(&DMatrix::zeros(0, 0)).is_err());
    }
}
