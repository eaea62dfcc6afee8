//! Bulk rescaling, comparison with the sine kernel, and gap probabilities.
//!
//! Raw rescaled kernels carry a factor `e^{c(x - y)}` that depends on the
//! deformation, so comparisons go through quantities that are blind to it:
//! determinants and the normalized two-point function
//! `K(i,j)K(j,i)/(K(i,i)K(j,j))`, whose sine limit is `S(x_i - x_j)²`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{self, realize_h0, sample_deformed, EnsembleSpec, H0Recipe, Law};
use crate::error::{Error, Result};
use crate::kernel::{self, Method, QuadratureSpec};
use crate::quadrature::gauss_legendre_on;

/// Report schema version written into every JSON report.
pub const SCHEMA: u32 = 1;

/// `sin(πx)/(πx)`, equal to 1 at 0.
pub fn sine_kernel(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Kernel values around `lambda0` in units of the mean level spacing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RescaledGrid {
    pub lambda0: f64,
    pub n: usize,
    pub rho_n: f64,
    pub offsets: Vec<f64>,
    /// `K(λ0 + x_i/(nρ), λ0 + x_j/(nρ)) / (nρ)`.
    pub values: Vec<Vec<Complex64>>,
    /// Error estimates of `values`.
    pub errors: Vec<Vec<f64>>,
}

/// Rescales the kernel of atoms `h` around `lambda0`.
pub fn rescale_kernel(
    h: &[f64],
    lambda0: f64,
    offsets: &[f64],
    method: Method,
    quad: &QuadratureSpec,
) -> Result<RescaledGrid> {
    let rho_n = kernel::density_n(h, lambda0, method, quad)?;
    rescale_with_density(h, lambda0, offsets, rho_n, method, quad)
}

fn rescale_with_density(
    h: &[f64],
    lambda0: f64,
    offsets: &[f64],
    rho_n: f64,
    method: Method,
    quad: &QuadratureSpec,
) -> Result<RescaledGrid> {
    let n = h.len();
    if !(rho_n > 1e-12) {
        return Err(Error::OutOfBulk(lambda0));
    }
    let unit = n as f64 * rho_n;
    let m = offsets.len();
    let cells: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..m).map(move |j| (i, j))).collect();
    let vals = cells
        .par_iter()
        .map(|&(i, j)| {
            kernel::kernel(
                h,
                lambda0 + offsets[i] / unit,
                lambda0 + offsets[j] / unit,
                method,
                quad,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mut values = vec![vec![Complex64::new(0.0, 0.0); m]; m];
    let mut errors = vec![vec![0.0; m]; m];
    for (&(i, j), v) in cells.iter().zip(&vals) {
        values[i][j] = v.value / unit;
        errors[i][j] = v.error_estimate / unit;
    }
    Ok(RescaledGrid {
        lambda0,
        n,
        rho_n,
        offsets: offsets.to_vec(),
        values,
        errors,
    })
}

/// `K(i,j)K(j,i)/(K(i,i)K(j,j))`.
pub fn normalized_two_point(grid: &RescaledGrid, i: usize, j: usize) -> Result<f64> {
    let m = grid.offsets.len();
    if i >= m || j >= m {
        return Err(Error::InvalidArgument(format!(
            "index ({i}, {j}) outside a {m}-point grid"
        )));
    }
    let d = grid.values[i][i].re * grid.values[j][j].re;
    if d.abs() < 1e-300 {
        return Err(Error::Degenerate(format!(
            "zero diagonal at offsets {} and {}",
            grid.offsets[i], grid.offsets[j]
        )));
    }
    Ok((grid.values[i][j] * grid.values[j][i]).re / d)
}

/// `sup_{i<j} |statistic(i,j) - S(x_i - x_j)²|`, zero for fewer than two offsets.
fn sup_error(offsets: &[f64], stat: impl Fn(usize, usize) -> Result<f64>) -> Result<f64> {
    let mut worst = 0.0f64;
    for i in 0..offsets.len() {
        for j in i + 1..offsets.len() {
            let s = sine_kernel(offsets[i] - offsets[j]);
            worst = worst.max((stat(i, j)? - s * s).abs());
        }
    }
    Ok(worst)
}

/// Sup error of the normalized two-point function against the sine kernel.
pub fn sine_sup_error(grid: &RescaledGrid) -> Result<f64> {
    sup_error(&grid.offsets, |i, j| normalized_two_point(grid, i, j))
}

/// Interval `[a, b]` and quadrature order of the Nyström discretization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FredholmSpec {
    pub a: f64,
    pub b: f64,
    pub quad_order: usize,
}

impl FredholmSpec {
    pub fn new(a: f64, b: f64) -> Self {
        FredholmSpec {
            a,
            b,
            quad_order: 32,
        }
    }
}

/// `det(1 - S_{a,b})` by Gauss–Legendre Nyström discretization.
pub fn fredholm_gap(spec: &FredholmSpec) -> Result<f64> {
    if !(spec.a <= spec.b) || !spec.a.is_finite() || !spec.b.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "need a <= b, got [{}, {}]",
            spec.a, spec.b
        )));
    }
    if spec.quad_order < 4 {
        return Err(Error::InvalidArgument(
            "quadrature order must be at least 4".into(),
        ));
    }
    if spec.a == spec.b {
        return Ok(1.0);
    }
    let (x, w) = gauss_legendre_on(spec.quad_order, spec.a, spec.b);
    let q = spec.quad_order;
    let m = DMatrix::from_fn(q, q, |i, j| {
        let s = (w[i] * w[j]).sqrt() * sine_kernel(x[i] - x[j]);
        if i == j {
            1.0 - s
        } else {
            -s
        }
    });
    Ok(m.determinant())
}

/// Monte Carlo versus Fredholm gap probability at one bulk point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapReport {
    pub schema: u32,
    pub n: usize,
    pub lambda0: f64,
    pub a: f64,
    pub b: f64,
    pub trials: usize,
    pub rho_n: f64,
    /// Standard error of `rho_n` over deformation draws; 0 for a fixed one.
    pub rho_n_stderr: f64,
    pub interval: (f64, f64),
    pub mc: f64,
    pub stderr: f64,
    pub fredholm: f64,
    pub z: f64,
}

/// Settings shared by the density estimates behind rescaling.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DensitySettings {
    pub method: Method,
    pub quad: QuadratureSpec,
    /// Deformation draws averaged for random `H0`.
    pub draws: usize,
}

/// `ρ_n(λ0)` for a spec; random deformations are averaged over `draws`
/// realizations seeded like the Monte Carlo trials. Returns the mean and its
/// standard error.
pub fn ensemble_density(
    spec: &EnsembleSpec,
    lambda0: f64,
    settings: &DensitySettings,
) -> Result<(f64, f64)> {
    let draws = deformation_draws(spec, settings.draws)?;
    let rhos = draws
        .par_iter()
        .map(|h| kernel::density_n(h, lambda0, settings.method, &settings.quad))
        .collect::<Result<Vec<f64>>>()?;
    Ok(mean_and_stderr(&rhos))
}

fn deformation_draws(spec: &EnsembleSpec, draws: usize) -> Result<Vec<Vec<f64>>> {
    if spec.h0.is_random() {
        if draws == 0 {
            return Err(Error::InvalidArgument(
                "random deformation needs draws > 0".into(),
            ));
        }
        (0..draws as u64)
            .map(|k| realize_h0(&spec.h0, spec.n, spec.trial(k).seed))
            .collect()
    } else {
        Ok(vec![realize_h0(&spec.h0, spec.n, spec.seed)?])
    }
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let k = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / k;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

/// Gap probability of `[λ0 + a/(nρ_n), λ0 + b/(nρ_n)]` by Monte Carlo over
/// `trials` samples, against `det(1 - S_{a,b})`.
///
/// `z = (mc - fredholm)/stderr`; when every trial agrees the standard error
/// is floored at `1/trials` so that `z` stays finite.
pub fn gap_compare(
    spec: &EnsembleSpec,
    lambda0: f64,
    a: f64,
    b: f64,
    trials: usize,
    settings: &DensitySettings,
) -> Result<GapReport> {
    if !(a <= b) {
        return Err(Error::InvalidArgument(format!(
            "need a <= b, got [{a}, {b}]"
        )));
    }
    let (rho_n, rho_se) = ensemble_density(spec, lambda0, settings)?;
    if !(rho_n > 1e-12) {
        return Err(Error::OutOfBulk(lambda0));
    }
    let unit = spec.n as f64 * rho_n;
    let interval = (lambda0 + a / unit, lambda0 + b / unit);
    let gaps = (0..trials as u64)
        .into_par_iter()
        .map(|k| {
            let s = sample_deformed(&spec.trial(k))?;
            Ok(ensemble::has_gap(&s.eigenvalues, interval.0, interval.1))
        })
        .collect::<Result<Vec<bool>>>()?;
    let (mc, stderr) = gap_stats(&gaps)?;
    let fredholm = fredholm_gap(&FredholmSpec::new(a, b))?;
    let diff = mc - fredholm;
    let z = if diff.abs() <= 1e-12 {
        0.0
    } else {
        diff / stderr.max(1.0 / trials as f64)
    };
    Ok(GapReport {
        schema: SCHEMA,
        n: spec.n,
        lambda0,
        a,
        b,
        trials,
        rho_n,
        rho_n_stderr: rho_se,
        interval,
        mc,
        stderr,
        fredholm,
        z,
    })
}

fn gap_stats(gaps: &[bool]) -> Result<(f64, f64)> {
    let spectra: Vec<&[f64]> = gaps
        .iter()
        .map(|&g| if g { &[][..] } else { &[0.0][..] })
        .collect();
    ensemble::gap_fraction(spectra.into_iter(), -1.0, 1.0)
}

/// A deformation family indexed by `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Family {
    /// All atoms zero.
    Gue,
    TwoPoint {
        a: f64,
    },
    /// IID atoms, averaged over `draws` realizations.
    Iid {
        law: Law,
        draws: usize,
        seed: u64,
    },
}

impl Family {
    pub fn spec(&self, n: usize) -> EnsembleSpec {
        match self {
            Family::Gue => EnsembleSpec::new(n, H0Recipe::zero(n), 0),
            Family::TwoPoint { a } => EnsembleSpec::new(n, H0Recipe::TwoPoint { a: *a }, 0),
            Family::Iid { law, seed, .. } => EnsembleSpec::new(
                n,
                H0Recipe::Iid {
                    law: law.clone(),
                    seed_offset: 0,
                },
                *seed,
            ),
        }
    }

    pub fn draws(&self) -> usize {
        match self {
            Family::Iid { draws, .. } => *draws,
            _ => 1,
        }
    }
}

/// Normalized two-point statistics averaged over deformation draws.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AveragedTwoPoint {
    pub n: usize,
    pub lambda0: f64,
    pub rho_n: f64,
    pub rho_n_stderr: f64,
    pub offsets: Vec<f64>,
    /// `1 - E[R_2(i,j)] / (E[K(i,i)] E[K(j,j)])`.
    pub statistic: Vec<Vec<f64>>,
    pub sup_error: f64,
}

/// Two-point statistic of a family at size `n`. For a single deformation
/// this is [`normalized_two_point`]; for random ones the correlation
/// functions are averaged before normalizing, and the rescaling uses the
/// averaged density.
pub fn averaged_two_point(
    family: &Family,
    n: usize,
    lambda0: f64,
    offsets: &[f64],
    method: Method,
    quad: &QuadratureSpec,
) -> Result<AveragedTwoPoint> {
    let spec = family.spec(n);
    let draws = deformation_draws(&spec, family.draws())?;
    let rhos = draws
        .par_iter()
        .map(|h| kernel::density_n(h, lambda0, method, quad))
        .collect::<Result<Vec<f64>>>()?;
    let (rho_n, rho_se) = mean_and_stderr(&rhos);
    let grids = draws
        .iter()
        .map(|h| rescale_with_density(h, lambda0, offsets, rho_n, method, quad))
        .collect::<Result<Vec<_>>>()?;
    let m = offsets.len();
    let k = grids.len() as f64;
    let mut statistic = vec![vec![1.0; m]; m];
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            let (mut r2, mut di, mut dj) = (0.0, 0.0, 0.0);
            for g in &grids {
                let v = &g.values;
                r2 += (v[i][i] * v[j][j] - v[i][j] * v[j][i]).re / k;
                di += v[i][i].re / k;
                dj += v[j][j].re / k;
            }
            if (di * dj).abs() < 1e-300 {
                return Err(Error::Degenerate(format!(
                    "zero density at offset {}",
                    offsets[i]
                )));
            }
            statistic[i][j] = 1.0 - r2 / (di * dj);
        }
    }
    let sup = sup_error(offsets, |i, j| Ok(statistic[i][j]))?;
    Ok(AveragedTwoPoint {
        n,
        lambda0,
        rho_n,
        rho_n_stderr: rho_se,
        offsets: offsets.to_vec(),
        statistic,
        sup_error: sup,
    })
}

/// One row of a convergence table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub rho_n: f64,
    pub sup_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub schema: u32,
    pub lambda0: f64,
    pub offsets: Vec<f64>,
    pub rows: Vec<ConvergenceRow>,
    /// Errors never grow by more than 10% from one `n` to the next.
    pub non_increasing: bool,
}

/// Sup error against the sine prediction for each `n` in `n_list`.
pub fn convergence_report(
    family: &Family,
    lambda0: f64,
    offsets: &[f64],
    n_list: &[usize],
    method: Method,
    quad: &QuadratureSpec,
) -> Result<ConvergenceReport> {
    let rows = n_list
        .iter()
        .map(|&n| {
            let a = averaged_two_point(family, n, lambda0, offsets, method, quad)?;
            Ok(ConvergenceRow {
                n,
                rho_n: a.rho_n,
                sup_error: a.sup_error,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let non_increasing = rows
        .windows(2)
        .all(|w| w[1].sup_error <= 1.1 * w[0].sup_error + 1e-12);
    Ok(ConvergenceReport {
        schema: SCHEMA,
        lambda0,
        offsets: offsets.to_vec(),
        rows,
        non_increasing,
    })
}

/// CSV `i,j,x_i,x_j,re,im,err` of a rescaled grid.
pub fn grid_csv(grid: &RescaledGrid) -> String {
    use crate::io::fmt_f64;
    let mut out = String::from("i,j,x_i,x_j,re,im,err\n");
    for (i, row) in grid.values.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            out.push_str(&format!(
                "{i},{j},{},{},{},{},{}\n",
                fmt_f64(grid.offsets[i]),
                fmt_f64(grid.offsets[j]),
                fmt_f64(v.re),
                fmt_f64(v.im),
                fmt_f64(grid.errors[i][j])
            ));
        }
    }
    out
}

/// Offsets `-half..=half` in `count` equal steps.
pub fn symmetric_offsets(half: f64, count: usize) -> Vec<f64> {
    if count < 2 {
        return vec![0.0; count];
    }
    (0..count)
        .map(|k| -half + 2.0 * half * k as f64 / (count - 1) as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sine_values() {
        assert_eq!(sine_kernel(0.0), 1.0);
        assert!(sine_kernel(1.0).abs() < 1e-16);
        assert!((sine_kernel(0.5) - 2.0 / PI).abs() < 1e-15);
        assert_eq!(sine_kernel(-0.3), sine_kernel(0.3));
    }

    #[test]
    fn fredholm_basics() {
        assert_eq!(fredholm_gap(&FredholmSpec::new(0.3, 0.3)).unwrap(), 1.0);
        assert!(fredholm_gap(&FredholmSpec::new(1.0, 0.0)).is_err());
        let s = 1e-3;
        assert!((fredholm_gap(&FredholmSpec::new(0.0, s)).unwrap() - (1.0 - s)).abs() <= 1e-5);
        for len in [0.25, 1.0, 2.0, 4.0] {
            let lo = fredholm_gap(&FredholmSpec {
                a: 0.0,
                b: len,
                quad_order: 20,
            })
            .unwrap();
            let hi = fredholm_gap(&FredholmSpec {
                a: 0.0,
                b: len,
                quad_order: 40,
            })
            .unwrap();
            assert!((lo - hi).abs() < 1e-10, "length {len}: {lo} vs {hi}");
        }
        // translation invariance and a tabulated value E(0; s = 1) ≈ 0.1702
        let a = fredholm_gap(&FredholmSpec::new(-0.5, 0.5)).unwrap();
        let b = fredholm_gap(&FredholmSpec::new(3.0, 4.0)).unwrap();
        assert!((a - b).abs() < 1e-13);
        assert!((a - 0.1702).abs() < 1e-3);
    }

    #[test]
    fn fredholm_is_monotone_in_length() {
        let mut prev = 1.0;
        for k in 1..40 {
            let v = fredholm_gap(&FredholmSpec::new(0.0, 0.1 * k as f64)).unwrap();
            assert!(v > 0.0 && v <= prev + 1e-14);
            prev = v;
        }
    }

    proptest! {
        #[test]
        fn sine_determinants_are_nonnegative(xs in proptest::collection::vec(-3.0f64..3.0, 1..=4)) {
            let m: Vec<Vec<Complex64>> = xs
                .iter()
                .map(|&x| xs.iter().map(|&y| Complex64::new(sine_kernel(x - y), 0.0)).collect())
                .collect();
            prop_assert!(kernel::correlation_det(&m).unwrap() >= -1e-10);
        }

        #[test]
        fn determinants_ignore_conjugation(
            xs in proptest::collection::vec(-2.0f64..2.0, 2..=4),
            c in -3.0f64..3.0,
        ) {
            let k = |x: f64, y: f64| kernel::kernel_cd_gue(8, x / 8.0, y / 8.0).unwrap().value;
            let a: Vec<Vec<Complex64>> = xs.iter().map(|&x| xs.iter().map(|&y| k(x, y)).collect()).collect();
            let b: Vec<Vec<Complex64>> = xs
                .iter()
                .map(|&x| xs.iter().map(|&y| k(x, y) * (c * (x - y)).exp()).collect())
                .collect();
            let (da, db) = (kernel::correlation_det(&a).unwrap(), kernel::correlation_det(&b).unwrap());
            let scale: f64 = xs.iter().map(|&x| k(x, x).re).product();
            prop_assert!((da - db).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn rescaled_gue_grid() {
        let h = vec![0.0; 64];
        let grid = rescale_kernel(
            &h,
            0.0,
            &[0.0, 0.5, 1.0],
            Method::Cd,
            &QuadratureSpec::default(),
        )
        .unwrap();
        for i in 0..3 {
            assert!((grid.values[i][i].re - 1.0).abs() < 0.01);
        }
        assert!((grid.values[0][0].re - 1.0).abs() < 1e-12);
        assert_eq!(normalized_two_point(&grid, 1, 1).unwrap(), 1.0);
        assert!(normalized_two_point(&grid, 0, 2).unwrap().abs() < 0.05);
        let half = normalized_two_point(&grid, 0, 1).unwrap();
        assert!((half - (2.0 / PI).powi(2)).abs() < 0.05);
        let sym = (normalized_two_point(&grid, 0, 2).unwrap()
            - normalized_two_point(&grid, 2, 0).unwrap())
        .abs();
        assert!(sym < 1e-12);
        assert!(rescale_kernel(&h, 3.0, &[0.0], Method::Cd, &QuadratureSpec::default()).is_err());
    }

    #[test]
    fn convergence_trend_for_gue() {
        let offs = symmetric_offsets(2.0, 5);
        let r = convergence_report(
            &Family::Gue,
            0.0,
            &offs,
            &[16, 64],
            Method::Auto,
            &QuadratureSpec::default(),
        )
        .unwrap();
        assert!(r.rows[1].sup_error < r.rows[0].sup_error);
        assert!(r.rows[1].sup_error < 0.05);
        let only = convergence_report(
            &Family::Gue,
            0.0,
            &[0.0],
            &[16],
            Method::Auto,
            &QuadratureSpec::default(),
        )
        .unwrap();
        assert_eq!(only.rows[0].sup_error, 0.0);
    }

    #[test]
    fn empty_interval_gap() {
        let spec = EnsembleSpec::new(8, H0Recipe::zero(8), 3);
        let r = gap_compare(&spec, 0.0, 0.2, 0.2, 50, &DensitySettings::default()).unwrap();
        assert_eq!((r.mc, r.fredholm, r.z), (1.0, 1.0, 0.0));
    }

    #[test]
    fn averaged_statistic_reduces_to_normalized_two_point() {
        let offs = [0.0, 0.7];
        let a = averaged_two_point(
            &Family::TwoPoint { a: 1.0 },
            16,
            1.0,
            &offs,
            Method::Auto,
            &QuadratureSpec::default(),
        )
        .unwrap();
        let h: Vec<f64> = (0..16).map(|i| if i < 8 { -1.0 } else { 1.0 }).collect();
        let g = rescale_kernel(&h, 1.0, &offs, Method::Auto, &QuadratureSpec::default()).unwrap();
        assert!((a.statistic[0][1] - normalized_two_point(&g, 0, 1).unwrap()).abs() < 1e-10);
    }
}
