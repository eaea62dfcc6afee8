//! Deformed GUE sampling and empirical spectral statistics.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eigen::hermitian_eigenvalues;
use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::rng::{stream, stream_seed};

/// Stream index of the Wigner part of a sample.
const WIGNER_STREAM: u64 = 0;
/// Stream index of a random deformation.
const H0_STREAM: u64 = 1;

/// Law of the i.i.d. entries of a random deformation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum Law {
    Uniform {
        lo: f64,
        hi: f64,
    },
    Gaussian {
        mu: f64,
        sigma: f64,
    },
    /// Atoms `(location, weight)`; weights need not be normalized.
    Discrete {
        atoms: Vec<(f64, f64)>,
    },
}

impl Law {
    pub fn validate(&self) -> Result<()> {
        match self {
            Law::Uniform { lo, hi } if lo.is_finite() && hi.is_finite() && lo < hi => Ok(()),
            Law::Gaussian { mu, sigma } if mu.is_finite() && sigma.is_finite() && *sigma > 0.0 => {
                Ok(())
            }
            Law::Discrete { atoms }
                if !atoms.is_empty()
                    && atoms
                        .iter()
                        .all(|(x, w)| x.is_finite() && w.is_finite() && *w > 0.0) =>
            {
                Ok(())
            }
            _ => Err(Error::InvalidArgument(format!("bad law {self:?}"))),
        }
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            Law::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            Law::Gaussian { mu, sigma } => {
                let g: f64 = StandardNormal.sample(rng);
                mu + sigma * g
            }
            Law::Discrete { atoms } => {
                let total: f64 = atoms.iter().map(|a| a.1).sum();
                let mut u = rng.random::<f64>() * total;
                for &(x, w) in atoms {
                    if u < w {
                        return x;
                    }
                    u -= w;
                }
                atoms[atoms.len() - 1].0
            }
        }
    }
}

/// Recipe for the deterministic part `H0 = diag(h)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum H0Recipe {
    Explicit {
        h: Vec<f64>,
    },
    /// n/2 copies of -a and n/2 copies of +a.
    TwoPoint {
        a: f64,
    },
    /// Independent entries, redrawn for every sample seed.
    Iid {
        law: Law,
        seed_offset: u64,
    },
}

impl H0Recipe {
    /// All entries equal to zero: the undeformed GUE.
    pub fn zero(n: usize) -> Self {
        H0Recipe::Explicit { h: vec![0.0; n] }
    }

    pub fn is_random(&self) -> bool {
        matches!(self, H0Recipe::Iid { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub n: usize,
    pub h0: H0Recipe,
    pub seed: u64,
}

impl EnsembleSpec {
    pub fn new(n: usize, h0: H0Recipe, seed: u64) -> Self {
        EnsembleSpec { n, h0, seed }
    }

    /// The `EnsembleSpec` of trial `k` of a Monte Carlo run seeded by `self.seed`.
    pub fn trial(&self, k: u64) -> EnsembleSpec {
        EnsembleSpec {
            n: self.n,
            h0: self.h0.clone(),
            seed: stream_seed(self.seed, k),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSample {
    /// Sorted ascending.
    pub eigenvalues: Vec<f64>,
    /// Sorted ascending.
    pub h0_used: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    pub samples: Vec<SpectralSample>,
    pub n: usize,
}

impl EmpiricalMeasure {
    pub fn new(samples: Vec<SpectralSample>) -> Result<Self> {
        let n = samples.first().map_or(0, |s| s.eigenvalues.len());
        if samples.iter().any(|s| s.eigenvalues.len() != n) {
            return Err(Error::InvalidDimension(
                "samples of different dimensions".into(),
            ));
        }
        Ok(EmpiricalMeasure { samples, n })
    }
}

/// `n^{-1/2} W` with `W` Hermitian, unit-variance diagonal and off-diagonal
/// real and imaginary parts of variance 1/2.
pub fn sample_gue(n: usize, seed: u64) -> Result<DMatrix<Complex64>> {
    if n == 0 {
        return Err(Error::InvalidDimension("n must be at least 1".into()));
    }
    let mut rng = stream(seed, WIGNER_STREAM);
    let scale = 1.0 / (n as f64).sqrt();
    let off = std::f64::consts::FRAC_1_SQRT_2 * scale;
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        let d: f64 = StandardNormal.sample(&mut rng);
        m[(j, j)] = Complex64::new(d * scale, 0.0);
        for i in j + 1..n {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            let z = Complex64::new(re * off, im * off);
            m[(i, j)] = z;
            m[(j, i)] = z.conj();
        }
    }
    Ok(m)
}

/// The diagonal of `H0`, sorted ascending.
pub fn realize_h0(recipe: &H0Recipe, n: usize, seed: u64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::InvalidDimension("n must be at least 1".into()));
    }
    let mut h = match recipe {
        H0Recipe::Explicit { h } => {
            if h.len() != n {
                return Err(Error::Length {
                    expected: n,
                    got: h.len(),
                });
            }
            if h.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidArgument("non-finite deformation".into()));
            }
            h.clone()
        }
        H0Recipe::TwoPoint { a } => {
            if !n.is_multiple_of(2) {
                return Err(Error::Parity(n));
            }
            if !a.is_finite() {
                return Err(Error::InvalidArgument("non-finite two-point a".into()));
            }
            let mut h = vec![-a; n / 2];
            h.extend(std::iter::repeat_n(*a, n / 2));
            h
        }
        H0Recipe::Iid { law, seed_offset } => {
            law.validate()?;
            let mut rng = stream(seed.wrapping_add(*seed_offset), H0_STREAM);
            (0..n).map(|_| law.draw(&mut rng)).collect()
        }
    };
    h.sort_by(f64::total_cmp);
    Ok(h)
}

/// The matrix `n^{-1/2} W + diag(h)` of a spec, with the realized `h`.
pub fn deformed_matrix(spec: &EnsembleSpec) -> Result<(DMatrix<Complex64>, Vec<f64>)> {
    let h = realize_h0(&spec.h0, spec.n, spec.seed)?;
    let mut m = sample_gue(spec.n, spec.seed)?;
    for (j, hj) in h.iter().enumerate() {
        m[(j, j)].re += hj;
    }
    Ok((m, h))
}

/// Eigenvalues of one deformed GUE matrix.
///
/// The deformation is applied about the midpoint of its range, which is added
/// back afterwards; a constant deformation therefore shifts the GUE
/// eigenvalues exactly.
pub fn sample_deformed(spec: &EnsembleSpec) -> Result<SpectralSample> {
    let h = realize_h0(&spec.h0, spec.n, spec.seed)?;
    let center = 0.5 * (h[0] + h[h.len() - 1]);
    let mut m = sample_gue(spec.n, spec.seed)?;
    for (j, hj) in h.iter().enumerate() {
        m[(j, j)].re += hj - center;
    }
    let mut eigenvalues = hermitian_eigenvalues(&m)
        .map_err(|e| Error::Numerical(format!("eigensolver failed for {spec:?}: {e}")))?;
    for x in &mut eigenvalues {
        *x += center;
    }
    Ok(SpectralSample {
        eigenvalues,
        h0_used: h,
    })
}

/// `trials` independent samples; trial `k` is seeded by `spec.trial(k)`.
pub fn sample_trials(spec: &EnsembleSpec, trials: usize) -> Result<EmpiricalMeasure> {
    let samples = (0..trials as u64)
        .into_par_iter()
        .map(|k| sample_deformed(&spec.trial(k)))
        .collect::<Result<Vec<_>>>()?;
    EmpiricalMeasure::new(samples)
}

/// Fraction of eigenvalues in the half-open interval `[lo, hi)`.
pub fn empirical_ncm(sample: &SpectralSample, lo: f64, hi: f64) -> f64 {
    let n = sample.eigenvalues.len();
    if n == 0 {
        return 0.0;
    }
    let count = sample
        .eigenvalues
        .iter()
        .filter(|&&x| x >= lo && x < hi)
        .count();
    count as f64 / n as f64
}

/// True when no eigenvalue lies in the closed interval `[lo, hi]`.
pub fn has_gap(eigenvalues: &[f64], lo: f64, hi: f64) -> bool {
    let first = eigenvalues.partition_point(|&x| x < lo);
    first == eigenvalues.len() || eigenvalues[first] > hi
}

/// Fraction of samples with no eigenvalue in `[lo, hi]`, and its standard
/// error `sqrt(p(1-p)/(trials-1))` (sample variance with Bessel's correction).
pub fn estimate_gap_probability(
    measure: &EmpiricalMeasure,
    lo: f64,
    hi: f64,
) -> Result<(f64, f64)> {
    gap_fraction(
        measure.samples.iter().map(|s| s.eigenvalues.as_slice()),
        lo,
        hi,
    )
}

pub(crate) fn gap_fraction<'a>(
    spectra: impl Iterator<Item = &'a [f64]>,
    lo: f64,
    hi: f64,
) -> Result<(f64, f64)> {
    let (mut trials, mut gaps) = (0usize, 0usize);
    for ev in spectra {
        trials += 1;
        if has_gap(ev, lo, hi) {
            gaps += 1;
        }
    }
    if trials < 2 {
        return Err(Error::InsufficientData(format!(
            "gap probability needs at least 2 samples, got {trials}"
        )));
    }
    let p = gaps as f64 / trials as f64;
    Ok((p, (p * (1.0 - p) / (trials - 1) as f64).sqrt()))
}

/// CSV `trial,index,eigenvalue`.
pub fn samples_csv(measure: &EmpiricalMeasure) -> String {
    let mut out = String::from("trial,index,eigenvalue\n");
    for (t, s) in measure.samples.iter().enumerate() {
        for (i, x) in s.eigenvalues.iter().enumerate() {
            out.push_str(&format!("{t},{i},{}\n", fmt_f64(*x)));
        }
    }
    out
}

/// CSV `index,h`.
pub fn h0_csv(h: &[f64]) -> String {
    let mut out = String::from("index,h\n");
    for (i, x) in h.iter().enumerate() {
        out.push_str(&format!("{i},{}\n", fmt_f64(*x)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(ev: &[f64]) -> SpectralSample {
        SpectralSample {
            eigenvalues: ev.to_vec(),
            h0_used: vec![0.0; ev.len()],
        }
    }

    #[test]
    fn one_by_one_entry_has_unit_variance() {
        let seeds = 100_000;
        let mut s2 = 0.0;
        for seed in 0..seeds {
            let m = sample_gue(1, seed).unwrap();
            assert_eq!(m[(0, 0)].im, 0.0);
            s2 += m[(0, 0)].re.powi(2);
        }
        let var = s2 / seeds as f64;
        assert!((var - 1.0).abs() < 0.03, "variance {var}");
    }

    #[test]
    fn hermitian_symmetry_is_exact() {
        let m = sample_gue(2, 11).unwrap();
        assert_eq!(m[(0, 1)], m[(1, 0)].conj());
        let m = sample_gue(9, 12).unwrap();
        assert_eq!(m, m.adjoint());
    }

    #[test]
    fn off_diagonal_second_moment() {
        let n = 50;
        let seeds = 1000;
        let mut acc = 0.0;
        for seed in 0..seeds {
            let m = sample_gue(n, seed).unwrap() * Complex64::new((n as f64).sqrt(), 0.0);
            for j in 0..n {
                for i in j + 1..n {
                    acc += m[(i, j)].norm_sqr();
                }
            }
        }
        let mean = acc / (seeds as f64 * (n * (n - 1) / 2) as f64);
        assert!((mean - 1.0).abs() < 0.03, "E|W_jk|^2 = {mean}");
    }

    #[test]
    fn zero_dimension_is_rejected() {
        assert!(matches!(sample_gue(0, 1), Err(Error::InvalidDimension(_))));
    }

    #[test]
    fn recipes() {
        assert_eq!(
            realize_h0(&H0Recipe::TwoPoint { a: 1.0 }, 4, 0).unwrap(),
            vec![-1.0, -1.0, 1.0, 1.0]
        );
        assert_eq!(
            realize_h0(
                &H0Recipe::Explicit {
                    h: vec![3.0, -2.0, 0.0]
                },
                3,
                0
            )
            .unwrap(),
            vec![-2.0, 0.0, 3.0]
        );
        assert!(matches!(
            realize_h0(&H0Recipe::TwoPoint { a: 1.0 }, 3, 0),
            Err(Error::Parity(3))
        ));
        assert!(matches!(
            realize_h0(&H0Recipe::Explicit { h: vec![1.0] }, 2, 0),
            Err(Error::Length { .. })
        ));
        let iid = H0Recipe::Iid {
            law: Law::Uniform { lo: -1.0, hi: 1.0 },
            seed_offset: 0,
        };
        let h = realize_h0(&iid, 10_000, 5).unwrap();
        let mean = h.iter().sum::<f64>() / h.len() as f64;
        assert!(mean.abs() < 0.05);
        assert_eq!(h, realize_h0(&iid, 10_000, 5).unwrap());
        assert_ne!(h, realize_h0(&iid, 10_000, 6).unwrap());
    }

    #[test]
    fn discrete_and_gaussian_laws() {
        let law = Law::Discrete {
            atoms: vec![(-2.0, 1.0), (3.0, 3.0)],
        };
        let mut rng = stream(1, 1);
        let draws: Vec<f64> = (0..20_000).map(|_| law.draw(&mut rng)).collect();
        let frac = draws.iter().filter(|&&x| x == 3.0).count() as f64 / draws.len() as f64;
        assert!((frac - 0.75).abs() < 0.02);
        let law = Law::Gaussian {
            mu: 1.0,
            sigma: 2.0,
        };
        let draws: Vec<f64> = (0..20_000).map(|_| law.draw(&mut rng)).collect();
        let m = draws.iter().sum::<f64>() / draws.len() as f64;
        let v = draws.iter().map(|x| (x - m).powi(2)).sum::<f64>() / draws.len() as f64;
        assert!((m - 1.0).abs() < 0.05 && (v - 4.0).abs() < 0.15);
        assert!(Law::Gaussian {
            mu: 0.0,
            sigma: 0.0
        }
        .validate()
        .is_err());
        assert!(Law::Uniform { lo: 1.0, hi: 1.0 }.validate().is_err());
    }

    #[test]
    fn one_by_one_shift_mean() {
        let seeds = 100_000u64;
        let mut acc = 0.0;
        for seed in 0..seeds {
            let s = sample_deformed(&EnsembleSpec::new(
                1,
                H0Recipe::Explicit { h: vec![5.0] },
                seed,
            ))
            .unwrap();
            acc += s.eigenvalues[0];
        }
        assert!((acc / seeds as f64 - 5.0).abs() < 0.02);
    }

    #[test]
    fn two_by_two_matches_characteristic_polynomial() {
        let spec = EnsembleSpec::new(2, H0Recipe::zero(2), 42);
        let m = sample_gue(2, 42).unwrap();
        let (a, d, b) = (m[(0, 0)].re, m[(1, 1)].re, m[(1, 0)].norm_sqr());
        let disc = ((a - d).powi(2) + 4.0 * b).sqrt();
        let expected = [0.5 * (a + d - disc), 0.5 * (a + d + disc)];
        let got = sample_deformed(&spec).unwrap().eigenvalues;
        for (x, y) in got.iter().zip(expected) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn trace_and_shift_equivariance() {
        for seed in 0..20 {
            let spec = EnsembleSpec::new(12, H0Recipe::TwoPoint { a: 1.5 }, seed);
            let (m, h) = deformed_matrix(&spec).unwrap();
            let s = sample_deformed(&spec).unwrap();
            let tr: f64 = (0..12).map(|i| m[(i, i)].re).sum();
            let sum: f64 = s.eigenvalues.iter().sum();
            assert!((tr - sum).abs() <= 1e-9 * 12.0 * (1.0 + 1.5));
            assert_eq!(s.h0_used, h);

            let gue = sample_deformed(&EnsembleSpec::new(12, H0Recipe::zero(12), seed)).unwrap();
            let shifted = sample_deformed(&EnsembleSpec::new(
                12,
                H0Recipe::Explicit { h: vec![0.75; 12] },
                seed,
            ))
            .unwrap();
            for (x, y) in gue.eigenvalues.iter().zip(&shifted.eigenvalues) {
                assert_eq!(x + 0.75, *y);
            }
        }
    }

    #[test]
    fn determinism_across_thread_counts() {
        let spec = EnsembleSpec::new(16, H0Recipe::TwoPoint { a: 1.0 }, 3);
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let many = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap();
        let a = one.install(|| sample_trials(&spec, 25)).unwrap();
        let b = many.install(|| sample_trials(&spec, 25)).unwrap();
        assert_eq!(a, b);
        assert_eq!(samples_csv(&a), samples_csv(&b));
    }

    #[test]
    fn counting_measure_conventions() {
        let s = sample(&[-1.0, 0.0, 2.0]);
        assert!((empirical_ncm(&s, -0.5, 2.5) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(empirical_ncm(&s, f64::NEG_INFINITY, f64::INFINITY), 1.0);
        assert!((empirical_ncm(&s, 0.0, 2.0) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn gap_probability_counts_closed_intervals() {
        let m = EmpiricalMeasure::new(vec![sample(&[-1.0, 0.0]), sample(&[-4.0, 4.0])]).unwrap();
        assert_eq!(
            estimate_gap_probability(&m, 10.0, 11.0).unwrap(),
            (1.0, 0.0)
        );
        assert_eq!(estimate_gap_probability(&m, -0.5, 0.0).unwrap(), (0.5, 0.5));
        // endpoint hit counts as a hit
        assert_eq!(estimate_gap_probability(&m, 0.0, 1.0).unwrap().0, 0.5);
        let empty = EmpiricalMeasure::new(vec![]).unwrap();
        assert!(matches!(
            estimate_gap_probability(&empty, 0.0, 1.0),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn csv_layout() {
        let m = EmpiricalMeasure::new(vec![sample(&[0.5, 1.0])]).unwrap();
        let csv = samples_csv(&m);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("trial,index,eigenvalue"));
        assert_eq!(lines.next(), Some("0,0,5.0000000000000000e-1"));
        assert_eq!(h0_csv(&[-1.0]), "index,h\n0,-1.0000000000000000e0\n");
    }
}
