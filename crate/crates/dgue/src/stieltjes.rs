//! Stieltjes transforms and the saddle equation `z - g0(z) = lambda`.
//!
//! The solver works in the real part `x` of `z`. For fixed `x` the equation
//! for the imaginary part reduces to
//!
//! ```text
//! c(x, y^2) = ∫ dN(h) / ((x - h)^2 + y^2) = 1,
//! ```
//!
//! whose left side decreases in `y^2`, so `y(x)` is unique; when `c(x, 0) <= 1`
//! the solution is real. Then `lambda(x) = x + ∫ (x - h) dN / ((x - h)^2 + y^2)`
//! is continuous, non-decreasing and within distance 1 of `x`, and is inverted
//! by a bracketed Newton iteration.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::quadrature;

pub const DEFAULT_TOL: f64 = 1e-12;
pub const MAX_ITER: usize = 200;

/// Finite atomic probability measure, atoms sorted by location and merged.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicMeasure {
    locs: Vec<f64>,
    weights: Vec<f64>,
}

impl AtomicMeasure {
    /// Atoms `(location, weight)`; weights must be positive and sum to 1
    /// within `1e-12`.
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidArgument("measure without atoms".into()));
        }
        if atoms
            .iter()
            .any(|(x, w)| !x.is_finite() || !w.is_finite() || *w <= 0.0)
        {
            return Err(Error::InvalidArgument(
                "atoms need finite locations and positive weights".into(),
            ));
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "weights sum to {total}, not 1"
            )));
        }
        let mut atoms = atoms;
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut locs: Vec<f64> = Vec::with_capacity(atoms.len());
        let mut weights: Vec<f64> = Vec::with_capacity(atoms.len());
        for (x, w) in atoms {
            if locs.last() == Some(&x) {
                *weights.last_mut().expect("paired") += w;
            } else {
                locs.push(x);
                weights.push(w);
            }
        }
        Ok(AtomicMeasure { locs, weights })
    }

    /// Normalized counting measure of `points`; equal points merge.
    pub fn from_points(points: &[f64]) -> Result<Self> {
        let w = 1.0 / points.len().max(1) as f64;
        let mut sorted = points.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut atoms: Vec<(f64, f64)> = Vec::new();
        let mut count = 0usize;
        for (i, &x) in sorted.iter().enumerate() {
            count += 1;
            if i + 1 == sorted.len() || sorted[i + 1] != x {
                atoms.push((x, count as f64 * w));
                count = 0;
            }
        }
        // counts are integers, so renormalize exactly
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        for a in &mut atoms {
            a.1 /= total;
        }
        AtomicMeasure::new(atoms)
    }

    pub fn dirac(x: f64) -> Self {
        AtomicMeasure {
            locs: vec![x],
            weights: vec![1.0],
        }
    }

    /// `½δ_{-a} + ½δ_{a}`.
    pub fn two_point(a: f64) -> Self {
        AtomicMeasure::new(vec![(-a, 0.5), (a, 0.5)]).expect("valid two-point measure")
    }

    pub fn locations(&self) -> &[f64] {
        &self.locs
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.locs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locs.is_empty()
    }

    fn check_not_atom(&self, z: Complex64) -> Result<()> {
        if z.im == 0.0 && self.locs.binary_search_by(|h| h.total_cmp(&z.re)).is_ok() {
            return Err(Error::Pole(z.re));
        }
        Ok(())
    }

    /// `Σ w_j / (h_j - z)^2`.
    pub fn g0_prime(&self, z: Complex64) -> Result<Complex64> {
        self.check_not_atom(z)?;
        Ok(self
            .locs
            .iter()
            .zip(&self.weights)
            .map(|(h, w)| {
                let d = Complex64::new(*h, 0.0) - z;
                w / (d * d)
            })
            .sum())
    }
}

/// `Σ w_j / (h_j - z)`.
pub fn g0_eval(measure: &AtomicMeasure, z: Complex64) -> Result<Complex64> {
    measure.check_not_atom(z)?;
    Ok(measure
        .locs
        .iter()
        .zip(&measure.weights)
        .map(|(h, w)| w / (Complex64::new(*h, 0.0) - z))
        .sum())
}

/// `z^2/2 + Σ w_j Log(z - h_j) - lambda0 z` with principal logarithms.
pub fn s_action(measure: &AtomicMeasure, z: Complex64, lambda0: f64) -> Result<Complex64> {
    measure.check_not_atom(z)?;
    let logs: Complex64 = measure
        .locs
        .iter()
        .zip(&measure.weights)
        .map(|(h, w)| (z - h).ln() * w)
        .sum();
    Ok(z * z * 0.5 + logs - z * lambda0)
}

/// Lorentzian moments of a measure at `(x, u = y^2)`.
#[derive(Debug, Clone, Copy)]
pub struct Lorentz {
    /// `∫ dN / ((x-h)^2 + u)`, possibly infinite at `u = 0`.
    pub c: f64,
    /// `∫ (x-h) dN / ((x-h)^2 + u)`.
    pub r: f64,
    /// `∂c/∂u`, when cheap to evaluate.
    pub dc_du: Option<f64>,
}

/// What the saddle solver needs from a spectral measure.
pub trait Measure: Sync {
    fn lorentz(&self, x: f64, u: f64) -> Result<Lorentz>;

    /// `1 - g0'(x + iy)` split as `(a, b)`, for `y > 0`.
    fn derivative(&self, x: f64, y: f64) -> Result<(f64, f64)>;

    /// Maximal open intervals of `x` where `c(x, 0) > 1`, ascending.
    fn x_bands(&self) -> Result<Vec<(f64, f64)>>;
}

impl Measure for AtomicMeasure {
    fn lorentz(&self, x: f64, u: f64) -> Result<Lorentz> {
        let (mut c, mut r, mut dc) = (0.0, 0.0, 0.0);
        for (h, w) in self.locs.iter().zip(&self.weights) {
            let d = x - h;
            let den = d * d + u;
            if den == 0.0 {
                return Ok(Lorentz {
                    c: f64::INFINITY,
                    r: 0.0,
                    dc_du: None,
                });
            }
            c += w / den;
            r += w * d / den;
            dc -= w / (den * den);
        }
        Ok(Lorentz {
            c,
            r,
            dc_du: Some(dc),
        })
    }

    fn derivative(&self, x: f64, y: f64) -> Result<(f64, f64)> {
        let u = y * y;
        let (mut s2, mut r2) = (0.0, 0.0);
        for (h, w) in self.locs.iter().zip(&self.weights) {
            let d = x - h;
            let den = d * d + u;
            s2 += w / (den * den);
            r2 += w * d / (den * den);
        }
        Ok((2.0 * u * s2, 2.0 * y * r2))
    }

    fn x_bands(&self) -> Result<Vec<(f64, f64)>> {
        let f = |x: f64| -> f64 {
            self.locs
                .iter()
                .zip(&self.weights)
                .map(|(h, w)| w / ((x - h) * (x - h)))
                .sum()
        };
        let fp = |x: f64| -> f64 {
            self.locs
                .iter()
                .zip(&self.weights)
                .map(|(h, w)| -2.0 * w / (x - h).powi(3))
                .sum()
        };
        let k = self.locs.len();
        // f <= 1/(x - h_1)^2 left of the atoms, so the edge is within 1 of h_1
        let left = bisect_decreasing(|x| 1.0 - f(x), self.locs[0] - 1.0, self.locs[0]);
        let right = bisect_decreasing(|x| f(x) - 1.0, self.locs[k - 1], self.locs[k - 1] + 1.0);
        let mut bands = Vec::new();
        let mut start = left;
        for i in 0..k - 1 {
            let (a, b) = (self.locs[i], self.locs[i + 1]);
            // f is convex on (a, b); locate its minimum through f'
            let xm = bisect_decreasing(|x| -fp(x), a, b);
            if f(xm) < 1.0 {
                let e1 = bisect_decreasing(|x| f(x) - 1.0, a, xm);
                let e2 = bisect_decreasing(|x| 1.0 - f(x), xm, b);
                bands.push((start, e1));
                start = e2;
            }
        }
        bands.push((start, right));
        Ok(bands)
    }
}

/// Root of a function decreasing from positive to negative on `(lo, hi)`,
/// to the last representable bit. Endpoint values are never evaluated.
fn bisect_decreasing<F: Fn(f64) -> f64>(g: F, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let v = g(mid);
        if v.is_nan() {
            break;
        }
        if v > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Limiting measures: atomic, or an absolutely continuous law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LimitMeasure {
    Atomic { atoms: Vec<(f64, f64)> },
    Uniform { lo: f64, hi: f64 },
    Gaussian { mu: f64, sigma: f64 },
}

/// A limiting measure ready for evaluation.
#[derive(Debug, Clone)]
pub enum Limit {
    Atomic(AtomicMeasure),
    Uniform { lo: f64, hi: f64 },
    Gaussian { mu: f64, sigma: f64 },
}

impl Limit {
    pub fn from_descriptor(d: &LimitMeasure) -> Result<Self> {
        match d {
            LimitMeasure::Atomic { atoms } => Ok(Limit::Atomic(AtomicMeasure::new(atoms.clone())?)),
            LimitMeasure::Uniform { lo, hi } if lo < hi && lo.is_finite() && hi.is_finite() => {
                Ok(Limit::Uniform { lo: *lo, hi: *hi })
            }
            LimitMeasure::Gaussian { mu, sigma } if *sigma > 0.0 && mu.is_finite() => {
                Ok(Limit::Gaussian {
                    mu: *mu,
                    sigma: *sigma,
                })
            }
            _ => Err(Error::InvalidArgument(format!("bad limit measure {d:?}"))),
        }
    }
}

/// `atan(dA/s) - atan(dB/s)` divided by `s = sqrt(u)`, i.e. `∫_{dB}^{dA} dd/(d^2+u)`.
fn lorentz_i0(da: f64, db: f64, u: f64) -> f64 {
    if u == 0.0 {
        if da * db > 0.0 {
            (da - db) / (da * db)
        } else {
            f64::INFINITY
        }
    } else {
        let s = u.sqrt();
        (s * (da - db)).atan2(u + da * db) / s
    }
}

/// `∫_{dB}^{dA} d dd/(d^2+u)`.
fn lorentz_i1(da: f64, db: f64, u: f64) -> f64 {
    0.5 * ((da * da + u) / (db * db + u)).ln()
}

const GAUSS_CUT: f64 = 14.0;

impl Limit {
    /// `(∫ f/(d^2+u), ∫ f d/(d^2+u))` over the Gaussian support for
    /// `f = p^{(k)}`, `d = x - h`. The linear Taylor part of `f` at `x` is
    /// integrated in closed form and the smooth remainder adaptively.
    fn gaussian_moments(mu: f64, sigma: f64, k: usize, x: f64, u: f64) -> Result<(f64, f64)> {
        let derivs = |h: f64| -> [f64; 4] {
            let t = (h - mu) / sigma;
            let p = (-0.5 * t * t).exp() / (sigma * (2.0 * PI).sqrt());
            let s = sigma;
            let all = [
                p,
                -t / s * p,
                (t * t - 1.0) / (s * s) * p,
                -(t * t * t - 3.0 * t) / (s * s * s) * p,
                (t.powi(4) - 6.0 * t * t + 3.0) / s.powi(4) * p,
            ];
            [all[k], all[k + 1], all[k + 2], all[k + 3]]
        };
        let (lo, hi) = (mu - GAUSS_CUT * sigma, mu + GAUSS_CUT * sigma);
        let (da, db) = (x - lo, x - hi);
        let [f0, f1, f2, _] = derivs(x);
        let i0 = lorentz_i0(da, db, u);
        let i1 = lorentz_i1(da, db, u);
        let i2 = (da - db) - u * i0;
        if u == 0.0 && i0.is_infinite() {
            return Ok((if f0 > 0.0 { f64::INFINITY } else { f64::NAN }, f64::NAN));
        }
        // S(h) = f0 + f1 (h - x) = f0 - f1 d
        let closed_c = f0 * i0 - f1 * i1;
        let closed_r = f0 * i1 - f1 * i2;
        let small = 1e-4 * sigma;
        let rem = |h: f64, with_d: bool| -> f64 {
            let d = x - h;
            let q = if d.abs() < small {
                0.5 * f2 * d * d
            } else {
                derivs(h)[0] - f0 + f1 * d
            };
            let v = q / (d * d + u);
            if with_d {
                v * d
            } else {
                v
            }
        };
        let mut splits = vec![lo];
        if x > lo && x < hi {
            splits.push(x);
        }
        splits.push(hi);
        let (mut rc, mut rr) = (0.0, 0.0);
        for w in splits.windows(2) {
            rc += quadrature::integrate(|h| rem(h, false), w[0], w[1], 1e-14, 1e-11)?.0;
            rr += quadrature::integrate(|h| rem(h, true), w[0], w[1], 1e-14, 1e-11)?.0;
        }
        Ok((closed_c + rc, closed_r + rr))
    }
}

impl Measure for Limit {
    fn lorentz(&self, x: f64, u: f64) -> Result<Lorentz> {
        match self {
            Limit::Atomic(m) => m.lorentz(x, u),
            Limit::Uniform { lo, hi } => {
                let p = 1.0 / (hi - lo);
                let (da, db) = (x - lo, x - hi);
                let c = p * lorentz_i0(da, db, u);
                let r = p * lorentz_i1(da, db, u);
                let dc = if u > 0.0 && c.is_finite() {
                    // ∂c/∂u = -∫ p/(d^2+u)^2
                    let a_part = p * (da / (da * da + u) - db / (db * db + u));
                    Some(-(a_part + c) / (2.0 * u))
                } else {
                    None
                };
                Ok(Lorentz { c, r, dc_du: dc })
            }
            Limit::Gaussian { mu, sigma } => {
                let (c, r) = Limit::gaussian_moments(*mu, *sigma, 0, x, u)?;
                Ok(Lorentz { c, r, dc_du: None })
            }
        }
    }

    fn derivative(&self, x: f64, y: f64) -> Result<(f64, f64)> {
        let u = y * y;
        match self {
            Limit::Atomic(m) => m.derivative(x, y),
            Limit::Uniform { lo, hi } => {
                let p = 1.0 / (hi - lo);
                let (da, db) = (x - lo, x - hi);
                let c = p * lorentz_i0(da, db, u);
                // a = 2u ∫p/(d^2+u)^2, b = 2y ∫p d/(d^2+u)^2
                let a = p * (da / (da * da + u) - db / (db * db + u)) + c;
                let b = y * p * (1.0 / (db * db + u) - 1.0 / (da * da + u));
                Ok((a, b))
            }
            Limit::Gaussian { mu, sigma } => {
                // g0'(z) = ∫ p'(h)/(h - z) dh = -R1 + i y C1
                let (c1, r1) = Limit::gaussian_moments(*mu, *sigma, 1, x, u)?;
                Ok((1.0 + r1, -y * c1))
            }
        }
    }

    fn x_bands(&self) -> Result<Vec<(f64, f64)>> {
        match self {
            Limit::Atomic(m) => m.x_bands(),
            Limit::Uniform { lo, hi } => {
                // c(x, 0) = 1/((x - lo)(x - hi)) outside the support
                let mid = 0.5 * (lo + hi);
                let half = 0.5 * (hi - lo);
                let e = (half * half + 1.0).sqrt();
                Ok(vec![(mid - e, mid + e)])
            }
            Limit::Gaussian { .. } => Ok(vec![(f64::NEG_INFINITY, f64::INFINITY)]),
        }
    }
}

/// Solution `z = x + iy` of `z - g0(z) = lambda` with its derivative data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SaddleSolution {
    pub lambda: f64,
    pub z: Complex64,
    pub in_bulk: bool,
    /// `Re(1 - g0'(z))`.
    pub a: f64,
    /// `Im(1 - g0'(z))`.
    pub b: f64,
    /// `dx/dlambda = a / (a^2 + b^2)`.
    pub x_prime: f64,
}

/// `y^2` solving `c(x, y^2) = 1`, or 0 when `c(x, 0) <= 1`.
pub fn imaginary_part_squared<M: Measure + ?Sized>(m: &M, x: f64) -> Result<f64> {
    let l0 = m.lorentz(x, 0.0)?;
    if l0.c <= 1.0 {
        return Ok(0.0);
    }
    // c(x, u) <= 1/u, so the root lies in (0, 1]
    let (mut lo, mut hi) = (0.0, 1.0);
    let (mut u, mut cur) = if l0.c.is_finite() {
        (0.0, l0)
    } else {
        (1.0 / 16.0, m.lorentz(x, 1.0 / 16.0)?)
    };
    for _ in 0..MAX_ITER {
        if cur.c > 1.0 {
            lo = u;
        } else {
            hi = u;
        }
        if cur.c == 1.0 || hi - lo <= 4.0 * f64::EPSILON * hi {
            return Ok(u);
        }
        // Newton from the left is monotone for a convex decreasing function
        let newton = match cur.dc_du {
            Some(d) if cur.c.is_finite() && d < 0.0 => u - (cur.c - 1.0) / d,
            _ => f64::NAN,
        };
        let next = if newton > lo && newton < hi {
            newton
        } else if lo == 0.0 {
            hi / 16.0
        } else {
            0.5 * (lo + hi)
        };
        if next == u {
            return Ok(u);
        }
        u = next;
        cur = m.lorentz(x, u)?;
    }
    Ok(0.5 * (lo + hi))
}

/// `lambda(x)` and the saddle data at real part `x`.
fn saddle_at_x<M: Measure + ?Sized>(m: &M, x: f64) -> Result<(f64, f64, Lorentz)> {
    let u = imaginary_part_squared(m, x)?;
    let l = m.lorentz(x, u)?;
    Ok((x + l.r, u, l))
}

/// The saddle point at real part `x` (inverse direction of [`solve_saddle`]).
pub fn saddle_from_x<M: Measure + ?Sized>(m: &M, x: f64) -> Result<SaddleSolution> {
    let (lambda, u, _) = saddle_at_x(m, x)?;
    finish(m, lambda, x, u)
}

fn finish<M: Measure + ?Sized>(m: &M, lambda: f64, x: f64, u: f64) -> Result<SaddleSolution> {
    let y = u.sqrt();
    let (a, b) = if u > 0.0 {
        m.derivative(x, y)?
    } else {
        (1.0 - m.lorentz(x, 0.0)?.c, 0.0)
    };
    let den = a * a + b * b;
    Ok(SaddleSolution {
        lambda,
        z: Complex64::new(x, y),
        in_bulk: u > 0.0,
        a,
        b,
        x_prime: if den > 0.0 { a / den } else { f64::INFINITY },
    })
}

/// Solves `z - g0(z) = lambda` in the closed upper half-plane.
///
/// Off the bands the real root continuing `lambda - 1/lambda` from infinity is
/// returned with `in_bulk = false`.
pub fn solve_saddle<M: Measure + ?Sized>(m: &M, lambda: f64, tol: f64) -> Result<SaddleSolution> {
    if !(tol > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "need finite lambda and tol > 0, got {lambda}, {tol}"
        )));
    }
    let (mut lo, mut hi) = (lambda - 1.0, lambda + 1.0);
    let mut x = lambda;
    let mut best = (f64::INFINITY, x);
    let mut state = saddle_at_x(m, x)?;
    for _ in 0..MAX_ITER {
        let (lx, u, l) = state;
        let f = lx - lambda;
        if f.abs() < best.0 {
            best = (f.abs(), x);
        }
        if f == 0.0 {
            break;
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let slope = if u > 0.0 {
            let (a, b) = m.derivative(x, u.sqrt())?;
            (a * a + b * b) / a
        } else {
            1.0 - l.c
        };
        let newton = x - f / slope;
        let next = if newton > lo && newton < hi && newton.is_finite() {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if next == x
            || next <= lo && next >= hi
            || hi - lo <= 2.0 * f64::EPSILON * hi.abs().max(lo.abs())
        {
            break;
        }
        x = next;
        state = saddle_at_x(m, x)?;
    }
    // keep the best iterate seen
    if best.1 != x {
        x = best.1;
        state = saddle_at_x(m, x)?;
    }
    let (lx, u, l) = state;
    let residual = (lx - lambda).abs() + u.sqrt() * (1.0 - l.c).abs();
    if !(residual <= tol * (1.0 + lambda.abs())) {
        return Err(Error::Solver {
            what: "saddle equation",
            lambda,
            iterations: MAX_ITER,
            residual,
        });
    }
    finish(m, lambda, x, u)
}

/// `|z - g0(z) - lambda|` for an atomic measure.
pub fn saddle_residual(measure: &AtomicMeasure, s: &SaddleSolution) -> Result<f64> {
    Ok((s.z - g0_eval(measure, s.z)? - s.lambda).norm())
}

/// Bands in `lambda`: the images of the `x` bands.
pub fn lambda_bands<M: Measure + ?Sized>(m: &M) -> Result<Vec<(f64, f64)>> {
    m.x_bands()?
        .into_iter()
        .map(|(a, b)| {
            let la = if a.is_finite() {
                a + m.lorentz(a, 0.0)?.r
            } else {
                a
            };
            let lb = if b.is_finite() {
                b + m.lorentz(b, 0.0)?.r
            } else {
                b
            };
            Ok((la, lb))
        })
        .collect()
}

/// Saddle points along a grid together with the bands they reveal.
#[derive(Debug, Clone, Serialize)]
pub struct ContourTrace {
    /// Grid points with `y > 0`, ordered by lambda.
    pub points: Vec<SaddleSolution>,
    /// Every computed grid point, including real ones.
    pub all: Vec<SaddleSolution>,
    /// Bands meeting the grid range.
    pub bands: Vec<(f64, f64)>,
    /// Polyline length of the closed contour (upper part doubled).
    pub length: f64,
}

impl ContourTrace {
    /// CSV `lambda,x,y,a,b,x_prime,in_bulk` over every grid point.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda,x,y,a,b,x_prime,in_bulk\n");
        for s in &self.all {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                fmt_f64(s.lambda),
                fmt_f64(s.z.re),
                fmt_f64(s.z.im),
                fmt_f64(s.a),
                fmt_f64(s.b),
                fmt_f64(s.x_prime),
                s.in_bulk
            ));
        }
        out
    }

    /// True when `x` increases strictly along the points of every band.
    pub fn x_strictly_increasing(&self) -> bool {
        self.all.windows(2).all(|w| w[1].z.re > w[0].z.re)
    }
}

/// Saddle solutions over a sorted grid. Band edges are exact (found in `x`),
/// so the result does not depend on the grid resolution.
pub fn contour_trace<M: Measure + ?Sized>(m: &M, grid: &[f64], tol: f64) -> Result<ContourTrace> {
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument("grid must be sorted".into()));
    }
    let all = grid
        .iter()
        .map(|&l| solve_saddle(m, l, tol))
        .collect::<Result<Vec<_>>>()?;
    let (gmin, gmax) = match (grid.first(), grid.last()) {
        (Some(a), Some(b)) => (*a, *b),
        _ => return Err(Error::InvalidArgument("empty grid".into())),
    };
    let x_bands = m.x_bands()?;
    let l_bands = lambda_bands(m)?;
    let mut bands = Vec::new();
    let mut length = 0.0;
    for (&(xa, xb), &(la, lb)) in x_bands.iter().zip(&l_bands) {
        if lb < gmin || la > gmax {
            continue;
        }
        bands.push((la, lb));
        let mut path: Vec<Complex64> = Vec::new();
        if la >= gmin && xa.is_finite() {
            path.push(Complex64::new(xa, 0.0));
        }
        path.extend(
            all.iter()
                .filter(|s| s.in_bulk && s.lambda > la && s.lambda < lb)
                .map(|s| s.z),
        );
        if lb <= gmax && xb.is_finite() {
            path.push(Complex64::new(xb, 0.0));
        }
        length += 2.0 * path.windows(2).map(|w| (w[1] - w[0]).norm()).sum::<f64>();
    }
    let points = all.iter().copied().filter(|s| s.in_bulk).collect();
    Ok(ContourTrace {
        points,
        all,
        bands,
        length,
    })
}

/// A closed contour through the saddle points: one loop `x + i y(x)` (with
/// its conjugate) over each band in `x`. Every atom lies inside a loop.
///
/// With `lift > 0` the quadrature nodes follow `y² = u(x) + lift·u_max·b(x)`,
/// `b` the normalized parabola vanishing at the band edges. This keeps loops
/// analytic where `y(x)` nearly touches the real axis inside a band.
#[derive(Debug, Clone)]
pub struct SaddleContour {
    pub loops: Vec<(f64, f64)>,
    pub lift: f64,
}

/// A quadrature node on a closed contour: `∮ f dv ≈ Σ weight · f(point)`.
#[derive(Debug, Clone, Copy)]
pub struct ContourNode {
    pub point: Complex64,
    pub weight: Complex64,
}

impl SaddleContour {
    pub fn new(m: &AtomicMeasure) -> Result<Self> {
        Ok(SaddleContour {
            loops: m.x_bands()?,
            lift: 0.0,
        })
    }

    pub fn lifted(m: &AtomicMeasure, lift: f64) -> Result<Self> {
        Ok(SaddleContour {
            loops: m.x_bands()?,
            lift,
        })
    }

    /// `(u, du/dx)` of the saddle curve at `x`.
    fn curve(m: &AtomicMeasure, x: f64) -> Result<(f64, f64)> {
        let u = imaginary_part_squared(m, x)?;
        let (mut c2, mut r2) = (0.0, 0.0);
        for (h, w) in m.locations().iter().zip(m.weights()) {
            let d = x - h;
            let den = d * d + u;
            c2 += w / (den * den);
            r2 += w * d / (den * den);
        }
        // implicit differentiation of c(x, u) = 1
        Ok((u, if u > 0.0 { -2.0 * r2 / c2 } else { 0.0 }))
    }

    /// Periodic trapezoid nodes, `per_loop(i)` (rounded up to even) on loop
    /// `i`, counterclockwise.
    ///
    /// Each loop is parametrized by `x = mid + half cos θ`, which makes the
    /// square-root behaviour of `y` at the edges analytic in `θ`.
    pub fn nodes(
        &self,
        m: &AtomicMeasure,
        per_loop: impl Fn(usize) -> usize,
    ) -> Result<Vec<ContourNode>> {
        let mut out = Vec::new();
        for (i, &(xa, xb)) in self.loops.iter().enumerate() {
            // even counts keep nodes off the band edges at θ = 0, π
            let count = per_loop(i).max(4).next_multiple_of(2);
            let mid = 0.5 * (xa + xb);
            let half = 0.5 * (xb - xa);
            let boost = if self.lift > 0.0 {
                let probes = 64;
                let mut umax = 0.0f64;
                for k in 0..probes {
                    let x = mid + half * (PI * (k as f64 + 0.5) / probes as f64).cos();
                    umax = umax.max(imaginary_part_squared(m, x)?);
                }
                self.lift * umax
            } else {
                0.0
            };
            let dt = 2.0 * PI / count as f64;
            for k in 0..count {
                let th = (k as f64 + 0.5) * dt;
                let (sn, cs) = th.sin_cos();
                let x = mid + half * cs;
                let (u0, du0) = SaddleContour::curve(m, x)?;
                let r = (x - mid) / half;
                let u = u0 + boost * (1.0 - r * r);
                let du = du0 - boost * 2.0 * r / half;
                let y = u.sqrt();
                let side = if sn >= 0.0 { 1.0 } else { -1.0 };
                let dydx = if y > 0.0 { du / (2.0 * y) } else { 0.0 };
                let dxdt = -half * sn;
                out.push(ContourNode {
                    point: Complex64::new(x, side * y),
                    weight: Complex64::new(dxdt, dxdt * side * dydx) * dt,
                });
            }
        }
        Ok(out)
    }
}

/// Solution of the limiting equation: `g = z - lambda` and `rho = Im z / π`.
pub fn pastur_solve<M: Measure + ?Sized>(
    limit: &M,
    lambda: f64,
    tol: f64,
) -> Result<(Complex64, f64)> {
    let s = solve_saddle(limit, lambda, tol)?;
    Ok((s.z - lambda, s.z.im / PI))
}

/// `∫ rho(lambda) dlambda` over all bands, computed in `x` as
/// `(1/π) ∫ y(x) lambda'(x) dx` with `lambda' = (a^2 + b^2)/a`.
pub fn density_mass<M: Measure + ?Sized>(m: &M) -> Result<f64> {
    let mut total = 0.0;
    for (xa, xb) in m.x_bands()? {
        let (xa, xb) = (xa.max(-1e3), xb.min(1e3));
        let (xa, xb) = if xa.is_finite() && xb.is_finite() {
            (xa, xb)
        } else {
            continue;
        };
        let mid = 0.5 * (xa + xb);
        let half = 0.5 * (xb - xa);
        let integrand = |th: f64| -> f64 {
            let x = mid + half * th.cos();
            let Ok(u) = imaginary_part_squared(m, x) else {
                return f64::NAN;
            };
            if u <= 0.0 {
                return 0.0;
            }
            let y = u.sqrt();
            let Ok((a, b)) = m.derivative(x, y) else {
                return f64::NAN;
            };
            y * (a * a + b * b) / a * half * th.sin() / PI
        };
        total += quadrature::integrate(integrand, 0.0, PI, 1e-13, 1e-11)?.0;
    }
    Ok(total)
}

/// A bulk point with its band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BulkWindow {
    pub lambda0: f64,
    pub rho: f64,
    pub interval: (f64, f64),
}

pub fn bulk_window<M: Measure + ?Sized>(m: &M, lambda0: f64) -> Result<BulkWindow> {
    let s = solve_saddle(m, lambda0, DEFAULT_TOL)?;
    if !s.in_bulk {
        return Err(Error::OutOfBulk(lambda0));
    }
    let band = lambda_bands(m)?
        .into_iter()
        .find(|&(a, b)| a < lambda0 && lambda0 < b)
        .ok_or(Error::OutOfBulk(lambda0))?;
    Ok(BulkWindow {
        lambda0,
        rho: s.z.im / PI,
        interval: band,
    })
}

/// CSV `lambda,rho`.
pub fn density_csv(rows: &[(f64, f64)]) -> String {
    let mut out = String::from("lambda,rho\n");
    for (l, r) in rows {
        out.push_str(&format!("{},{}\n", fmt_f64(*l), fmt_f64(*r)));
    }
    out
}
