//! The finite-n correlation kernel of the deformed GUE.
//!
//! With atoms `h_1..h_n` the kernel is the double integral
//!
//! ```text
//! K(λ, μ) = n/(4π²) ∫_L dt ∮_C dv  exp{-(n/2)(v² - 2vλ) + (n/2)(t² - 2μt)}
//!                                   · Π(t - h_j) / Π(v - h_j) / (v - t)
//! ```
//!
//! with `L` a vertical line traversed upwards and `C` a counterclockwise
//! contour around the atoms. Values are reported after multiplying by
//! `exp{n(μ² - λ²)/4}`, which makes the pure GUE kernel the symmetric
//! Christoffel–Darboux sum and leaves every correlation determinant unchanged.
//!
//! The quadrature integrates `(H(v,t) - H(t,t))/(v - t)`, where `H` is the
//! integrand without the `1/(v - t)` factor. The subtracted term only removes
//! residues that appear when `L` passes through `C`, so the value is the same
//! for every vertical line, and the integrand has no singularity. That allows
//! both contours to pass through the saddle points, where the integrand has
//! modest size.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::quadrature::gauss_legendre_on;
use crate::stieltjes::{self, AtomicMeasure, ContourNode, SaddleContour};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelMethod {
    ContourQuadrature,
    ResidueSum,
    CdGue,
    SaddleDecomposition,
}

impl KernelMethod {
    pub fn name(self) -> &'static str {
        match self {
            KernelMethod::ContourQuadrature => "contour_quadrature",
            KernelMethod::ResidueSum => "residue_sum",
            KernelMethod::CdGue => "cd_gue",
            KernelMethod::SaddleDecomposition => "saddle_decomposition",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelValue {
    pub value: Complex64,
    pub method: KernelMethod,
    pub error_estimate: f64,
}

/// Closed contour around the atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ContourSpec {
    Circle {
        center: f64,
        radius: f64,
    },
    /// Axis-parallel rectangle `[x0, x1] × [y0, y1]`.
    Rectangle {
        x0: f64,
        x1: f64,
        y0: f64,
        y1: f64,
    },
    /// Loops through the saddle points `z_n(λ)`, one per band.
    #[default]
    Saddle,
}

/// Discretization of the double integral. `None` fields are chosen from `n`
/// and the saddle geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct QuadratureSpec {
    pub line_nodes: Option<usize>,
    pub contour_nodes: Option<usize>,
    pub line_halfwidth: Option<f64>,
    pub line_abscissa: Option<f64>,
    pub contour: ContourSpec,
}

impl QuadratureSpec {
    pub fn circle(center: f64, radius: f64) -> Self {
        QuadratureSpec {
            contour: ContourSpec::Circle { center, radius },
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.line_nodes.is_some_and(|k| k < 8) || self.contour_nodes.is_some_and(|k| k < 8) {
            return Err(Error::InvalidArgument(
                "node counts must be at least 8".into(),
            ));
        }
        if self.line_halfwidth.is_some_and(|w| !(w > 0.0)) {
            return Err(Error::InvalidArgument(
                "line_halfwidth must be positive".into(),
            ));
        }
        match self.contour {
            ContourSpec::Circle { radius, .. } if !(radius > 0.0) => Err(Error::InvalidArgument(
                "circle radius must be positive".into(),
            )),
            ContourSpec::Rectangle { x0, x1, y0, y1 } if !(x0 < x1 && y0 < y1) => {
                Err(Error::InvalidArgument("degenerate rectangle".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Atoms grouped into clusters of equal locations.
#[derive(Debug, Clone)]
pub struct Atoms {
    n: usize,
    locs: Vec<f64>,
    mult: Vec<usize>,
    measure: AtomicMeasure,
}

impl Atoms {
    pub fn new(h: &[f64]) -> Result<Self> {
        if h.is_empty() {
            return Err(Error::InvalidDimension("no atoms".into()));
        }
        if h.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite atom".into()));
        }
        let mut sorted = h.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut locs = Vec::new();
        let mut mult: Vec<usize> = Vec::new();
        for x in sorted {
            if locs.last() == Some(&x) {
                *mult.last_mut().expect("paired") += 1;
            } else {
                locs.push(x);
                mult.push(1);
            }
        }
        let measure = AtomicMeasure::from_points(h)?;
        Ok(Atoms {
            n: h.len(),
            locs,
            mult,
            measure,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn measure(&self) -> &AtomicMeasure {
        &self.measure
    }

    pub fn all_equal(&self) -> bool {
        self.locs.len() == 1
    }

    /// `Σ_j Log(z - h_j)` over all atoms.
    fn log_poly(&self, z: Complex64) -> Complex64 {
        self.locs
            .iter()
            .zip(&self.mult)
            .map(|(h, m)| (z - h).ln() * *m as f64)
            .sum()
    }
}

/// `exp(z) - 1` without cancellation for small `z`.
fn expm1(z: Complex64) -> Complex64 {
    let s = (0.5 * z.im).sin();
    Complex64::new(
        z.re.exp_m1() * z.im.cos() - 2.0 * s * s,
        z.re.exp() * z.im.sin(),
    )
}

/// `ln(1 + w)` without cancellation for small `w`.
fn log1p(w: Complex64) -> Complex64 {
    let u = w + 1.0;
    if u == Complex64::new(1.0, 0.0) {
        w
    } else {
        u.ln() * (w / (u - 1.0))
    }
}

/// Gauge-fixed logarithmic parts of the integrand.
struct Exponents<'a> {
    atoms: &'a Atoms,
    nf: f64,
    lambda: f64,
    mu: f64,
}

impl Exponents<'_> {
    /// `(n/2)(t² - 2μt) + Σ Log(t - h) + nμ²/4`.
    fn a(&self, t: Complex64) -> Complex64 {
        (t * t - t * (2.0 * self.mu)) * (0.5 * self.nf)
            + self.atoms.log_poly(t)
            + 0.25 * self.nf * self.mu * self.mu
    }

    /// `-(n/2)(v² - 2vλ) - Σ Log(v - h) - nλ²/4`.
    fn b(&self, v: Complex64) -> Complex64 {
        -(v * v - v * (2.0 * self.lambda)) * (0.5 * self.nf)
            - self.atoms.log_poly(v)
            - 0.25 * self.nf * self.lambda * self.lambda
    }

    /// `b(v) - b(t)` accurate for `v` near `t`.
    fn b_difference(&self, v: Complex64, t: Complex64) -> Complex64 {
        let d = v - t;
        let poly = d * ((v + t) * (-0.5 * self.nf) + self.nf * self.lambda);
        let logs: Complex64 = self
            .atoms
            .locs
            .iter()
            .zip(&self.atoms.mult)
            .map(|(h, m)| log1p(d / (t - h)) * *m as f64)
            .sum();
        poly - logs
    }

    /// `H(t, t) = exp{n t (λ - μ) + n(μ² - λ²)/4}`.
    fn diagonal(&self, t: Complex64) -> Complex64 {
        (t * (self.nf * (self.lambda - self.mu))
            + 0.25 * self.nf * (self.mu * self.mu - self.lambda * self.lambda))
            .exp()
    }
}

/// A node on the vertical line: `(t, dt weight)`.
type LineNode = (Complex64, Complex64);

fn line_nodes(abscissa: f64, halfwidth: f64, count: usize) -> Vec<LineNode> {
    let step = 2.0 * halfwidth / count as f64;
    (0..count)
        .map(|k| {
            let s = -halfwidth + (k as f64 + 0.5) * step;
            (Complex64::new(abscissa, s), Complex64::new(0.0, step))
        })
        .collect()
}

/// Resolved geometry for one evaluation.
struct Geometry {
    abscissa: f64,
    halfwidth: f64,
    line_count: usize,
    contour: ContourSpec,
    contour_count: usize,
}

const LINE_STEP: f64 = 0.3;
const LOOP_DENSITY: f64 = 12.0;
const DECAY_MARGIN: f64 = 45.0;
const LOOP_LIFT: f64 = 0.5;

/// Half-length of the line beyond which `|e^{n S(t, μ)}|` is below
/// `e^{-45}` of its maximum, and at least the Gaussian bound
/// `sqrt(2 ln(1e16)/n) + span`.
fn line_halfwidth(atoms: &Atoms, abscissa: f64, mu: f64) -> f64 {
    let nf = atoms.n as f64;
    let span = atoms.locs[atoms.locs.len() - 1] - atoms.locs[0];
    let floor = (2.0 * 16.0 * 10f64.ln() / nf).sqrt() + span;
    let f = |s: f64| {
        let t = Complex64::new(abscissa, s);
        ((t * t - t * (2.0 * mu)) * (0.5 * nf) + atoms.log_poly(t)).re
    };
    let step = 0.02;
    let mut s = step;
    let mut best = f(0.0);
    while s < 1e3 {
        let v = f(s);
        if v > best {
            best = v;
        } else if v < best - DECAY_MARGIN {
            break;
        }
        s += step;
    }
    s.max(floor)
}

fn resolve(atoms: &Atoms, mu: f64, quad: &QuadratureSpec) -> Result<Geometry> {
    quad.validate()?;
    let abscissa = match quad.line_abscissa {
        Some(x) => x,
        None => {
            stieltjes::solve_saddle(atoms.measure(), mu, stieltjes::DEFAULT_TOL)?
                .z
                .re
        }
    };
    let halfwidth = quad
        .line_halfwidth
        .unwrap_or_else(|| line_halfwidth(atoms, abscissa, mu));
    let sqrt_n = (atoms.n as f64).sqrt();
    let line_count = quad
        .line_nodes
        .unwrap_or_else(|| ((2.0 * halfwidth * sqrt_n / LINE_STEP).ceil() as usize).max(32));
    let contour_count = match quad.contour_nodes {
        Some(k) => k,
        None => {
            let span = match quad.contour {
                ContourSpec::Circle { radius, .. } => PI * radius,
                ContourSpec::Rectangle { x0, x1, y0, y1 } => (x1 - x0) + (y1 - y0),
                ContourSpec::Saddle => SaddleContour::new(atoms.measure())?
                    .loops
                    .iter()
                    .map(|(a, b)| b - a)
                    .sum(),
            };
            ((LOOP_DENSITY * span * sqrt_n).ceil() as usize).max(64)
        }
    };
    let geometry = Geometry {
        abscissa,
        halfwidth,
        line_count,
        contour: quad.contour.clone(),
        contour_count,
    };
    check_enclosure(atoms, &geometry.contour)?;
    Ok(geometry)
}

fn check_enclosure(atoms: &Atoms, contour: &ContourSpec) -> Result<()> {
    let inside = |h: f64| match *contour {
        ContourSpec::Circle { center, radius } => (h - center).abs() < radius,
        ContourSpec::Rectangle { x0, x1, y0, y1 } => x0 < h && h < x1 && y0 < 0.0 && 0.0 < y1,
        ContourSpec::Saddle => true,
    };
    match atoms.locs.iter().find(|h| !inside(**h)) {
        Some(h) => Err(Error::Geometry(format!(
            "contour does not enclose the atom at {h}"
        ))),
        None => Ok(()),
    }
}

fn contour_nodes(atoms: &Atoms, contour: &ContourSpec, count: usize) -> Result<Vec<ContourNode>> {
    match *contour {
        ContourSpec::Circle { center, radius } => {
            let dt = 2.0 * PI / count as f64;
            Ok((0..count)
                .map(|k| {
                    let e = Complex64::from_polar(radius, k as f64 * dt);
                    ContourNode {
                        point: e + center,
                        weight: Complex64::new(0.0, dt) * e,
                    }
                })
                .collect())
        }
        ContourSpec::Rectangle { x0, x1, y0, y1 } => {
            let per_side = count.div_ceil(4).max(2);
            let corners = [
                Complex64::new(x0, y0),
                Complex64::new(x1, y0),
                Complex64::new(x1, y1),
                Complex64::new(x0, y1),
            ];
            let mut out = Vec::with_capacity(4 * per_side);
            for i in 0..4 {
                let (a, b) = (corners[i], corners[(i + 1) % 4]);
                let (s, w) = gauss_legendre_on(per_side, 0.0, 1.0);
                for (s, w) in s.iter().zip(&w) {
                    out.push(ContourNode {
                        point: a + (b - a) * *s,
                        weight: (b - a) * *w,
                    });
                }
            }
            Ok(out)
        }
        ContourSpec::Saddle => {
            let sc = SaddleContour::lifted(atoms.measure(), LOOP_LIFT)?;
            let total: f64 = sc.loops.iter().map(|(a, b)| b - a).sum();
            let loops = sc.loops.clone();
            sc.nodes(atoms.measure(), |i| {
                let share = (loops[i].1 - loops[i].0) / total;
                ((count as f64 * share).ceil() as usize).max(16)
            })
        }
    }
}

/// `n/(4π²) Σ_t Σ_v w_t w_v (H(v,t) - H(t,t))/(v - t)` with an estimate of
/// the rounding error.
fn double_sum(
    ex: &Exponents,
    line: &[LineNode],
    contour: &[ContourNode],
) -> Result<(Complex64, f64)> {
    let bv: Vec<Complex64> = contour.iter().map(|c| ex.b(c.point)).collect();
    let scale = ex.atoms.n as f64 / (4.0 * PI * PI);
    let near = 0.05;
    let mut total = Complex64::new(0.0, 0.0);
    let mut magnitude = 0.0;
    for &(t, wt) in line {
        let at = ex.a(t);
        let htt = ex.diagonal(t);
        let mut inner = Complex64::new(0.0, 0.0);
        for (node, b) in contour.iter().zip(&bv) {
            let d = node.point - t;
            let term = if d.norm() < near {
                htt * expm1(ex.b_difference(node.point, t)) / d
            } else {
                ((at + b).exp() - htt) / d
            };
            magnitude += (node.weight * term).norm() * wt.norm();
            inner += node.weight * term;
        }
        total += wt * inner;
    }
    if !total.re.is_finite() || !total.im.is_finite() {
        return Err(Error::Evaluation(
            "kernel integrand overflowed in log-space".into(),
        ));
    }
    Ok((total * scale, magnitude * scale * 1e-15))
}

fn contour_value(atoms: &Atoms, lambda: f64, mu: f64, g: &Geometry) -> Result<(Complex64, f64)> {
    let ex = Exponents {
        atoms,
        nf: atoms.n as f64,
        lambda,
        mu,
    };
    let coarse_line = line_nodes(g.abscissa, g.halfwidth, g.line_count);
    let coarse_contour = contour_nodes(atoms, &g.contour, g.contour_count)?;
    let fine_line = line_nodes(g.abscissa, g.halfwidth, 2 * g.line_count);
    let fine_contour = contour_nodes(atoms, &g.contour, 2 * g.contour_count)?;
    let (k1, _) = double_sum(&ex, &coarse_line, &coarse_contour)?;
    let (k2, rounding) = double_sum(&ex, &fine_line, &fine_contour)?;
    Ok((k2, (k2 - k1).norm() + rounding))
}

/// Kernel by direct quadrature of the double contour integral.
pub fn kernel_contour(
    h: &[f64],
    lambda: f64,
    mu: f64,
    quad: &QuadratureSpec,
) -> Result<KernelValue> {
    check_point(lambda, mu)?;
    let atoms = Atoms::new(h)?;
    let g = resolve(&atoms, mu, quad)?;
    let (value, err) = contour_value(&atoms, lambda, mu, &g)?;
    Ok(KernelValue {
        value,
        method: KernelMethod::ContourQuadrature,
        error_estimate: err,
    })
}

fn check_point(lambda: f64, mu: f64) -> Result<()> {
    if lambda.is_finite() && mu.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "kernel arguments must be finite, got ({lambda}, {mu})"
        )))
    }
}

/// Clusters closer than this are treated as a conditioning failure.
pub const MIN_ATOM_GAP: f64 = 1e-8;

/// Kernel with the closed-contour integral done by residues at the atoms.
///
/// Equal atoms form a pole of higher order; its residue is a polynomial in
/// `t` built from the Taylor coefficients of the remaining factor. The
/// resulting `t`-integrand is entire, so the line is placed through the
/// saddle point of `μ`.
pub fn kernel_residue(
    h: &[f64],
    lambda: f64,
    mu: f64,
    quad: &QuadratureSpec,
) -> Result<KernelValue> {
    check_point(lambda, mu)?;
    let atoms = Atoms::new(h)?;
    if let Some(w) = atoms.locs.windows(2).find(|w| w[1] - w[0] < MIN_ATOM_GAP) {
        return Err(Error::Conditioning(format!(
            "atoms {} and {} are closer than {MIN_ATOM_GAP:e}; use the contour method",
            w[0], w[1]
        )));
    }
    let g = resolve(
        &atoms,
        mu,
        &QuadratureSpec {
            contour: ContourSpec::Saddle,
            ..quad.clone()
        },
    )?;
    let nf = atoms.n as f64;
    let clusters = residue_clusters(&atoms, lambda);
    let eval = |count: usize| -> (Complex64, f64) {
        let mut total = Complex64::new(0.0, 0.0);
        let mut magnitude = 0.0;
        for (t, wt) in line_nodes(g.abscissa, g.halfwidth, count) {
            let base =
                (t * t - t * (2.0 * mu)) * (0.5 * nf) + 0.25 * nf * (mu * mu - lambda * lambda);
            for (j, cl) in clusters.iter().enumerate() {
                let tau = t - atoms.locs[j];
                let poly = cl
                    .coeffs
                    .iter()
                    .rev()
                    .fold(Complex64::new(0.0, 0.0), |acc, c| acc * tau + c);
                if poly == Complex64::new(0.0, 0.0) {
                    continue;
                }
                let others: Complex64 = atoms
                    .locs
                    .iter()
                    .zip(&atoms.mult)
                    .enumerate()
                    .filter(|(k, _)| *k != j)
                    .map(|(_, (hk, m))| (t - hk).ln() * *m as f64)
                    .sum();
                let term = (base + others + cl.log_scale + poly.ln()).exp() * cl.sign;
                magnitude += term.norm() * wt.norm();
                total += term * wt;
            }
        }
        // -2πi per residue, then the n/(4π²) prefactor
        let factor = Complex64::new(0.0, -2.0 * PI) * (nf / (4.0 * PI * PI));
        (total * factor, magnitude * factor.norm() * 1e-15)
    };
    let (k1, _) = eval(g.line_count);
    let (k2, rounding) = eval(2 * g.line_count);
    if !k2.re.is_finite() || !k2.im.is_finite() {
        return Err(Error::Evaluation("residue sum overflowed".into()));
    }
    Ok(KernelValue {
        value: k2,
        method: KernelMethod::ResidueSum,
        error_estimate: (k2 - k1).norm() + rounding,
    })
}

/// Residue data of one cluster: `exp(log_scale) · sign · Σ coeffs[k] τ^k`.
struct Cluster {
    log_scale: f64,
    sign: f64,
    coeffs: Vec<f64>,
}

fn residue_clusters(atoms: &Atoms, lambda: f64) -> Vec<Cluster> {
    let nf = atoms.n as f64;
    (0..atoms.locs.len())
        .map(|j| {
            let hj = atoms.locs[j];
            let m = atoms.mult[j];
            let mut q0 = -0.5 * nf * hj * hj + nf * lambda * hj;
            let mut sign = 1.0;
            // q[i] = i-th Taylor coefficient of log of the regular factor at hj
            let mut q = vec![0.0; m];
            if m > 1 {
                q[1] = -nf * hj + nf * lambda;
            }
            if m > 2 {
                q[2] = -0.5 * nf;
            }
            for (k, (&hk, &mk)) in atoms.locs.iter().zip(&atoms.mult).enumerate() {
                if k == j {
                    continue;
                }
                let d = hj - hk;
                let mk = mk as f64;
                q0 -= mk * d.abs().ln();
                if d < 0.0 && (mk as usize) % 2 == 1 {
                    sign = -sign;
                }
                let mut pw = 1.0;
                for (i, qi) in q.iter_mut().enumerate().skip(1) {
                    pw /= d;
                    let s = if i % 2 == 1 { 1.0 } else { -1.0 };
                    *qi -= mk * s * pw / i as f64;
                }
            }
            let mut e = vec![0.0; m];
            e[0] = 1.0;
            for k in 1..m {
                let s: f64 = (1..=k).map(|i| i as f64 * q[i] * e[k - i]).sum();
                e[k] = s / k as f64;
            }
            Cluster {
                log_scale: q0,
                sign,
                coeffs: e,
            }
        })
        .collect()
}

/// `Σ_{k<n} φ_k(λ) φ_k(μ)` with `φ_k(x) = n^{1/4} ψ_k(√n x)` and `ψ_k` the
/// orthonormal Hermite functions for the weight `e^{-u²/2}`.
pub fn kernel_cd_gue(n: usize, lambda: f64, mu: f64) -> Result<KernelValue> {
    if n == 0 {
        return Err(Error::InvalidDimension("n must be at least 1".into()));
    }
    check_point(lambda, mu)?;
    let sn = (n as f64).sqrt();
    let a = hermite_functions(n, sn * lambda);
    let b = hermite_functions(n, sn * mu);
    let sum: f64 = a
        .iter()
        .zip(&b)
        .map(|((ma, la), (mb, lb))| ma * mb * (la + lb).exp())
        .sum();
    let value = sum * sn;
    Ok(KernelValue {
        value: Complex64::new(value, 0.0),
        method: KernelMethod::CdGue,
        error_estimate: 1e-14 * (n as f64) * value.abs().max(f64::MIN_POSITIVE),
    })
}

/// `ψ_0..ψ_{n-1}` at `u`, each as `(mantissa, log scale)`.
fn hermite_functions(n: usize, u: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    let mut log_scale = -0.25 * u * u - 0.25 * (2.0 * PI).ln();
    let (mut prev, mut cur) = (0.0, 1.0);
    for k in 0..n {
        out.push((cur, log_scale));
        let next = (u * cur - (k as f64).sqrt() * prev) / ((k + 1) as f64).sqrt();
        prev = cur;
        cur = next;
        let big = cur.abs().max(prev.abs());
        if big > 1e100 {
            prev /= big;
            cur /= big;
            log_scale += big.ln();
        }
    }
    out
}

/// `n · (explicit + correction)` at `λ = λ0 + λ'/n`, `μ = λ0 + μ'/n`.
///
/// The explicit term `e^{xα} sin(yα)/(πα)`, `α = λ' - μ'`, `x + iy = z_n(λ0)`,
/// is the contribution of the segment of the line `Re t = x` inside the
/// saddle contour; the correction is the remaining double integral, evaluated
/// on the same contours.
pub fn kernel_saddle(
    h: &[f64],
    lambda0: f64,
    lambda_prime: f64,
    mu_prime: f64,
    quad: &QuadratureSpec,
) -> Result<(KernelValue, SaddleParts)> {
    let atoms = Atoms::new(h)?;
    let window = stieltjes::bulk_window(atoms.measure(), lambda0)?;
    let s = stieltjes::solve_saddle(atoms.measure(), lambda0, stieltjes::DEFAULT_TOL)?;
    let nf = atoms.n as f64;
    let (lambda, mu) = (lambda0 + lambda_prime / nf, lambda0 + mu_prime / nf);
    check_point(lambda, mu)?;
    let g = resolve(
        &atoms,
        mu,
        &QuadratureSpec {
            line_abscissa: Some(s.z.re),
            contour: ContourSpec::Saddle,
            ..quad.clone()
        },
    )?;
    let (total, err) = contour_value(&atoms, lambda, mu, &g)?;
    let alpha = lambda_prime - mu_prime;
    let (x, y) = (s.z.re, s.z.im);
    let raw_explicit = if alpha == 0.0 {
        y / PI
    } else {
        (x * alpha).exp() * (y * alpha).sin() / (PI * alpha)
    };
    // the explicit term in the reported gauge
    let gauge = (0.25 * nf * (mu * mu - lambda * lambda)).exp();
    let explicit = raw_explicit * gauge;
    let correction = total / nf - explicit;
    let _ = window;
    Ok((
        KernelValue {
            value: (Complex64::new(explicit, 0.0) + correction) * nf,
            method: KernelMethod::SaddleDecomposition,
            error_estimate: err,
        },
        SaddleParts {
            explicit,
            correction,
            x,
            y,
        },
    ))
}

/// Terms of the saddle decomposition, divided by `n`, in the reported gauge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SaddleParts {
    pub explicit: f64,
    pub correction: Complex64,
    pub x: f64,
    pub y: f64,
}

/// Kernel evaluation strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// CD oracle for equal atoms, residues for a few clusters, else contour.
    #[default]
    Auto,
    Contour,
    Residue,
    Cd,
}

/// Kernel with the chosen method; equal atoms `h` use the shifted CD sum
/// `e^{nh(λ-μ)/2} K_CD(λ - h, μ - h)`, which agrees with the contour value.
pub fn kernel(
    h: &[f64],
    lambda: f64,
    mu: f64,
    method: Method,
    quad: &QuadratureSpec,
) -> Result<KernelValue> {
    let atoms = Atoms::new(h)?;
    let method = match method {
        Method::Auto if atoms.all_equal() => Method::Cd,
        Method::Auto
            if atoms.locs.len() <= 8 && atoms.locs.windows(2).all(|w| w[1] - w[0] > 1e-2) =>
        {
            Method::Residue
        }
        Method::Auto => Method::Contour,
        m => m,
    };
    match method {
        Method::Cd => {
            if !atoms.all_equal() {
                return Err(Error::InvalidArgument(
                    "the Christoffel–Darboux kernel needs equal atoms".into(),
                ));
            }
            let s = atoms.locs[0];
            let mut v = kernel_cd_gue(atoms.n, lambda - s, mu - s)?;
            let phase = (0.5 * atoms.n as f64 * s * (lambda - mu)).exp();
            v.value *= phase;
            v.error_estimate *= phase;
            Ok(v)
        }
        Method::Residue => kernel_residue(h, lambda, mu, quad),
        _ => kernel_contour(h, lambda, mu, quad),
    }
}

/// `ρ_n(λ) = Re K_n(λ, λ) / n`.
pub fn density_n(h: &[f64], lambda: f64, method: Method, quad: &QuadratureSpec) -> Result<f64> {
    let v = kernel(h, lambda, lambda, method, quad)?;
    if v.value.re < -v.error_estimate - 1e-12 || v.value.im.abs() > v.error_estimate + 1e-10 {
        return Err(Error::Numerical(format!(
            "diagonal kernel {} at {lambda} is not a density (error {:e})",
            v.value, v.error_estimate
        )));
    }
    Ok(v.value.re / h.len() as f64)
}

/// `|K1 - K2| / sqrt(K(λ,λ) K(μ,μ))`: error relative to the kernel's scale
/// at the two points, meaningful at zeros of the off-diagonal kernel.
pub fn scaled_difference(k1: Complex64, k2: Complex64, diag_lambda: f64, diag_mu: f64) -> f64 {
    (k1 - k2).norm() / (diag_lambda.abs() * diag_mu.abs()).sqrt()
}

/// Determinant of a complex matrix by LU with partial pivoting; returns the
/// real part and fails if the imaginary part exceeds `1e-8` of the Hadamard
/// bound.
pub fn correlation_det(matrix: &[Vec<Complex64>]) -> Result<f64> {
    let m = matrix.len();
    if matrix.iter().any(|r| r.len() != m) {
        return Err(Error::InvalidDimension(
            "kernel matrix must be square".into(),
        ));
    }
    let scale: f64 = matrix
        .iter()
        .map(|r| r.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
        .product();
    let det = complex_det(matrix.to_vec());
    if det.im.abs() > 1e-8 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::Numerical(format!(
            "correlation determinant {det} is not real"
        )));
    }
    Ok(det.re)
}

pub(crate) fn complex_det(mut a: Vec<Vec<Complex64>>) -> Complex64 {
    let m = a.len();
    let mut det = Complex64::new(1.0, 0.0);
    for k in 0..m {
        let p = (k..m)
            .max_by(|&i, &j| a[i][k].norm().total_cmp(&a[j][k].norm()))
            .expect("non-empty");
        if a[p][k].norm() == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        if p != k {
            a.swap(p, k);
            det = -det;
        }
        let piv = a[k][k];
        det *= piv;
        for i in k + 1..m {
            let f = a[i][k] / piv;
            if f == Complex64::new(0.0, 0.0) {
                continue;
            }
            let (top, bottom) = a.split_at_mut(i);
            for (x, &v) in bottom[0][k..].iter_mut().zip(&top[k][k..]) {
                *x -= f * v;
            }
        }
    }
    det
}

/// One row of a kernel grid dump.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct KernelSample {
    pub lambda: f64,
    pub mu: f64,
    pub value: KernelValue,
}

/// Kernel on the product grid `lambdas × mus`, row-major, in parallel.
pub fn kernel_grid(
    h: &[f64],
    lambdas: &[f64],
    mus: &[f64],
    method: Method,
    quad: &QuadratureSpec,
) -> Result<Vec<KernelSample>> {
    let pairs: Vec<(f64, f64)> = lambdas
        .iter()
        .flat_map(|&l| mus.iter().map(move |&m| (l, m)))
        .collect();
    pairs
        .par_iter()
        .map(|&(lambda, mu)| {
            Ok(KernelSample {
                lambda,
                mu,
                value: kernel(h, lambda, mu, method, quad)?,
            })
        })
        .collect()
}

/// CSV `lambda,mu,re,im,method,err`.
pub fn kernel_csv(rows: &[KernelSample]) -> String {
    let mut out = String::from("lambda,mu,re,im,method,err\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            fmt_f64(r.lambda),
            fmt_f64(r.mu),
            fmt_f64(r.value.value.re),
            fmt_f64(r.value.value.im),
            r.value.method.name(),
            fmt_f64(r.value.error_estimate)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

    fn rel(a: Complex64, b: Complex64, dl: f64, dm: f64) -> f64 {
        scaled_difference(a, b, dl, dm)
    }

    /// The unsubtracted integrand on a circle with the line to its left.
    fn literal_double_integral(h: f64, lambda: f64, mu: f64) -> Complex64 {
        let (c, r, xl) = (h, 0.5, h - 1.0);
        let nv = 64;
        let line = line_nodes(xl, 12.0, 2000);
        let mut total = Complex64::new(0.0, 0.0);
        for (t, wt) in line {
            let mut inner = Complex64::new(0.0, 0.0);
            for k in 0..nv {
                let e = Complex64::from_polar(r, 2.0 * PI * k as f64 / nv as f64);
                let v = e + c;
                let dv = Complex64::new(0.0, 2.0 * PI / nv as f64) * e;
                let g = (-(v * v - v * (2.0 * lambda)) * 0.5 + (t * t - t * (2.0 * mu)) * 0.5)
                    .exp()
                    * (t - h)
                    / (v - h)
                    / (v - t);
                inner += g * dv;
            }
            total += inner * wt;
        }
        total / (4.0 * PI * PI) * (0.25 * (mu * mu - lambda * lambda)).exp()
    }

    #[test]
    fn literal_formula_fixes_the_constant_for_one_atom() {
        for (h, l, m) in [(0.0, 0.0, 0.0), (0.0, 0.3, -0.4), (2.0, 2.5, 1.5)] {
            let k = literal_double_integral(h, l, m);
            let expected = kernel(&[h], l, m, Method::Cd, &QuadratureSpec::default())
                .unwrap()
                .value;
            assert!((k - expected).norm() < 1e-10, "{k} vs {expected}");
        }
    }

    #[test]
    fn one_by_one_anchor() {
        let v = kernel_contour(
            &[0.0],
            0.0,
            0.0,
            &QuadratureSpec {
                line_abscissa: Some(-1.0),
                ..QuadratureSpec::circle(0.0, 0.5)
            },
        )
        .unwrap();
        assert!((v.value.re - INV_SQRT_2PI).abs() < 1e-12 && v.value.im.abs() < 1e-12);
        for h in [0.0, 5.0, -3.0] {
            for method in [Method::Contour, Method::Residue, Method::Cd] {
                let d = density_n(&[h], h, method, &QuadratureSpec::default()).unwrap();
                assert!((d - INV_SQRT_2PI).abs() < 1e-12, "h={h} {method:?}: {d}");
            }
        }
    }

    #[test]
    fn cd_values() {
        let v = kernel_cd_gue(1, 0.0, 1.0).unwrap().value.re;
        assert!((v - (-0.25f64).exp() * INV_SQRT_2PI).abs() < 1e-15);
        let k = kernel_cd_gue(200, 0.0, 0.0).unwrap().value.re / 200.0;
        assert!((k - 1.0 / PI).abs() < 0.02);
        // far outside the spectrum the scaled recurrence stays finite
        assert!(kernel_cd_gue(400, 10.0, 10.0).unwrap().value.re.abs() < 1e-300);
    }

    #[test]
    fn hermite_functions_are_orthonormal() {
        let (x, w) = gauss_legendre_on(200, -20.0, 20.0);
        let vals: Vec<Vec<(f64, f64)>> = x.iter().map(|&u| hermite_functions(6, u)).collect();
        for i in 0..6 {
            for j in 0..6 {
                let ip: f64 = vals
                    .iter()
                    .zip(&w)
                    .map(|(v, w)| w * v[i].0 * v[j].0 * (v[i].1 + v[j].1).exp())
                    .sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((ip - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn contour_matches_christoffel_darboux() {
        for n in [4, 8, 16] {
            let h = vec![0.0; n];
            for &(l, m) in &[
                (0.0, 0.0),
                (-1.0, 1.0),
                (0.5, -0.25),
                (1.0, 1.0),
                (-0.75, -0.5),
            ] {
                let q = kernel_contour(&h, l, m, &QuadratureSpec::default()).unwrap();
                let cd = kernel_cd_gue(n, l, m).unwrap().value;
                let dl = kernel_cd_gue(n, l, l).unwrap().value.re;
                let dm = kernel_cd_gue(n, m, m).unwrap().value.re;
                let e = rel(q.value, cd, dl, dm);
                assert!(e < 1e-8, "n={n} ({l},{m}): {} vs {cd}, rel {e:e}", q.value);
                assert!((q.value - cd).norm() <= q.error_estimate + 1e-9 * (dl * dm).sqrt());
            }
        }
    }

    #[test]
    fn circle_and_rectangle_contours_for_small_n() {
        let h = [-0.3, 0.1, 0.1, 0.6];
        let reference = kernel_contour(&h, 0.2, -0.1, &QuadratureSpec::default())
            .unwrap()
            .value;
        let circle = kernel_contour(
            &h,
            0.2,
            -0.1,
            &QuadratureSpec {
                contour_nodes: Some(256),
                ..QuadratureSpec::circle(0.15, 1.45)
            },
        )
        .unwrap();
        assert!(
            (circle.value - reference).norm() < 1e-8,
            "{} vs {reference}",
            circle.value
        );
        let rect = kernel_contour(
            &h,
            0.2,
            -0.1,
            &QuadratureSpec {
                contour_nodes: Some(256),
                contour: ContourSpec::Rectangle {
                    x0: -1.3,
                    x1: 1.6,
                    y0: -1.0,
                    y1: 1.0,
                },
                ..Default::default()
            },
        )
        .unwrap();
        assert!(
            (rect.value - reference).norm() < 1e-8,
            "{} vs {reference}",
            rect.value
        );
    }

    #[test]
    fn geometry_errors() {
        let bad = kernel_contour(&[0.0, 3.0], 0.0, 0.0, &QuadratureSpec::circle(0.0, 1.0));
        assert!(matches!(bad, Err(Error::Geometry(_))));
        let few = kernel_contour(
            &[0.0],
            0.0,
            0.0,
            &QuadratureSpec {
                line_nodes: Some(4),
                ..Default::default()
            },
        );
        assert!(matches!(few, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn residue_matches_contour_with_repeated_atoms() {
        for n in [2, 8, 16] {
            let h: Vec<f64> = (0..n)
                .map(|i| if i % 2 == 0 { -1.0 } else { 1.0 })
                .collect();
            for &(l, m) in &[(0.0, 0.0), (-1.0, 0.5), (1.0, -1.0), (0.5, 0.5)] {
                let a = kernel_residue(&h, l, m, &QuadratureSpec::default()).unwrap();
                let b = kernel_contour(&h, l, m, &QuadratureSpec::default()).unwrap();
                let dl = density_n(&h, l, Method::Contour, &Default::default()).unwrap() * n as f64;
                let dm = density_n(&h, m, Method::Contour, &Default::default()).unwrap() * n as f64;
                let e = rel(a.value, b.value, dl, dm);
                assert!(
                    e < 1e-8,
                    "n={n} ({l},{m}): {} vs {} rel {e:e} errs {:e} {:e}",
                    a.value,
                    b.value,
                    a.error_estimate,
                    b.error_estimate
                );
            }
        }
    }

    #[test]
    fn residue_rejects_near_coincident_atoms() {
        let r = kernel_residue(&[0.0, 1e-10], 0.0, 0.0, &QuadratureSpec::default());
        assert!(matches!(r, Err(Error::Conditioning(_))));
    }

    #[test]
    fn perturbed_atoms_stay_close_to_gue() {
        let n = 8;
        let h: Vec<f64> = (0..n).map(|i| 1e-6 * (i as f64 - 3.5)).collect();
        let r = kernel_residue(&h, 0.3, 0.3, &QuadratureSpec::default());
        // atoms 1e-6 apart are distinct but the residue sum cancels heavily
        match r {
            Ok(v) => {
                let cd = kernel_cd_gue(n, 0.3, 0.3).unwrap().value.re;
                assert!((v.value.re - cd).abs() < 1e-4 * cd + v.error_estimate);
            }
            Err(e) => assert!(e.is_numerical()),
        }
        let c = kernel_contour(&h, 0.3, 0.3, &QuadratureSpec::default()).unwrap();
        let cd = kernel_cd_gue(n, 0.3, 0.3).unwrap().value.re;
        assert!((c.value.re - cd).abs() < 1e-5 * cd + 1e-6);
    }

    #[test]
    fn diagonal_is_a_density() {
        let h = [-1.2, -0.4, 0.0, 0.3, 0.9, 1.1];
        for k in 0..12 {
            let l = -3.0 + 0.5 * k as f64;
            let v = kernel_contour(&h, l, l, &QuadratureSpec::default()).unwrap();
            assert!(v.value.im.abs() <= v.error_estimate + 1e-12);
            assert!(v.value.re >= -v.error_estimate);
        }
    }

    #[test]
    fn two_point_positivity() {
        let h = [-1.0, -1.0, 1.0, 1.0, 0.2, 0.5];
        let pts = [-1.3, 0.1, 0.4, 1.7];
        for &x in &pts {
            for &y in &pts {
                let k = |a, b| {
                    kernel_contour(&h, a, b, &QuadratureSpec::default())
                        .unwrap()
                        .value
                };
                let det =
                    correlation_det(&[vec![k(x, x), k(x, y)], vec![k(y, x), k(y, y)]]).unwrap();
                assert!(det >= -1e-8 * (k(x, x).re * k(y, y).re));
            }
        }
    }

    #[test]
    fn determinants() {
        let k = |a, b| kernel_cd_gue(4, a, b).unwrap().value;
        let m = vec![
            vec![k(0.0, 0.0), k(0.0, 0.5)],
            vec![k(0.5, 0.0), k(0.5, 0.5)],
        ];
        let det = correlation_det(&m).unwrap();
        let direct = (k(0.0, 0.0) * k(0.5, 0.5) - k(0.0, 0.5) * k(0.5, 0.0)).re;
        assert!((det - direct).abs() < 1e-12);
        let equal = vec![
            vec![k(0.2, 0.2), k(0.2, 0.2)],
            vec![k(0.2, 0.2), k(0.2, 0.2)],
        ];
        assert!(correlation_det(&equal).unwrap().abs() < 1e-14);
        assert_eq!(
            correlation_det(&[vec![k(0.1, 0.1)]]).unwrap(),
            k(0.1, 0.1).re
        );
        // conjugation by e^{c(x_i - x_j)}
        let xs = [-0.4, 0.0, 0.3];
        let c = 1.7;
        let a: Vec<Vec<Complex64>> = xs
            .iter()
            .map(|&x| xs.iter().map(|&y| k(x, y)).collect())
            .collect();
        let b: Vec<Vec<Complex64>> = xs
            .iter()
            .map(|&x| xs.iter().map(|&y| k(x, y) * (c * (x - y)).exp()).collect())
            .collect();
        let (da, db) = (correlation_det(&a).unwrap(), correlation_det(&b).unwrap());
        assert!((da - db).abs() <= 1e-10 * da.abs());
    }

    #[test]
    fn saddle_decomposition() {
        let h = vec![0.0; 16];
        let (v, parts) = kernel_saddle(&h, 0.0, 0.3, 0.3, &QuadratureSpec::default()).unwrap();
        assert!((parts.explicit - parts.y / PI).abs() < 1e-15);
        let cd = kernel_cd_gue(16, 0.3 / 16.0, 0.3 / 16.0).unwrap().value;
        assert!((v.value - cd).norm() <= v.error_estimate + 1e-10);
        // at the first zero of the sine factor the explicit term vanishes
        let y = parts.y;
        let (v, parts) = kernel_saddle(&h, 0.0, PI / y, 0.0, &QuadratureSpec::default()).unwrap();
        assert!(parts.explicit.abs() < 1e-14);
        let cd = kernel_cd_gue(16, PI / y / 16.0, 0.0).unwrap().value;
        assert!((v.value - cd).norm() <= v.error_estimate + 1e-10);
        assert!(kernel_saddle(&h, 3.0, 0.0, 0.0, &QuadratureSpec::default()).is_err());
    }

    #[test]
    fn saddle_decomposition_matches_contour_for_two_point() {
        let h: Vec<f64> = (0..32).map(|i| if i < 16 { -1.0 } else { 1.0 }).collect();
        let l0 = 1.0;
        let (v, _) = kernel_saddle(&h, l0, 0.4, -0.7, &QuadratureSpec::default()).unwrap();
        let c = kernel_contour(
            &h,
            l0 + 0.4 / 32.0,
            l0 - 0.7 / 32.0,
            &QuadratureSpec::default(),
        )
        .unwrap();
        assert!((v.value - c.value).norm() < 1e-4 * c.value.norm());
    }

    #[test]
    fn shifted_cd_agrees_with_contour() {
        let h = vec![0.7; 6];
        let a = kernel(&h, 0.5, 1.1, Method::Cd, &QuadratureSpec::default())
            .unwrap()
            .value;
        let b = kernel(&h, 0.5, 1.1, Method::Contour, &QuadratureSpec::default())
            .unwrap()
            .value;
        assert!((a - b).norm() < 1e-9 * a.norm().max(1.0), "{a} vs {b}");
    }

    #[test]
    fn csv_format() {
        let rows = kernel_grid(
            &[0.0; 3],
            &[0.0],
            &[0.0, 0.5],
            Method::Cd,
            &QuadratureSpec::default(),
        )
        .unwrap();
        let csv = kernel_csv(&rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "lambda,mu,re,im,method,err");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].contains(",cd_gue,"));
    }
}
