//! Finite Grassmann algebra, Berezin integration and super-matrices.
//!
//! An algebra with `pairs = p` carries `2p` anticommuting generators:
//! `ψ_j` at index `j` and its conjugate `ψ̄_j` at index `p + j`. Elements are
//! stored in normal form, one complex coefficient per generator subset with
//! the generators in ascending index order.
//!
//! Integration follows the right-hand convention `∫ ψ dψ = 1`: the generator
//! is moved to the right end of the monomial and dropped. In a repeated
//! integral `∫ f dχ_m … dχ_1` the differential written first (`dχ_m`) acts
//! first, so `∫∫ ψ1ψ2 dψ2 dψ1 = 1`.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng;

/// Largest `p` whose `2p` generators fit in a `u64` mask.
pub const MAX_PAIRS: usize = 32;
/// Largest matrix accepted by [`gaussian_berezin`].
pub const MAX_GAUSSIAN_DIM: usize = 6;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// `(-1)^k`
fn parity_sign(k: u32) -> f64 {
    if k.is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// Sign of the permutation sorting the concatenation `m1 ++ m2`.
fn product_sign(m1: u64, m2: u64) -> f64 {
    let mut inversions = 0;
    let mut rest = m2;
    while rest != 0 {
        let j = rest.trailing_zeros();
        inversions += (m1 >> j >> 1).count_ones();
        rest &= rest - 1;
    }
    parity_sign(inversions)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GrassmannElement {
    pairs: usize,
    terms: BTreeMap<u64, Complex64>,
}

impl GrassmannElement {
    pub fn zero(pairs: usize) -> Self {
        assert!(pairs <= MAX_PAIRS, "at most {MAX_PAIRS} generator pairs");
        Self {
            pairs,
            terms: BTreeMap::new(),
        }
    }

    pub fn scalar(pairs: usize, c: Complex64) -> Self {
        let mut e = Self::zero(pairs);
        e.push(0, c);
        e
    }

    pub fn one(pairs: usize) -> Self {
        Self::scalar(pairs, ONE)
    }

    /// Generator with raw index `idx < 2p`.
    pub fn generator(pairs: usize, idx: usize) -> Result<Self> {
        if idx >= 2 * pairs {
            return Err(Error::InvalidArgument(format!(
                "generator {idx} outside a universe of {} generators",
                2 * pairs
            )));
        }
        let mut e = Self::zero(pairs);
        e.push(1 << idx, ONE);
        Ok(e)
    }

    /// `ψ_j`
    pub fn psi(pairs: usize, j: usize) -> Result<Self> {
        check_pair(pairs, j)?;
        Self::generator(pairs, j)
    }

    /// `ψ̄_j`
    pub fn psi_bar(pairs: usize, j: usize) -> Result<Self> {
        check_pair(pairs, j)?;
        Self::generator(pairs, pairs + j)
    }

    /// Builds an element from `(generator indices, coefficient)` pairs. The
    /// indices may come in any order; the coefficient picks up the sign of
    /// the sorting permutation, and repeated indices give zero.
    pub fn from_monomials<I>(pairs: usize, monomials: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<usize>, Complex64)>,
    {
        let mut out = Self::zero(pairs);
        for (gens, c) in monomials {
            let mut acc = Self::scalar(pairs, c);
            for g in gens {
                acc = &acc * &Self::generator(pairs, g)?;
            }
            out = &out + &acc;
        }
        Ok(out)
    }

    pub fn pairs(&self) -> usize {
        self.pairs
    }

    pub fn num_generators(&self) -> usize {
        2 * self.pairs
    }

    /// Nonzero terms as `(mask, coefficient)` in canonical order.
    pub fn terms(&self) -> impl Iterator<Item = (u64, Complex64)> + '_ {
        self.terms.iter().map(|(m, c)| (*m, *c))
    }

    pub fn coefficient(&self, mask: u64) -> Complex64 {
        self.terms.get(&mask).copied().unwrap_or(ZERO)
    }

    /// Numerical part.
    pub fn body(&self) -> Complex64 {
        self.coefficient(0)
    }

    /// The element minus its numerical part.
    pub fn soul(&self) -> Self {
        let mut s = self.clone();
        s.terms.remove(&0);
        s
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_even(&self) -> bool {
        self.terms.keys().all(|m| m.count_ones() % 2 == 0)
    }

    pub fn is_odd(&self) -> bool {
        self.terms.keys().all(|m| m.count_ones() % 2 == 1)
    }

    fn push(&mut self, mask: u64, c: Complex64) {
        if c == ZERO {
            return;
        }
        let slot = self.terms.entry(mask).or_insert(ZERO);
        *slot += c;
        if *slot == ZERO {
            self.terms.remove(&mask);
        }
    }

    fn same_universe(&self, other: &Self) -> Result<()> {
        if self.pairs == other.pairs {
            Ok(())
        } else {
            Err(Error::Universe(self.pairs, other.pairs))
        }
    }

    pub fn try_add(&self, other: &Self) -> Result<Self> {
        self.same_universe(other)?;
        let mut out = self.clone();
        for (m, c) in other.terms() {
            out.push(m, c);
        }
        Ok(out)
    }

    pub fn try_mul(&self, other: &Self) -> Result<Self> {
        self.same_universe(other)?;
        let mut out = Self::zero(self.pairs);
        for (m1, c1) in self.terms() {
            for (m2, c2) in other.terms() {
                if m1 & m2 == 0 {
                    out.push(m1 | m2, c1 * c2 * product_sign(m1, m2));
                }
            }
        }
        Ok(out)
    }

    pub fn scale(&self, s: Complex64) -> Self {
        let mut out = Self::zero(self.pairs);
        for (m, c) in self.terms() {
            out.push(m, c * s);
        }
        out
    }

    /// Conjugation: `ψ_j ↦ ψ̄_j`, `ψ̄_j ↦ -ψ_j`, coefficients conjugated,
    /// factor order preserved.
    pub fn conjugate(&self) -> Self {
        let p = self.pairs;
        let mut out = Self::zero(p);
        for (m, c) in self.terms() {
            let mut acc = 0u64;
            let mut sign = 1.0;
            let mut rest = m;
            while rest != 0 {
                let g = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                let image = if g < p {
                    g + p
                } else {
                    sign = -sign;
                    g - p
                };
                sign *= product_sign(acc, 1 << image);
                acc |= 1 << image;
            }
            out.push(acc, c.conj() * sign);
        }
        out
    }

    /// `∫ u dχ` for the generator with raw index `var`.
    pub fn berezin_integrate(&self, var: usize) -> Result<Self> {
        if var >= self.num_generators() {
            return Err(Error::InvalidArgument(format!(
                "integration variable {var} outside a universe of {} generators",
                self.num_generators()
            )));
        }
        let bit = 1u64 << var;
        let mut out = Self::zero(self.pairs);
        for (m, c) in self.terms() {
            if m & bit != 0 {
                let after = (m >> var >> 1).count_ones();
                out.push(m & !bit, c * parity_sign(after));
            }
        }
        Ok(out)
    }

    /// `∫ u dχ_{v[0]} dχ_{v[1]} …`, differentials in written order.
    pub fn integrate_repeated(&self, vars: &[usize]) -> Result<Self> {
        vars.iter()
            .try_fold(self.clone(), |acc, &v| acc.berezin_integrate(v))
    }

    /// `Σ_k s^k c_k` evaluated on the nilpotent part `s`; stops when `s^k`
    /// vanishes, which happens after at most `2p` steps.
    fn nilpotent_series(s: &Self, mut coeff: impl FnMut(usize) -> Complex64) -> Self {
        let mut out = Self::scalar(s.pairs, coeff(0));
        let mut power = Self::one(s.pairs);
        for k in 1.. {
            power = &power * s;
            if power.is_zero() {
                break;
            }
            out = &out + &power.scale(coeff(k));
        }
        out
    }

    pub fn exp(&self) -> Self {
        let mut inv_fact = ONE;
        let series = Self::nilpotent_series(&self.soul(), |k| {
            if k > 0 {
                inv_fact /= k as f64;
            }
            inv_fact
        });
        series.scale(self.body().exp())
    }

    fn invertible_body(&self, what: &str) -> Result<Complex64> {
        let b = self.body();
        if b == ZERO {
            Err(Error::Degenerate(format!(
                "{what} of an element with zero numerical part"
            )))
        } else {
            Ok(b)
        }
    }

    /// Principal logarithm.
    pub fn ln(&self) -> Result<Self> {
        let b = self.invertible_body("logarithm")?;
        let s = self.soul().scale(b.inv());
        let series = Self::nilpotent_series(&s, |k| {
            if k == 0 {
                b.ln()
            } else {
                Complex64::from(parity_sign(k as u32 + 1) / k as f64)
            }
        });
        Ok(series)
    }

    /// Principal power `u^alpha`.
    pub fn powf(&self, alpha: f64) -> Result<Self> {
        let b = self.invertible_body("power")?;
        let s = self.soul().scale(b.inv());
        let mut binom = 1.0;
        let series = Self::nilpotent_series(&s, |k| {
            if k > 0 {
                binom *= (alpha - (k - 1) as f64) / k as f64;
            }
            Complex64::from(binom)
        });
        Ok(series.scale(b.powf(alpha)))
    }

    pub fn inverse(&self) -> Result<Self> {
        let b = self.invertible_body("inverse")?;
        let s = self.soul().scale(-b.inv());
        Ok(Self::nilpotent_series(&s, |_| ONE).scale(b.inv()))
    }

    /// Same element in a universe with `pairs >= self.pairs()`; `ψ_j` and
    /// `ψ̄_j` keep their meaning.
    pub fn embed(&self, pairs: usize) -> Result<Self> {
        if pairs < self.pairs || pairs > MAX_PAIRS {
            return Err(Error::InvalidArgument(format!(
                "cannot embed {} pairs into {pairs}",
                self.pairs
            )));
        }
        let p = self.pairs;
        let low = (1u64 << p) - 1;
        let mut out = Self::zero(pairs);
        for (m, c) in self.terms() {
            out.push((m & low) | ((m >> p) << pairs), c);
        }
        Ok(out)
    }

    /// Largest coefficient modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.pairs, other.pairs, "generator universes differ");
        let mut worst: f64 = 0.0;
        for (m, c) in self.terms() {
            worst = worst.max((c - other.coefficient(m)).norm());
        }
        for (m, c) in other.terms() {
            if !self.terms.contains_key(&m) {
                worst = worst.max(c.norm());
            }
        }
        worst
    }

    fn generator_name(&self, g: usize) -> String {
        if g < self.pairs {
            format!("ψ{g}")
        } else {
            format!("ψ̄{}", g - self.pairs)
        }
    }
}

fn check_pair(pairs: usize, j: usize) -> Result<()> {
    if j < pairs {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "pair {j} outside a universe of {pairs} pairs"
        )))
    }
}

/// Panics if the universes differ; use [`GrassmannElement::try_add`] to get
/// an error instead.
impl Add for &GrassmannElement {
    type Output = GrassmannElement;
    fn add(self, rhs: Self) -> GrassmannElement {
        self.try_add(rhs).expect("generator universes differ")
    }
}

impl Sub for &GrassmannElement {
    type Output = GrassmannElement;
    fn sub(self, rhs: Self) -> GrassmannElement {
        self.try_add(&-rhs).expect("generator universes differ")
    }
}

/// Panics if the universes differ; use [`GrassmannElement::try_mul`] to get
/// an error instead.
impl Mul for &GrassmannElement {
    type Output = GrassmannElement;
    fn mul(self, rhs: Self) -> GrassmannElement {
        self.try_mul(rhs).expect("generator universes differ")
    }
}

impl Neg for &GrassmannElement {
    type Output = GrassmannElement;
    fn neg(self) -> GrassmannElement {
        self.scale(-ONE)
    }
}

fn fmt_coefficient(c: Complex64) -> String {
    if c.im == 0.0 {
        format!("{}", c.re)
    } else if c.re == 0.0 {
        format!("{}i", c.im)
    } else {
        let sign = if c.im < 0.0 { '-' } else { '+' };
        format!("({}{sign}{}i)", c.re, c.im.abs())
    }
}

/// Terms by degree, then by mask; generators as `ψj` / `ψ̄j`.
impl fmt::Display for GrassmannElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        let mut terms: Vec<_> = self.terms().collect();
        terms.sort_by_key(|(m, _)| (m.count_ones(), *m));
        for (k, (m, c)) in terms.into_iter().enumerate() {
            let negative = c.im == 0.0 && c.re < 0.0;
            let c = if negative { -c } else { c };
            match (k, negative) {
                (0, true) => write!(f, "-")?,
                (0, false) => {}
                (_, true) => write!(f, " - ")?,
                (_, false) => write!(f, " + ")?,
            }
            if m == 0 || c != ONE {
                write!(f, "{}", fmt_coefficient(c))?;
            }
            let mut rest = m;
            while rest != 0 {
                let g = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                write!(f, "{}", self.generator_name(g))?;
            }
        }
        Ok(())
    }
}

/// Integral of `exp{-Σ A_jk ψ̄_j ψ_k}` against `Π_j dψ̄_j dψ_j`, expanded
/// symbolically, together with `det A` from an LU factorization.
pub fn gaussian_berezin(a: &DMatrix<Complex64>) -> Result<(Complex64, Complex64)> {
    let n = a.nrows();
    if n != a.ncols() || n == 0 {
        return Err(Error::InvalidDimension(format!(
            "expected a nonempty square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if n > MAX_GAUSSIAN_DIM {
        return Err(Error::Budget(format!(
            "{n}x{n} Gaussian needs 4^{n} terms; limit is {MAX_GAUSSIAN_DIM}"
        )));
    }
    let mut exponent = GrassmannElement::zero(n);
    for j in 0..n {
        for k in 0..n {
            let pair = &GrassmannElement::psi_bar(n, j)? * &GrassmannElement::psi(n, k)?;
            exponent = &exponent - &pair.scale(a[(j, k)]);
        }
    }
    let measure: Vec<usize> = (0..n).flat_map(|j| [n + j, j]).collect();
    let symbolic = exponent.exp().integrate_repeated(&measure)?;
    Ok((symbolic.body(), a.clone().determinant()))
}

/// Dense matrix of Grassmann elements over one universe.
#[derive(Clone, Debug, PartialEq)]
pub struct GrassmannMatrix {
    rows: usize,
    cols: usize,
    pairs: usize,
    data: Vec<GrassmannElement>,
}

impl GrassmannMatrix {
    pub fn zeros(rows: usize, cols: usize, pairs: usize) -> Self {
        Self {
            rows,
            cols,
            pairs,
            data: vec![GrassmannElement::zero(pairs); rows * cols],
        }
    }

    pub fn identity(n: usize, pairs: usize) -> Self {
        let mut m = Self::zeros(n, n, pairs);
        for i in 0..n {
            m.data[i * n + i] = GrassmannElement::one(pairs);
        }
        m
    }

    pub fn from_numeric(a: &DMatrix<Complex64>, pairs: usize) -> Self {
        let mut m = Self::zeros(a.nrows(), a.ncols(), pairs);
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                m.data[i * a.ncols() + j] = GrassmannElement::scalar(pairs, a[(i, j)]);
            }
        }
        m
    }

    /// Row-major rows; every entry must live in `pairs`.
    pub fn from_rows(rows: Vec<Vec<GrassmannElement>>, pairs: usize) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::InvalidDimension("ragged rows".into()));
            }
            for e in row {
                if e.pairs() != pairs {
                    return Err(Error::Universe(e.pairs(), pairs));
                }
                data.push(e);
            }
        }
        Ok(Self {
            rows: r,
            cols: c,
            pairs,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> &GrassmannElement {
        &self.data[i * self.cols + j]
    }

    fn set(&mut self, i: usize, j: usize, e: GrassmannElement) {
        self.data[i * self.cols + j] = e;
    }

    pub fn entries(&self) -> impl Iterator<Item = &GrassmannElement> {
        self.data.iter()
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::InvalidDimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        if self.pairs != other.pairs {
            return Err(Error::Universe(self.pairs, other.pairs));
        }
        let mut out = Self::zeros(self.rows, other.cols, self.pairs);
        for i in 0..self.rows {
            for j in 0..other.cols {
                let mut acc = GrassmannElement::zero(self.pairs);
                for l in 0..self.cols {
                    acc = &acc + &(self.get(i, l) * other.get(l, j));
                }
                out.set(i, j, acc);
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(Error::InvalidDimension("shape mismatch".into()));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| x.try_add(y))
            .collect::<Result<_>>()?;
        Ok(Self {
            data,
            ..self.clone()
        })
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self {
            data: self.data.iter().map(|e| e.scale(s)).collect(),
            ..self.clone()
        }
    }

    pub fn trace(&self) -> GrassmannElement {
        (0..self.rows.min(self.cols)).fold(GrassmannElement::zero(self.pairs), |acc, i| {
            &acc + self.get(i, i)
        })
    }

    /// Entrywise conjugate of the transpose.
    pub fn adjoint(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows, self.pairs);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j).conjugate());
            }
        }
        out
    }

    pub fn body(&self) -> DMatrix<Complex64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j).body())
    }

    pub fn soul(&self) -> Self {
        Self {
            data: self.data.iter().map(GrassmannElement::soul).collect(),
            ..self.clone()
        }
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(GrassmannElement::is_zero)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| x.max_abs_diff(y))
            .fold(0.0, f64::max)
    }

    /// Determinant of a matrix with even (mutually commuting) entries, by a
    /// sum over permutations organized as a dynamic program over the set of
    /// used columns. Works when no numerical pivot exists.
    pub fn even_det(&self) -> Result<GrassmannElement> {
        let n = self.rows;
        if n != self.cols {
            return Err(Error::InvalidDimension(
                "determinant of a non-square matrix".into(),
            ));
        }
        if n > 20 {
            return Err(Error::Budget(format!("{n}x{n} symbolic determinant")));
        }
        if !self.data.iter().all(GrassmannElement::is_even) {
            return Err(Error::InvalidArgument(
                "determinant needs even entries".into(),
            ));
        }
        let mut dp = vec![GrassmannElement::zero(self.pairs); 1 << n];
        dp[0] = GrassmannElement::one(self.pairs);
        for mask in 0usize..(1 << n) {
            if dp[mask].is_zero() {
                continue;
            }
            let row = mask.count_ones() as usize;
            if row == n {
                continue;
            }
            for c in 0..n {
                if mask & (1 << c) != 0 {
                    continue;
                }
                let sign = parity_sign((mask >> c >> 1).count_ones());
                let term = (&dp[mask] * self.get(row, c)).scale(Complex64::from(sign));
                dp[mask | (1 << c)] = &dp[mask | (1 << c)] + &term;
            }
        }
        Ok(dp.pop().expect("nonempty table"))
    }

    /// Inverse of an even matrix: numeric inverse of the body, corrected by
    /// the terminating Neumann series in the nilpotent part.
    pub fn even_inverse(&self) -> Result<Self> {
        if self.rows != self.cols {
            return Err(Error::InvalidDimension(
                "inverse of a non-square matrix".into(),
            ));
        }
        if !self.data.iter().all(GrassmannElement::is_even) {
            return Err(Error::InvalidArgument("inverse needs even entries".into()));
        }
        let b0 = self.body();
        let scale = b0.iter().map(|c| c.norm()).fold(0.0, f64::max);
        let inv0 = b0
            .clone()
            .try_inverse()
            .filter(|m| m.iter().all(|c| c.is_finite()))
            .ok_or_else(|| Error::Degenerate("numerical part of the block is singular".into()))?;
        let cond = scale * inv0.iter().map(|c| c.norm()).fold(0.0, f64::max);
        if cond > 1e14 {
            return Err(Error::Degenerate(format!(
                "numerical part of the block is singular (condition ~ {cond:e})"
            )));
        }
        let inv0 = Self::from_numeric(&inv0, self.pairs);
        let step = inv0.mul(&self.soul())?.scale(-ONE);
        let mut total = Self::identity(self.rows, self.pairs);
        let mut power = total.clone();
        loop {
            power = power.mul(&step)?;
            if power.is_zero() {
                break;
            }
            total = total.add(&power)?;
        }
        total.mul(&inv0)
    }
}

/// `F = [[a, σ], [ρ, b]]` with even blocks `a` (p×p), `b` (q×q) and odd
/// blocks `σ` (p×q), `ρ` (q×p).
#[derive(Clone, Debug, PartialEq)]
pub struct SuperMatrix {
    a: GrassmannMatrix,
    sigma: GrassmannMatrix,
    rho: GrassmannMatrix,
    b: GrassmannMatrix,
}

impl SuperMatrix {
    pub fn new(
        a: GrassmannMatrix,
        sigma: GrassmannMatrix,
        rho: GrassmannMatrix,
        b: GrassmannMatrix,
    ) -> Result<Self> {
        let (p, q) = (a.rows, b.rows);
        let shapes = [
            (&a, p, p, "a"),
            (&sigma, p, q, "sigma"),
            (&rho, q, p, "rho"),
            (&b, q, q, "b"),
        ];
        for (m, r, c, name) in shapes {
            if (m.rows, m.cols) != (r, c) {
                return Err(Error::InvalidDimension(format!(
                    "block {name} is {}x{}, expected {r}x{c}",
                    m.rows, m.cols
                )));
            }
            if m.pairs != a.pairs {
                return Err(Error::Universe(m.pairs, a.pairs));
            }
        }
        for (m, name) in [(&a, "a"), (&b, "b")] {
            if !m.entries().all(GrassmannElement::is_even) {
                return Err(Error::InvalidArgument(format!(
                    "block {name} has odd terms"
                )));
            }
        }
        for (m, name) in [(&sigma, "sigma"), (&rho, "rho")] {
            if !m.entries().all(GrassmannElement::is_odd) {
                return Err(Error::InvalidArgument(format!(
                    "block {name} has even terms"
                )));
            }
        }
        Ok(Self { a, sigma, rho, b })
    }

    pub fn identity(p: usize, q: usize, pairs: usize) -> Self {
        Self {
            a: GrassmannMatrix::identity(p, pairs),
            sigma: GrassmannMatrix::zeros(p, q, pairs),
            rho: GrassmannMatrix::zeros(q, p, pairs),
            b: GrassmannMatrix::identity(q, pairs),
        }
    }

    /// `(p, q)`
    pub fn dim(&self) -> (usize, usize) {
        (self.a.rows, self.b.rows)
    }

    pub fn pairs(&self) -> usize {
        self.a.pairs
    }

    pub fn a(&self) -> &GrassmannMatrix {
        &self.a
    }

    pub fn sigma(&self) -> &GrassmannMatrix {
        &self.sigma
    }

    pub fn rho(&self) -> &GrassmannMatrix {
        &self.rho
    }

    pub fn b(&self) -> &GrassmannMatrix {
        &self.b
    }

    fn same_shape(&self, other: &Self) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::InvalidDimension(format!(
                "super-matrices of shapes {:?} and {:?}",
                self.dim(),
                other.dim()
            )));
        }
        if self.pairs() != other.pairs() {
            return Err(Error::Universe(self.pairs(), other.pairs()));
        }
        Ok(())
    }

    pub fn mul(&self, g: &Self) -> Result<Self> {
        self.same_shape(g)?;
        Ok(Self {
            a: self.a.mul(&g.a)?.add(&self.sigma.mul(&g.rho)?)?,
            sigma: self.a.mul(&g.sigma)?.add(&self.sigma.mul(&g.b)?)?,
            rho: self.rho.mul(&g.a)?.add(&self.b.mul(&g.rho)?)?,
            b: self.rho.mul(&g.sigma)?.add(&self.b.mul(&g.b)?)?,
        })
    }

    pub fn add(&self, g: &Self) -> Result<Self> {
        self.same_shape(g)?;
        Ok(Self {
            a: self.a.add(&g.a)?,
            sigma: self.sigma.add(&g.sigma)?,
            rho: self.rho.add(&g.rho)?,
            b: self.b.add(&g.b)?,
        })
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self {
            a: self.a.scale(s),
            sigma: self.sigma.scale(s),
            rho: self.rho.scale(s),
            b: self.b.scale(s),
        }
    }

    /// `str F = Tr a - Tr b`
    pub fn str(&self) -> GrassmannElement {
        &self.a.trace() - &self.b.trace()
    }

    /// `sdet F = det(a - σ b⁻¹ ρ) / det b`
    pub fn sdet(&self) -> Result<GrassmannElement> {
        let b_inv = self.b.even_inverse()?;
        let schur = self
            .a
            .add(&self.sigma.mul(&b_inv)?.mul(&self.rho)?.scale(-ONE))?;
        let num = schur.even_det()?;
        let den = self.b.even_det()?;
        Ok(&num * &den.inverse()?)
    }

    /// `F⁺ = [[a⁺, -ρ⁺], [σ⁺, b⁺]]`
    pub fn hermitian_conjugate(&self) -> Self {
        Self {
            a: self.a.adjoint(),
            sigma: self.rho.adjoint().scale(-ONE),
            rho: self.sigma.adjoint(),
            b: self.b.adjoint(),
        }
    }

    fn soul(&self) -> Self {
        Self {
            a: self.a.soul(),
            sigma: self.sigma.clone(),
            rho: self.rho.clone(),
            b: self.b.soul(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.a.is_zero() && self.sigma.is_zero() && self.rho.is_zero() && self.b.is_zero()
    }

    /// `ln F` for `F = I + N` with `N` free of numerical parts; the series
    /// terminates because `N` is nilpotent.
    pub fn ln(&self) -> Result<Self> {
        let (p, q) = self.dim();
        let body_a = self.a.body();
        let body_b = self.b.body();
        let unit = |m: &DMatrix<Complex64>| {
            m.iter()
                .enumerate()
                .all(|(k, c)| *c == if k % (m.nrows() + 1) == 0 { ONE } else { ZERO })
        };
        if !unit(&body_a) || !unit(&body_b) {
            return Err(Error::InvalidArgument(
                "logarithm needs a super-matrix with identity numerical part".into(),
            ));
        }
        let n = self.soul();
        let mut total = Self::identity(p, q, self.pairs()).scale(ZERO);
        let mut power = Self::identity(p, q, self.pairs());
        for k in 1.. {
            power = power.mul(&n)?;
            if power.is_zero() {
                break;
            }
            let c = parity_sign(k as u32 + 1) / k as f64;
            total = total.add(&power.scale(Complex64::from(c)))?;
        }
        Ok(total)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        [
            self.a.max_abs_diff(&other.a),
            self.sigma.max_abs_diff(&other.sigma),
            self.rho.max_abs_diff(&other.rho),
            self.b.max_abs_diff(&other.b),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Eigen-decomposition of `F = [[a, σ], [σ̄, b]]` with `σ = ψ0` in a
/// one-pair universe.
#[derive(Clone, Debug)]
pub struct SuperDiagonalization {
    pub f: SuperMatrix,
    pub eigenvalues: [GrassmannElement; 2],
    pub u: SuperMatrix,
    /// `U⁺ F U`
    pub diagonalized: SuperMatrix,
    pub unitarity_error: f64,
    pub diagonal_error: f64,
}

/// Newton's method over the algebra for a root of `f` near the numeric
/// seed; it terminates once the correction vanishes.
fn newton_root(
    seed: f64,
    f: impl Fn(&GrassmannElement) -> GrassmannElement,
    df: impl Fn(&GrassmannElement) -> GrassmannElement,
) -> Result<GrassmannElement> {
    let mut x = GrassmannElement::scalar(1, seed.into());
    for _ in 0..16 {
        let step = &f(&x) * &df(&x).inverse()?;
        if step.is_zero() {
            return Ok(x);
        }
        x = &x - &step;
    }
    Err(Error::Numerical(
        "super-eigenvalue iteration did not settle".into(),
    ))
}

/// Diagonalizes the 2×2 Hermitian super-matrix `[[a, σ], [σ̄, b]]`.
///
/// The eigenvalues come from Newton's method on the characteristic
/// equations `(a-x)(b-x) - σσ̄ = 0` (seed `a`) and `(b-x)(a-x) - σ̄σ = 0`
/// (seed `b`). The eigenvectors follow from the block equations and are
/// normalized in the form `Φ⁺Φ` defined by the super-Hermitian conjugate.
pub fn super_diag_2x2(a: f64, b: f64) -> Result<SuperDiagonalization> {
    if a == b || !(a - b).is_finite() {
        return Err(Error::Degenerate(format!(
            "super-diagonalization needs a != b, got a = b = {a}"
        )));
    }
    let one = GrassmannElement::one(1);
    let sc = |x: f64| GrassmannElement::scalar(1, x.into());
    let sigma = GrassmannElement::psi(1, 0)?;
    let sigma_bar = GrassmannElement::psi_bar(1, 0)?;
    let f = SuperMatrix::new(
        GrassmannMatrix::from_rows(vec![vec![sc(a)]], 1)?,
        GrassmannMatrix::from_rows(vec![vec![sigma.clone()]], 1)?,
        GrassmannMatrix::from_rows(vec![vec![sigma_bar.clone()]], 1)?,
        GrassmannMatrix::from_rows(vec![vec![sc(b)]], 1)?,
    )?;

    let ss_bar = &sigma * &sigma_bar;
    let s_bar_s = &sigma_bar * &sigma;
    let lambda1 = newton_root(
        a,
        |x| &(&(&sc(a) - x) * &(&sc(b) - x)) - &ss_bar,
        |x| &(x + x) - &sc(a + b),
    )?;
    let lambda2 = newton_root(
        b,
        |x| &(&(&sc(b) - x) * &(&sc(a) - x)) - &s_bar_s,
        |x| &(x + x) - &sc(a + b),
    )?;

    // bosonic-type eigenvector (S, χ): χ = -(b - λ1)^{-1} σ̄ S
    let chi1 = -&(&(&sc(b) - &lambda1).inverse()? * &sigma_bar);
    let norm1 = &one - &(&chi1.conjugate() * &chi1);
    let s1 = norm1.powf(-0.5)?;
    let chi1 = &chi1 * &s1;
    // fermionic-type eigenvector (χ, S): χ = -(a - λ2)^{-1} σ S
    let chi2 = -&(&(&sc(a) - &lambda2).inverse()? * &sigma);
    let norm2 = &one + &(&chi2.conjugate() * &chi2);
    let s2 = norm2.powf(-0.5)?;
    let chi2 = &chi2 * &s2;

    let u = SuperMatrix::new(
        GrassmannMatrix::from_rows(vec![vec![s1]], 1)?,
        GrassmannMatrix::from_rows(vec![vec![chi2]], 1)?,
        GrassmannMatrix::from_rows(vec![vec![chi1]], 1)?,
        GrassmannMatrix::from_rows(vec![vec![s2]], 1)?,
    )?;
    let u_dag = u.hermitian_conjugate();
    let unitarity_error = u_dag.mul(&u)?.max_abs_diff(&SuperMatrix::identity(1, 1, 1));
    let diagonalized = u_dag.mul(&f)?.mul(&u)?;
    let expected = SuperMatrix::new(
        GrassmannMatrix::from_rows(vec![vec![lambda1.clone()]], 1)?,
        GrassmannMatrix::zeros(1, 1, 1),
        GrassmannMatrix::zeros(1, 1, 1),
        GrassmannMatrix::from_rows(vec![vec![lambda2.clone()]], 1)?,
    )?;
    let diagonal_error = diagonalized.max_abs_diff(&expected);
    let scale = 1.0 + a.abs().max(b.abs());
    if unitarity_error > 1e-12 || diagonal_error > 1e-12 * scale {
        return Err(Error::Numerical(format!(
            "super-diagonalization check failed (unitarity {unitarity_error:e}, diagonal {diagonal_error:e})"
        )));
    }
    Ok(SuperDiagonalization {
        f,
        eigenvalues: [lambda1, lambda2],
        u,
        diagonalized,
        unitarity_error,
        diagonal_error,
    })
}

/// Both sides of the combined Gaussian identity for one super-matrix.
#[derive(Clone, Debug)]
pub struct GaussianCheck {
    /// Fermionic integral done symbolically, bosonic one by Wick's rule.
    pub hybrid: GrassmannElement,
    pub sdet_inverse: GrassmannElement,
    pub error: f64,
}

/// Polynomial in the commuting `X_i`, `X̄_i` with Grassmann coefficients;
/// keys are exponent vectors `(X, X̄)`.
type BosonPoly = BTreeMap<(Vec<u8>, Vec<u8>), GrassmannElement>;

fn poly_add_term(p: &mut BosonPoly, key: (Vec<u8>, Vec<u8>), c: GrassmannElement) {
    if c.is_zero() {
        return;
    }
    match p.get_mut(&key) {
        Some(slot) => {
            *slot = &*slot + &c;
            if slot.is_zero() {
                p.remove(&key);
            }
        }
        None => {
            p.insert(key, c);
        }
    }
}

fn poly_mul(x: &BosonPoly, y: &BosonPoly) -> BosonPoly {
    let mut out = BosonPoly::new();
    for ((xa, xb), cx) in x {
        for ((ya, yb), cy) in y {
            let c = cx * cy;
            if c.is_zero() {
                continue;
            }
            let ka = xa.iter().zip(ya).map(|(u, v)| u + v).collect();
            let kb = xb.iter().zip(yb).map(|(u, v)| u + v).collect();
            poly_add_term(&mut out, (ka, kb), c);
        }
    }
    out
}

/// `Σ_π Π_l c[I_l][J_π(l)]` over bijections between the index lists.
fn wick_pairings(xs: &[usize], ys: &[usize], c: &DMatrix<Complex64>) -> Complex64 {
    fn go(xs: &[usize], ys: &mut Vec<usize>, c: &DMatrix<Complex64>) -> Complex64 {
        let Some((&i, rest)) = xs.split_first() else {
            return ONE;
        };
        let mut total = ZERO;
        for k in 0..ys.len() {
            let j = ys.swap_remove(k);
            total += c[(i, j)] * go(rest, ys, c);
            ys.push(j);
            let last = ys.len() - 1;
            ys.swap(k, last);
        }
        total
    }
    go(xs, &mut ys.to_vec(), c)
}

fn expand_indices(exponents: &[u8]) -> Vec<usize> {
    exponents
        .iter()
        .enumerate()
        .flat_map(|(i, &e)| std::iter::repeat_n(i, e as usize))
        .collect()
}

/// Checks `∫ exp{-Φ⁺FΦ} dΦ⁺dΦ = sdet⁻¹ F` for `Φ = (X, χ)`, `X ∈ C^p`
/// bosonic and `χ` a fresh `q`-vector of Grassmann generators. The blocks
/// `a`, `b` must be numeric; `σ`, `ρ` may involve the generators of `F`.
pub fn super_gaussian_check(f: &SuperMatrix) -> Result<GaussianCheck> {
    let (p, q) = f.dim();
    if p > 3 || q > 3 {
        return Err(Error::Budget(format!(
            "super-Gaussian check needs p, q <= 3, got {p}, {q}"
        )));
    }
    for (m, name) in [(f.a(), "a"), (f.b(), "b")] {
        if m.entries().any(|e| !e.soul().is_zero()) {
            return Err(Error::InvalidArgument(format!(
                "block {name} must be numeric"
            )));
        }
    }
    let a0 = f.a().body();
    let herm_err = (&a0 - a0.adjoint())
        .iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max);
    if herm_err > 1e-12 || a0.clone().symmetric_eigenvalues().min() <= 0.0 {
        return Err(Error::InvalidArgument(
            "bosonic block is not Hermitian positive definite".into(),
        ));
    }
    let r = f.pairs();
    let pairs = r + q;
    if pairs > MAX_PAIRS {
        return Err(Error::Budget(format!("{pairs} generator pairs")));
    }
    let chi = |j: usize| GrassmannElement::psi(pairs, r + j);
    let chi_bar = |j: usize| GrassmannElement::psi_bar(pairs, r + j);
    let unit = |i: usize| {
        let mut v = vec![0u8; p];
        v[i] = 1;
        v
    };

    // exponent -(X̄σχ + χ̄ρX + χ̄bχ); the X̄aX part is the bosonic weight
    let mut exponent = BosonPoly::new();
    for i in 0..p {
        for j in 0..q {
            let s = f.sigma().get(i, j).embed(pairs)?;
            poly_add_term(&mut exponent, (vec![0; p], unit(i)), -&(&s * &chi(j)?));
            let rho = f.rho().get(j, i).embed(pairs)?;
            poly_add_term(
                &mut exponent,
                (unit(i), vec![0; p]),
                -&(&chi_bar(j)? * &rho),
            );
        }
    }
    for i in 0..q {
        for j in 0..q {
            let bij = f.b().get(i, j).embed(pairs)?;
            let term = &(&chi_bar(i)? * &chi(j)?) * &bij;
            poly_add_term(&mut exponent, (vec![0; p], vec![0; p]), -&term);
        }
    }
    // every coefficient carries χ, so the exponential series terminates
    let mut series = BosonPoly::new();
    series.insert((vec![0; p], vec![0; p]), GrassmannElement::one(pairs));
    let mut power = series.clone();
    for k in 1.. {
        power = poly_mul(&power, &exponent);
        if power.is_empty() {
            break;
        }
        for (key, c) in &power {
            let mut fact = 1.0;
            for l in 1..=k {
                fact *= l as f64;
            }
            poly_add_term(
                &mut series,
                key.clone(),
                c.scale(Complex64::from(1.0 / fact)),
            );
        }
    }

    let measure: Vec<usize> = (0..q).flat_map(|j| [pairs + r + j, r + j]).collect();
    let cov = a0
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("bosonic block is singular".into()))?;
    let det_a = a0.determinant();
    let mut hybrid = GrassmannElement::zero(pairs);
    for ((ex, ex_bar), c) in &series {
        let xs = expand_indices(ex);
        let ys = expand_indices(ex_bar);
        if xs.len() != ys.len() {
            continue;
        }
        let fermionic = c.integrate_repeated(&measure)?;
        if fermionic.is_zero() {
            continue;
        }
        let moment = wick_pairings(&xs, &ys, &cov) / det_a;
        hybrid = &hybrid + &fermionic.scale(moment);
    }
    // the fermionic generators are integrated out; return to F's universe
    let hybrid = restrict(&hybrid, r)?;
    let sdet_inverse = f.sdet()?.inverse()?;
    let error = hybrid.max_abs_diff(&sdet_inverse);
    Ok(GaussianCheck {
        hybrid,
        sdet_inverse,
        error,
    })
}

/// Inverse of [`GrassmannElement::embed`] for elements free of the extra
/// generators.
fn restrict(u: &GrassmannElement, pairs: usize) -> Result<GrassmannElement> {
    let big = u.pairs();
    let mut out = GrassmannElement::zero(pairs);
    for (m, c) in u.terms() {
        let low = m & ((1u64 << big) - 1);
        let high = m >> big;
        if low >> pairs != 0 || high >> pairs != 0 {
            return Err(Error::InvalidArgument(
                "element involves generators outside the target universe".into(),
            ));
        }
        out.push(low | (high << pairs), c);
    }
    Ok(out)
}

/// Fermionic line of the Hubbard–Stratonovich identity for one auxiliary
/// pair `η`: returns `∫ exp{η s1 + η̄ s2 - n η̄η} dη̄ dη` and
/// `n · exp{-s1 s2 / n}` for odd `s1`, `s2`.
pub fn hs_fermionic_check(
    s1: &GrassmannElement,
    s2: &GrassmannElement,
    n: f64,
) -> Result<(GrassmannElement, GrassmannElement)> {
    s1.same_universe(s2)?;
    if !s1.is_odd() || !s2.is_odd() {
        return Err(Error::InvalidArgument("sources must be odd".into()));
    }
    let r = s1.pairs();
    let pairs = r + 1;
    let (s1, s2) = (s1.embed(pairs)?, s2.embed(pairs)?);
    let eta = GrassmannElement::psi(pairs, r)?;
    let eta_bar = GrassmannElement::psi_bar(pairs, r)?;
    let n_c = Complex64::from(n);
    let exponent = &(&(&eta * &s1) + &(&eta_bar * &s2)) - &(&eta_bar * &eta).scale(n_c);
    let lhs = exponent.exp().integrate_repeated(&[pairs + r, r])?;
    let rhs = (&s1 * &s2).scale(-n_c.inv()).exp().scale(n_c);
    Ok((restrict(&lhs, r)?, restrict(&rhs, r)?))
}

/// Random Grassmann elements and super-matrices for identity checks.
pub mod random {
    use super::*;

    fn normal_c<R: Rng>(rng: &mut R) -> Complex64 {
        Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    }

    /// Standard complex Gaussian matrix.
    pub fn complex_matrix<R: Rng>(rng: &mut R, n: usize) -> DMatrix<Complex64> {
        DMatrix::from_fn(n, n, |_, _| normal_c(rng))
    }

    /// Sum over every monomial of the given parity with Gaussian
    /// coefficients; the numerical part (if even) is `body`.
    pub fn element<R: Rng>(
        rng: &mut R,
        pairs: usize,
        odd: bool,
        body: Complex64,
    ) -> GrassmannElement {
        let mut e = GrassmannElement::zero(pairs);
        for m in 1u64..(1 << (2 * pairs)) {
            if (m.count_ones() % 2 == 1) == odd {
                e.push(m, normal_c(rng) * 0.5);
            }
        }
        if !odd {
            e.push(0, body);
        }
        e
    }

    fn block<R: Rng>(
        rng: &mut R,
        rows: usize,
        cols: usize,
        pairs: usize,
        odd: bool,
        numeric: bool,
        shift: f64,
    ) -> GrassmannMatrix {
        let mut m = GrassmannMatrix::zeros(rows, cols, pairs);
        for i in 0..rows {
            for j in 0..cols {
                let body = if odd {
                    ZERO
                } else {
                    normal_c(rng) + if i == j { Complex64::from(shift) } else { ZERO }
                };
                let e = if numeric && !odd {
                    GrassmannElement::scalar(pairs, body)
                } else {
                    element(rng, pairs, odd, body)
                };
                m.set(i, j, e);
            }
        }
        m
    }

    /// Random super-matrix whose `b` block has a well-conditioned numerical
    /// part.
    pub fn super_matrix<R: Rng>(rng: &mut R, p: usize, q: usize, pairs: usize) -> SuperMatrix {
        SuperMatrix::new(
            block(rng, p, p, pairs, false, false, 3.0),
            block(rng, p, q, pairs, true, false, 0.0),
            block(rng, q, p, pairs, true, false, 0.0),
            block(rng, q, q, pairs, false, false, 3.0),
        )
        .expect("blocks have the right parity")
    }

    /// `I + N` with `N` free of numerical parts.
    pub fn unipotent_super_matrix<R: Rng>(
        rng: &mut R,
        p: usize,
        q: usize,
        pairs: usize,
    ) -> SuperMatrix {
        let n = super_matrix(rng, p, q, pairs).soul();
        SuperMatrix::identity(p, q, pairs)
            .add(&n)
            .expect("same shape")
    }

    /// Hermitian super-matrix with numeric positive-definite `a`, numeric
    /// `b` and `ρ = σ⁺`.
    pub fn hermitian_super_matrix<R: Rng>(
        rng: &mut R,
        p: usize,
        q: usize,
        pairs: usize,
    ) -> SuperMatrix {
        let g = complex_matrix(rng, p);
        let a = &g * g.adjoint() + DMatrix::<Complex64>::identity(p, p);
        let h = complex_matrix(rng, q);
        let b = (&h + h.adjoint()).scale(0.5) + DMatrix::<Complex64>::identity(q, q).scale(3.0);
        let sigma = block(rng, p, q, pairs, true, false, 0.0);
        SuperMatrix::new(
            GrassmannMatrix::from_numeric(&a, pairs),
            sigma.clone(),
            sigma.adjoint(),
            GrassmannMatrix::from_numeric(&b, pairs),
        )
        .expect("blocks have the right parity")
    }
}

/// One row of the identity table.
#[derive(Clone, Debug)]
pub struct IdentityCheck {
    pub name: &'static str,
    pub cases: usize,
    pub max_error: f64,
    pub tolerance: f64,
}

impl IdentityCheck {
    pub fn passed(&self) -> bool {
        self.max_error <= self.tolerance
    }
}

fn relative(x: Complex64, y: Complex64) -> f64 {
    (x - y).norm() / y.norm().max(1.0)
}

/// Closed forms of the `n = 1` super-diagonalization: eigenvalues
/// `a + σσ̄/(a-b)`, `b + σσ̄/(a-b)` and
/// `U = [[1 + σ̄σ/(2(a-b)²), -σ/(a-b)], [σ̄/(a-b), 1 - σ̄σ/(2(a-b)²)]]`.
pub fn super_diag_2x2_closed_form(a: f64, b: f64) -> ([GrassmannElement; 2], SuperMatrix) {
    let d = a - b;
    let sc = |x: f64| GrassmannElement::scalar(1, x.into());
    let sigma = GrassmannElement::psi(1, 0).expect("pair 0");
    let sigma_bar = GrassmannElement::psi_bar(1, 0).expect("pair 0");
    let ss_bar = &sigma * &sigma_bar;
    let s_bar_s = &sigma_bar * &sigma;
    let l1 = &sc(a) + &ss_bar.scale((1.0 / d).into());
    let l2 = &sc(b) + &ss_bar.scale((1.0 / d).into());
    let half = (0.5 / (d * d)).into();
    let one = GrassmannElement::one(1);
    let u = SuperMatrix::new(
        GrassmannMatrix::from_rows(vec![vec![&one + &s_bar_s.scale(half)]], 1).expect("1x1"),
        GrassmannMatrix::from_rows(vec![vec![sigma.scale((-1.0 / d).into())]], 1).expect("1x1"),
        GrassmannMatrix::from_rows(vec![vec![sigma_bar.scale((1.0 / d).into())]], 1).expect("1x1"),
        GrassmannMatrix::from_rows(vec![vec![&one - &s_bar_s.scale(half)]], 1).expect("1x1"),
    )
    .expect("parities");
    ([l1, l2], u)
}

/// Runs every identity on `cases` random instances drawn from `seed`.
pub fn identity_suite(seed: u64, cases: usize) -> Result<Vec<IdentityCheck>> {
    let mut rows = Vec::new();
    let mut stream = 0u64;
    let mut next_rng = || {
        stream += 1;
        rng::stream(seed, stream)
    };

    // algebra axioms on odd/even elements of a 3-pair universe
    let mut anti: f64 = 0.0;
    let mut nil: f64 = 0.0;
    let mut assoc: f64 = 0.0;
    let mut conj: f64 = 0.0;
    for _ in 0..cases {
        let mut g = next_rng();
        let u = random::element(&mut g, 3, true, ZERO);
        let v = random::element(&mut g, 3, true, ZERO);
        let w = random::element(&mut g, 3, false, Complex64::new(1.0, -0.5));
        anti = anti.max((&u * &v).max_abs_diff(&-&(&v * &u)));
        nil = nil.max((&u * &u).max_abs_diff(&GrassmannElement::zero(3)));
        assoc = assoc.max((&(&u * &v) * &w).max_abs_diff(&(&u * &(&v * &w))));
        // conjugation is multiplicative and squares to the parity sign on odd elements
        conj = conj.max(
            (&u * &v)
                .conjugate()
                .max_abs_diff(&(&u.conjugate() * &v.conjugate())),
        );
        conj = conj.max(u.conjugate().conjugate().max_abs_diff(&-&u));
    }
    for (name, err) in [
        ("anticommutation uv = -vu (odd)", anti),
        ("nilpotency uu = 0 (odd)", nil),
        ("associativity (uv)w = u(vw)", assoc),
        ("conjugation is multiplicative", conj),
    ] {
        rows.push(IdentityCheck {
            name,
            cases,
            max_error: err,
            tolerance: 1e-14,
        });
    }

    let mut worst: f64 = 0.0;
    for k in 0..cases {
        let n = 1 + k % 4;
        let a = random::complex_matrix(&mut next_rng(), n);
        let (sym, det) = gaussian_berezin(&a)?;
        worst = worst.max(relative(sym, det));
    }
    rows.push(IdentityCheck {
        name: "Grassmann Gaussian integral = det A",
        cases,
        max_error: worst,
        tolerance: 1e-12,
    });

    let (mut mult, mut cyc, mut log): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for k in 0..cases {
        let mut g = next_rng();
        let (p, q) = (1 + k % 2, 1 + (k / 2) % 2);
        let f = random::super_matrix(&mut g, p, q, 2);
        let h = random::super_matrix(&mut g, p, q, 2);
        let lhs = f.mul(&h)?.sdet()?;
        let rhs = &f.sdet()? * &h.sdet()?;
        mult = mult.max(lhs.max_abs_diff(&rhs) / rhs.body().norm().max(1.0));
        cyc = cyc.max(f.mul(&h)?.str().max_abs_diff(&h.mul(&f)?.str()));
        let u = random::unipotent_super_matrix(&mut g, p, q, 2);
        log = log.max(u.sdet()?.ln()?.max_abs_diff(&u.ln()?.str()));
    }
    rows.push(IdentityCheck {
        name: "sdet(FG) = sdet F sdet G",
        cases,
        max_error: mult,
        tolerance: 1e-10,
    });
    rows.push(IdentityCheck {
        name: "str(FG) = str(GF)",
        cases,
        max_error: cyc,
        tolerance: 1e-10,
    });
    rows.push(IdentityCheck {
        name: "ln sdet F = str ln F",
        cases,
        max_error: log,
        tolerance: 1e-10,
    });

    let mut gauss: f64 = 0.0;
    for k in 0..cases {
        let (p, q) = (1 + k % 2, 1 + (k / 2) % 2);
        let f = random::hermitian_super_matrix(&mut next_rng(), p, q, 2);
        gauss = gauss.max(super_gaussian_check(&f)?.error);
    }
    rows.push(IdentityCheck {
        name: "super Gaussian integral = 1/sdet F",
        cases,
        max_error: gauss,
        tolerance: 1e-10,
    });

    let mut hs: f64 = 0.0;
    for k in 0..cases {
        let mut g = next_rng();
        let s1 = random::element(&mut g, 2, true, ZERO);
        let s2 = random::element(&mut g, 2, true, ZERO);
        let (lhs, rhs) = hs_fermionic_check(&s1, &s2, 1.0 + k as f64)?;
        hs = hs.max(lhs.max_abs_diff(&rhs));
    }
    rows.push(IdentityCheck {
        name: "auxiliary Grassmann pair integral (m = 1)",
        cases,
        max_error: hs,
        tolerance: 1e-12,
    });

    let mut diag: f64 = 0.0;
    for (a, b) in [(1.0, 0.0), (2.0, -1.0), (0.5, 3.0), (-1.25, 0.75)] {
        let d = super_diag_2x2(a, b)?;
        let (lambda, u) = super_diag_2x2_closed_form(a, b);
        diag = diag
            .max(d.eigenvalues[0].max_abs_diff(&lambda[0]))
            .max(d.eigenvalues[1].max_abs_diff(&lambda[1]))
            .max(d.u.max_abs_diff(&u))
            .max(d.unitarity_error)
            .max(d.diagonal_error);
    }
    rows.push(IdentityCheck {
        name: "2x2 super-diagonalization matches closed form",
        cases: 4,
        max_error: diag,
        tolerance: 1e-15,
    });
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn psi(p: usize, j: usize) -> GrassmannElement {
        GrassmannElement::psi(p, j).unwrap()
    }

    fn psi_bar(p: usize, j: usize) -> GrassmannElement {
        GrassmannElement::psi_bar(p, j).unwrap()
    }

    #[test]
    fn products_follow_anticommutation() {
        let (p1, p2) = (psi(3, 1), psi(3, 2));
        let p12 = &p1 * &p2;
        assert_eq!(p12.coefficient(0b110), ONE);
        assert_eq!((&p2 * &p1).coefficient(0b110), -ONE);
        assert!((&p1 * &p1).is_zero());
        let one = GrassmannElement::one(3);
        let x = &one + &p1;
        let sq = &x * &x;
        assert_eq!(sq.to_string(), "1 + 2ψ1");
        assert!(matches!(p1.try_mul(&psi(2, 0)), Err(Error::Universe(3, 2))));
    }

    #[test]
    fn conjugation_rules() {
        let p = 2;
        assert_eq!(psi(p, 0).conjugate(), psi_bar(p, 0));
        assert_eq!(psi_bar(p, 0).conjugate(), -&psi(p, 0));
        let x = (&psi(p, 0) * &psi(p, 1)).scale(c(0.0, 1.0));
        let expected = (&psi_bar(p, 0) * &psi_bar(p, 1)).scale(c(0.0, -1.0));
        assert_eq!(x.conjugate(), expected);
        assert_eq!(x.conjugate().to_string(), "-1iψ̄0ψ̄1");
    }

    #[test]
    fn berezin_integration_conventions() {
        let p = 2;
        let one = GrassmannElement::one(p);
        assert_eq!(psi(p, 0).berezin_integrate(0).unwrap(), one);
        assert!(one.berezin_integrate(0).unwrap().is_zero());
        let p01 = &psi(p, 0) * &psi(p, 1);
        assert_eq!(p01.integrate_repeated(&[1, 0]).unwrap(), one);
        assert_eq!(p01.integrate_repeated(&[0, 1]).unwrap(), -&one);
        assert!(psi(p, 0).berezin_integrate(4).is_err());
    }

    #[test]
    fn gaussian_berezin_small_cases() {
        let a = DMatrix::from_element(1, 1, c(2.5, -1.0));
        let (s, d) = gaussian_berezin(&a).unwrap();
        assert_eq!(s, c(2.5, -1.0));
        assert_eq!(d, c(2.5, -1.0));
        let (s, d) = gaussian_berezin(&DMatrix::identity(2, 2)).unwrap();
        assert_eq!((s, d), (ONE, ONE));
        let mut g = rng::stream(11, 0);
        for n in [3, 5, 6] {
            let a = random::complex_matrix(&mut g, n);
            let (s, d) = gaussian_berezin(&a).unwrap();
            assert!(relative(s, d) < 1e-12, "n = {n}: {s} vs {d}");
        }
        let big = DMatrix::<Complex64>::identity(7, 7);
        assert!(matches!(gaussian_berezin(&big), Err(Error::Budget(_))));
    }

    #[test]
    fn sdet_and_str_of_diagonal() {
        let f = SuperMatrix::new(
            GrassmannMatrix::from_numeric(&DMatrix::from_element(1, 1, c(2.0, 0.0)), 1),
            GrassmannMatrix::zeros(1, 1, 1),
            GrassmannMatrix::zeros(1, 1, 1),
            GrassmannMatrix::from_numeric(&DMatrix::from_element(1, 1, c(4.0, 0.0)), 1),
        )
        .unwrap();
        assert_eq!(f.sdet().unwrap().body(), c(0.5, 0.0));
        assert_eq!(f.str().body(), c(-2.0, 0.0));
        let singular = SuperMatrix::new(
            f.a().clone(),
            GrassmannMatrix::zeros(1, 1, 1),
            GrassmannMatrix::zeros(1, 1, 1),
            GrassmannMatrix::zeros(1, 1, 1),
        )
        .unwrap();
        assert!(matches!(singular.sdet(), Err(Error::Degenerate(_))));
    }

    #[test]
    fn parity_is_checked_on_construction() {
        let odd = GrassmannMatrix::from_rows(vec![vec![psi(1, 0)]], 1).unwrap();
        let even = GrassmannMatrix::identity(1, 1);
        assert!(SuperMatrix::new(odd.clone(), odd.clone(), odd.clone(), even.clone()).is_err());
        assert!(SuperMatrix::new(even.clone(), even.clone(), odd.clone(), even.clone()).is_err());
        assert!(SuperMatrix::new(even.clone(), odd.clone(), odd, even).is_ok());
    }

    #[test]
    fn even_inverse_and_det_handle_nilpotent_parts() {
        let mut g = rng::stream(5, 1);
        let f = random::super_matrix(&mut g, 3, 1, 2);
        let a = f.a();
        let inv = a.even_inverse().unwrap();
        assert!(
            a.mul(&inv)
                .unwrap()
                .max_abs_diff(&GrassmannMatrix::identity(3, 2))
                < 1e-12
        );
        let det_prod = a.mul(&inv).unwrap().even_det().unwrap();
        assert!(det_prod.max_abs_diff(&GrassmannElement::one(2)) < 1e-12);
        // a purely nilpotent 1x1 determinant is the entry itself
        let n = GrassmannMatrix::from_rows(vec![vec![&psi(1, 0) * &psi_bar(1, 0)]], 1).unwrap();
        assert_eq!(n.even_det().unwrap(), &psi(1, 0) * &psi_bar(1, 0));
    }

    #[test]
    fn super_diagonalization_reproduces_closed_form() {
        let d = super_diag_2x2(1.0, 0.0).unwrap();
        let ss_bar = &psi(1, 0) * &psi_bar(1, 0);
        assert_eq!(d.eigenvalues[0], &GrassmannElement::one(1) + &ss_bar);
        assert_eq!(d.eigenvalues[1], ss_bar);
        for (a, b) in [(1.0, 0.0), (3.0, -2.0), (-0.5, 0.25)] {
            let d = super_diag_2x2(a, b).unwrap();
            let (lambda, u) = super_diag_2x2_closed_form(a, b);
            assert!(d.eigenvalues[0].max_abs_diff(&lambda[0]) < 1e-15);
            assert!(d.eigenvalues[1].max_abs_diff(&lambda[1]) < 1e-15);
            assert!(d.u.max_abs_diff(&u) < 1e-15, "{a} {b}");
            assert!(d.unitarity_error < 1e-15 && d.diagonal_error < 1e-14);
        }
        assert!(matches!(
            super_diag_2x2(2.0, 2.0),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn uncoupled_super_diagonalization_is_trivial() {
        let f = SuperMatrix::new(
            GrassmannMatrix::from_numeric(&DMatrix::from_element(1, 1, c(2.0, 0.0)), 1),
            GrassmannMatrix::zeros(1, 1, 1),
            GrassmannMatrix::zeros(1, 1, 1),
            GrassmannMatrix::from_numeric(&DMatrix::from_element(1, 1, c(-1.0, 0.0)), 1),
        )
        .unwrap();
        let u = SuperMatrix::identity(1, 1, 1);
        let d = u.hermitian_conjugate().mul(&f).unwrap().mul(&u).unwrap();
        assert_eq!(d, f);
    }

    #[test]
    fn super_gaussian_matches_sdet() {
        let a =
            DMatrix::from_row_slice(2, 2, &[c(2.0, 0.0), c(0.5, 0.5), c(0.5, -0.5), c(1.5, 0.0)]);
        let b = DMatrix::from_row_slice(1, 1, &[c(3.0, 0.0)]);
        let f = SuperMatrix::new(
            GrassmannMatrix::from_numeric(&a, 1),
            GrassmannMatrix::zeros(2, 1, 1),
            GrassmannMatrix::zeros(1, 2, 1),
            GrassmannMatrix::from_numeric(&b, 1),
        )
        .unwrap();
        let check = super_gaussian_check(&f).unwrap();
        let expected = Complex64::from(3.0) / a.determinant();
        assert!((check.hybrid.body() - expected).norm() < 1e-14);
        assert!(check.error < 1e-14);
        let mut g = rng::stream(3, 3);
        for (p, q) in [(1, 1), (2, 2), (2, 1)] {
            let f = random::hermitian_super_matrix(&mut g, p, q, 2);
            let check = super_gaussian_check(&f).unwrap();
            assert!(check.error < 1e-10, "{p}+{q}: {}", check.error);
            assert!(!check.hybrid.soul().is_zero());
        }
        let neg = SuperMatrix::new(
            GrassmannMatrix::from_numeric(&DMatrix::from_element(1, 1, c(-1.0, 0.0)), 1),
            GrassmannMatrix::zeros(1, 1, 1),
            GrassmannMatrix::zeros(1, 1, 1),
            GrassmannMatrix::identity(1, 1),
        )
        .unwrap();
        assert!(super_gaussian_check(&neg).is_err());
    }

    #[test]
    fn hs_single_pair_identity() {
        let s1 = &psi(2, 0) + &psi_bar(2, 1);
        let s2 = &psi(2, 1).scale(c(0.0, 2.0)) - &psi_bar(2, 0);
        let (lhs, rhs) = hs_fermionic_check(&s1, &s2, 4.0).unwrap();
        assert!(lhs.max_abs_diff(&rhs) < 1e-15);
        assert_eq!(lhs.body(), c(4.0, 0.0));
    }

    #[test]
    fn suite_passes() {
        let rows = identity_suite(1, 12).unwrap();
        for r in &rows {
            assert!(
                r.passed(),
                "{}: {:e} > {:e}",
                r.name,
                r.max_error,
                r.tolerance
            );
        }
    }

    #[test]
    fn display_is_deterministic() {
        let x = GrassmannElement::from_monomials(
            2,
            [
                (vec![3, 0], c(-1.0, 0.0)),
                (vec![], c(0.5, 0.0)),
                (vec![1], c(1.0, 2.0)),
            ],
        )
        .unwrap();
        assert_eq!(x.to_string(), "0.5 + (1+2i)ψ1 + ψ0ψ̄1");
    }

    fn odd_element() -> impl Strategy<Value = GrassmannElement> {
        any::<u64>().prop_map(|s| random::element(&mut rng::stream(s, 0), 3, true, ZERO))
    }

    fn any_element() -> impl Strategy<Value = GrassmannElement> {
        (any::<u64>(), any::<bool>()).prop_map(|(s, odd)| {
            let mut g = rng::stream(s, 1);
            let e = random::element(&mut g, 3, odd, Complex64::new(1.0, 0.0));
            &e + &random::element(&mut g, 3, !odd, ZERO)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn odd_elements_anticommute_and_square_to_zero(u in odd_element(), v in odd_element()) {
            prop_assert!((&u * &v).max_abs_diff(&-&(&v * &u)) < 1e-14);
            prop_assert!((&u * &u).is_zero() || (&u * &u).max_abs_diff(&GrassmannElement::zero(3)) < 1e-14);
        }

        #[test]
        fn ring_axioms(u in any_element(), v in any_element(), w in any_element()) {
            prop_assert!((&(&u * &v) * &w).max_abs_diff(&(&u * &(&v * &w))) < 1e-13);
            prop_assert!((&u * &(&v + &w)).max_abs_diff(&(&(&u * &v) + &(&u * &w))) < 1e-13);
        }

        #[test]
        fn supertrace_is_cyclic(s in any::<u64>(), p in 1usize..3, q in 1usize..3) {
            let mut g = rng::stream(s, 2);
            let f = random::super_matrix(&mut g, p, q, 2);
            let h = random::super_matrix(&mut g, p, q, 2);
            let lhs = f.mul(&h).unwrap().str();
            let rhs = h.mul(&f).unwrap().str();
            prop_assert!(lhs.max_abs_diff(&rhs) < 1e-10);
        }

        #[test]
        fn superdeterminant_is_multiplicative(s in any::<u64>(), p in 1usize..3, q in 1usize..3) {
            let mut g = rng::stream(s, 3);
            let f = random::super_matrix(&mut g, p, q, 2);
            let h = random::super_matrix(&mut g, p, q, 2);
            let lhs = f.mul(&h).unwrap().sdet().unwrap();
            let rhs = &f.sdet().unwrap() * &h.sdet().unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-10 * rhs.body().norm().max(1.0));
        }

        #[test]
        fn gaussian_integral_equals_determinant(s in any::<u64>(), n in 1usize..5) {
            let a = random::complex_matrix(&mut rng::stream(s, 4), n);
            let (sym, det) = gaussian_berezin(&a).unwrap();
            prop_assert!(relative(sym, det) < 1e-12);
        }
    }
}
