//! Numerical laboratory for the deformed Gaussian unitary ensemble
//! `H = n^{-1/2} W + diag(h)`.
//!
//! * [`ensemble`]: sampling, eigenvalues, empirical statistics.
//! * [`stieltjes`]: Stieltjes transforms, the saddle equation `z - g0(z) = lambda`,
//!   the limiting density and the saddle contours.
//! * [`kernel`]: the finite-n correlation kernel by contour quadrature, by
//!   residues, from Hermite functions, and split around the saddle point.
//! * [`universality`]: sine-kernel comparisons and Fredholm gap probabilities.
//! * [`berezin`]: Grassmann algebra, Berezin integrals and super-matrices.
//! * [`cli`]: the `dgue` command-line front end.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod berezin;
pub mod cli;
pub mod eigen;
pub mod ensemble;
pub mod error;
pub mod io;
pub mod kernel;
pub mod quadrature;
pub mod rng;
pub mod stieltjes;
pub mod universality;

pub use error::{Error, Result};
