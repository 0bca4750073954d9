//! Genogram expansions for normal approximation of mixing random fields:
//! exact identity checks on finite fields, cumulant-matching constructions,
//! Edgeworth terms in the Hermite basis and Monte Carlo rate experiments.

pub mod bell;
pub mod error;
pub mod field_exact;
pub mod genogram;
pub mod hamburger;
pub mod metrics;
pub mod mixing_mc;
pub mod scalar;
pub mod stein_edgeworth;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default real scalar.
pub type Real = f64;
/// Exact scalar used by the symbolic routines.
pub type Rational = num_rational::BigRational;
