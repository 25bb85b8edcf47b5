//! Vector balancing at desk scale.
//!
//! Given an `m x n` matrix `X` with columns `X_1, ..., X_n`, the discrepancy
//! objective is `min over signings sigma in {-1,+1}^n of |X sigma|_inf`. This
//! crate provides:
//!
//! * exact representations of instances, signings, and signed partial sums
//!   together with a brute-force minimizer usable up to `n = 26`
//!   ([`instance`]);
//! * bounded one-dimensional densities, their product lifts, and seeded
//!   reproducible sampling ([`dist`]);
//! * the `REDUCE` fractional-relaxation signer with its Beck-Fiala style
//!   sup-norm guarantee ([`reduce`]);
//! * the partition/resample/difference/clean-up phase transformation and the
//!   full multi-phase differencing driver ([`prdc`], [`gkk`]);
//! * a numerical engine for the associated first/second moment formulas,
//!   bivariate normal rectangle probabilities, and discrepancy thresholds
//!   ([`theory`]);
//! * baseline signers and a seeded benchmark harness ([`bench`]).

pub mod bench;
pub mod dist;
pub mod error;
pub mod gkk;
pub mod instance;
pub mod prdc;
pub mod reduce;
pub mod stats;
pub mod theory;

pub use error::Error;
pub use instance::{DiscrepancyReport, Signing, SignedCombination, VectorSet};

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
