//! Sparse asymptotic minimum variance (SAMV) estimators for array
//! processing.
//!
//! The crate is organised bottom-up:
//!
//! * [`array`]: linear array geometry, scanning dictionaries, synthetic
//!   snapshots.
//! * [`covariance`]: model covariance assembly and the quadratic forms
//!   shared by every update rule.
//! * [`amv`]: the iterative AMV (maximum-likelihood) power estimator.
//! * [`samv`]: the SAMV-0/1/2 sparse update rules.
//! * [`sml`]: grid-free per-source angle refinement (SAMV-SML).
//! * [`baselines`]: periodogram, IAA, MUSIC and the low/high SNR
//!   approximations.
//! * [`harness`]: Monte Carlo sweeps, peak picking and the stochastic CRB.
//! * [`rd`]: single-snapshot range-Doppler imaging.
//! * [`io`]: configuration files and CSV persistence.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` deliberately rejects NaN too.

pub mod amv;
pub mod array;
pub mod baselines;
pub mod covariance;
pub mod error;
pub mod harness;
pub mod io;
pub mod rd;
pub mod samv;
pub mod selftest;
pub mod sml;

pub use error::{Error, Result};

/// Complex sample type used throughout.
pub type C64 = nalgebra::Complex<f64>;
pub type CMatrix = nalgebra::DMatrix<C64>;
pub type CVector = nalgebra::DVector<C64>;
