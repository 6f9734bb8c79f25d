//! Desk-scale engine for time-of-flight tomography of single-particle motional
//! states in an optical tweezer.
//!
//! The crate is organized as a pipeline:
//!
//! - [`fock`] — truncated-Fock-basis state algebra: oscillator scales,
//!   density matrices, quadrature overlaps, displacement/squeeze operators,
//!   Wigner functions and state metrics.
//! - [`dynamics`] — harmonic/anharmonic Hamiltonians, time evolution, and
//!   quadrature / center-of-mass observables.
//! - [`imaging`] — the forward camera model (ballistic expansion,
//!   magnification, PSF blur, EMCCD noise) and its inverse steps (background
//!   subtraction, Richardson–Lucy deconvolution, vertical integration).
//! - [`mle`] — iterative maximum-likelihood density-matrix reconstruction
//!   from binned quadrature data.
//! - [`bootstrap`] — parametric bootstrap error bars and noise-bias sweeps.
//! - [`fitting`] — least-squares fits (damped sinusoid, ballistic expansion,
//!   gravity drop, anharmonic center-of-mass model, Fock-mixture images).
//! - [`pipeline`] — end-to-end scenario orchestration and the numerical
//!   robustness/noise studies.
//!
//! All quadrature math is dimensionless internally (u = p̃/p0); unit
//! conversions happen only at module boundaries.

pub mod bootstrap;
pub mod constants;
pub mod dynamics;
pub mod error;
pub mod fitting;
pub mod fock;
pub mod imaging;
mod ioutil;
pub mod linalg;
pub mod mle;
pub mod pipeline;
pub mod stats;

pub use error::{Error, Result};
