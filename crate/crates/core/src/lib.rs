//! Blind phase calibration of uniform linear arrays.
//!
//! The library covers the full pipeline: simulated array snapshots with
//! injected per-element phase errors, Toeplitz covariance reconstruction
//! through the maximum-entropy spectrum and the Gohberg-Semencul formula,
//! random-matrix-theory eigenvalue correction, a sphericity likelihood-ratio
//! structure test, benchmark ML and Cramer-Rao analyses against a known
//! covariance, covariance-free super-diagonal and element-ratio estimators,
//! and invisible-sector power minimization for oversampled apertures.
//! A seeded Monte Carlo harness and a CLI reproduce the reference tables
//! and histogram data deterministically.

pub mod calib;
pub mod config;
pub mod error;
pub mod harness;
pub mod numerics;
pub mod oversampled;
pub mod rmt;
pub mod scenario;
pub mod sphericity;
pub mod toeplitz;

pub use error::{Error, Result};
