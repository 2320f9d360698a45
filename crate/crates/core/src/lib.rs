//! Frequency-domain identification of nonlinear systems from periodic
//! multisine experiments.
//!
//! The crate is organised along the measurement chain:
//!
//! - [`signal`]: random-phase multisine design, steady-state prefix and
//!   zero-order-hold upsampling to the acquisition rate.
//! - [`record`]: two-channel measurement records (load `u`, indentation `y`),
//!   CSV + JSON sidecar I/O, period segmentation, mean removal and set-point
//!   drift.
//! - [`spectral`]: one-sided `1/N`-scaled DFT of periods and period averaging.
//! - [`frf`]: per-period spectral division and the Local Polynomial Method.
//! - [`bla`]: best linear approximation with noise / nonlinear variance
//!   decomposition over periods and phase realizations.
//! - [`synth`]: LTI, Wiener and Hammerstein plants used as ground truth.
//! - [`pipeline`] and [`report`]: the end-to-end analysis and its plot-ready
//!   exports.
//!
//! Data-parallel loops (periods, bins, Monte-Carlo repetitions) run on rayon
//! when the `parallel` feature is enabled (default) and fall back to plain
//! iterators otherwise; see [`exec`].

pub mod bla;
pub mod error;
pub mod exec;
pub mod frf;
mod linalg;
pub mod pipeline;
pub mod record;
pub mod report;
pub mod signal;
pub mod spectral;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
pub use num_complex::Complex64;
