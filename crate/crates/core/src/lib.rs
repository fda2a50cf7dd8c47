//! Infrared reflectance estimation for fingertip proximity sensing.
//!
//! The crate is organised around the power-law sensor model
//! `I = alpha * (d + d0)^-n` and everything needed to exercise it:
//!
//! - [`sensor`]: forward model and exact distance inversion
//! - [`calibration`]: reflectance (and joint intrinsics) fitting from distance sweeps
//! - [`dataset`]: manifest and CSV interchange formats
//! - [`head`]: small regression head over frozen embeddings, fusion modes and
//!   the categorical-expectation baseline
//! - [`prompt`]: few-shot prompt construction, markdown reply parsing and the
//!   completion-client contract
//! - [`grasp`]: simulated fingertip-advance grasping protocol
//! - [`metrics`]: error tables, grasp summaries and pairwise significance tests
//! - [`demo`]: fully synthetic data generator used by tests and the CLI
//!
//! Data-parallel loops (Monte Carlo repeats, grasp trials, finite-difference
//! checks, batch inference) run on rayon when the `parallel` feature is on and
//! fall back to plain iterators otherwise. See [`par::Exec`].

// Negated float comparisons below are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod dataset;
pub mod demo;
pub mod error;
pub mod grasp;
pub mod head;
pub mod metrics;
pub mod par;
pub mod prompt;
pub mod sensor;

pub use error::{Error, Result};
pub use sensor::{CurrentReading, Reflectance, SensorIntrinsics};

/// Crate version, recorded in run metadata.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
