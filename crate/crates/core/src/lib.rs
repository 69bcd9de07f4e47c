//! Sparse-sensor human motion reconstruction.
//!
//! Four wearable IMUs (wrists and insoles) plus plantar pressure are calibrated
//! into a common z-up frame, turned into a per-frame [`insole::SensorObservation`],
//! lifted to a kinematic estimate by a staged recurrent estimator ([`kinnet`]),
//! compared against a simulated humanoid ([`statediff`]) and tracked in a
//! torque-driven physics model ([`dynamics`]). [`metrics`] scores the result.
//!
//! Data-parallel loops (segments, streams, Monte Carlo batches, environments)
//! go through [`par`], which uses rayon when the `parallel` feature is on and
//! falls back to plain iteration otherwise.

pub mod calib;
pub mod dynamics;
pub mod error;
pub mod fixture;
pub mod insole;
pub mod io;
pub mod kinnet;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod rotmath;
pub mod skeleton;
pub mod statediff;

pub use error::{GripError, Result};
pub use rotmath::{Rot6D, Rotation, Vec3};

/// Sampling rate shared by every stream.
pub const FRAME_RATE_HZ: f64 = 100.0;
/// Seconds per frame.
pub const FRAME_DT: f64 = 0.01;
