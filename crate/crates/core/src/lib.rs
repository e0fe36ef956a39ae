//! Camera, GPS and IMU pose fusion in a 12-state Kalman filter whose
//! prediction model is picked every step by a fuzzy rule-based controller.
//!
//! The crate is split along the data path:
//!
//! - [`geodesy`]: NMEA ingestion and geodetic to ECEF/local conversion.
//! - [`imu`]: bias calibration, batch averaging, double integration and
//!   the pluggable attitude source.
//! - [`vision`]: the two-view transformation matrix.
//! - [`fusion`]: the Kalman filter and the composite position measurement.
//! - [`famm`]: fuzzification, the 81-rule base and motion-model selection.
//! - [`sim`]: ground-truth trajectories and multi-rate sensor synthesis.
//! - [`pipeline`]: producer/consumer replay of sensor streams.
//! - [`config`], [`bundle`] and [`metrics`]: run configuration, on-disk
//!   formats and evaluation summaries.

pub mod angle;
pub mod bundle;
pub mod config;
pub mod famm;
pub mod fusion;
pub mod geodesy;
pub mod imu;
pub mod metrics;
pub mod pipeline;
pub mod sim;
pub mod vision;

pub use nalgebra::Vector3;
