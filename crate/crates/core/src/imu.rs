//! IMU bias calibration, batch averaging, double integration and attitude.
//!
//! Accelerometer readings stay in g from the log through calibration and
//! batching (the calibration offsets are in g, with gravity folded into the
//! z offset). They are converted to m/s^2 when a batch is handed to the
//! integrator via [`ImuSample::to_kinematic`].

use crate::angle::wrap;
use nalgebra::Vector3;
use thiserror::Error;

pub const STANDARD_GRAVITY: f64 = 9.806_65;
pub const MIN_CALIBRATION_SAMPLES: usize = 100;

/// Table of offsets measured on the reference rig (accelerometer in g,
/// gyroscope in rad/s).
pub const REFERENCE_ACCEL_BIAS: [f64; 3] = [-0.000817, 0.158242, 0.987314];
pub const REFERENCE_GYRO_BIAS: [f64; 3] = [-0.216527, -0.052387, -0.183611];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImuError {
    #[error("calibration needs at least {need} samples, got {got}")]
    InsufficientSamples { got: usize, need: usize },
    #[error("non-finite IMU value at t = {0}")]
    NonFinite(f64),
    #[error("empty sample window")]
    EmptyWindow,
    #[error("timestamps not increasing: {prev} then {next}")]
    Timestamp { prev: f64, next: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    /// Specific force in g.
    pub accel: Vector3<f64>,
    /// Angular rate in rad/s.
    pub gyro: Vector3<f64>,
}

impl ImuSample {
    pub fn new(t: f64, accel: Vector3<f64>, gyro: Vector3<f64>) -> Result<Self, ImuError> {
        let s = Self { t, accel, gyro };
        s.check()?;
        Ok(s)
    }

    pub fn check(&self) -> Result<(), ImuError> {
        if self.t.is_finite()
            && self.accel.iter().all(|v| v.is_finite())
            && self.gyro.iter().all(|v| v.is_finite())
        {
            Ok(())
        } else {
            Err(ImuError::NonFinite(self.t))
        }
    }

    pub fn to_kinematic(&self) -> KinematicSample {
        KinematicSample {
            t: self.t,
            accel: self.accel * STANDARD_GRAVITY,
        }
    }
}

/// Acceleration in m/s^2 stamped with the end of the interval it covers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicSample {
    pub t: f64,
    pub accel: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasCalibration {
    pub accel_offset: Vector3<f64>,
    pub gyro_offset: Vector3<f64>,
    pub sample_count: usize,
}

impl BiasCalibration {
    /// No correction at all; useful for logs that are already bias-free.
    pub fn zero() -> Self {
        Self {
            accel_offset: Vector3::zeros(),
            gyro_offset: Vector3::zeros(),
            sample_count: 1,
        }
    }
}

/// Two-pass mean: the correction term makes a constant stream reproduce its
/// value exactly, which a plain `sum / n` does not.
fn mean_of(values: impl Iterator<Item = Vector3<f64>> + Clone, n: usize) -> Vector3<f64> {
    let nf = n as f64;
    let rough = values.clone().fold(Vector3::zeros(), |acc, v| acc + v) / nf;
    let correction = values.fold(Vector3::zeros(), |acc, v| acc + (v - rough)) / nf;
    rough + correction
}

/// Bias offsets as the per-axis mean of a stationary capture.
pub fn calibrate(samples: &[ImuSample]) -> Result<BiasCalibration, ImuError> {
    if samples.len() < MIN_CALIBRATION_SAMPLES {
        return Err(ImuError::InsufficientSamples {
            got: samples.len(),
            need: MIN_CALIBRATION_SAMPLES,
        });
    }
    for s in samples {
        s.check()?;
    }
    Ok(BiasCalibration {
        accel_offset: mean_of(samples.iter().map(|s| s.accel), samples.len()),
        gyro_offset: mean_of(samples.iter().map(|s| s.gyro), samples.len()),
        sample_count: samples.len(),
    })
}

/// Bias-subtracted mean of a window, stamped with the window's last time.
pub fn batch_average(window: &[ImuSample], cal: &BiasCalibration) -> Result<ImuSample, ImuError> {
    let last = window.last().ok_or(ImuError::EmptyWindow)?;
    let n = window.len();
    Ok(ImuSample {
        t: last.t,
        accel: mean_of(window.iter().map(|s| s.accel), n) - cal.accel_offset,
        gyro: mean_of(window.iter().map(|s| s.gyro), n) - cal.gyro_offset,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IntegrationRule {
    /// `v += a dt; p += v dt` with the updated velocity.
    #[default]
    Rectangular,
    Trapezoidal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuPositionDelta {
    pub delta: Vector3<f64>,
    /// Length of the integrated interval in seconds.
    pub window: f64,
    /// Velocity at the end of the window.
    pub velocity: Vector3<f64>,
}

impl ImuPositionDelta {
    pub fn zero() -> Self {
        Self {
            delta: Vector3::zeros(),
            window: 0.0,
            velocity: Vector3::zeros(),
        }
    }
}

/// Double-integrates accelerations starting at `start_t` with velocity `v0`.
///
/// Each sample covers the interval since the previous timestamp (or
/// `start_t` for the first one).
pub fn integrate_position(
    start_t: f64,
    samples: &[KinematicSample],
    v0: Vector3<f64>,
    rule: IntegrationRule,
) -> Result<ImuPositionDelta, ImuError> {
    let mut prev_t = start_t;
    let mut v = v0;
    let mut p = Vector3::zeros();
    let mut prev_a: Option<Vector3<f64>> = None;
    for s in samples {
        if !(s.t.is_finite() && s.accel.iter().all(|a| a.is_finite())) {
            return Err(ImuError::NonFinite(s.t));
        }
        let dt = s.t - prev_t;
        if dt <= 0.0 {
            return Err(ImuError::Timestamp { prev: prev_t, next: s.t });
        }
        match rule {
            IntegrationRule::Rectangular => {
                v += s.accel * dt;
                p += v * dt;
            }
            IntegrationRule::Trapezoidal => {
                let a_prev = prev_a.unwrap_or(s.accel);
                let v_next = v + (a_prev + s.accel) * (0.5 * dt);
                p += (v + v_next) * (0.5 * dt);
                v = v_next;
            }
        }
        prev_a = Some(s.accel);
        prev_t = s.t;
    }
    Ok(ImuPositionDelta {
        delta: p,
        window: prev_t - start_t,
        velocity: v,
    })
}

/// Orientation as produced by the attitude filter. Angles wrapped to
/// `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttitudeMeasurement {
    pub t: f64,
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl AttitudeMeasurement {
    pub fn new(t: f64, yaw: f64, pitch: f64, roll: f64) -> Self {
        Self {
            t,
            yaw: wrap(yaw),
            pitch: wrap(pitch),
            roll: wrap(roll),
        }
    }

    pub fn level(t: f64) -> Self {
        Self::new(t, 0.0, 0.0, 0.0)
    }

    /// Rotation state ordering `(R_x, R_y, R_z) = (roll, pitch, yaw)`.
    pub fn as_state_vector(&self) -> Vector3<f64> {
        Vector3::new(self.roll, self.pitch, self.yaw)
    }
}

/// Gyro integration: each angle advances by its body rate times dt.
pub fn attitude_step(sample: &ImuSample, prev: &AttitudeMeasurement) -> Result<AttitudeMeasurement, ImuError> {
    sample.check()?;
    let dt = sample.t - prev.t;
    if dt < 0.0 {
        return Err(ImuError::Timestamp { prev: prev.t, next: sample.t });
    }
    Ok(AttitudeMeasurement::new(
        sample.t,
        prev.yaw + sample.gyro.z * dt,
        prev.pitch + sample.gyro.y * dt,
        prev.roll + sample.gyro.x * dt,
    ))
}

/// Source of orientation measurements fed from calibrated IMU batches.
///
/// The fusion code only sees [`AttitudeMeasurement`]s, so a full AHRS can
/// replace [`GyroIntegrator`] without touching the filter.
pub trait AttitudeSource: Send {
    fn update(&mut self, sample: &ImuSample) -> Result<AttitudeMeasurement, ImuError>;
    fn current(&self) -> AttitudeMeasurement;
    /// Overrides the internal state, e.g. from an external attitude log.
    fn reset(&mut self, attitude: AttitudeMeasurement);
}

#[derive(Debug, Clone)]
pub struct GyroIntegrator {
    state: AttitudeMeasurement,
}

impl GyroIntegrator {
    pub fn new(initial: AttitudeMeasurement) -> Self {
        Self { state: initial }
    }
}

impl AttitudeSource for GyroIntegrator {
    fn update(&mut self, sample: &ImuSample) -> Result<AttitudeMeasurement, ImuError> {
        self.state = attitude_step(sample, &self.state)?;
        Ok(self.state)
    }

    fn current(&self) -> AttitudeMeasurement {
        self.state
    }

    fn reset(&mut self, attitude: AttitudeMeasurement) {
        self.state = attitude;
    }
}

/// Collects raw samples into fixed-size windows and emits their
/// bias-corrected averages.
#[derive(Debug, Clone)]
pub struct ImuBatcher {
    size: usize,
    calibration: BiasCalibration,
    pending: Vec<ImuSample>,
    last_t: Option<f64>,
}

impl ImuBatcher {
    pub fn new(size: usize, calibration: BiasCalibration) -> Self {
        let size = size.max(1);
        Self {
            size,
            calibration,
            pending: Vec::with_capacity(size),
            last_t: None,
        }
    }

    pub fn calibration(&self) -> &BiasCalibration {
        &self.calibration
    }

    pub fn push(&mut self, sample: ImuSample) -> Result<Option<ImuSample>, ImuError> {
        sample.check()?;
        if let Some(prev) = self.last_t {
            if sample.t <= prev {
                return Err(ImuError::Timestamp { prev, next: sample.t });
            }
        }
        self.last_t = Some(sample.t);
        self.pending.push(sample);
        if self.pending.len() < self.size {
            return Ok(None);
        }
        let out = batch_average(&self.pending, &self.calibration)?;
        self.pending.clear();
        Ok(Some(out))
    }
}
