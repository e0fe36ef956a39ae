//! Ground-truth trajectories and synthetic multi-rate sensor streams.
//!
//! Truth is a planar unicycle: piecewise-constant forward speed and yaw
//! rate, integrated in closed form. Sensors sample it at their own rates:
//! GPS fixes go through geodetic coordinates and an NMEA sentence, IMU
//! accelerations come from finite-differencing the truth velocity, and
//! vision deltas are the truth displacement between keyframes.

use crate::angle::wrap;
use crate::geodesy::nmea::{format_gga, parse_nmea};
use crate::geodesy::{EllipsoidConstants, GeodesyError, GeodeticPosition, LocalFrame};
use crate::imu::{AttitudeMeasurement, ImuSample, REFERENCE_ACCEL_BIAS, REFERENCE_GYRO_BIAS, STANDARD_GRAVITY};
use crate::vision::VisionDelta;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

pub const DEFAULT_MAX_DURATION: f64 = 3600.0;
pub const DEFAULT_TRUTH_RATE: f64 = 100.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("segment {index}: {reason}")]
    Segment { index: usize, reason: String },
    #[error("trajectory lasts {total} s, limit is {max} s")]
    TooLong { total: f64, max: f64 },
    #[error("trajectory has no segments")]
    Empty,
    #[error("noise spec: {0}")]
    Noise(String),
    #[error("unknown regime {0:?}")]
    UnknownRegime(String),
    #[error(transparent)]
    Geodesy(#[from] GeodesyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Stationary,
    Straight,
    Turn,
    /// A full circle over the segment's duration.
    Loop,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub duration: f64,
    /// Forward speed in m/s.
    pub speed: f64,
    /// Yaw rate in rad/s.
    pub yaw_rate: f64,
    pub profile: Profile,
}

impl Segment {
    pub fn stationary(duration: f64) -> Self {
        Self { duration, speed: 0.0, yaw_rate: 0.0, profile: Profile::Stationary }
    }

    pub fn straight(duration: f64, speed: f64) -> Self {
        Self { duration, speed, yaw_rate: 0.0, profile: Profile::Straight }
    }

    pub fn turn(duration: f64, speed: f64, yaw_rate: f64) -> Self {
        Self { duration, speed, yaw_rate, profile: Profile::Turn }
    }

    pub fn full_loop(duration: f64, speed: f64) -> Self {
        Self { duration, speed, yaw_rate: 2.0 * PI / duration, profile: Profile::Loop }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySpec {
    pub segments: Vec<Segment>,
    pub seed: u64,
    pub max_duration: f64,
}

impl TrajectorySpec {
    pub fn new(segments: Vec<Segment>, seed: u64) -> Self {
        Self { segments, seed, max_duration: DEFAULT_MAX_DURATION }
    }

    pub fn duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.segments.is_empty() {
            return Err(SimError::Empty);
        }
        for (index, s) in self.segments.iter().enumerate() {
            let fail = |reason: &str| Err(SimError::Segment { index, reason: reason.into() });
            if !(s.duration > 0.0 && s.duration.is_finite()) {
                return fail("duration must be positive");
            }
            if !(s.speed.is_finite() && s.yaw_rate.is_finite()) {
                return fail("non-finite speed or yaw rate");
            }
            match s.profile {
                Profile::Stationary if s.speed != 0.0 || s.yaw_rate != 0.0 => {
                    return fail("stationary segment must have zero speed and yaw rate")
                }
                Profile::Straight if s.yaw_rate != 0.0 => return fail("straight segment must not turn"),
                _ => {}
            }
        }
        let total = self.duration();
        if total > self.max_duration {
            return Err(SimError::TooLong { total, max: self.max_duration });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthSample {
    pub t: f64,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    /// `(roll, pitch, yaw)` with yaw wrapped.
    pub rotation: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct SegmentStart {
    t: f64,
    position: Vector3<f64>,
    heading: f64,
}

/// Sampled truth plus the closed-form trajectory it was sampled from.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub rate_hz: f64,
    pub samples: Vec<TruthSample>,
    segments: Vec<Segment>,
    starts: Vec<SegmentStart>,
    duration: f64,
}

impl GroundTruth {
    /// Truth known only through samples, e.g. read back from a bundle.
    /// Queries between samples interpolate linearly.
    pub fn from_samples(rate_hz: f64, samples: Vec<TruthSample>) -> Self {
        let duration = samples.last().map_or(0.0, |s| s.t);
        Self {
            rate_hz,
            samples,
            segments: Vec::new(),
            starts: Vec::new(),
            duration,
        }
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    fn interpolate(&self, t: f64) -> TruthSample {
        let s = &self.samples;
        let k = s.partition_point(|x| x.t <= t);
        if k == 0 {
            return s[0];
        }
        if k == s.len() {
            return s[k - 1];
        }
        let (a, b) = (&s[k - 1], &s[k]);
        let w = (t - a.t) / (b.t - a.t);
        TruthSample {
            t,
            position: a.position.lerp(&b.position, w),
            velocity: a.velocity.lerp(&b.velocity, w),
            rotation: a.rotation + (b.rotation - a.rotation).map(wrap) * w,
        }
    }

    /// Heading (unwrapped) at `t`, clamped to the trajectory's span.
    pub fn heading_at(&self, t: f64) -> f64 {
        if self.segments.is_empty() {
            return self.interpolate(t).rotation.z;
        }
        let (seg, start, tau) = self.locate(t);
        start.heading + seg.yaw_rate * tau
    }

    pub fn position_at(&self, t: f64) -> Vector3<f64> {
        if self.segments.is_empty() {
            return self.interpolate(t).position;
        }
        let (seg, start, tau) = self.locate(t);
        start.position + displacement(seg, start.heading, tau)
    }

    pub fn velocity_at(&self, t: f64) -> Vector3<f64> {
        if self.segments.is_empty() {
            return self.interpolate(t).velocity;
        }
        let (seg, start, tau) = self.locate(t);
        let h = start.heading + seg.yaw_rate * tau;
        Vector3::new(seg.speed * h.cos(), seg.speed * h.sin(), 0.0)
    }

    pub fn sample_at(&self, t: f64) -> TruthSample {
        TruthSample {
            t,
            position: self.position_at(t),
            velocity: self.velocity_at(t),
            rotation: Vector3::new(0.0, 0.0, wrap(self.heading_at(t))),
        }
    }

    pub fn max_speed(&self) -> f64 {
        if self.segments.is_empty() {
            return self.samples.iter().map(|s| s.velocity.norm()).fold(0.0, f64::max);
        }
        self.segments.iter().map(|s| s.speed.abs()).fold(0.0, f64::max)
    }

    fn locate(&self, t: f64) -> (&Segment, &SegmentStart, f64) {
        let t = t.clamp(0.0, self.duration);
        let k = self.starts.iter().rposition(|s| s.t <= t).unwrap_or(0);
        let tau = (t - self.starts[k].t).min(self.segments[k].duration);
        (&self.segments[k], &self.starts[k], tau)
    }

}

fn displacement(seg: &Segment, heading0: f64, tau: f64) -> Vector3<f64> {
    let w = seg.yaw_rate;
    let v = seg.speed;
    if w.abs() < 1e-12 {
        Vector3::new(v * tau * heading0.cos(), v * tau * heading0.sin(), 0.0)
    } else {
        let h1 = heading0 + w * tau;
        Vector3::new(v / w * (h1.sin() - heading0.sin()), v / w * (heading0.cos() - h1.cos()), 0.0)
    }
}

pub fn generate_truth(spec: &TrajectorySpec) -> Result<GroundTruth, SimError> {
    generate_truth_at(spec, DEFAULT_TRUTH_RATE)
}

pub fn generate_truth_at(spec: &TrajectorySpec, rate_hz: f64) -> Result<GroundTruth, SimError> {
    spec.validate()?;
    let mut starts = Vec::with_capacity(spec.segments.len());
    let mut t = 0.0;
    let mut position = Vector3::zeros();
    let mut heading = 0.0;
    for seg in &spec.segments {
        starts.push(SegmentStart { t, position, heading });
        position += displacement(seg, heading, seg.duration);
        heading += seg.yaw_rate * seg.duration;
        t += seg.duration;
    }
    let mut truth = GroundTruth {
        rate_hz,
        samples: Vec::new(),
        segments: spec.segments.clone(),
        starts,
        duration: t,
    };
    let n = (truth.duration * rate_hz + 1e-9).floor() as usize;
    truth.samples = (0..=n).map(|k| truth.sample_at(k as f64 / rate_hz)).collect();
    Ok(truth)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorNoiseSpec {
    /// Per-axis GPS position noise, meters.
    pub gps_sigma: f64,
    /// Accelerometer white noise, g.
    pub imu_accel_sigma: f64,
    /// Gyroscope white noise, rad/s.
    pub imu_gyro_sigma: f64,
    pub imu_accel_bias: Vector3<f64>,
    pub imu_gyro_bias: Vector3<f64>,
    /// Per-axis noise on each keyframe's rotation delta, radians.
    pub vision_rot_sigma: f64,
    /// Per-axis noise on each keyframe's translation delta, meters.
    pub vision_trans_sigma: f64,
    pub gps_rate: f64,
    pub imu_rate: f64,
    pub vision_rate: f64,
    /// Length of the stationary IMU capture used for bias calibration.
    pub calibration_samples: usize,
}

impl Default for SensorNoiseSpec {
    fn default() -> Self {
        Self {
            gps_sigma: 2.5,
            imu_accel_sigma: 0.003,
            imu_gyro_sigma: 0.003,
            imu_accel_bias: Vector3::from(REFERENCE_ACCEL_BIAS),
            imu_gyro_bias: Vector3::from(REFERENCE_GYRO_BIAS),
            vision_rot_sigma: 0.002,
            vision_trans_sigma: 0.02,
            gps_rate: 1.0,
            imu_rate: 250.0,
            vision_rate: 4.0,
            calibration_samples: 5000,
        }
    }
}

impl SensorNoiseSpec {
    /// Every sigma zero; biases kept.
    pub fn noiseless() -> Self {
        Self {
            gps_sigma: 0.0,
            imu_accel_sigma: 0.0,
            imu_gyro_sigma: 0.0,
            vision_rot_sigma: 0.0,
            vision_trans_sigma: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let sigmas = [
            self.gps_sigma,
            self.imu_accel_sigma,
            self.imu_gyro_sigma,
            self.vision_rot_sigma,
            self.vision_trans_sigma,
        ];
        if !sigmas.iter().all(|s| s.is_finite() && *s >= 0.0) {
            return Err(SimError::Noise("sigmas must be finite and non-negative".into()));
        }
        if ![self.gps_rate, self.imu_rate, self.vision_rate].iter().all(|r| r.is_finite() && *r > 0.0) {
            return Err(SimError::Noise("rates must be positive".into()));
        }
        if self.calibration_samples < crate::imu::MIN_CALIBRATION_SAMPLES {
            return Err(SimError::Noise("calibration capture too short".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpsFixEvent {
    pub t: f64,
    pub sentence: String,
    pub position: GeodeticPosition,
    pub satellites: u8,
}

/// Everything the sensors produced for one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorLog {
    pub calibration: Vec<ImuSample>,
    pub gps: Vec<GpsFixEvent>,
    pub imu: Vec<ImuSample>,
    pub vision: Vec<VisionDelta>,
    /// Orientation from an external attitude filter, if one was logged.
    /// Empty for synthetic runs, which integrate the gyro instead.
    pub attitude: Vec<AttitudeMeasurement>,
}

/// Site of the synthetic runs and the UTC time-of-day of `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiteConfig {
    pub reference: GeodeticPosition,
    pub ellipsoid: EllipsoidConstants,
    pub start_time_of_day: f64,
}

impl Default for SiteConfig {
    fn default() -> Self {
        Self {
            reference: GeodeticPosition {
                lat: 37.9395f64.to_radians(),
                lon: 27.3408f64.to_radians(),
                alt: 20.0,
            },
            ellipsoid: EllipsoidConstants::WGS84,
            start_time_of_day: 10.0 * 3600.0,
        }
    }
}

fn normal(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma).expect("validated sigma")
}

fn noise3(rng: &mut ChaCha8Rng, d: &Normal<f64>) -> Vector3<f64> {
    Vector3::new(d.sample(rng), d.sample(rng), d.sample(rng))
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn sample_times(duration: f64, rate: f64, include_zero: bool) -> impl Iterator<Item = f64> {
    let n = (duration * rate + 1e-9).floor() as usize;
    let first = if include_zero { 0 } else { 1 };
    (first..=n).map(move |k| k as f64 / rate)
}

pub fn synthesize_sensors(
    truth: &GroundTruth,
    noise: &SensorNoiseSpec,
    site: &SiteConfig,
    seed: u64,
) -> Result<SensorLog, SimError> {
    noise.validate()?;
    let frame = LocalFrame::new(site.reference, site.ellipsoid)?;

    let mut rng = stream_rng(seed, 1);
    let d = normal(noise.gps_sigma);
    let mut gps = Vec::new();
    for t in sample_times(truth.duration(), noise.gps_rate, true) {
        let local = truth.position_at(t) + noise3(&mut rng, &d);
        let satellites: u8 = rng.random_range(6..=11);
        let geo = frame.local_to_geodetic(&local)?;
        let sentence = format_gga(site.start_time_of_day + t, &geo, satellites);
        let fix = parse_nmea(&sentence)
            .ok()
            .and_then(|s| s.gga)
            .expect("formatted GGA parses");
        gps.push(GpsFixEvent { t, sentence, position: fix.position, satellites });
    }

    let mut rng = stream_rng(seed, 2);
    let da = normal(noise.imu_accel_sigma);
    let dg = normal(noise.imu_gyro_sigma);
    let dt = 1.0 / noise.imu_rate;
    let calibration = (0..noise.calibration_samples)
        .map(|k| ImuSample {
            t: (k as f64 - noise.calibration_samples as f64) * dt,
            accel: noise.imu_accel_bias + noise3(&mut rng, &da),
            gyro: noise.imu_gyro_bias + noise3(&mut rng, &dg),
        })
        .collect();

    let mut rng = stream_rng(seed, 3);
    let mut imu = Vec::new();
    let mut prev_t = 0.0;
    let mut prev_v = truth.velocity_at(0.0);
    let mut prev_h = truth.heading_at(0.0);
    for t in sample_times(truth.duration(), noise.imu_rate, false) {
        let v = truth.velocity_at(t);
        let h = truth.heading_at(t);
        let step = t - prev_t;
        let accel = (v - prev_v) / step;
        let rate = Vector3::new(0.0, 0.0, (h - prev_h) / step);
        imu.push(ImuSample {
            t,
            accel: accel / STANDARD_GRAVITY + noise.imu_accel_bias + noise3(&mut rng, &da),
            gyro: rate + noise.imu_gyro_bias + noise3(&mut rng, &dg),
        });
        prev_t = t;
        prev_v = v;
        prev_h = h;
    }

    let mut rng = stream_rng(seed, 4);
    let dr = normal(noise.vision_rot_sigma);
    let dtr = normal(noise.vision_trans_sigma);
    let mut vision = Vec::new();
    let mut prev_t = 0.0;
    for t in sample_times(truth.duration(), noise.vision_rate, false) {
        let trans = truth.position_at(t) - truth.position_at(prev_t) + noise3(&mut rng, &dtr);
        let rot = Vector3::new(0.0, 0.0, truth.heading_at(t) - truth.heading_at(prev_t)) + noise3(&mut rng, &dr);
        vision.push(VisionDelta::new(t, rot, trans).expect("finite synthetic delta"));
        prev_t = t;
    }

    Ok(SensorLog { calibration, gps, imu, vision, attitude: Vec::new() })
}

/// Truth, sensor log and the settings that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub seed: u64,
    pub site: SiteConfig,
    pub noise: SensorNoiseSpec,
    pub truth: GroundTruth,
    pub log: SensorLog,
    /// Recorded sentences that failed to parse and were left out.
    pub skipped_sentences: usize,
}

impl Dataset {
    pub fn generate(name: &str, spec: &TrajectorySpec, noise: &SensorNoiseSpec, site: &SiteConfig) -> Result<Self, SimError> {
        let truth = generate_truth(spec)?;
        let log = synthesize_sensors(&truth, noise, site, spec.seed)?;
        Ok(Self {
            name: name.to_string(),
            seed: spec.seed,
            site: *site,
            noise: noise.clone(),
            truth,
            log,
            skipped_sentences: 0,
        })
    }

    pub fn regime(regime: Regime, seed: u64, noise: &SensorNoiseSpec) -> Result<Self, SimError> {
        Self::generate(regime.name(), &regime.spec(seed), noise, &SiteConfig::default())
    }

    /// Drops every event after `t_end`.
    pub fn truncate(&mut self, t_end: f64) {
        self.log.gps.retain(|e| e.t <= t_end);
        self.log.imu.retain(|e| e.t <= t_end);
        self.log.vision.retain(|e| e.t <= t_end);
        self.log.attitude.retain(|e| e.t <= t_end);
        self.truth.samples.retain(|s| s.t <= t_end);
    }

    /// Truth position at `t` in the local frame anchored at `origin`.
    pub fn truth_in_frame(&self, origin: &GeodeticPosition, t: f64) -> Result<Vector3<f64>, SimError> {
        let site = LocalFrame::new(self.site.reference, self.site.ellipsoid)?;
        let target = LocalFrame::new(*origin, self.site.ellipsoid)?;
        let ecef = site.local_to_ecef(&self.truth.position_at(t));
        Ok(target.ecef_to_local(&ecef))
    }

    pub fn event_count(&self) -> usize {
        self.log.gps.len() + self.log.imu.len() + self.log.vision.len() + self.log.attitude.len()
    }
}

/// The bundled scenarios. Durations give 3388, 1735, 182, 1406 and 3515
/// fusion ticks at 4 Hz.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    LongWalk,
    MediumWalk,
    Stationary,
    Turns,
    Loop,
}

impl Regime {
    pub const ALL: [Regime; 5] = [Regime::LongWalk, Regime::MediumWalk, Regime::Stationary, Regime::Turns, Regime::Loop];

    pub fn name(self) -> &'static str {
        match self {
            Regime::LongWalk => "long_walk",
            Regime::MediumWalk => "medium_walk",
            Regime::Stationary => "stationary",
            Regime::Turns => "turns",
            Regime::Loop => "loop",
        }
    }

    pub fn segments(self) -> Vec<Segment> {
        use Segment as S;
        let q = PI / 2.0;
        match self {
            Regime::LongWalk => vec![
                S::stationary(10.0),
                S::straight(120.0, 1.4),
                S::turn(15.0, 1.2, q / 15.0),
                S::straight(90.0, 1.4),
                S::stationary(30.0),
                S::straight(100.0, 1.2),
                S::turn(20.0, 1.0, -q / 20.0),
                S::straight(150.0, 1.5),
                S::stationary(25.0),
                S::turn(10.0, 0.0, PI / 10.0),
                S::straight(120.0, 1.3),
                S::turn(12.0, 1.2, q / 12.0),
                S::straight(145.0, 1.4),
            ],
            Regime::MediumWalk => vec![
                S::stationary(10.0),
                S::straight(150.0, 1.3),
                S::turn(12.0, 1.2, q / 12.0),
                S::straight(150.0, 1.3),
                S::turn(12.0, 1.2, -q / 12.0),
                S::straight(99.75, 1.3),
            ],
            Regime::Stationary => vec![S::stationary(45.5)],
            Regime::Turns => vec![
                S::stationary(5.0),
                S::straight(40.0, 1.3),
                S::turn(10.0, 1.2, q / 10.0),
                S::straight(40.0, 1.3),
                S::turn(10.0, 1.2, -q / 10.0),
                S::straight(30.0, 1.3),
                S::turn(16.0, 1.0, PI / 16.0),
                S::straight(60.0, 1.3),
                S::turn(8.0, 1.0, q / 8.0),
                S::straight(40.0, 1.3),
                S::turn(10.0, 1.2, -q / 10.0),
                S::straight(82.5, 1.3),
            ],
            Regime::Loop => {
                // Four identical sides close the path by symmetry.
                let mut s = vec![S::stationary(10.0)];
                for _ in 0..4 {
                    s.push(S::straight(205.0, 1.3));
                    s.push(S::turn(10.0, 1.3, q / 10.0));
                }
                s.push(S::stationary(8.75));
                s
            }
        }
    }

    pub fn spec(self, seed: u64) -> TrajectorySpec {
        TrajectorySpec::new(self.segments(), seed)
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Regime::ALL
            .into_iter()
            .find(|r| r.name() == s.trim())
            .ok_or_else(|| SimError::UnknownRegime(s.to_string()))
    }
}
