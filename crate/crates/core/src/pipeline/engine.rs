//! The fusion consumer: owns the filter and turns merged sensor events
//! into per-tick estimates.

use super::{PipelineError, SensorEvent, SensorPayload};
use crate::famm::{FammController, MembershipConfig, MotionModel, RuleBase};
use crate::fusion::{
    compose_position_measurement, filter_error, predict, update_with, Covariance, CovarianceForm, FilterState,
    Measurement, NoiseConfig, SourceMask,
};
use crate::geodesy::{EllipsoidConstants, GeodeticPosition, LocalFrame};
use crate::imu::{
    integrate_position, AttitudeMeasurement, AttitudeSource, BiasCalibration, GyroIntegrator, ImuBatcher, ImuPositionDelta,
    IntegrationRule, KinematicSample,
};
use crate::vision::{build_transform, TransformMatrix, VisionDelta};
use nalgebra::Vector3;
use std::sync::Arc;

/// Steps, covariance snapshots, final state and frame origin.
pub type EngineParts = (Vec<StepRecord>, Vec<(f64, Covariance)>, Option<FilterState>, Option<GeodeticPosition>);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ModelMode {
    /// Constant motion model `P1R1` at every step.
    Cmm,
    #[default]
    Famm,
}

/// Which sensors contribute to the position measurement. Orientation
/// always comes from the attitude source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SensorSet {
    GpsOnly,
    GpsImu,
    #[default]
    GpsImuVision,
}

impl SensorSet {
    pub fn name(self) -> &'static str {
        match self {
            SensorSet::GpsOnly => "gps",
            SensorSet::GpsImu => "gps_imu",
            SensorSet::GpsImuVision => "gps_imu_vision",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [SensorSet::GpsOnly, SensorSet::GpsImu, SensorSet::GpsImuVision]
            .into_iter()
            .find(|m| m.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    pub noise: NoiseConfig,
    /// Initial covariance.
    pub sigma0: Covariance,
    pub form: CovarianceForm,
    pub integration: IntegrationRule,
    pub sensors: SensorSet,
}

impl FilterConfig {
    /// Diagonal initial covariance from per-block standard deviations.
    pub fn diagonal_sigma0(pos: f64, vel: f64, rot: f64, ang: f64) -> Covariance {
        let mut s = Covariance::zeros();
        for i in 0..3 {
            s[(i, i)] = pos * pos;
            s[(3 + i, 3 + i)] = vel * vel;
            s[(6 + i, 6 + i)] = rot * rot;
            s[(9 + i, 9 + i)] = ang * ang;
        }
        s
    }
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            noise: NoiseConfig::default(),
            sigma0: Self::diagonal_sigma0(2.5, 0.1, 2f64.to_radians(), 0.05),
            form: CovarianceForm::Standard,
            integration: IntegrationRule::Rectangular,
            sensors: SensorSet::GpsImuVision,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FammConfig {
    pub mode: ModelMode,
    pub membership: MembershipConfig,
    pub rules: Arc<RuleBase>,
    /// Model used for the first prediction. Runs start at rest.
    pub initial: MotionModel,
}

impl Default for FammConfig {
    fn default() -> Self {
        Self {
            mode: ModelMode::Famm,
            membership: MembershipConfig::default(),
            rules: Arc::new(RuleBase::default()),
            initial: MotionModel::STATIONARY,
        }
    }
}

impl FammConfig {
    pub fn cmm() -> Self {
        Self {
            mode: ModelMode::Cmm,
            ..Self::default()
        }
    }
}

/// One fusion tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub position: Vector3<f64>,
    pub rotation: Vector3<f64>,
    pub y_p: f64,
    pub y_r: f64,
    /// Model used for this tick's prediction.
    pub model: MotionModel,
    pub trace: f64,
    pub sources: SourceMask,
    pub used_pseudo_inverse: bool,
}

struct HeldFix {
    t: f64,
    local: Vector3<f64>,
    velocity: Vector3<f64>,
}

pub struct FusionEngine {
    filter_cfg: FilterConfig,
    mode: ModelMode,
    controller: FammController,
    ellipsoid: EllipsoidConstants,
    frame: Option<LocalFrame>,
    state: Option<FilterState>,
    last_tick: f64,
    fix: Option<HeldFix>,
    batcher: ImuBatcher,
    attitude: Box<dyn AttitudeSource>,
    external_attitude: bool,
    imu_window: Vec<KinematicSample>,
    vision_rot: Vector3<f64>,
    vision_trans: Vector3<f64>,
    tick_on_gps: bool,
    steps: Vec<StepRecord>,
    snapshots: Vec<(f64, Covariance)>,
    snapshot_every: usize,
}

impl FusionEngine {
    pub fn new(
        calibration: BiasCalibration,
        imu_batch: usize,
        filter_cfg: FilterConfig,
        famm_cfg: FammConfig,
        ellipsoid: EllipsoidConstants,
    ) -> Self {
        let initial = match famm_cfg.mode {
            ModelMode::Cmm => MotionModel::CMM,
            ModelMode::Famm => famm_cfg.initial,
        };
        Self {
            mode: famm_cfg.mode,
            controller: FammController::new(famm_cfg.rules, famm_cfg.membership, initial),
            filter_cfg,
            ellipsoid,
            frame: None,
            state: None,
            last_tick: 0.0,
            fix: None,
            batcher: ImuBatcher::new(imu_batch, calibration),
            attitude: Box::new(GyroIntegrator::new(AttitudeMeasurement::level(0.0))),
            external_attitude: false,
            imu_window: Vec::new(),
            vision_rot: Vector3::zeros(),
            vision_trans: Vector3::zeros(),
            tick_on_gps: false,
            steps: Vec::new(),
            snapshots: Vec::new(),
            snapshot_every: 0,
        }
    }

    /// Replaces the default gyro integrator.
    pub fn with_attitude_source(mut self, source: Box<dyn AttitudeSource>) -> Self {
        self.attitude = source;
        self
    }

    /// Run predict/update on GPS fixes instead of vision keyframes, for
    /// logs without a vision stream.
    pub fn tick_on_gps(mut self, yes: bool) -> Self {
        self.tick_on_gps = yes;
        self
    }

    /// Keep a covariance copy every `n` ticks (0 keeps none).
    pub fn snapshot_every(mut self, n: usize) -> Self {
        self.snapshot_every = n;
        self
    }

    pub fn state(&self) -> Option<&FilterState> {
        self.state.as_ref()
    }

    pub fn frame_origin(&self) -> Option<GeodeticPosition> {
        self.frame.as_ref().map(|f| f.origin())
    }

    pub fn steps(&self) -> &[StepRecord] {
        &self.steps
    }

    pub fn into_parts(self) -> EngineParts {
        let origin = self.frame_origin();
        (self.steps, self.snapshots, self.state, origin)
    }

    pub fn handle(&mut self, event: &SensorEvent) -> Result<Option<StepRecord>, PipelineError> {
        match &event.payload {
            SensorPayload::GpsFix { position, .. } => {
                self.on_fix(event.t, position)?;
                if self.tick_on_gps {
                    return self.tick(event.t);
                }
                Ok(None)
            }
            SensorPayload::Imu(sample) => {
                if let Some(avg) = self.batcher.push(*sample)? {
                    if !self.external_attitude {
                        self.attitude.update(&avg)?;
                    }
                    if self.fix.as_ref().is_some_and(|f| avg.t > f.t) {
                        self.imu_window.push(avg.to_kinematic());
                    }
                }
                Ok(None)
            }
            SensorPayload::Attitude(a) => {
                self.external_attitude = true;
                self.attitude.reset(*a);
                Ok(None)
            }
            SensorPayload::Vision(delta) => {
                self.on_vision(delta);
                if self.tick_on_gps {
                    return Ok(None);
                }
                self.tick(event.t)
            }
        }
    }

    fn on_fix(&mut self, t: f64, position: &GeodeticPosition) -> Result<(), PipelineError> {
        if self.frame.is_none() {
            self.frame = Some(LocalFrame::new(*position, self.ellipsoid)?);
        }
        let local = self.frame.as_ref().expect("frame set above").geodetic_to_local(position)?;
        let velocity = self.state.as_ref().map_or(Vector3::zeros(), |s| s.velocity());
        self.fix = Some(HeldFix { t, local, velocity });
        self.imu_window.clear();
        self.vision_rot = Vector3::zeros();
        self.vision_trans = Vector3::zeros();
        if self.state.is_none() {
            let rotation = self.attitude.current().as_state_vector();
            self.state = Some(FilterState::from_pose(local, rotation, self.filter_cfg.sigma0));
            self.last_tick = t;
        }
        Ok(())
    }

    fn on_vision(&mut self, delta: &VisionDelta) {
        if self.fix.as_ref().is_some_and(|f| delta.t > f.t) {
            self.vision_rot += delta.rot;
            self.vision_trans += delta.trans;
        }
    }

    /// Motion since the held fix, as a transform acting about the fix.
    fn vision_transform(&self, pivot: &Vector3<f64>) -> TransformMatrix {
        let d = VisionDelta {
            t: 0.0,
            rot: self.vision_rot.map(crate::angle::wrap),
            trans: self.vision_trans,
        };
        build_transform(&d).about(pivot)
    }

    fn tick(&mut self, t: f64) -> Result<Option<StepRecord>, PipelineError> {
        let (Some(state), Some(fix)) = (self.state.as_ref(), self.fix.as_ref()) else {
            return Ok(None);
        };
        let dt = t - self.last_tick;
        if dt <= 0.0 {
            return Ok(None);
        }
        let model = self.controller.current();
        let predicted = predict(state, model, dt, &self.filter_cfg.noise)?;

        let mut sources = SourceMask::GPS | SourceMask::ATTITUDE;
        let tr = match self.filter_cfg.sensors {
            SensorSet::GpsImuVision => {
                sources |= SourceMask::VISION;
                self.vision_transform(&fix.local)
            }
            _ => TransformMatrix::identity(),
        };
        let imu = match self.filter_cfg.sensors {
            SensorSet::GpsImu if !self.imu_window.is_empty() => {
                sources |= SourceMask::IMU;
                integrate_position(fix.t, &self.imu_window, fix.velocity, self.filter_cfg.integration)?
            }
            _ => ImuPositionDelta::zero(),
        };
        let m_p = compose_position_measurement(&tr, &fix.local, &imu);
        let m_r = self.attitude.current().as_state_vector();
        let z = Measurement::new(t, m_p, m_r, sources);
        let outcome = update_with(&predicted, &z, &self.filter_cfg.noise, self.filter_cfg.form)?;

        if self.mode == ModelMode::Famm {
            self.controller.step(&outcome.innovation)?;
        }
        let record = StepRecord {
            t,
            position: outcome.state.position(),
            rotation: outcome.state.rotation(),
            y_p: filter_error(&outcome.innovation),
            y_r: outcome.innovation.yr_mag,
            model,
            trace: outcome.state.trace(),
            sources,
            used_pseudo_inverse: outcome.used_pseudo_inverse,
        };
        if self.snapshot_every > 0 && self.steps.len().is_multiple_of(self.snapshot_every) {
            self.snapshots.push((t, outcome.state.sigma));
        }
        self.steps.push(record);
        self.state = Some(outcome.state);
        self.last_tick = t;
        Ok(Some(record))
    }
}
