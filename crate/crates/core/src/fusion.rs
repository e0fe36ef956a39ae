//! The 12-state pose filter.
//!
//! State layout is `x = (P, V, R, Omega)`: position, linear velocity,
//! rotation `(R_x, R_y, R_z)` and angular velocity, three entries each.
//! Position and rotation are observed directly; the velocities only enter
//! through the motion model's coupling terms.

use crate::angle::wrap;
use crate::famm::MotionModel;
use crate::imu::ImuPositionDelta;
use crate::vision::{apply_transform, TransformMatrix};
use nalgebra::{SMatrix, SVector, Vector3};
use thiserror::Error;

pub const STATE_DIM: usize = 12;
pub const MEAS_DIM: usize = 6;

pub type StateVector = SVector<f64, STATE_DIM>;
pub type Covariance = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type MeasCovariance = SMatrix<f64, MEAS_DIM, MEAS_DIM>;
pub type ObservationMatrix = SMatrix<f64, MEAS_DIM, STATE_DIM>;
pub type MeasVector = SVector<f64, MEAS_DIM>;

const POS: usize = 0;
const VEL: usize = 3;
const ROT: usize = 6;
const ANG: usize = 9;

/// Tolerance for the covariance symmetry and PSD checks.
pub const COVARIANCE_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("state covariance is not symmetric positive semidefinite ({0})")]
    StateCorrupt(String),
    #[error("prediction interval must be positive, got {0}")]
    NonPositiveDt(f64),
    #[error("non-finite measurement at t = {0}")]
    NonFiniteMeasurement(f64),
    #[error("noise covariance {0} is not symmetric PSD")]
    BadNoise(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub x: StateVector,
    pub sigma: Covariance,
}

impl FilterState {
    pub fn new(x: StateVector, sigma: Covariance) -> Self {
        Self { x, sigma }
    }

    /// Starts at a measured pose with zero velocities.
    pub fn from_pose(position: Vector3<f64>, rotation: Vector3<f64>, sigma0: Covariance) -> Self {
        let mut x = StateVector::zeros();
        x.fixed_rows_mut::<3>(POS).copy_from(&position);
        x.fixed_rows_mut::<3>(ROT).copy_from(&rotation.map(wrap));
        Self { x, sigma: sigma0 }
    }

    pub fn position(&self) -> Vector3<f64> {
        self.x.fixed_rows::<3>(POS).into_owned()
    }

    pub fn velocity(&self) -> Vector3<f64> {
        self.x.fixed_rows::<3>(VEL).into_owned()
    }

    pub fn rotation(&self) -> Vector3<f64> {
        self.x.fixed_rows::<3>(ROT).into_owned()
    }

    pub fn angular_velocity(&self) -> Vector3<f64> {
        self.x.fixed_rows::<3>(ANG).into_owned()
    }

    pub fn trace(&self) -> f64 {
        self.sigma.trace()
    }

    pub fn check(&self) -> Result<(), FusionError> {
        if !self.x.iter().all(|v| v.is_finite()) {
            return Err(FusionError::StateCorrupt("non-finite state".into()));
        }
        check_psd(&self.sigma).map_err(FusionError::StateCorrupt)
    }
}

/// Symmetric within [`COVARIANCE_TOL`] and minimum eigenvalue no lower than
/// `-COVARIANCE_TOL`.
pub fn check_psd<const N: usize>(m: &SMatrix<f64, N, N>) -> Result<(), String> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err("non-finite entry".into());
    }
    let asym = (m - m.transpose()).amax();
    if asym > COVARIANCE_TOL {
        return Err(format!("asymmetry {asym:e}"));
    }
    // Cholesky of M + tol*I succeeds iff every eigenvalue exceeds -tol.
    let shifted = (m + m.transpose()) * 0.5 + SMatrix::<f64, N, N>::identity() * COVARIANCE_TOL;
    if shifted.cholesky().is_none() {
        return Err("negative eigenvalue".into());
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConfig {
    /// Process noise added at every prediction.
    pub q: Covariance,
    /// Measurement noise for `(m_P, m_R)`.
    pub rm: MeasCovariance,
}

impl NoiseConfig {
    /// Diagonal process noise per block and measurement standard deviations.
    pub fn diagonal(q_pos: f64, q_vel: f64, q_rot: f64, q_ang: f64, pos_sigma: f64, rot_sigma: f64) -> Self {
        let mut q = Covariance::zeros();
        for i in 0..3 {
            q[(POS + i, POS + i)] = q_pos;
            q[(VEL + i, VEL + i)] = q_vel;
            q[(ROT + i, ROT + i)] = q_rot;
            q[(ANG + i, ANG + i)] = q_ang;
        }
        let mut rm = MeasCovariance::zeros();
        for i in 0..3 {
            rm[(i, i)] = pos_sigma * pos_sigma;
            rm[(3 + i, 3 + i)] = rot_sigma * rot_sigma;
        }
        Self { q, rm }
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        check_psd(&self.q).map_err(|_| FusionError::BadNoise("Q"))?;
        check_psd(&self.rm).map_err(|_| FusionError::BadNoise("Rm"))?;
        Ok(())
    }
}

impl Default for NoiseConfig {
    /// Measurement noise from a 2.5 m GPS and a 2 degree attitude source;
    /// process noise per prediction step.
    fn default() -> Self {
        Self::diagonal(0.02, 3e-4, 1e-6, 1e-5, 4.0, 2f64.to_radians())
    }
}

/// Identity except `P <- c_i V dt` and `R <- c_j Omega dt`.
pub fn transition_matrix(dt: f64, model: MotionModel) -> Covariance {
    let mut f = Covariance::identity();
    let cp = model.position_coefficient() * dt;
    let cr = model.rotation_coefficient() * dt;
    for i in 0..3 {
        f[(POS + i, VEL + i)] = cp;
        f[(ROT + i, ANG + i)] = cr;
    }
    f
}

/// Selects `(P, R)` out of the state.
pub fn observation_matrix() -> ObservationMatrix {
    let mut h = ObservationMatrix::zeros();
    for i in 0..3 {
        h[(i, POS + i)] = 1.0;
        h[(3 + i, ROT + i)] = 1.0;
    }
    h
}

fn wrap_rotation(x: &mut StateVector) {
    for i in 0..3 {
        x[ROT + i] = wrap(x[ROT + i]);
    }
}

fn symmetrize(m: &Covariance) -> Covariance {
    (m + m.transpose()) * 0.5
}

pub fn predict(
    state: &FilterState,
    model: MotionModel,
    dt: f64,
    noise: &NoiseConfig,
) -> Result<FilterState, FusionError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(FusionError::NonPositiveDt(dt));
    }
    state.check()?;
    let f = transition_matrix(dt, model);
    let mut x = f * state.x;
    wrap_rotation(&mut x);
    let sigma = symmetrize(&(f * state.sigma * f.transpose() + noise.q));
    Ok(FilterState { x, sigma })
}

/// Bit flags naming the sensors that contributed to a measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SourceMask(u8);

impl SourceMask {
    pub const GPS: SourceMask = SourceMask(1);
    pub const IMU: SourceMask = SourceMask(2);
    pub const VISION: SourceMask = SourceMask(4);
    pub const ATTITUDE: SourceMask = SourceMask(8);

    pub fn contains(self, other: SourceMask) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn bits(self) -> u8 {
        self.0
    }
}

impl std::ops::BitOr for SourceMask {
    type Output = SourceMask;
    fn bitor(self, rhs: SourceMask) -> SourceMask {
        SourceMask(self.0 | rhs.0)
    }
}

impl std::ops::BitOrAssign for SourceMask {
    fn bitor_assign(&mut self, rhs: SourceMask) {
        self.0 |= rhs.0;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub t: f64,
    /// Composite position `m_P`.
    pub position: Vector3<f64>,
    /// Orientation `(R_x, R_y, R_z)`, wrapped.
    pub rotation: Vector3<f64>,
    pub sources: SourceMask,
}

impl Measurement {
    pub fn new(t: f64, position: Vector3<f64>, rotation: Vector3<f64>, sources: SourceMask) -> Self {
        Self {
            t,
            position,
            rotation: rotation.map(wrap),
            sources,
        }
    }

    pub fn as_vector(&self) -> MeasVector {
        MeasVector::new(
            self.position.x,
            self.position.y,
            self.position.z,
            self.rotation.x,
            self.rotation.y,
            self.rotation.z,
        )
    }
}

/// `y = z - h x`, with the rotational residual wrapped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Innovation {
    pub y: MeasVector,
    pub yp_mag: f64,
    pub yr_mag: f64,
}

impl Innovation {
    pub fn from_residual(mut y: MeasVector) -> Self {
        for i in 3..6 {
            y[i] = wrap(y[i]);
        }
        let yp_mag = y.fixed_rows::<3>(0).norm();
        let yr_mag = y.fixed_rows::<3>(3).norm();
        Self { y, yp_mag, yr_mag }
    }

    pub fn zero() -> Self {
        Self::from_residual(MeasVector::zeros())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateOutcome {
    pub state: FilterState,
    pub innovation: Innovation,
    /// Set when the innovation covariance was singular and a
    /// pseudo-inverse stood in for the inverse.
    pub used_pseudo_inverse: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovarianceForm {
    #[default]
    Standard,
    Joseph,
}

pub fn innovation(state: &FilterState, z: &Measurement) -> Innovation {
    Innovation::from_residual(z.as_vector() - observation_matrix() * state.x)
}

pub fn update(state: &FilterState, z: &Measurement, noise: &NoiseConfig) -> Result<UpdateOutcome, FusionError> {
    update_with(state, z, noise, CovarianceForm::Standard)
}

pub fn update_with(
    state: &FilterState,
    z: &Measurement,
    noise: &NoiseConfig,
    form: CovarianceForm,
) -> Result<UpdateOutcome, FusionError> {
    let zv = z.as_vector();
    if !zv.iter().all(|v| v.is_finite()) {
        return Err(FusionError::NonFiniteMeasurement(z.t));
    }
    let h = observation_matrix();
    let innov = innovation(state, z);
    let ht = h.transpose();
    let s = h * state.sigma * ht + noise.rm;
    let s = (s + s.transpose()) * 0.5;
    let (s_inv, used_pseudo_inverse) = match s.cholesky() {
        Some(chol) => (chol.inverse(), false),
        None => (
            s.pseudo_inverse(1e-12)
                .map_err(|e| FusionError::StateCorrupt(format!("pseudo-inverse failed: {e}")))?,
            true,
        ),
    };
    let k = state.sigma * ht * s_inv;
    let mut x = state.x + k * innov.y;
    wrap_rotation(&mut x);
    let ikh = Covariance::identity() - k * h;
    let sigma = match form {
        CovarianceForm::Standard => ikh * state.sigma,
        CovarianceForm::Joseph => ikh * state.sigma * ikh.transpose() + k * noise.rm * k.transpose(),
    };
    Ok(UpdateOutcome {
        state: FilterState {
            x,
            sigma: symmetrize(&sigma),
        },
        innovation: innov,
        used_pseudo_inverse,
    })
}

/// `m_P = Tr * m_gps + m_imu`.
pub fn compose_position_measurement(
    tr: &TransformMatrix,
    gps_local: &Vector3<f64>,
    imu: &ImuPositionDelta,
) -> Vector3<f64> {
    apply_transform(tr, gps_local) + imu.delta
}

/// Per-step filter error: the positional innovation norm.
pub fn filter_error(innov: &Innovation) -> f64 {
    innov.yp_mag
}
