//! Geodetic conversions and the local tangent frame used by the filter.
//!
//! Angles are radians everywhere in this module. NMEA `ddmm.mmmm` fields are
//! decoded to radians in [`nmea`] and never leave it in degrees.

pub mod nmea;

use nalgebra::{Matrix3, Vector3};
use std::f64::consts::{FRAC_PI_2, PI};
use thiserror::Error;

pub use nmea::{parse_nmea, GgaFix, NmeaError, NmeaSentence, RmcFix, TalkerType};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeodesyError {
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("latitude {0} rad outside [-pi/2, pi/2]")]
    Latitude(f64),
    #[error("longitude {0} rad outside (-pi, pi]")]
    Longitude(f64),
    #[error("invalid ellipsoid (a = {a}, e2 = {e2})")]
    Ellipsoid { a: f64, e2: f64 },
}

/// Reference ellipsoid. Defaults to WGS-84.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipsoidConstants {
    /// Equatorial radius in meters.
    pub a: f64,
    /// First eccentricity squared.
    pub e2: f64,
}

impl EllipsoidConstants {
    pub const WGS84: EllipsoidConstants = EllipsoidConstants {
        a: 6_378_137.0,
        e2: 6.694_379_99e-3,
    };

    pub fn new(a: f64, e2: f64) -> Result<Self, GeodesyError> {
        if !(a.is_finite() && a > 0.0 && e2.is_finite() && e2 > 0.0 && e2 < 1.0) {
            return Err(GeodesyError::Ellipsoid { a, e2 });
        }
        Ok(Self { a, e2 })
    }
}

impl Default for EllipsoidConstants {
    fn default() -> Self {
        Self::WGS84
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeodeticPosition {
    pub lat: f64,
    pub lon: f64,
    pub alt: f64,
}

impl GeodeticPosition {
    pub fn new(lat: f64, lon: f64, alt: f64) -> Result<Self, GeodesyError> {
        let g = Self { lat, lon, alt };
        g.validate()?;
        Ok(g)
    }

    pub fn from_degrees(lat_deg: f64, lon_deg: f64, alt: f64) -> Result<Self, GeodesyError> {
        Self::new(lat_deg.to_radians(), lon_deg.to_radians(), alt)
    }

    pub fn validate(&self) -> Result<(), GeodesyError> {
        if !self.lat.is_finite() {
            return Err(GeodesyError::NonFinite("latitude"));
        }
        if !self.lon.is_finite() {
            return Err(GeodesyError::NonFinite("longitude"));
        }
        if !self.alt.is_finite() {
            return Err(GeodesyError::NonFinite("altitude"));
        }
        if self.lat.abs() > FRAC_PI_2 {
            return Err(GeodesyError::Latitude(self.lat));
        }
        if self.lon <= -PI || self.lon > PI {
            return Err(GeodesyError::Longitude(self.lon));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EcefPosition {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl EcefPosition {
    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_vector(v: Vector3<f64>) -> Self {
        Self {
            x: v.x,
            y: v.y,
            z: v.z,
        }
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }
}

/// Radius of curvature in the prime vertical, `N = a / sqrt(1 - e2 sin^2 phi)`.
pub fn prime_vertical_radius(phi: f64, c: &EllipsoidConstants) -> Result<f64, GeodesyError> {
    if !phi.is_finite() {
        return Err(GeodesyError::NonFinite("latitude"));
    }
    if phi.abs() > FRAC_PI_2 {
        return Err(GeodesyError::Latitude(phi));
    }
    let s = phi.sin();
    Ok(c.a / (1.0 - c.e2 * s * s).sqrt())
}

pub fn geodetic_to_ecef(
    g: &GeodeticPosition,
    c: &EllipsoidConstants,
) -> Result<EcefPosition, GeodesyError> {
    g.validate()?;
    let n = prime_vertical_radius(g.lat, c)?;
    let (sin_lat, cos_lat) = g.lat.sin_cos();
    let (sin_lon, cos_lon) = g.lon.sin_cos();
    Ok(EcefPosition {
        x: (n + g.alt) * cos_lat * cos_lon,
        y: (n + g.alt) * cos_lat * sin_lon,
        z: ((1.0 - c.e2) * n + g.alt) * sin_lat,
    })
}

/// Inverse of [`geodetic_to_ecef`] by fixed-point iteration on latitude.
///
/// Converges to machine precision in a handful of iterations for any point
/// outside the Earth's core; the height expression stays well conditioned at
/// the poles.
pub fn ecef_to_geodetic(
    p: &EcefPosition,
    c: &EllipsoidConstants,
) -> Result<GeodeticPosition, GeodesyError> {
    if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
        return Err(GeodesyError::NonFinite("ecef coordinate"));
    }
    let rho = p.x.hypot(p.y);
    let lon = if rho == 0.0 { 0.0 } else { p.y.atan2(p.x) };
    let mut lat = p.z.atan2(rho * (1.0 - c.e2));
    for _ in 0..32 {
        let (s, co) = lat.sin_cos();
        let n = c.a / (1.0 - c.e2 * s * s).sqrt();
        let alt = rho * co + p.z * s - c.a * (1.0 - c.e2 * s * s).sqrt();
        let next = p.z.atan2(rho * (1.0 - c.e2 * n / (n + alt)));
        let done = (next - lat).abs() < 1e-15;
        lat = next;
        if done {
            break;
        }
    }
    let (s, co) = lat.sin_cos();
    let alt = rho * co + p.z * s - c.a * (1.0 - c.e2 * s * s).sqrt();
    // atan2 returns -pi for (-0, -x); fold it onto +pi.
    let lon = if lon <= -PI { PI } else { lon };
    GeodeticPosition::new(lat, lon, alt)
}

/// East-north-up tangent frame anchored at a reference fix.
///
/// Positions handed to the filter are ECEF deltas from the anchor rotated
/// into east/north/up axes, which keeps magnitudes near the walked distance.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalFrame {
    origin: GeodeticPosition,
    origin_ecef: Vector3<f64>,
    ecef_to_enu: Matrix3<f64>,
    ellipsoid: EllipsoidConstants,
}

impl LocalFrame {
    pub fn new(origin: GeodeticPosition, ellipsoid: EllipsoidConstants) -> Result<Self, GeodesyError> {
        let origin_ecef = geodetic_to_ecef(&origin, &ellipsoid)?.to_vector();
        let (sl, cl) = origin.lat.sin_cos();
        let (so, co) = origin.lon.sin_cos();
        #[rustfmt::skip]
        let ecef_to_enu = Matrix3::new(
            -so,       co,      0.0,
            -sl * co, -sl * so, cl,
             cl * co,  cl * so, sl,
        );
        Ok(Self {
            origin,
            origin_ecef,
            ecef_to_enu,
            ellipsoid,
        })
    }

    pub fn origin(&self) -> GeodeticPosition {
        self.origin
    }

    pub fn ellipsoid(&self) -> EllipsoidConstants {
        self.ellipsoid
    }

    pub fn ecef_to_local(&self, p: &EcefPosition) -> Vector3<f64> {
        self.ecef_to_enu * (p.to_vector() - self.origin_ecef)
    }

    pub fn local_to_ecef(&self, local: &Vector3<f64>) -> EcefPosition {
        EcefPosition::from_vector(self.origin_ecef + self.ecef_to_enu.transpose() * local)
    }

    pub fn geodetic_to_local(&self, g: &GeodeticPosition) -> Result<Vector3<f64>, GeodesyError> {
        Ok(self.ecef_to_local(&geodetic_to_ecef(g, &self.ellipsoid)?))
    }

    pub fn local_to_geodetic(&self, local: &Vector3<f64>) -> Result<GeodeticPosition, GeodesyError> {
        ecef_to_geodetic(&self.local_to_ecef(local), &self.ellipsoid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const C: EllipsoidConstants = EllipsoidConstants::WGS84;

    #[test]
    fn prime_vertical_radius_at_equator_is_a() {
        assert_eq!(prime_vertical_radius(0.0, &C).unwrap(), 6_378_137.0);
    }

    #[test]
    fn prime_vertical_radius_at_pole() {
        // a / sqrt(1 - e2)
        let n = prime_vertical_radius(FRAC_PI_2, &C).unwrap();
        assert!((n - 6_399_593.625_758_493).abs() < 1e-6, "{n}");
    }

    #[test]
    fn prime_vertical_radius_rejects_non_finite() {
        assert!(prime_vertical_radius(f64::NAN, &C).is_err());
        assert!(prime_vertical_radius(f64::INFINITY, &C).is_err());
    }

    #[test]
    fn ecef_analytic_points() {
        let e = geodetic_to_ecef(&GeodeticPosition::new(0.0, 0.0, 0.0).unwrap(), &C).unwrap();
        assert_eq!((e.x, e.y, e.z), (6_378_137.0, 0.0, 0.0));

        let e = geodetic_to_ecef(&GeodeticPosition::new(0.0, FRAC_PI_2, 0.0).unwrap(), &C).unwrap();
        assert!(e.x.abs() < 1e-6 && (e.y - 6_378_137.0).abs() < 1e-6 && e.z == 0.0);

        let e = geodetic_to_ecef(&GeodeticPosition::new(FRAC_PI_2, 0.0, 0.0).unwrap(), &C).unwrap();
        assert!(e.x.abs() < 1e-6 && e.y.abs() < 1e-6);
        assert!((e.z - 6_356_752.314_245_179).abs() < 1e-6, "{}", e.z);
    }

    #[test]
    fn invalid_geodetic_rejected() {
        assert!(GeodeticPosition::new(2.0, 0.0, 0.0).is_err());
        assert!(GeodeticPosition::new(0.0, -PI, 0.0).is_err());
        assert!(GeodeticPosition::new(0.0, PI, 0.0).is_ok());
        assert!(GeodeticPosition::new(0.0, 0.0, f64::NAN).is_err());
    }

    #[test]
    fn local_frame_axes() {
        let origin = GeodeticPosition::from_degrees(37.94, 27.34, 100.0).unwrap();
        let frame = LocalFrame::new(origin, C).unwrap();
        let up = GeodeticPosition { alt: 110.0, ..origin };
        let l = frame.geodetic_to_local(&up).unwrap();
        assert!((l - Vector3::new(0.0, 0.0, 10.0)).norm() < 1e-8);
        let north = GeodeticPosition { lat: origin.lat + 1e-6, ..origin };
        let l = frame.geodetic_to_local(&north).unwrap();
        assert!(l.y > 6.0 && l.x.abs() < 1e-6, "{l}");
    }

    proptest! {
        #[test]
        fn ecef_norm_increases_with_altitude(
            lat in -1.5f64..1.5, lon in -3.1f64..3.1, h in -9000.0f64..9000.0, dh in 0.01f64..100.0
        ) {
            let lo = geodetic_to_ecef(&GeodeticPosition::new(lat, lon, h).unwrap(), &C).unwrap();
            let hi = geodetic_to_ecef(&GeodeticPosition::new(lat, lon, h + dh).unwrap(), &C).unwrap();
            prop_assert!(hi.norm() > lo.norm());
        }

        #[test]
        fn local_frame_round_trip(e in -5000.0f64..5000.0, n in -5000.0f64..5000.0, u in -100.0f64..100.0) {
            let frame = LocalFrame::new(GeodeticPosition::from_degrees(49.27, -123.18, 50.0).unwrap(), C).unwrap();
            let local = Vector3::new(e, n, u);
            let g = frame.local_to_geodetic(&local).unwrap();
            let back = frame.geodetic_to_local(&g).unwrap();
            prop_assert!((back - local).norm() < 1e-6);
        }
    }
}
