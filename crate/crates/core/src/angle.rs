//! Angle helpers shared by the attitude, vision and fusion code.

use std::f64::consts::{PI, TAU};

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap(angle: f64) -> f64 {
    if angle > -PI && angle <= PI {
        return angle;
    }
    let mut a = angle.rem_euclid(TAU);
    if a > PI {
        a -= TAU;
    }
    // rem_euclid can land exactly on TAU - tiny for inputs just below a
    // multiple of TAU; that maps to -pi, which is outside the range.
    if a <= -PI {
        a += TAU;
    }
    a
}
