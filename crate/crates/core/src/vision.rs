//! Two-view motion estimates as homogeneous 4x4 transforms.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VisionError {
    #[error("non-finite vision delta at t = {0}")]
    NonFinite(f64),
}

/// Rotation `(R_x, R_y, R_z)` in radians and translation in meters between
/// two keyframes, stamped with the later keyframe's time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisionDelta {
    pub t: f64,
    pub rot: Vector3<f64>,
    pub trans: Vector3<f64>,
}

impl VisionDelta {
    pub fn new(t: f64, rot: Vector3<f64>, trans: Vector3<f64>) -> Result<Self, VisionError> {
        if !(t.is_finite() && rot.iter().all(|v| v.is_finite()) && trans.iter().all(|v| v.is_finite())) {
            return Err(VisionError::NonFinite(t));
        }
        Ok(Self {
            t,
            rot: rot.map(crate::angle::wrap),
            trans,
        })
    }

    pub fn identity(t: f64) -> Self {
        Self {
            t,
            rot: Vector3::zeros(),
            trans: Vector3::zeros(),
        }
    }
}

/// Rigid transform with bottom row `(0, 0, 0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformMatrix(Matrix4<f64>);

impl TransformMatrix {
    pub fn identity() -> Self {
        Self(Matrix4::identity())
    }

    pub fn translation(t: Vector3<f64>) -> Self {
        Self(Matrix4::new_translation(&t))
    }

    /// Assembles a transform from a rotation block and translation. The
    /// caller guarantees the block is a proper rotation.
    pub fn from_parts(rotation: &Matrix3<f64>, translation: &Vector3<f64>) -> Self {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(translation);
        Self(m)
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.0
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.0.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation_part(&self) -> Vector3<f64> {
        self.0.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// `self * other`: apply `other` first.
    pub fn compose(&self, other: &TransformMatrix) -> TransformMatrix {
        TransformMatrix(self.0 * other.0)
    }

    /// The same motion expressed about `pivot` instead of the origin,
    /// i.e. `T(pivot) * self * T(-pivot)`.
    pub fn about(&self, pivot: &Vector3<f64>) -> TransformMatrix {
        TransformMatrix::translation(*pivot)
            .compose(self)
            .compose(&TransformMatrix::translation(-pivot))
    }
}

impl Default for TransformMatrix {
    fn default() -> Self {
        Self::identity()
    }
}

/// Builds the keyframe transform entry by entry. The rotation block equals
/// `Rx(R_x) * Ry(R_y) * Rz(R_z)`.
pub fn build_transform(d: &VisionDelta) -> TransformMatrix {
    let (sx, cx) = d.rot.x.sin_cos();
    let (sy, cy) = d.rot.y.sin_cos();
    let (sz, cz) = d.rot.z.sin_cos();
    let t = d.trans;
    #[rustfmt::skip]
    let m = Matrix4::new(
        cy * cz,                     -cy * sz,                      sy,       t.x,
        sx * sy * cz + cx * sz,      -sx * sy * sz + cx * cz,      -sx * cy,  t.y,
        -cx * sy * cz + sx * sz,      cx * sy * sz + sx * cz,       cx * cy,  t.z,
        0.0,                          0.0,                          0.0,      1.0,
    );
    TransformMatrix(m)
}

/// Homogeneous product `m * (x, y, z, 1)`, first three components.
pub fn apply_transform(tr: &TransformMatrix, p: &Vector3<f64>) -> Vector3<f64> {
    let h = tr.0 * Vector4::new(p.x, p.y, p.z, 1.0);
    Vector3::new(h.x, h.y, h.z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn delta(rot: [f64; 3], trans: [f64; 3]) -> VisionDelta {
        VisionDelta::new(0.0, Vector3::from(rot), Vector3::from(trans)).unwrap()
    }

    #[test]
    fn zero_delta_is_identity() {
        assert_eq!(*build_transform(&delta([0.0; 3], [0.0; 3])).matrix(), Matrix4::identity());
    }

    #[test]
    fn pure_translation_column() {
        let m = *build_transform(&delta([0.0; 3], [1.0, 2.0, 3.0])).matrix();
        assert_eq!(m.column(3).into_owned(), Vector4::new(1.0, 2.0, 3.0, 1.0));
        assert_eq!(m.fixed_view::<3, 3>(0, 0).into_owned(), Matrix3::identity());
    }

    #[test]
    fn quarter_turn_about_y() {
        let tr = build_transform(&delta([0.0, FRAC_PI_2, 0.0], [0.0; 3]));
        let m = tr.matrix();
        let row0 = [m[(0, 0)], m[(0, 1)], m[(0, 2)], m[(0, 3)]];
        let row2 = [m[(2, 0)], m[(2, 1)], m[(2, 2)], m[(2, 3)]];
        for (got, want) in row0.iter().zip([0.0, 0.0, 1.0, 0.0]) {
            assert!((got - want).abs() < 1e-15);
        }
        for (got, want) in row2.iter().zip([-1.0, 0.0, 0.0, 0.0]) {
            assert!((got - want).abs() < 1e-15);
        }
        let p = apply_transform(&tr, &Vector3::new(1.0, 0.0, 0.0));
        assert!((p - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-15);
    }

    #[test]
    fn apply_identity_and_translation() {
        let p = Vector3::new(5.0, 6.0, 7.0);
        assert_eq!(apply_transform(&TransformMatrix::identity(), &p), p);
        let t = build_transform(&delta([0.0; 3], [1.0, 0.0, 0.0]));
        assert_eq!(apply_transform(&t, &Vector3::zeros()), Vector3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn about_pivot_leaves_pivot_translated_only() {
        let tr = build_transform(&delta([0.3, -0.2, 1.0], [1.0, 2.0, 3.0]));
        let pivot = Vector3::new(100.0, -50.0, 2.0);
        let out = apply_transform(&tr.about(&pivot), &pivot);
        assert!((out - (pivot + Vector3::new(1.0, 2.0, 3.0))).norm() < 1e-10);
    }

    #[test]
    fn non_finite_rejected() {
        assert!(VisionDelta::new(0.0, Vector3::new(f64::NAN, 0.0, 0.0), Vector3::zeros()).is_err());
    }

    proptest! {
        #[test]
        fn rotation_block_is_proper(rx in -PI..PI, ry in -PI..PI, rz in -PI..PI) {
            let r = build_transform(&delta([rx, ry, rz], [0.0; 3])).rotation();
            prop_assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-12);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn matches_axis_rotation_product(rx in -PI..PI, ry in -PI..PI, rz in -PI..PI) {
            let r = build_transform(&delta([rx, ry, rz], [0.0; 3])).rotation();
            let product = Rotation3::from_axis_angle(&Vector3::x_axis(), rx)
                * Rotation3::from_axis_angle(&Vector3::y_axis(), ry)
                * Rotation3::from_axis_angle(&Vector3::z_axis(), rz);
            prop_assert!((r - product.matrix()).amax() < 1e-12);
        }

        #[test]
        fn rotation_preserves_norm(rx in -PI..PI, ry in -PI..PI, rz in -PI..PI,
                                   px in -100.0f64..100.0, py in -100.0f64..100.0, pz in -100.0f64..100.0) {
            let tr = build_transform(&delta([rx, ry, rz], [0.0; 3]));
            let p = Vector3::new(px, py, pz);
            prop_assert!((apply_transform(&tr, &p).norm() - p.norm()).abs() < 1e-9);
        }

        #[test]
        fn translations_compose_additively(a in proptest::array::uniform3(-10.0f64..10.0),
                                           b in proptest::array::uniform3(-10.0f64..10.0)) {
            let ta = build_transform(&delta([0.0; 3], a));
            let tb = build_transform(&delta([0.0; 3], b));
            let sum = Vector3::from(a) + Vector3::from(b);
            prop_assert!((ta.compose(&tb).translation_part() - sum).amax() < 1e-12);
            prop_assert_eq!(ta.compose(&tb).rotation(), Matrix3::identity());
        }
    }
}
