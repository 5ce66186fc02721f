use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Matrix6, Quaternion, UnitQuaternion, Vector3, Vector6};

use crate::error::{Error, Result};

/// Skew-symmetric matrix such that `hat(a) * b == a.cross(&b)`.
#[inline]
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation exponential map, numerically safe at small angles.
pub fn so3_exp(omega: &Vector3<f64>) -> UnitQuaternion<f64> {
    let theta2 = omega.norm_squared();
    let theta = theta2.sqrt();
    let (w, k) = if theta < 1e-4 {
        (1.0 - theta2 / 8.0 + theta2 * theta2 / 384.0, 0.5 - theta2 / 48.0)
    } else {
        ((0.5 * theta).cos(), (0.5 * theta).sin() / theta)
    };
    UnitQuaternion::new_normalize(Quaternion::new(w, k * omega.x, k * omega.y, k * omega.z))
}

/// Rotation logarithm returning the scaled axis with angle in `[0, π]`.
pub fn so3_log(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    let mut w = q.w;
    let mut xyz = q.imag();
    if w < 0.0 {
        w = -w;
        xyz = -xyz;
    }
    let n = xyz.norm();
    if n < 1e-8 {
        // 2 atan(n/w)/n expanded around n = 0
        let r = n / w;
        xyz * (2.0 / w) * (1.0 - r * r / 3.0)
    } else {
        xyz * (2.0 * n.atan2(w) / n)
    }
}

/// Rigid transform stored as a unit quaternion and a translation (meters).
///
/// A pose named `a_from_b` maps coordinates expressed in frame `b` into
/// frame `a`. Tangent vectors are ordered `(ω, v)`: rotation first.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Se3 {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Se3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Se3 {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::identity(), translation)
    }

    pub fn from_rotation_matrix(r: &Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(*r);
        Self::new(UnitQuaternion::from_rotation_matrix(&rot), translation)
    }

    /// Builds a pose from a row-major 4×4 homogeneous matrix. The rotation
    /// block must be orthonormal to 1e-6.
    pub fn from_matrix(m: &Matrix4<f64>) -> Result<Self> {
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        let t = Vector3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)]);
        let ortho_err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if !ortho_err.is_finite() || ortho_err > 1e-6 || r.determinant() < 0.0 {
            return Err(Error::invalid("rotation block is not a proper rotation"));
        }
        let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
        if bottom != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::invalid("last row of a rigid transform must be 0 0 0 1"));
        }
        Ok(Self::from_rotation_matrix(&r, t))
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&self.rotation.to_rotation_matrix().into_inner());
        m[(0, 3)] = self.translation.x;
        m[(1, 3)] = self.translation.y;
        m[(2, 3)] = self.translation.z;
        m
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn inverse(&self) -> Self {
        let r_inv = self.rotation.inverse();
        Self::new(r_inv, -(r_inv * self.translation))
    }

    #[inline]
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Exponential map of a twist `(ω, v)`.
    pub fn exp(xi: &Vector6<f64>) -> Self {
        let omega = Vector3::new(xi[0], xi[1], xi[2]);
        let v = Vector3::new(xi[3], xi[4], xi[5]);
        let theta2 = omega.norm_squared();
        // series below θ² = 1e-4 where the closed forms lose digits
        let (b, c) = if theta2 < 1e-4 {
            (
                0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0,
                1.0 / 6.0 - theta2 / 120.0 + theta2 * theta2 / 5040.0,
            )
        } else {
            let theta = theta2.sqrt();
            let half = (0.5 * theta).sin();
            (2.0 * half * half / theta2, (theta - theta.sin()) / (theta2 * theta))
        };
        let w = hat(&omega);
        let vmat = Matrix3::identity() + w * b + w * w * c;
        Self::new(so3_exp(&omega), vmat * v)
    }

    /// Logarithm map; inverse of [`Se3::exp`] for rotation angles below π.
    pub fn log(&self) -> Vector6<f64> {
        let omega = so3_log(&self.rotation);
        let theta2 = omega.norm_squared();
        let d = if theta2 < 1e-4 {
            1.0 / 12.0 + theta2 / 720.0 + theta2 * theta2 / 30240.0
        } else {
            let theta = theta2.sqrt();
            let half = (0.5 * theta).sin();
            (1.0 - theta * theta.sin() / (4.0 * half * half)) / theta2
        };
        let w = hat(&omega);
        let vinv = Matrix3::identity() - w * 0.5 + w * w * d;
        let v = vinv * self.translation;
        Vector6::new(omega.x, omega.y, omega.z, v.x, v.y, v.z)
    }

    /// Adjoint for `(ω, v)` ordering: `T exp(ξ) T⁻¹ = exp(Ad_T ξ)`.
    pub fn adjoint(&self) -> Matrix6<f64> {
        let r = self.rotation_matrix();
        let mut ad = Matrix6::zeros();
        ad.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        ad.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
        ad.fixed_view_mut::<3, 3>(3, 0)
            .copy_from(&(hat(&self.translation) * r));
        ad
    }

    /// Right perturbation `self · exp(δ)`.
    pub fn retract(&self, delta: &Vector6<f64>) -> Self {
        *self * Se3::exp(delta)
    }

    pub fn rotation_angle(&self) -> f64 {
        so3_log(&self.rotation).norm()
    }

    pub fn renormalized(&self) -> Self {
        Self::new(
            UnitQuaternion::new_normalize(self.rotation.into_inner()),
            self.translation,
        )
    }

    /// Rotation about the rig's vertical (+y) axis.
    pub fn yaw(angle: f64) -> UnitQuaternion<f64> {
        UnitQuaternion::from_axis_angle(&Vector3::y_axis(), angle)
    }
}

impl Mul for Se3 {
    type Output = Se3;

    fn mul(self, rhs: Se3) -> Se3 {
        Se3::new(
            self.rotation * rhs.rotation,
            self.rotation * rhs.translation + self.translation,
        )
    }
}

impl Mul<&Se3> for &Se3 {
    type Output = Se3;

    fn mul(self, rhs: &Se3) -> Se3 {
        *self * *rhs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn twist() -> impl Strategy<Value = Vector6<f64>> {
        (
            prop::array::uniform3(-1.0f64..1.0),
            0.0..(PI - 0.1),
            prop::array::uniform3(-5.0f64..5.0),
        )
            .prop_filter_map("nonzero axis", |(axis, angle, v)| {
                let a = Vector3::from(axis);
                (a.norm() > 1e-3).then(|| {
                    let w = a.normalize() * angle;
                    Vector6::new(w.x, w.y, w.z, v[0], v[1], v[2])
                })
            })
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let t = Se3::exp(&Vector6::zeros());
        assert_eq!(t.translation, Vector3::zeros());
        assert_relative_eq!(t.rotation.angle(), 0.0);
    }

    #[test]
    fn quarter_turn_about_z_maps_x_to_y() {
        let t = Se3::exp(&Vector6::new(0.0, 0.0, FRAC_PI_2, 0.0, 0.0, 0.0));
        let p = t.transform_point(&Vector3::x());
        assert_relative_eq!(p, Vector3::y(), epsilon = 1e-15);
    }

    #[test]
    fn tiny_rotations_log_accurately() {
        let xi = Vector6::new(1e-9, -2e-9, 3e-10, 0.1, 0.2, 0.3);
        let back = Se3::exp(&xi).log();
        assert!((back - xi).norm() < 1e-15);
    }

    #[test]
    fn matrix_round_trip_rejects_reflections() {
        let mut m = Matrix4::identity();
        m[(0, 0)] = -1.0;
        assert!(Se3::from_matrix(&m).is_err());
        let t = Se3::exp(&Vector6::new(0.3, -0.2, 0.1, 1.0, 2.0, 3.0));
        let back = Se3::from_matrix(&t.to_matrix()).unwrap();
        assert!((back.inverse() * t).log().norm() < 1e-12);
    }

    proptest! {
        #[test]
        fn exp_log_round_trip(xi in twist()) {
            let back = Se3::exp(&xi).log();
            prop_assert!((back - xi).norm() < 1e-10, "{} vs {}", back, xi);
        }

        #[test]
        fn group_laws(a in twist(), b in twist(), c in twist()) {
            let (ta, tb, tc) = (Se3::exp(&a), Se3::exp(&b), Se3::exp(&c));
            prop_assert!((ta * ta.inverse()).log().norm() < 1e-10);
            let lhs = (ta * tb) * tc;
            let rhs = ta * (tb * tc);
            prop_assert!((lhs.inverse() * rhs).log().norm() < 1e-10);
        }

        #[test]
        fn adjoint_conjugates_twists(a in twist(), b in twist()) {
            let t = Se3::exp(&a);
            let small = b * 0.1;
            let lhs = t * Se3::exp(&small) * t.inverse();
            let rhs = Se3::exp(&(t.adjoint() * small));
            prop_assert!((lhs.inverse() * rhs).log().norm() < 1e-9);
        }
    }
}
