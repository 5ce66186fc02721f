//! Angular residuals between observed and predicted bearings.
//!
//! The residual is a 2-vector in the tangent plane of the observed bearing
//! `b`, pointing toward the predicted bearing `u`, with magnitude equal to the
//! angle between them. It stays well defined across the whole sphere.

use nalgebra::{Matrix2x3, Matrix3, Matrix3x2, SMatrix, Vector2, Vector3};

use crate::geometry::{hat, Se3};

pub type Matrix2x6 = SMatrix<f64, 2, 6>;

/// Orthonormal basis of the plane orthogonal to the unit vector `b`.
pub fn tangent_basis(b: &Vector3<f64>) -> Matrix3x2<f64> {
    let a = if b.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let e1 = (a - b * a.dot(b)).normalize();
    let e2 = b.cross(&e1);
    Matrix3x2::from_columns(&[e1, e2])
}

/// Residual and its derivative with respect to the predicted unit vector.
fn residual_unit(b: &Vector3<f64>, basis: &Matrix3x2<f64>, u: &Vector3<f64>) -> (Vector2<f64>, Matrix2x3<f64>) {
    let s = basis.transpose() * u;
    let c = b.dot(u);
    let rho = s.norm();
    let theta = rho.atan2(c);
    if rho < 1e-7 {
        if c > 0.0 {
            // θ/ρ → 1 + ρ²/6 and (ρc − θ)/ρ³ → −2/3
            let f = 1.0 + rho * rho / 6.0;
            let j = basis.transpose() * f + s * ((-2.0 / 3.0) * (s.transpose() * basis.transpose()) - b.transpose());
            return (s * f, j);
        }
        // antipodal prediction: direction is arbitrary, magnitude π
        return (Vector2::new(theta, 0.0), Matrix2x3::zeros());
    }
    let f = theta / rho;
    let k = (rho * c - theta) / (rho * rho * rho);
    let j = basis.transpose() * f + s * (k * (s.transpose() * basis.transpose()) - b.transpose());
    (s * f, j)
}

/// Observed bearing with its precomputed tangent basis.
#[derive(Clone, Copy, Debug)]
pub struct Bearing {
    pub unit: Vector3<f64>,
    basis: Matrix3x2<f64>,
}

impl Bearing {
    pub fn new(v: &Vector3<f64>) -> Self {
        let unit = v.normalize();
        Self { unit, basis: tangent_basis(&unit) }
    }

    /// Residual for a predicted point `x` in the same frame, and its
    /// Jacobian with respect to `x`.
    pub fn residual(&self, x: &Vector3<f64>) -> (Vector2<f64>, Matrix2x3<f64>) {
        let n = x.norm();
        if n == 0.0 {
            return (Vector2::new(std::f64::consts::PI, 0.0), Matrix2x3::zeros());
        }
        let u = x / n;
        let (r, du) = residual_unit(&self.unit, &self.basis, &u);
        (r, du * (Matrix3::identity() - u * u.transpose()) / n)
    }

    pub fn angle_to(&self, x: &Vector3<f64>) -> f64 {
        crate::geometry::angle_between(&self.unit, x)
    }
}

/// Residual of world point `x_w` seen by the camera `cam_to_rig` on a rig at
/// `world_from_rig`, with Jacobians for a right perturbation of the rig pose
/// (`T·exp(δ)`, δ = (ω, v)) and for the world point.
pub fn reprojection(
    world_from_rig: &Se3,
    cam_to_rig: &Se3,
    bearing: &Bearing,
    x_w: &Vector3<f64>,
) -> (Vector2<f64>, Matrix2x6, Matrix2x3<f64>) {
    let rig_from_world = world_from_rig.inverse();
    let x_r = rig_from_world.transform_point(x_w);
    let r_c_t = cam_to_rig.rotation_matrix().transpose();
    let x_c = r_c_t * (x_r - cam_to_rig.translation);
    let (r, j_xc) = bearing.residual(&x_c);
    let j_xr = j_xc * r_c_t;
    let mut j_pose = Matrix2x6::zeros();
    j_pose.fixed_view_mut::<2, 3>(0, 0).copy_from(&(j_xr * hat(&x_r)));
    j_pose.fixed_view_mut::<2, 3>(0, 3).copy_from(&(-j_xr));
    let j_point = j_xr * world_from_rig.rotation_matrix().transpose();
    (r, j_pose, j_point)
}

/// Huber kernel on a residual norm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Huber {
    pub delta: f64,
}

impl Huber {
    pub fn cost(&self, e: f64) -> f64 {
        if e <= self.delta {
            0.5 * e * e
        } else {
            self.delta * (e - 0.5 * self.delta)
        }
    }

    /// IRLS weight `ρ'(e)/e`.
    pub fn weight(&self, e: f64) -> f64 {
        if e <= self.delta {
            1.0
        } else {
            self.delta / e
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use nalgebra::{DMatrix, Vector6};
    use rand::{Rng, SeedableRng};

    /// Largest entry-wise deviation relative to the largest Jacobian entry.
    pub(crate) fn relative_error(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>) -> f64 {
        let scale = numeric.abs().max().max(analytic.abs().max()).max(1e-12);
        (analytic - numeric).abs().max() / scale
    }

    pub(crate) fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
        loop {
            let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let n = v.norm();
            if n > 0.1 && n < 1.0 {
                return v / n;
            }
        }
    }

    #[test]
    fn magnitude_is_the_angle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let b = Bearing::new(&random_unit(&mut rng));
            let x = random_unit(&mut rng) * rng.random_range(0.5..20.0);
            let (r, _) = b.residual(&x);
            assert!((r.norm() - b.angle_to(&x)).abs() < 1e-12);
        }
        let b = Bearing::new(&Vector3::z());
        assert_eq!(b.residual(&Vector3::new(0.0, 0.0, 4.0)).0, Vector2::zeros());
    }

    #[test]
    fn bearing_jacobian_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let h = 1e-6;
        for _ in 0..1000 {
            let b = Bearing::new(&random_unit(&mut rng));
            // predictions from nearly aligned to far off
            let spread = [1e-4, 1e-2, 0.3, 2.0][rng.random_range(0..4)];
            let x = (b.unit + random_unit(&mut rng) * spread).normalize() * rng.random_range(0.5..20.0);
            let (_, j) = b.residual(&x);
            let mut num = DMatrix::zeros(2, 3);
            for k in 0..3 {
                let mut e = Vector3::zeros();
                e[k] = h * x.norm();
                let d = (b.residual(&(x + e)).0 - b.residual(&(x - e)).0) / (2.0 * e[k]);
                num.set_column(k, &d);
            }
            let ana = DMatrix::from_iterator(2, 3, j.iter().copied());
            assert!(relative_error(&ana, &num) < 1e-5, "{}", relative_error(&ana, &num));
        }
    }

    #[test]
    fn pose_and_point_jacobians_match_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let h = 1e-6;
        for _ in 0..1000 {
            let pose = Se3::exp(&Vector6::from_fn(|_, _| rng.random_range(-1.0..1.0)));
            let cam = Se3::exp(&Vector6::from_fn(|_, _| rng.random_range(-0.5..0.5)));
            let x_w = pose.transform_point(&(random_unit(&mut rng) * rng.random_range(1.0..10.0)));
            let x_c = cam.inverse().transform_point(&pose.inverse().transform_point(&x_w));
            let noisy = (x_c.normalize() + random_unit(&mut rng) * 0.05).normalize();
            let b = Bearing::new(&noisy);
            let (_, jp, jx) = reprojection(&pose, &cam, &b, &x_w);
            let mut num_p = DMatrix::zeros(2, 6);
            for k in 0..6 {
                let mut d = Vector6::zeros();
                d[k] = h;
                let plus = reprojection(&pose.retract(&d), &cam, &b, &x_w).0;
                let minus = reprojection(&pose.retract(&-d), &cam, &b, &x_w).0;
                num_p.set_column(k, &((plus - minus) / (2.0 * h)));
            }
            let mut num_x = DMatrix::zeros(2, 3);
            for k in 0..3 {
                let mut e = Vector3::zeros();
                e[k] = h;
                let plus = reprojection(&pose, &cam, &b, &(x_w + e)).0;
                let minus = reprojection(&pose, &cam, &b, &(x_w - e)).0;
                num_x.set_column(k, &((plus - minus) / (2.0 * h)));
            }
            let ap = DMatrix::from_iterator(2, 6, jp.iter().copied());
            let ax = DMatrix::from_iterator(2, 3, jx.iter().copied());
            assert!(relative_error(&ap, &num_p) < 1e-5);
            assert!(relative_error(&ax, &num_x) < 1e-5);
        }
    }

    #[test]
    fn huber_kernel() {
        let k = Huber { delta: 2.0 };
        assert_eq!(k.cost(1.0), 0.5);
        assert_eq!(k.cost(4.0), 6.0);
        assert_eq!(k.weight(1.0), 1.0);
        assert_eq!(k.weight(4.0), 0.5);
    }
}
