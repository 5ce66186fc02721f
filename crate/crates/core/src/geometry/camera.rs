use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

use super::se3::Se3;
use crate::error::{Error, Result};

/// Number of cameras on the rig. The circular-shift loop verification and
/// the cyclic neighbor relation both depend on this value.
pub const NUM_CAMERAS: usize = 4;

const INVERT_TOL: f64 = 1e-10;
const INVERT_MAX_ITERS: usize = 50;

/// Result of projecting a camera-frame point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub pixel: Vector2<f64>,
    pub valid: bool,
}

/// Fisheye camera with an odd-power angle polynomial
/// `r(α) = k1·α + k2·α³ + k3·α⁵ + k4·α⁷` (pixels) followed by a 2×2 affine
/// stretch about the principal point. The optical axis is camera +z.
#[derive(Clone, Debug, PartialEq)]
pub struct FisheyeCamera {
    pub image_width: u32,
    pub image_height: u32,
    pub principal_point: Vector2<f64>,
    pub radial_poly: [f64; 4],
    pub affine: Matrix2<f64>,
    pub fov_half_angle: f64,
    pub cam_to_rig: Se3,
    affine_inv: Matrix2<f64>,
    max_radius: f64,
}

impl FisheyeCamera {
    pub fn new(
        image_width: u32,
        image_height: u32,
        principal_point: Vector2<f64>,
        radial_poly: [f64; 4],
        affine: Matrix2<f64>,
        fov_half_angle: f64,
        cam_to_rig: Se3,
    ) -> Result<Self> {
        if image_width == 0 || image_height == 0 {
            return Err(Error::invalid("image size must be positive"));
        }
        if !(fov_half_angle > 0.0 && fov_half_angle <= std::f64::consts::PI) {
            return Err(Error::invalid(format!(
                "fov_half_angle {fov_half_angle} outside (0, π]"
            )));
        }
        let affine_inv = affine
            .try_inverse()
            .filter(|m| m.iter().all(|x| x.is_finite()))
            .ok_or_else(|| Error::invalid("affine matrix is not invertible"))?;
        // r'(α) is a cubic in α², so a dense sample catches any sign change
        // that matters at pixel scale.
        const SAMPLES: usize = 2048;
        for s in 0..=SAMPLES {
            let a = fov_half_angle * s as f64 / SAMPLES as f64;
            if radial_derivative(&radial_poly, a) <= 0.0 {
                return Err(Error::invalid(format!(
                    "radial polynomial is not strictly increasing at α = {a:.4}"
                )));
            }
        }
        let max_radius = radial(&radial_poly, fov_half_angle);
        Ok(Self {
            image_width,
            image_height,
            principal_point,
            radial_poly,
            affine,
            fov_half_angle,
            cam_to_rig,
            affine_inv,
            max_radius,
        })
    }

    /// Radial distance in pixels (before the affine) for incidence angle `alpha`.
    #[inline]
    pub fn radius(&self, alpha: f64) -> f64 {
        radial(&self.radial_poly, alpha)
    }

    pub fn max_radius(&self) -> f64 {
        self.max_radius
    }

    pub fn project(&self, p: &Vector3<f64>) -> Result<Projection> {
        let rho = (p.x * p.x + p.y * p.y).sqrt();
        if rho == 0.0 && p.z == 0.0 {
            return Err(Error::invalid("cannot project the camera center"));
        }
        Ok(self.project_unchecked(p, rho))
    }

    /// Projection of a point known to differ from the camera center.
    #[inline]
    pub fn project_point(&self, p: &Vector3<f64>) -> Projection {
        let rho = (p.x * p.x + p.y * p.y).sqrt();
        self.project_unchecked(p, rho)
    }

    #[inline]
    fn project_unchecked(&self, p: &Vector3<f64>, rho: f64) -> Projection {
        let alpha = rho.atan2(p.z);
        let valid = alpha <= self.fov_half_angle;
        let dir = if rho > 0.0 {
            Vector2::new(p.x / rho, p.y / rho)
        } else {
            Vector2::zeros()
        };
        let pixel = self.principal_point + self.affine * (dir * self.radius(alpha));
        Projection { pixel, valid }
    }

    /// Unit bearing (camera frame) of a pixel.
    pub fn unproject(&self, pixel: &Vector2<f64>) -> Result<Vector3<f64>> {
        let m = self.affine_inv * (pixel - self.principal_point);
        let r = m.norm();
        if !(r <= self.max_radius * (1.0 + 1e-12)) {
            return Err(Error::OutOfFov {
                u: pixel.x,
                v: pixel.y,
            });
        }
        if r == 0.0 {
            return Ok(Vector3::z());
        }
        let alpha = self.invert_radius(r.min(self.max_radius));
        let s = alpha.sin() / r;
        Ok(Vector3::new(m.x * s, m.y * s, alpha.cos()))
    }

    /// Bisection-guarded Newton inversion of the monotone radial polynomial.
    fn invert_radius(&self, r: f64) -> f64 {
        let (mut lo, mut hi) = (0.0, self.fov_half_angle);
        let k1 = self.radial_poly[0];
        let mut a = if k1 > 0.0 { (r / k1).clamp(lo, hi) } else { 0.5 * hi };
        for _ in 0..INVERT_MAX_ITERS {
            let f = self.radius(a) - r;
            if f > 0.0 {
                hi = a;
            } else {
                lo = a;
            }
            let df = radial_derivative(&self.radial_poly, a);
            let mut next = a - f / df;
            if !(next > lo && next < hi) || !next.is_finite() {
                next = 0.5 * (lo + hi);
            }
            let step = (next - a).abs();
            a = next;
            if step < INVERT_TOL {
                // one more Newton step lands at machine precision
                let f = self.radius(a) - r;
                let df = radial_derivative(&self.radial_poly, a);
                let polished = a - f / df;
                if polished.is_finite() && polished >= 0.0 && polished <= self.fov_half_angle {
                    a = polished;
                }
                break;
            }
        }
        a
    }

    pub fn in_image(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= 0.0
            && pixel.y >= 0.0
            && pixel.x <= (self.image_width - 1) as f64
            && pixel.y <= (self.image_height - 1) as f64
    }

    /// Camera center in rig coordinates.
    pub fn center(&self) -> Vector3<f64> {
        self.cam_to_rig.translation
    }
}

#[inline]
fn radial(k: &[f64; 4], a: f64) -> f64 {
    let a2 = a * a;
    a * (k[0] + a2 * (k[1] + a2 * (k[2] + a2 * k[3])))
}

#[inline]
fn radial_derivative(k: &[f64; 4], a: f64) -> f64 {
    let a2 = a * a;
    k[0] + a2 * (3.0 * k[1] + a2 * (5.0 * k[2] + a2 * 7.0 * k[3]))
}

/// Camera-to-rig rotation for a camera looking horizontally along yaw
/// `heading` (angle from rig +x toward rig +z), image rows pointing down (−y).
pub fn outward_rotation(heading: f64) -> Matrix3<f64> {
    let z = Vector3::new(heading.cos(), 0.0, heading.sin());
    let y = Vector3::new(0.0, -1.0, 0.0);
    let x = y.cross(&z);
    Matrix3::from_columns(&[x, y, z])
}

/// The four-camera rig. Camera order is cyclic: camera `c` neighbors
/// `c ± 1 mod 4`.
#[derive(Clone, Debug, PartialEq)]
pub struct Rig {
    pub cameras: [FisheyeCamera; NUM_CAMERAS],
}

impl Rig {
    pub fn new(cameras: [FisheyeCamera; NUM_CAMERAS]) -> Self {
        Self { cameras }
    }

    /// Square rig with camera centers `radius` meters from the origin, each
    /// facing outward along a cardinal direction (camera `c` at heading `c·90°`).
    pub fn cardinal(
        radius: f64,
        image_size: u32,
        radial_poly: [f64; 4],
        fov_half_angle: f64,
    ) -> Result<Self> {
        let c = (image_size as f64 - 1.0) / 2.0;
        let make = |idx: usize| {
            let heading = idx as f64 * std::f64::consts::FRAC_PI_2;
            let rot = outward_rotation(heading);
            let t = Vector3::new(heading.cos(), 0.0, heading.sin()) * radius;
            FisheyeCamera::new(
                image_size,
                image_size,
                Vector2::new(c, c),
                radial_poly,
                Matrix2::identity(),
                fov_half_angle,
                Se3::from_rotation_matrix(&rot, t),
            )
        };
        Ok(Self::new([make(0)?, make(1)?, make(2)?, make(3)?]))
    }

    pub fn camera(&self, c: usize) -> &FisheyeCamera {
        &self.cameras[c]
    }

    /// Cyclic neighbors of camera `c`.
    pub fn neighbors(c: usize) -> [usize; 2] {
        [(c + NUM_CAMERAS - 1) % NUM_CAMERAS, (c + 1) % NUM_CAMERAS]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::FRAC_PI_4;

    fn test_camera(affine: Matrix2<f64>) -> FisheyeCamera {
        FisheyeCamera::new(
            800,
            768,
            Vector2::new(400.0, 384.0),
            [220.0, -8.0, 0.6, -0.02],
            affine,
            110f64.to_radians(),
            Se3::identity(),
        )
        .unwrap()
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let cam = test_camera(Matrix2::identity());
        let p = cam.project(&Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert!(p.valid);
        assert_eq!(p.pixel, cam.principal_point);
        assert_eq!(cam.unproject(&cam.principal_point).unwrap(), Vector3::z());
    }

    #[test]
    fn beyond_fov_is_invalid() {
        let cam = test_camera(Matrix2::identity());
        let a = cam.fov_half_angle + 0.01;
        let p = cam
            .project(&Vector3::new(a.sin(), 0.0, a.cos()))
            .unwrap();
        assert!(!p.valid);
    }

    #[test]
    fn linear_poly_at_45_degrees() {
        let cam = FisheyeCamera::new(
            1000,
            1000,
            Vector2::new(500.0, 480.0),
            [300.0, 0.0, 0.0, 0.0],
            Matrix2::identity(),
            1.9,
            Se3::identity(),
        )
        .unwrap();
        let p = cam.project(&Vector3::new(1.0, 0.0, 1.0)).unwrap();
        assert!(p.valid);
        assert_relative_eq!(p.pixel.x, 500.0 + 300.0 * FRAC_PI_4, epsilon = 1e-12);
        assert_relative_eq!(p.pixel.y, 480.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_point_and_bad_models_are_rejected() {
        let cam = test_camera(Matrix2::identity());
        assert!(cam.project(&Vector3::zeros()).is_err());
        let singular = Matrix2::new(1.0, 2.0, 2.0, 4.0);
        assert!(FisheyeCamera::new(
            10,
            10,
            Vector2::zeros(),
            [1.0, 0.0, 0.0, 0.0],
            singular,
            1.0,
            Se3::identity()
        )
        .is_err());
        // r'(α) = 100 - 30α² turns negative before 110°
        assert!(FisheyeCamera::new(
            10,
            10,
            Vector2::zeros(),
            [100.0, -10.0, 0.0, 0.0],
            Matrix2::identity(),
            110f64.to_radians(),
            Se3::identity()
        )
        .is_err());
        assert!(cam.unproject(&Vector2::new(400.0 + 10_000.0, 384.0)).is_err());
    }

    #[test]
    fn round_trips_over_random_samples() {
        let cam = test_camera(Matrix2::new(1.01, 0.003, 0.0, 0.98));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut worst_px = 0.0f64;
        let mut worst_rad = 0.0f64;
        for _ in 0..10_000 {
            let alpha = rng.random_range(0.0..cam.fov_half_angle);
            let psi = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let bearing = Vector3::new(alpha.sin() * psi.cos(), alpha.sin() * psi.sin(), alpha.cos());
            let px = cam.project(&(bearing * 3.7)).unwrap();
            assert!(px.valid);
            let back = cam.unproject(&px.pixel).unwrap();
            worst_rad = worst_rad.max(back.cross(&bearing).norm().atan2(back.dot(&bearing)));
            let reproj = cam.project(&back).unwrap();
            worst_px = worst_px.max((reproj.pixel - px.pixel).norm());
        }
        assert!(worst_px < 1e-6, "pixel round trip {worst_px}");
        assert!(worst_rad < 1e-8, "bearing round trip {worst_rad}");
    }

    #[test]
    fn cardinal_rig_faces_outward() {
        let rig = Rig::cardinal(0.3, 512, [125.0, -3.0, 0.0, 0.0], 110f64.to_radians()).unwrap();
        for (c, cam) in rig.cameras.iter().enumerate() {
            let heading = c as f64 * std::f64::consts::FRAC_PI_2;
            let axis = cam.cam_to_rig.rotate(&Vector3::z());
            assert_relative_eq!(axis, Vector3::new(heading.cos(), 0.0, heading.sin()), epsilon = 1e-12);
            assert_relative_eq!(cam.center().norm(), 0.3, epsilon = 1e-12);
            assert_relative_eq!(cam.cam_to_rig.rotation_matrix().determinant(), 1.0, epsilon = 1e-12);
        }
        assert_eq!(Rig::neighbors(0), [3, 1]);
        assert_eq!(Rig::neighbors(3), [2, 0]);
    }
}
