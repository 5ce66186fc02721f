use nalgebra::{Matrix3, Vector3};

use super::residual::Bearing;
use crate::error::{Error, Result};
use crate::geometry::angle_between;

/// Minimum angle between two viewing rays for a usable intersection.
pub const MIN_TRIANGULATION_ANGLE: f64 = 0.5 * std::f64::consts::PI / 180.0;

/// A viewing ray in world coordinates.
#[derive(Clone, Copy, Debug)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
}

#[derive(Clone, Copy, Debug)]
pub struct Triangulation {
    pub point: Vector3<f64>,
    /// RMS angular residual (radians).
    pub residual: f64,
}

fn rms_angle(rays: &[Ray], x: &Vector3<f64>) -> f64 {
    let s: f64 = rays.iter().map(|r| angle_between(&r.direction, &(x - r.origin)).powi(2)).sum();
    (s / rays.len() as f64).sqrt()
}

/// Least-squares ray intersection (midpoint), refined by Gauss-Newton on the
/// angular residuals.
pub fn triangulate(rays: &[Ray]) -> Result<Triangulation> {
    if rays.len() < 2 {
        return Err(Error::TriangulationDegenerate("need at least two rays".into()));
    }
    let max_angle = rays
        .iter()
        .enumerate()
        .flat_map(|(i, a)| rays[i + 1..].iter().map(move |b| angle_between(&a.direction, &b.direction)))
        .fold(0.0, f64::max);
    if max_angle < MIN_TRIANGULATION_ANGLE {
        return Err(Error::TriangulationDegenerate(format!(
            "parallax {:.4}° below minimum",
            max_angle.to_degrees()
        )));
    }
    let mut a = Matrix3::zeros();
    let mut rhs = Vector3::zeros();
    for r in rays {
        let d = r.direction.normalize();
        let p = Matrix3::identity() - d * d.transpose();
        a += p;
        rhs += p * r.origin;
    }
    let mut x = a
        .try_inverse()
        .map(|inv| inv * rhs)
        .ok_or_else(|| Error::TriangulationDegenerate("rays are parallel".into()))?;

    let bearings: Vec<Bearing> = rays.iter().map(|r| Bearing::new(&r.direction)).collect();
    let mut cost = rms_angle(rays, &x);
    for _ in 0..10 {
        let mut h = Matrix3::zeros();
        let mut g = Vector3::zeros();
        for (r, b) in rays.iter().zip(&bearings) {
            let (res, j) = b.residual(&(x - r.origin));
            h += j.transpose() * j;
            g += j.transpose() * res;
        }
        let Some(step) = h.try_inverse().map(|inv| -(inv * g)) else { break };
        let cand = x + step;
        let c = rms_angle(rays, &cand);
        if !(c < cost) {
            break;
        }
        x = cand;
        cost = c;
        if step.norm() < 1e-12 * (1.0 + x.norm()) {
            break;
        }
    }
    if rays.iter().any(|r| r.direction.dot(&(x - r.origin)) <= 0.0) {
        return Err(Error::TriangulationDegenerate("point behind a view".into()));
    }
    Ok(Triangulation { point: x, residual: cost })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, Normal};

    #[test]
    fn noiseless_two_view() {
        let target = Vector3::new(0.0, 0.0, 5.0);
        let rays: Vec<Ray> = [Vector3::new(-0.5, 0.0, 0.0), Vector3::new(0.5, 0.0, 0.0)]
            .iter()
            .map(|o| Ray { origin: *o, direction: (target - o).normalize() })
            .collect();
        let t = triangulate(&rays).unwrap();
        assert!((t.point - target).norm() < 1e-9);
        assert!(t.residual < 1e-12);
    }

    #[test]
    fn parallel_rays_are_rejected() {
        let d = Vector3::new(0.0, 0.0, 1.0);
        let rays = [Ray { origin: Vector3::zeros(), direction: d }, Ray { origin: Vector3::x(), direction: d }];
        assert!(matches!(triangulate(&rays), Err(Error::TriangulationDegenerate(_))));
    }

    #[test]
    fn noisy_views_monte_carlo() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let noise = Normal::new(0.0, 0.1f64.to_radians()).unwrap();
        let target = Vector3::new(0.3, -0.2, 5.0);
        let mut sq = 0.0;
        for _ in 0..100 {
            let rays: Vec<Ray> = (0..10)
                .map(|k| {
                    let origin = Vector3::new(-1.0 + k as f64 * 2.0 / 9.0, rng.random_range(-0.1..0.1), 0.0);
                    let d = (target - origin).normalize();
                    let axis = super::super::residual::tangent_basis(&d);
                    let perturb = axis * nalgebra::Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng));
                    Ray { origin, direction: (d + perturb).normalize() }
                })
                .collect();
            sq += (triangulate(&rays).unwrap().point - target).norm_squared();
        }
        let rms = (sq / 100.0f64).sqrt();
        assert!(rms < 0.05, "rms error {rms}");
    }
}
