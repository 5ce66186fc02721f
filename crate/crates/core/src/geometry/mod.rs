//! Camera model, rig, sphere grid and rigid-motion utilities.

mod align;
pub mod calib;
mod camera;
mod grid;
mod se3;

pub use align::kabsch;
pub use camera::{outward_rotation, FisheyeCamera, Projection, Rig, NUM_CAMERAS};
pub use grid::{depth_to_pointcloud, spherical_ray, DepthMap, SphereGrid};
pub use se3::{hat, so3_exp, so3_log, Se3};

use nalgebra::Vector3;

/// Angle between two non-zero vectors, accurate near 0 and π.
#[inline]
pub fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}
