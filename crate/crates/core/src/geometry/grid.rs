use std::f64::consts::PI;

use nalgebra::Vector3;

use super::se3::Se3;
use crate::error::{Error, Result};

/// Equirectangular sampling of the unit sphere around the rig origin plus
/// the inverse-depth hypothesis count used by the sweep.
///
/// Pixel centers: `θ(i) = −π + (i + 0.5)·2π/W`, `φ(j) = φmin + (j + 0.5)·(φmax − φmin)/H`,
/// ray `p(θ, φ) = (cos φ cos θ, sin φ, cos φ sin θ)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SphereGrid {
    pub width: usize,
    pub height: usize,
    pub phi_min: f64,
    pub phi_max: f64,
    pub num_hypotheses: usize,
    pub min_depth: f64,
}

impl Default for SphereGrid {
    fn default() -> Self {
        Self {
            width: 640,
            height: 160,
            phi_min: -PI / 4.0,
            phi_max: PI / 4.0,
            num_hypotheses: 192,
            min_depth: 0.55,
        }
    }
}

impl SphereGrid {
    pub fn new(
        width: usize,
        height: usize,
        phi_min: f64,
        phi_max: f64,
        num_hypotheses: usize,
        min_depth: f64,
    ) -> Result<Self> {
        let grid = Self {
            width,
            height,
            phi_min,
            phi_max,
            num_hypotheses,
            min_depth,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.num_hypotheses == 0 {
            return Err(Error::invalid("sphere grid W, H and N must be at least 1"));
        }
        if !(self.phi_min < self.phi_max)
            || self.phi_min < -PI / 2.0
            || self.phi_max > PI / 2.0
        {
            return Err(Error::invalid(format!(
                "invalid φ range [{}, {}]",
                self.phi_min, self.phi_max
            )));
        }
        if !(self.min_depth > 0.0 && self.min_depth.is_finite()) {
            return Err(Error::invalid("min_depth must be positive"));
        }
        Ok(())
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.width + i
    }

    #[inline]
    pub fn theta(&self, i: f64) -> f64 {
        -PI + (i + 0.5) * 2.0 * PI / self.width as f64
    }

    #[inline]
    pub fn phi(&self, j: f64) -> f64 {
        self.phi_min + (j + 0.5) * (self.phi_max - self.phi_min) / self.height as f64
    }

    pub fn ray(&self, i: usize, j: usize) -> Result<Vector3<f64>> {
        if i >= self.width || j >= self.height {
            return Err(Error::invalid(format!(
                "grid pixel ({i}, {j}) outside {}x{}",
                self.width, self.height
            )));
        }
        Ok(self.ray_unchecked(i, j))
    }

    #[inline]
    pub fn ray_unchecked(&self, i: usize, j: usize) -> Vector3<f64> {
        spherical_ray(self.theta(i as f64), self.phi(j as f64))
    }

    /// Continuous grid coordinates `(i, j)` of a direction, or `None` when its
    /// elevation falls outside `[φmin, φmax]`. `i` lies in `[−0.5, W − 0.5)`.
    pub fn direction_to_pixel(&self, d: &Vector3<f64>) -> Option<(f64, f64)> {
        let horiz = (d.x * d.x + d.z * d.z).sqrt();
        if horiz == 0.0 && d.y == 0.0 {
            return None;
        }
        let phi = d.y.atan2(horiz);
        if phi < self.phi_min || phi > self.phi_max {
            return None;
        }
        let theta = d.z.atan2(d.x);
        let mut fi = (theta + PI) / (2.0 * PI) * self.width as f64 - 0.5;
        if fi >= self.width as f64 - 0.5 {
            fi -= self.width as f64;
        }
        let fj = (phi - self.phi_min) / (self.phi_max - self.phi_min) * self.height as f64 - 0.5;
        Some((fi, fj))
    }
}

/// `p(θ, φ)` with the rig's +y axis as the φ = π/2 pole.
#[inline]
pub fn spherical_ray(theta: f64, phi: f64) -> Vector3<f64> {
    let (sp, cp) = phi.sin_cos();
    let (st, ct) = theta.sin_cos();
    Vector3::new(cp * ct, sp, cp * st)
}

/// Per-pixel range (meters along the unit ray from the rig origin) on a
/// sphere grid, row-major with `j` (elevation) as the row. NaN marks invalid.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub grid: SphereGrid,
    pub data: Vec<f64>,
}

impl DepthMap {
    pub fn new(grid: SphereGrid, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.num_pixels() {
            return Err(Error::invalid(format!(
                "depth map has {} values, grid needs {}",
                data.len(),
                grid.num_pixels()
            )));
        }
        Ok(Self { grid, data })
    }

    pub fn filled(grid: SphereGrid, value: f64) -> Self {
        Self {
            data: vec![value; grid.num_pixels()],
            grid,
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let d = self.data[self.grid.index(i, j)];
        (d.is_finite() && d > 0.0).then_some(d)
    }

    /// Depth along direction `d` (rig frame). Bilinear on valid, mutually
    /// consistent neighbors; nearest-pixel otherwise (depth edges).
    pub fn sample_direction(&self, d: &Vector3<f64>) -> Option<f64> {
        let (fi, fj) = self.grid.direction_to_pixel(d)?;
        let w = self.grid.width as i64;
        let h = self.grid.height as i64;
        let fj = fj.clamp(0.0, (h - 1) as f64);
        let i0 = fi.floor() as i64;
        let j0 = (fj.floor() as i64).min(h - 1);
        let ti = fi - i0 as f64;
        let tj = fj - j0 as f64;
        let j1 = (j0 + 1).min(h - 1);
        let wrap = |i: i64| i.rem_euclid(w) as usize;
        let corners = [
            (wrap(i0), j0 as usize, (1.0 - ti) * (1.0 - tj)),
            (wrap(i0 + 1), j0 as usize, ti * (1.0 - tj)),
            (wrap(i0), j1 as usize, (1.0 - ti) * tj),
            (wrap(i0 + 1), j1 as usize, ti * tj),
        ];
        let mut vals = [0.0; 4];
        let mut all_valid = true;
        for (k, &(i, j, _)) in corners.iter().enumerate() {
            match self.get(i, j) {
                Some(v) => vals[k] = v,
                None => all_valid = false,
            }
        }
        if all_valid {
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(0.0, f64::max);
            if hi <= lo * 1.05 {
                return Some(corners.iter().zip(vals).map(|(c, v)| c.2 * v).sum());
            }
        }
        let ni = wrap(fi.round() as i64);
        let nj = (fj.round() as i64).clamp(0, h - 1) as usize;
        self.get(ni, nj)
    }
}

/// World points for every valid depth pixel: `pose ∘ (depth · ray)`.
pub fn depth_to_pointcloud(depth: &DepthMap, rig_pose: &Se3) -> Vec<Vector3<f64>> {
    let grid = &depth.grid;
    let mut out = Vec::with_capacity(depth.data.len());
    for j in 0..grid.height {
        for i in 0..grid.width {
            if let Some(d) = depth.get(i, j) {
                out.push(rig_pose.transform_point(&(grid.ray_unchecked(i, j) * d)));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Vector6;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn ray_examples() {
        assert_relative_eq!(spherical_ray(0.0, 0.0), Vector3::x(), epsilon = 1e-15);
        assert_relative_eq!(spherical_ray(FRAC_PI_2, 0.0), Vector3::z(), epsilon = 1e-15);
        assert_relative_eq!(spherical_ray(0.0, FRAC_PI_2), Vector3::y(), epsilon = 1e-15);
    }

    #[test]
    fn grid_rays_are_unit_and_bounds_checked() {
        let g = SphereGrid::new(64, 16, -0.7, 0.5, 8, 0.5).unwrap();
        for j in 0..g.height {
            for i in 0..g.width {
                let r = g.ray(i, j).unwrap();
                assert!((r.norm() - 1.0).abs() < 1e-12);
                let (fi, fj) = g.direction_to_pixel(&r).unwrap();
                assert_relative_eq!(fi, i as f64, epsilon = 1e-9);
                assert_relative_eq!(fj, j as f64, epsilon = 1e-9);
            }
        }
        assert!(g.ray(64, 0).is_err());
        assert!(g.ray(0, 16).is_err());
        assert!(g.direction_to_pixel(&Vector3::y()).is_none());
        assert!(SphereGrid::new(0, 1, -0.1, 0.1, 1, 1.0).is_err());
        assert!(SphereGrid::new(1, 1, 0.1, -0.1, 1, 1.0).is_err());
    }

    #[test]
    fn pointcloud_examples() {
        let g = SphereGrid::new(32, 8, -0.6, 0.6, 4, 0.5).unwrap();
        let unit = depth_to_pointcloud(&DepthMap::filled(g, 1.0), &Se3::identity());
        assert_eq!(unit.len(), 256);
        assert_eq!(unit[9], g.ray_unchecked(9, 0));

        let t = Vector3::new(1.0, -2.0, 0.5);
        let shifted = depth_to_pointcloud(&DepthMap::filled(g, 3.0), &Se3::from_translation(t));
        for (k, p) in shifted.iter().enumerate() {
            let expect = g.ray_unchecked(k % 32, k / 32) * 3.0 + t;
            assert_relative_eq!(*p, expect, epsilon = 1e-12);
        }

        let room = depth_to_pointcloud(&DepthMap::filled(g, 10.0), &Se3::identity());
        assert!(room.iter().all(|p| (p.norm() - 10.0).abs() < 1e-9));

        let mut holes = DepthMap::filled(g, 2.0);
        holes.data[3] = f64::NAN;
        holes.data[4] = -1.0;
        assert_eq!(depth_to_pointcloud(&holes, &Se3::identity()).len(), 254);
    }

    #[test]
    fn pointcloud_is_pose_equivariant() {
        let g = SphereGrid::new(40, 10, -0.7, 0.7, 4, 0.5).unwrap();
        let data = (0..g.num_pixels()).map(|k| 1.0 + (k % 7) as f64 * 0.3).collect();
        let depth = DepthMap::new(g, data).unwrap();
        let a = Se3::exp(&Vector6::new(0.2, -0.4, 0.1, 1.0, 0.0, -3.0));
        let b = Se3::exp(&Vector6::new(-1.1, 0.3, 0.7, 0.5, 2.0, 1.0));
        let base = depth_to_pointcloud(&depth, &a);
        let moved = depth_to_pointcloud(&depth, &(b * a));
        let worst = base
            .iter()
            .zip(&moved)
            .map(|(p, q)| (b.transform_point(p) - q).norm())
            .fold(0.0, f64::max);
        assert!(worst < 1e-9);
    }

    #[test]
    fn direction_sampling_interpolates_and_respects_holes() {
        let g = SphereGrid::new(36, 9, -0.8, 0.8, 4, 0.5).unwrap();
        let mut depth = DepthMap::filled(g, 4.0);
        assert_relative_eq!(depth.sample_direction(&Vector3::new(1.0, 0.1, 0.3)).unwrap(), 4.0);
        for v in depth.data.iter_mut() {
            *v = f64::NAN;
        }
        assert!(depth.sample_direction(&Vector3::x()).is_none());
        assert!(depth.sample_direction(&Vector3::new(0.1, 5.0, 0.0)).is_none());
    }
}
