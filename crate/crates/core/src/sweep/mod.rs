//! Spherical-sweep stereo.
//!
//! Concentric spheres around the rig origin are placed at uniformly spaced
//! inverse depths. Every grid ray is intersected with every sphere, the
//! intersection is projected into each fisheye image ([`SweepTable`]), the
//! images are compared with patch ZNCC ([`compute_cost_volume`]) and the
//! per-ray inverse-depth index is regressed with a soft-argmin
//! ([`regress_inverse_depth`]).

mod cost;
mod regress;

pub use cost::{box_smooth, compute_cost_volume, CostKind, CostParams, CostVolume};
pub use regress::{
    depth_to_index_map, index_to_depth, regress_inverse_depth, InverseDepthMap, DEFAULT_FAR_CAP,
    DEFAULT_TEMPERATURE,
};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Rig, SphereGrid, NUM_CAMERAS};

/// Inverse depths `ρ_n = n/(N−1) · 1/min_depth`; `ρ_0 = 0` is the sphere at infinity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HypothesisSet {
    pub count: usize,
    pub min_depth: f64,
}

impl HypothesisSet {
    pub fn new(count: usize, min_depth: f64) -> Result<Self> {
        if count < 2 {
            return Err(Error::invalid("at least two inverse-depth hypotheses are needed"));
        }
        if !(min_depth > 0.0 && min_depth.is_finite()) {
            return Err(Error::invalid("min_depth must be positive"));
        }
        Ok(Self { count, min_depth })
    }

    pub fn from_grid(grid: &SphereGrid) -> Result<Self> {
        Self::new(grid.num_hypotheses, grid.min_depth)
    }

    pub fn max_inverse_depth(&self) -> f64 {
        1.0 / self.min_depth
    }

    /// Inverse depth at a (possibly fractional) index.
    #[inline]
    pub fn inverse_depth(&self, n: f64) -> f64 {
        n / (self.count - 1) as f64 * self.max_inverse_depth()
    }

    /// Fractional index of an inverse depth.
    #[inline]
    pub fn index_of(&self, inverse_depth: f64) -> f64 {
        inverse_depth * self.min_depth * (self.count - 1) as f64
    }

    pub fn inverse_depths(&self) -> Vec<f64> {
        (0..self.count).map(|n| self.inverse_depth(n as f64)).collect()
    }
}

/// Image-plane sample coordinates for every (camera, grid pixel, hypothesis).
///
/// Layout per camera: `((j·W + i)·N + n)`. Invalid entries (outside the
/// field of view or the image) hold NaN.
#[derive(Clone, Debug)]
pub struct SweepTable {
    pub grid: SphereGrid,
    pub hypotheses: HypothesisSet,
    coords: [Vec<[f32; 2]>; NUM_CAMERAS],
}

impl SweepTable {
    #[inline]
    pub fn offset(&self, i: usize, j: usize, n: usize) -> usize {
        (j * self.grid.width + i) * self.hypotheses.count + n
    }

    /// Sample coordinate, or `None` where camera `c` cannot see the point.
    #[inline]
    pub fn sample(&self, c: usize, i: usize, j: usize, n: usize) -> Option<[f32; 2]> {
        let s = self.coords[c][self.offset(i, j, n)];
        (!s[0].is_nan()).then_some(s)
    }

    pub(crate) fn camera_coords(&self, c: usize) -> &[[f32; 2]] {
        &self.coords[c]
    }

    pub fn len_per_camera(&self) -> usize {
        self.coords[0].len()
    }
}

pub fn build_sweep_table(rig: &Rig, grid: &SphereGrid, hyp: &HypothesisSet) -> SweepTable {
    let (w, n_hyp) = (grid.width, hyp.count);
    let inv: Vec<f64> = hyp.inverse_depths();
    let coords = std::array::from_fn(|c| {
        let cam = &rig.cameras[c];
        let rig_to_cam = cam.cam_to_rig.inverse();
        let mut out = vec![[f32::NAN; 2]; grid.num_pixels() * n_hyp];
        out.par_chunks_mut(w * n_hyp).enumerate().for_each(|(j, row)| {
            for i in 0..w {
                let ray = grid.ray_unchecked(i, j);
                for (n, &rho) in inv.iter().enumerate() {
                    let p_cam = if rho == 0.0 {
                        rig_to_cam.rotate(&ray)
                    } else {
                        rig_to_cam.transform_point(&(ray / rho))
                    };
                    if p_cam.norm_squared() == 0.0 {
                        continue;
                    }
                    let proj = cam.project_point(&p_cam);
                    if proj.valid && cam.in_image(&proj.pixel) {
                        row[i * n_hyp + n] = [proj.pixel.x as f32, proj.pixel.y as f32];
                    }
                }
            }
        });
        out
    });
    SweepTable {
        grid: *grid,
        hypotheses: *hyp,
        coords,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{outward_rotation, FisheyeCamera, Se3};
    use nalgebra::{Matrix2, Vector2, Vector3};

    fn camera(heading: f64, center: Vector3<f64>, fov: f64, k1: f64) -> FisheyeCamera {
        FisheyeCamera::new(
            401,
            401,
            Vector2::new(200.0, 200.0),
            [k1, 0.0, 0.0, 0.0],
            Matrix2::identity(),
            fov,
            Se3::from_rotation_matrix(&outward_rotation(heading), center),
        )
        .unwrap()
    }

    #[test]
    fn hypotheses_are_uniform_in_inverse_depth() {
        let h = HypothesisSet::new(5, 0.5).unwrap();
        assert_eq!(h.inverse_depths(), vec![0.0, 0.5, 1.0, 1.5, 2.0]);
        assert_eq!(h.index_of(1.5), 3.0);
        assert!(HypothesisSet::new(1, 0.5).is_err());
    }

    #[test]
    fn rays_behind_every_camera_are_invalid() {
        // all four cameras look along +x with a 120° field of view
        let cams = std::array::from_fn(|_| camera(0.0, Vector3::zeros(), 60f64.to_radians(), 100.0));
        let rig = Rig::new(cams);
        let grid = SphereGrid::new(9, 3, -0.3, 0.3, 4, 0.5).unwrap();
        let table = build_sweep_table(&rig, &grid, &HypothesisSet::from_grid(&grid).unwrap());
        // i = 0 is θ ≈ −π + 20°, i.e. pointing backwards
        for c in 0..4 {
            assert!(table.sample(c, 0, 1, 0).is_none());
            assert!(table.sample(c, 4, 1, 0).is_some());
        }
    }

    #[test]
    fn zero_baseline_has_no_parallax() {
        let cams = std::array::from_fn(|c| {
            camera(c as f64 * std::f64::consts::FRAC_PI_2, Vector3::zeros(), 1.9, 60.0)
        });
        let rig = Rig::new(cams);
        let grid = SphereGrid::new(32, 8, -0.6, 0.6, 16, 0.5).unwrap();
        let table = build_sweep_table(&rig, &grid, &HypothesisSet::from_grid(&grid).unwrap());
        for c in 0..4 {
            for j in 0..8 {
                for i in 0..32 {
                    let first = table.sample(c, i, j, 0);
                    for n in 1..16 {
                        let s = table.sample(c, i, j, n);
                        assert_eq!(first.is_some(), s.is_some());
                        if let (Some(a), Some(b)) = (first, s) {
                            assert!((a[0] - b[0]).abs() < 1e-3 && (a[1] - b[1]).abs() < 1e-3);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn two_view_disparity_matches_closed_form() {
        // cameras 0 and 1 both face +x, offset ±s along rig z
        let (s, k1) = (0.25, 150.0);
        let cams = [
            camera(0.0, Vector3::new(0.0, 0.0, s), 1.5, k1),
            camera(0.0, Vector3::new(0.0, 0.0, -s), 1.5, k1),
            camera(std::f64::consts::PI, Vector3::zeros(), 1.5, k1),
            camera(std::f64::consts::PI, Vector3::zeros(), 1.5, k1),
        ];
        let rig = Rig::new(cams);
        // odd W and H put a pixel center exactly on θ = 0, φ = 0
        let grid = SphereGrid::new(33, 5, -0.4, 0.4, 11, 0.5).unwrap();
        let hyp = HypothesisSet::from_grid(&grid).unwrap();
        let table = build_sweep_table(&rig, &grid, &hyp);
        for n in 1..11 {
            let z = 1.0 / hyp.inverse_depth(n as f64);
            let a = table.sample(0, 16, 2, n).unwrap();
            let b = table.sample(1, 16, 2, n).unwrap();
            let expected = 2.0 * k1 * (s / z).atan();
            assert!(((b[0] - a[0]) as f64 - expected).abs() < 1e-3, "n={n}");
            assert!((a[1] - 200.0).abs() < 1e-3 && (b[1] - 200.0).abs() < 1e-3);
        }
    }

    #[test]
    fn shrinking_fov_never_validates_entries() {
        let grid = SphereGrid::new(24, 6, -0.7, 0.7, 8, 0.4).unwrap();
        let hyp = HypothesisSet::from_grid(&grid).unwrap();
        let wide = Rig::cardinal(0.3, 401, [60.0, 0.0, 0.0, 0.0], 1.9).unwrap();
        let narrow = Rig::cardinal(0.3, 401, [60.0, 0.0, 0.0, 0.0], 1.2).unwrap();
        let tw = build_sweep_table(&wide, &grid, &hyp);
        let tn = build_sweep_table(&narrow, &grid, &hyp);
        let mut fewer = false;
        for c in 0..4 {
            for (a, b) in tw.camera_coords(c).iter().zip(tn.camera_coords(c)) {
                assert!(!(a[0].is_nan() && !b[0].is_nan()));
                fewer |= !a[0].is_nan() && b[0].is_nan();
            }
        }
        assert!(fewer);
    }
}
