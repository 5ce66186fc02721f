use nalgebra::Vector3;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::residual::Bearing;
use crate::error::{Error, Result};
use crate::geometry::{kabsch, Rig, Se3};

/// One feature seen by the current rig: the bearing it was observed along,
/// the world point it is believed to image and, when depth is available, its
/// position in the rig frame.
#[derive(Clone, Copy, Debug)]
pub struct Correspondence {
    pub cam: usize,
    pub bearing: Bearing,
    pub world: Vector3<f64>,
    pub rig_point: Option<Vector3<f64>>,
}

impl Correspondence {
    pub fn angular_error(&self, rig: &Rig, world_from_rig: &Se3) -> f64 {
        let x_r = world_from_rig.inverse().transform_point(&self.world);
        let x_c = rig.cameras[self.cam].cam_to_rig.inverse().transform_point(&x_r);
        self.bearing.angle_to(&x_c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RansacParams {
    /// Angular inlier threshold (radians).
    pub threshold: f64,
    pub confidence: f64,
    pub max_iterations: usize,
    pub min_inlier_ratio: f64,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            threshold: 0.5f64.to_radians(),
            confidence: 0.999,
            max_iterations: 1000,
            min_inlier_ratio: 0.3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RansacResult {
    /// World-from-rig.
    pub pose: Se3,
    pub inliers: Vec<bool>,
    pub inlier_ratio: f64,
    pub iterations: usize,
}

impl RansacResult {
    pub fn num_inliers(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

fn score(rig: &Rig, corr: &[Correspondence], pose: &Se3, threshold: f64) -> Vec<bool> {
    let rig_from_world = pose.inverse();
    corr.iter()
        .map(|c| {
            let x_r = rig_from_world.transform_point(&c.world);
            let x_c = rig.cameras[c.cam].cam_to_rig.inverse().transform_point(&x_r);
            c.bearing.angle_to(&x_c) < threshold
        })
        .collect()
}

fn fit(corr: &[Correspondence], idx: impl Iterator<Item = usize>) -> Option<Se3> {
    let (src, dst): (Vec<_>, Vec<_>) = idx
        .filter_map(|k| corr[k].rig_point.map(|p| (p, corr[k].world)))
        .unzip();
    kabsch(&src, &dst)
}

fn well_spread(p: [Vector3<f64>; 3]) -> bool {
    let area2 = (p[1] - p[0]).cross(&(p[2] - p[0])).norm();
    let scale = (p[1] - p[0]).norm_squared().max((p[2] - p[0]).norm_squared()).max((p[2] - p[1]).norm_squared());
    area2 > 1e-6 * scale
}

/// Rig pose from 3-point rigid alignments of depth-backed features, scored by
/// angular error over every correspondence.
pub fn ransac_rig_pose(rig: &Rig, corr: &[Correspondence], params: &RansacParams) -> Result<RansacResult> {
    let depth: Vec<usize> = (0..corr.len()).filter(|&k| corr[k].rig_point.is_some()).collect();
    if depth.len() < 3 {
        return Err(Error::InsufficientData(format!("{} depth-backed correspondences", depth.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(Se3, Vec<bool>, usize)> = None;
    let mut needed = params.max_iterations;
    let mut iterations = 0;
    while iterations < needed.min(params.max_iterations) {
        iterations += 1;
        let pick = sample(&mut rng, depth.len(), 3);
        let ids = [depth[pick.index(0)], depth[pick.index(1)], depth[pick.index(2)]];
        if !well_spread(ids.map(|k| corr[k].rig_point.unwrap())) {
            continue;
        }
        let Some(pose) = fit(corr, ids.into_iter()) else { continue };
        let inl = score(rig, corr, &pose, params.threshold);
        let count = inl.iter().filter(|&&b| b).count();
        if best.as_ref().is_none_or(|b| count > b.2) {
            // inliers that can seed a sample drive the adaptive stopping rule
            let w = depth.iter().filter(|&&k| inl[k]).count() as f64 / depth.len() as f64;
            let miss = 1.0 - w.powi(3);
            needed = if miss <= 0.0 {
                0
            } else if miss >= 1.0 {
                params.max_iterations
            } else {
                ((1.0 - params.confidence).ln() / miss.ln()).ceil() as usize
            };
            best = Some((pose, inl, count));
        }
    }
    let Some((mut pose, mut inliers, _)) = best else {
        return Err(Error::InsufficientData("every minimal sample was degenerate".into()));
    };
    for _ in 0..3 {
        let Some(refit) = fit(corr, (0..corr.len()).filter(|&k| inliers[k])) else { break };
        let inl = score(rig, corr, &refit, params.threshold);
        if inl.iter().filter(|&&b| b).count() < inliers.iter().filter(|&&b| b).count() {
            break;
        }
        let same = inl == inliers;
        pose = refit;
        inliers = inl;
        if same {
            break;
        }
    }
    let ratio = inliers.iter().filter(|&&b| b).count() as f64 / corr.len() as f64;
    if ratio < params.min_inlier_ratio {
        return Err(Error::PoseFailure { inlier_ratio: ratio });
    }
    Ok(RansacResult { pose, inliers, inlier_ratio: ratio, iterations })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use nalgebra::Vector6;
    use rand::Rng;

    pub(crate) fn test_rig() -> Rig {
        Rig::cardinal(0.3, 512, [125.0, -3.0, 0.0, 0.0], 110f64.to_radians()).unwrap()
    }

    /// Correspondences for a known pose; `outliers` of them get a random
    /// world point.
    pub(crate) fn synthetic(rng: &mut impl Rng, rig: &Rig, pose: &Se3, n: usize, outliers: usize) -> Vec<Correspondence> {
        (0..n)
            .map(|k| {
                let cam = k % 4;
                let c = &rig.cameras[cam];
                let x_c = loop {
                    let dir = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-0.6..0.6), rng.random_range(0.3..1.0));
                    break dir.normalize() * rng.random_range(1.0..8.0);
                };
                let x_r = c.cam_to_rig.transform_point(&x_c);
                let mut world = pose.transform_point(&x_r);
                if k < outliers {
                    world = Vector3::new(rng.random_range(-10.0..10.0), rng.random_range(-3.0..3.0), rng.random_range(-10.0..10.0));
                }
                Correspondence { cam, bearing: Bearing::new(&x_c), world, rig_point: Some(x_r) }
            })
            .collect()
    }

    #[test]
    fn exact_recovery_without_outliers() {
        let rig = test_rig();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pose = Se3::exp(&Vector6::new(0.1, 0.7, -0.2, 1.0, 0.2, -3.0));
        let corr = synthetic(&mut rng, &rig, &pose, 30, 0);
        let res = ransac_rig_pose(&rig, &corr, &RansacParams::default()).unwrap();
        assert!((res.pose.inverse() * pose).rotation_angle() < 1e-10);
        assert!((res.pose.translation - pose.translation).norm() < 1e-10);
        assert_eq!(res.num_inliers(), 30);
    }

    #[test]
    fn forty_percent_outliers() {
        let rig = test_rig();
        let mut ok = 0;
        for trial in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
            let pose = Se3::exp(&Vector6::from_fn(|_, _| rng.random_range(-1.0..1.0)));
            let corr = synthetic(&mut rng, &rig, &pose, 100, 40);
            let params = RansacParams { seed: trial, ..Default::default() };
            if let Ok(res) = ransac_rig_pose(&rig, &corr, &params) {
                let rot = (res.pose.inverse() * pose).rotation_angle();
                let trans = (res.pose.translation - pose.translation).norm();
                ok += (rot < 1e-6 && trans < 1e-6) as usize;
            }
        }
        assert!(ok >= 99, "{ok}/100");
    }

    #[test]
    fn collinear_points_are_insufficient() {
        let rig = test_rig();
        let corr: Vec<Correspondence> = (0..10)
            .map(|k| {
                let x_r = Vector3::new(2.0 + k as f64, 0.0, 0.0);
                Correspondence { cam: 0, bearing: Bearing::new(&x_r), world: x_r, rig_point: Some(x_r) }
            })
            .collect();
        assert!(matches!(ransac_rig_pose(&rig, &corr, &RansacParams::default()), Err(Error::InsufficientData(_))));
        assert!(matches!(ransac_rig_pose(&rig, &corr[..2], &RansacParams::default()), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let rig = test_rig();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pose = Se3::exp(&Vector6::new(0.0, 0.3, 0.0, 0.5, 0.0, 0.5));
        let corr = synthetic(&mut rng, &rig, &pose, 60, 30);
        let p = RansacParams { seed: 42, ..Default::default() };
        let a = ransac_rig_pose(&rig, &corr, &p).unwrap();
        let b = ransac_rig_pose(&rig, &corr, &p).unwrap();
        assert_eq!(a.inliers, b.inliers);
        assert_eq!(a.pose, b.pose);
    }
}
