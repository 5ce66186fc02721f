use std::collections::BTreeMap;

use nalgebra::Vector3;

use crate::geometry::{DepthMap, Rig, NUM_CAMERAS};
use crate::io::tracks::FrameTracks;

const ATTACH_ITERATIONS: usize = 10;
const ATTACH_TOLERANCE: f64 = 1e-6;

/// Rig-frame 3D points of a frame's keypoints, indexed like
/// `FrameTracks::cameras`. `None` where no depth could be attached.
pub type DepthPoints = [Vec<Option<Vector3<f64>>>; NUM_CAMERAS];

/// Back-projects keypoints onto the depth map.
///
/// The camera ray starts at the camera center, not at the rig origin where
/// the depth map is centered, so the point is found by a fixed-point
/// iteration: sample the range along the current direction from the rig
/// origin, then move to where the camera ray reaches that range.
pub fn attach_depth(frame: &FrameTracks, depth: &DepthMap, rig: &Rig) -> DepthPoints {
    std::array::from_fn(|c| {
        let cam = &rig.cameras[c];
        let origin = cam.center();
        frame.cameras[c]
            .iter()
            .map(|obs| {
                let b = cam.unproject(&obs.pixel).ok()?;
                let dir = cam.cam_to_rig.rotate(&b);
                intersect(depth, &origin, &dir)
            })
            .collect()
    })
}

/// Point on the ray `origin + s·dir` whose distance from the rig origin
/// equals the depth map's range in its own direction.
fn intersect(depth: &DepthMap, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Vector3<f64>> {
    let tb = origin.dot(dir);
    let t2 = origin.norm_squared();
    let along = |range: f64| -> Option<f64> {
        let disc = tb * tb - t2 + range * range;
        (disc >= 0.0).then(|| -tb + disc.sqrt()).filter(|s| *s > 0.0)
    };
    let mut s = along(depth.sample_direction(dir)?)?;
    for _ in 0..ATTACH_ITERATIONS {
        let x = origin + dir * s;
        let next = along(depth.sample_direction(&x)?)?;
        let done = (next - s).abs() < ATTACH_TOLERANCE * s;
        s = next;
        if done {
            break;
        }
    }
    Some(origin + dir * s)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchParams {
    pub radius_px: f64,
    pub hamming_max: u32,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self { radius_px: 8.0, hamming_max: 64 }
    }
}

/// A keypoint, as (camera, index into that camera's list).
pub type KeypointRef = (usize, usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct InterviewPair {
    /// Depth-backed keypoint that was reprojected.
    pub source: KeypointRef,
    /// Keypoint found in the adjacent camera.
    pub target: KeypointRef,
}

/// Ordering key: Hamming distance when both descriptors exist, then pixel
/// distance, then track id.
type Rank = (u32, u64, u64);

/// Reprojects depth-backed keypoints into the two adjacent cameras and pairs
/// each with its best-ranked keypoint within `radius_px`. A pair survives only
/// if the target has no better-ranked incoming proposal from the same camera.
pub fn interview_match(frame: &FrameTracks, points: &DepthPoints, rig: &Rig, params: &MatchParams) -> Vec<InterviewPair> {
    let mut best_in: BTreeMap<(KeypointRef, usize), (Rank, KeypointRef)> = BTreeMap::new();
    for c in 0..NUM_CAMERAS {
        for (k, x) in points[c].iter().enumerate() {
            let Some(x_r) = x else { continue };
            let desc = frame.cameras[c][k].descriptor;
            for n in Rig::neighbors(c) {
                let cam = &rig.cameras[n];
                let x_n = cam.cam_to_rig.inverse().transform_point(x_r);
                let Ok(p) = cam.project(&x_n) else { continue };
                if !p.valid || !cam.in_image(&p.pixel) {
                    continue;
                }
                let mut best: Option<(Rank, usize)> = None;
                for (m, cand) in frame.cameras[n].iter().enumerate() {
                    let dist = (cand.pixel - p.pixel).norm();
                    if dist > params.radius_px {
                        continue;
                    }
                    let ham = match (desc, cand.descriptor) {
                        (Some(a), Some(b)) => {
                            let h = a.hamming(&b);
                            if h > params.hamming_max {
                                continue;
                            }
                            h
                        }
                        _ => 0,
                    };
                    // pixel distance in 1e-9 px units keeps the key totally ordered
                    let rank = (ham, (dist * 1e9).round() as u64, cand.track_id);
                    if best.is_none_or(|(r, _)| rank < r) {
                        best = Some((rank, m));
                    }
                }
                if let Some((rank, m)) = best {
                    let slot = best_in.entry(((n, m), c)).or_insert((rank, (c, k)));
                    if (rank, (c, k)) < *slot {
                        *slot = (rank, (c, k));
                    }
                }
            }
        }
    }
    best_in
        .into_iter()
        .map(|((target, _), (_, source))| InterviewPair { source, target })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SphereGrid;
    use crate::io::tracks::{Descriptor, Observation};
    use nalgebra::Vector2;

    fn rig() -> Rig {
        Rig::cardinal(0.3, 512, [125.0, -3.0, 0.0, 0.0], 110f64.to_radians()).unwrap()
    }

    fn sphere_depth(radius: f64, width: usize, height: usize) -> DepthMap {
        let grid = SphereGrid::new(width, height, -std::f64::consts::FRAC_PI_4, std::f64::consts::FRAC_PI_4, 64, 0.5).unwrap();
        DepthMap::filled(grid, radius)
    }

    fn obs(track_id: u64, u: f64, v: f64, descriptor: Option<Descriptor>) -> Observation {
        Observation { track_id, pixel: Vector2::new(u, v), descriptor }
    }

    #[test]
    fn sphere_room_points_lie_on_the_sphere() {
        let rig = rig();
        let depth = sphere_depth(5.0, 640, 160);
        let mut frame = FrameTracks::empty(0);
        for c in 0..4 {
            for a in 0..10 {
                for b in 0..10 {
                    frame.cameras[c].push(obs((a * 10 + b) as u64, 60.0 + 40.0 * a as f64, 160.0 + 20.0 * b as f64, None));
                }
            }
        }
        let pts = attach_depth(&frame, &depth, &rig);
        let mut count = 0;
        for c in 0..4 {
            for (o, p) in frame.cameras[c].iter().zip(&pts[c]) {
                let Some(p) = p else { continue };
                count += 1;
                assert!((p.norm() - 5.0).abs() < 0.1, "{}", p.norm());
                // the point lies on the keypoint's ray
                let b = rig.cameras[c].unproject(&o.pixel).unwrap();
                let x_c = rig.cameras[c].cam_to_rig.inverse().transform_point(p);
                assert!(crate::geometry::angle_between(&b, &x_c) < 1e-9);
            }
        }
        assert!(count > 300);
    }

    #[test]
    fn invalid_or_out_of_grid_pixels_stay_unattached() {
        let rig = rig();
        let mut depth = sphere_depth(5.0, 320, 80);
        let mut frame = FrameTracks::empty(0);
        // straight ahead of camera 0 (+x) and straight up from camera 0
        frame.cameras[0].push(obs(1, 255.5, 255.5, None));
        let up = rig.cameras[0].project(&Vector3::new(0.0, -1.0, 0.2)).unwrap().pixel;
        frame.cameras[0].push(obs(2, up.x, up.y, None));
        let pts = attach_depth(&frame, &depth, &rig);
        assert!(pts[0][0].is_some());
        assert!(pts[0][1].is_none());
        depth.data.iter_mut().for_each(|d| *d = f64::NAN);
        assert!(attach_depth(&frame, &depth, &rig)[0][0].is_none());
    }

    #[test]
    fn projection_outside_adjacent_view_yields_no_match() {
        let rig = rig();
        let mut frame = FrameTracks::empty(0);
        frame.cameras[0].push(obs(1, 255.5, 255.5, None));
        frame.cameras[1].push(obs(2, 255.5, 255.5, None));
        frame.cameras[3].push(obs(3, 255.5, 255.5, None));
        let mut pts: DepthPoints = Default::default();
        pts[0] = vec![Some(Vector3::new(5.0, 0.0, 0.0))];
        pts[1] = vec![None];
        pts[3] = vec![None];
        assert!(interview_match(&frame, &pts, &rig, &MatchParams::default()).is_empty());
    }

    #[test]
    fn ranking_prefers_hamming_then_track_id() {
        let rig = rig();
        // a point seen by cameras 0 and 1 (heading 45°)
        let x = Vector3::new(3.0, 0.2, 3.0);
        let proj = |c: usize| {
            let cam = &rig.cameras[c];
            cam.project(&cam.cam_to_rig.inverse().transform_point(&x)).unwrap().pixel
        };
        let (p0, p1) = (proj(0), proj(1));
        let d = Descriptor([0, 0, 0, 0]);
        let near = |bits: u64| Some(Descriptor([bits, 0, 0, 0]));
        let mut frame = FrameTracks::empty(0);
        frame.cameras[0].push(obs(10, p0.x, p0.y, Some(d)));
        frame.cameras[1].push(obs(7, p1.x + 2.0, p1.y, near(0b111)));
        frame.cameras[1].push(obs(9, p1.x - 2.0, p1.y, near(0b1)));
        frame.cameras[1].push(obs(8, p1.x, p1.y + 2.0, near(0b1)));
        let mut pts: DepthPoints = Default::default();
        pts[0] = vec![Some(x)];
        pts[1] = vec![None; 3];
        let pairs = interview_match(&frame, &pts, &rig, &MatchParams::default());
        assert_eq!(pairs, vec![InterviewPair { source: (0, 0), target: (1, 2) }]);
        // without descriptors the nearest pixel wins
        for o in frame.cameras[1].iter_mut() {
            o.descriptor = None;
        }
        frame.cameras[1][1].pixel.x = p1.x - 1.0;
        let pairs = interview_match(&frame, &pts, &rig, &MatchParams::default());
        assert_eq!(pairs[0].target, (1, 1));
    }

    #[test]
    fn mutual_best_keeps_one_incoming_pair() {
        let rig = rig();
        let x = Vector3::new(3.0, 0.2, 3.0);
        let cam1 = &rig.cameras[1];
        let p1 = cam1.project(&cam1.cam_to_rig.inverse().transform_point(&x)).unwrap().pixel;
        let mut frame = FrameTracks::empty(0);
        frame.cameras[0].push(obs(1, 0.0, 0.0, None));
        frame.cameras[0].push(obs(2, 0.0, 0.0, None));
        frame.cameras[1].push(obs(3, p1.x, p1.y, None));
        let mut pts: DepthPoints = Default::default();
        pts[0] = vec![Some(x), Some(x + Vector3::new(0.0, 0.01, 0.0))];
        pts[1] = vec![None];
        let pairs = interview_match(&frame, &pts, &rig, &MatchParams::default());
        assert_eq!(pairs, vec![InterviewPair { source: (0, 0), target: (1, 0) }]);
    }
}
