use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Vector2, Vector3};

use super::ba::{pose_only_ba, BaObservation, BaParams, LocalBaProblem, RangePrior};
use super::matching::{attach_depth, interview_match, DepthPoints, InterviewPair, MatchParams};
use super::ransac::{ransac_rig_pose, Correspondence, RansacParams};
use super::residual::Bearing;
use super::triangulate::{triangulate, Ray};
use crate::error::{Error, Result};
use crate::geometry::{angle_between, DepthMap, Rig, Se3, NUM_CAMERAS};
use crate::io::tracks::{Descriptor, FrameTracks};
use crate::io::trajectory::{TimedPose, Trajectory};

#[derive(Clone, Debug, PartialEq)]
pub struct OdometryConfig {
    pub ransac: RansacParams,
    pub ba: BaParams,
    pub matching: MatchParams,
    /// Keyframes in the local BA window.
    pub window: usize,
    /// Mean landmark parallax (radians) since the last keyframe that
    /// triggers a new one.
    pub keyframe_parallax: f64,
    /// Fraction of the last keyframe's landmarks still tracked below which a
    /// new keyframe is created.
    pub keyframe_min_tracked_ratio: f64,
    /// Consecutive pose failures before tracking is declared lost.
    pub max_failures: u32,
    pub min_inliers: usize,
    /// Attach depth maps to keypoints. When off, depth maps are ignored.
    pub use_depth: bool,
    pub interview_matching: bool,
    pub depth_prior: bool,
    /// Seconds between consecutive frame ids, used for trajectory timestamps.
    pub frame_interval: f64,
}

impl Default for OdometryConfig {
    fn default() -> Self {
        Self {
            ransac: RansacParams::default(),
            ba: BaParams::default(),
            matching: MatchParams::default(),
            window: 5,
            keyframe_parallax: 1f64.to_radians(),
            keyframe_min_tracked_ratio: 0.6,
            max_failures: 3,
            min_inliers: 6,
            use_depth: true,
            interview_matching: true,
            depth_prior: true,
            frame_interval: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LandmarkSource {
    Triangulated,
    DepthBacked,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LandmarkObservation {
    pub frame: u32,
    pub cam: usize,
    pub pixel: Vector2<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Landmark {
    pub id: u64,
    pub position: Vector3<f64>,
    pub source: LandmarkSource,
    pub observations: Vec<LandmarkObservation>,
    /// Frame whose depth map placed a depth-backed landmark, and the range
    /// from that frame's rig origin.
    pub anchor: Option<(u32, f64)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrameStatus {
    /// First frame of a tracking session, placed from its depth map.
    Initialized,
    Tracked,
    /// Pose estimation failed; the pose is a constant-velocity prediction.
    Predicted,
    Lost,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameResult {
    pub frame: u32,
    pub pose: Se3,
    pub status: FrameStatus,
    pub keyframe: bool,
    pub correspondences: usize,
    pub inliers: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KeyframeFeature {
    pub cam: usize,
    pub track_id: u64,
    pub pixel: Vector2<f64>,
    pub descriptor: Option<Descriptor>,
    /// Depth-backed position in the rig frame.
    pub rig_point: Option<Vector3<f64>>,
    pub landmark: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KeyframeRecord {
    pub frame: u32,
    /// World-from-rig.
    pub pose: Se3,
    pub features: Vec<KeyframeFeature>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum State {
    Uninitialized,
    Tracking,
    Lost,
}

type TrackKey = (usize, u64);

#[derive(Clone, Debug)]
struct PendingTrack {
    observations: Vec<LandmarkObservation>,
    rays: Vec<Ray>,
}

/// Cap on the rays kept per pending track; the first ray is always kept.
const MAX_PENDING_RAYS: usize = 12;

/// Frame-by-frame rig odometry. One frame is processed at a time and every
/// internal container is ordered, so runs are reproducible.
#[derive(Clone, Debug)]
pub struct Odometry {
    rig: Rig,
    config: OdometryConfig,
    state: State,
    failures: u32,
    landmarks: BTreeMap<u64, Landmark>,
    next_landmark: u64,
    associations: BTreeMap<TrackKey, u64>,
    pending: BTreeMap<TrackKey, PendingTrack>,
    keyframes: Vec<KeyframeRecord>,
    /// First keyframe of the current tracking session.
    session_start: usize,
    keyframe_due: bool,
    poses: Vec<(u32, Se3)>,
    results: Vec<FrameResult>,
}

struct Feature {
    key: TrackKey,
    index: usize,
    bearing: Option<Bearing>,
    rig_point: Option<Vector3<f64>>,
}

impl Odometry {
    pub fn new(rig: Rig, config: OdometryConfig) -> Result<Self> {
        if config.window < 2 {
            return Err(Error::invalid("local BA window needs at least two keyframes"));
        }
        if config.min_inliers < 6 {
            return Err(Error::invalid("pose-only BA needs at least six correspondences"));
        }
        Ok(Self {
            rig,
            config,
            state: State::Uninitialized,
            failures: 0,
            landmarks: BTreeMap::new(),
            next_landmark: 0,
            associations: BTreeMap::new(),
            pending: BTreeMap::new(),
            keyframes: Vec::new(),
            session_start: 0,
            keyframe_due: false,
            poses: Vec::new(),
            results: Vec::new(),
        })
    }

    pub fn config(&self) -> &OdometryConfig {
        &self.config
    }

    pub fn is_lost(&self) -> bool {
        self.state == State::Lost
    }

    pub fn landmarks(&self) -> impl Iterator<Item = &Landmark> {
        self.landmarks.values()
    }

    pub fn keyframes(&self) -> &[KeyframeRecord] {
        &self.keyframes
    }

    pub fn keyframe_ids(&self) -> Vec<u32> {
        self.keyframes.iter().map(|k| k.frame).collect()
    }

    pub fn results(&self) -> &[FrameResult] {
        &self.results
    }

    /// One pose per processed frame, including local BA corrections.
    pub fn trajectory(&self) -> Trajectory {
        Trajectory::new(
            self.poses
                .iter()
                .map(|&(frame, pose)| TimedPose { timestamp: frame as f64 * self.config.frame_interval, pose })
                .collect(),
        )
    }

    fn predict(&self) -> Se3 {
        match self.poses.as_slice() {
            [] => Se3::identity(),
            [.., (_, last)] if self.poses.len() == 1 => *last,
            [.., (_, prev), (_, last)] => (*last * (prev.inverse() * *last)).renormalized(),
            _ => unreachable!(),
        }
    }

    pub fn process_frame(&mut self, tracks: &FrameTracks, depth: Option<&DepthMap>) -> Result<FrameResult> {
        if let Some(&(last, _)) = self.poses.last() {
            if tracks.frame <= last {
                return Err(Error::invalid(format!("frame {} arrives after frame {last}", tracks.frame)));
            }
        }
        let depth = depth.filter(|_| self.config.use_depth);
        let points = depth.map(|d| attach_depth(tracks, d, &self.rig));
        let features = self.features(tracks, points.as_ref());
        let predicted = self.predict();
        let result = match self.state {
            State::Tracking => self.track(tracks, points.as_ref(), &features, predicted),
            State::Uninitialized | State::Lost => {
                let depth_count = features.iter().filter(|f| f.rig_point.is_some() && f.bearing.is_some()).count();
                if points.is_some() && depth_count >= self.config.min_inliers {
                    self.initialize(tracks, points.as_ref().unwrap(), &features, predicted)
                } else {
                    self.forget_stale(&features);
                    FrameResult {
                        frame: tracks.frame,
                        pose: predicted,
                        status: FrameStatus::Lost,
                        keyframe: false,
                        correspondences: 0,
                        inliers: 0,
                    }
                }
            }
        };
        self.poses.push((tracks.frame, result.pose));
        if let (true, Some(last)) = (result.keyframe, self.keyframes.last()) {
            debug_assert_eq!(last.frame, tracks.frame);
            if self.keyframes.len() - self.session_start >= 2 {
                self.local_ba();
            }
        }
        let result = FrameResult { pose: self.poses.last().unwrap().1, ..result };
        self.results.push(result);
        Ok(result)
    }

    fn features(&self, tracks: &FrameTracks, points: Option<&DepthPoints>) -> Vec<Feature> {
        let mut out = Vec::with_capacity(tracks.len());
        for c in 0..NUM_CAMERAS {
            let cam = &self.rig.cameras[c];
            for (k, obs) in tracks.cameras[c].iter().enumerate() {
                out.push(Feature {
                    key: (c, obs.track_id),
                    index: k,
                    bearing: cam.unproject(&obs.pixel).ok().map(|b| Bearing::new(&b)),
                    rig_point: points.and_then(|p| p[c][k]),
                });
            }
        }
        out
    }

    fn initialize(&mut self, tracks: &FrameTracks, points: &DepthPoints, features: &[Feature], pose: Se3) -> FrameResult {
        self.associations.clear();
        self.pending.clear();
        self.keyframe_due = false;
        self.failures = 0;
        self.state = State::Tracking;
        self.session_start = self.keyframes.len();
        let mut created = BTreeSet::new();
        for f in features {
            if let (Some(x), Some(_)) = (f.rig_point, f.bearing) {
                let id = self.new_depth_landmark(tracks, f, &x, &pose);
                created.insert(id);
            }
        }
        if self.config.interview_matching {
            let pairs = interview_match(tracks, points, &self.rig, &self.config.matching);
            self.link_pairs(tracks, &pairs, &created);
        }
        self.add_keyframe(tracks, features, pose);
        FrameResult {
            frame: tracks.frame,
            pose,
            status: FrameStatus::Initialized,
            keyframe: true,
            correspondences: created.len(),
            inliers: created.len(),
        }
    }

    fn new_depth_landmark(&mut self, tracks: &FrameTracks, f: &Feature, x_r: &Vector3<f64>, pose: &Se3) -> u64 {
        let id = self.next_landmark;
        self.next_landmark += 1;
        let obs = &tracks.cameras[f.key.0][f.index];
        self.landmarks.insert(
            id,
            Landmark {
                id,
                position: pose.transform_point(x_r),
                source: LandmarkSource::DepthBacked,
                observations: vec![LandmarkObservation { frame: tracks.frame, cam: f.key.0, pixel: obs.pixel }],
                anchor: Some((tracks.frame, x_r.norm())),
            },
        );
        self.associations.insert(f.key, id);
        self.pending.remove(&f.key);
        id
    }

    /// Gives each unassociated target keypoint (or one whose landmark was
    /// only just created in `fresh`) its source keypoint's landmark.
    fn link_pairs(&mut self, tracks: &FrameTracks, pairs: &[InterviewPair], fresh: &BTreeSet<u64>) {
        for p in pairs {
            let src = (p.source.0, tracks.cameras[p.source.0][p.source.1].track_id);
            let dst = (p.target.0, tracks.cameras[p.target.0][p.target.1].track_id);
            let Some(&lm) = self.associations.get(&src) else { continue };
            match self.associations.get(&dst).copied() {
                Some(old) if old == lm => {}
                Some(old) if fresh.contains(&old) && (!fresh.contains(&lm) || lm < old) => {
                    // a landmark created from this frame's depth duplicates the matched one
                    self.landmarks.remove(&old);
                    for v in self.associations.values_mut() {
                        if *v == old {
                            *v = lm;
                        }
                    }
                }
                Some(_) => {}
                None => {
                    self.associations.insert(dst, lm);
                    self.pending.remove(&dst);
                }
            }
            if let Some(l) = self.landmarks.get_mut(&lm) {
                let pixel = tracks.cameras[dst.0][p.target.1].pixel;
                if !l.observations.iter().any(|o| o.frame == tracks.frame && o.cam == dst.0) {
                    l.observations.push(LandmarkObservation { frame: tracks.frame, cam: dst.0, pixel });
                }
            }
        }
    }

    fn forget_stale(&mut self, features: &[Feature]) {
        let live: BTreeSet<TrackKey> = features.iter().map(|f| f.key).collect();
        self.associations.retain(|k, _| live.contains(k));
        self.pending.retain(|k, _| live.contains(k));
    }

    fn fail(&mut self, frame: u32, predicted: Se3, correspondences: usize) -> FrameResult {
        self.failures += 1;
        let status = if self.failures >= self.config.max_failures {
            log::warn!("tracking lost at frame {frame}");
            self.state = State::Lost;
            FrameStatus::Lost
        } else {
            FrameStatus::Predicted
        };
        FrameResult { frame, pose: predicted, status, keyframe: false, correspondences, inliers: 0 }
    }

    fn track(&mut self, tracks: &FrameTracks, points: Option<&DepthPoints>, features: &[Feature], predicted: Se3) -> FrameResult {
        self.forget_stale(features);
        let pairs = match (points, self.config.interview_matching) {
            (Some(p), true) => interview_match(tracks, p, &self.rig, &self.config.matching),
            _ => Vec::new(),
        };
        // matches into existing landmarks take part in pose estimation
        self.link_pairs(tracks, &pairs, &BTreeSet::new());

        let mut corr = Vec::new();
        let mut corr_feature = Vec::new();
        for (fi, f) in features.iter().enumerate() {
            if let (Some(b), Some(lm)) = (f.bearing, self.associations.get(&f.key)) {
                corr.push(Correspondence { cam: f.key.0, bearing: b, world: self.landmarks[lm].position, rig_point: f.rig_point });
                corr_feature.push(fi);
            }
        }
        let Some((pose, inliers)) = self.estimate_pose(tracks.frame, &corr, predicted) else {
            return self.fail(tracks.frame, predicted, corr.len());
        };
        self.failures = 0;
        let num_inliers = inliers.iter().filter(|&&b| b).count();

        let mut tracked = BTreeSet::new();
        for (k, &fi) in corr_feature.iter().enumerate() {
            let f = &features[fi];
            if inliers[k] {
                let lm = self.associations[&f.key];
                tracked.insert(lm);
                let l = self.landmarks.get_mut(&lm).unwrap();
                if !l.observations.iter().any(|o| o.frame == tracks.frame && o.cam == f.key.0) {
                    l.observations.push(LandmarkObservation {
                        frame: tracks.frame,
                        cam: f.key.0,
                        pixel: tracks.cameras[f.key.0][f.index].pixel,
                    });
                }
            } else {
                self.associations.remove(&f.key);
            }
        }

        if points.is_some() {
            let mut fresh = BTreeSet::new();
            for f in features {
                let (Some(x), Some(_)) = (f.rig_point, f.bearing) else { continue };
                match self.associations.get(&f.key).copied() {
                    Some(lm) => {
                        let l = self.landmarks.get_mut(&lm).unwrap();
                        if l.source == LandmarkSource::Triangulated {
                            l.position = pose.transform_point(&x);
                            l.source = LandmarkSource::DepthBacked;
                            l.anchor = Some((tracks.frame, x.norm()));
                        }
                    }
                    None => {
                        fresh.insert(self.new_depth_landmark(tracks, f, &x, &pose));
                    }
                }
            }
            self.link_pairs(tracks, &pairs, &fresh);
        }
        self.extend_pending(tracks, features, &pose);

        let want = self.keyframe_due || self.keyframe_wanted(&tracked, &pose);
        let keyframe = want && points.is_some();
        self.keyframe_due = want && !keyframe;
        if keyframe {
            self.add_keyframe(tracks, features, pose);
        }
        FrameResult {
            frame: tracks.frame,
            pose,
            status: FrameStatus::Tracked,
            keyframe,
            correspondences: corr.len(),
            inliers: num_inliers,
        }
    }

    /// RANSAC on depth frames, robust refinement from the prediction
    /// otherwise (or when RANSAC cannot run).
    fn estimate_pose(&self, frame: u32, corr: &[Correspondence], predicted: Se3) -> Option<(Se3, Vec<bool>)> {
        let cfg = &self.config;
        if corr.len() < cfg.min_inliers {
            return None;
        }
        let threshold = cfg.ransac.threshold;
        let ransac = RansacParams { seed: cfg.ransac.seed ^ (frame as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15), ..cfg.ransac };
        let init = match ransac_rig_pose(&self.rig, corr, &ransac) {
            Ok(r) => r.pose,
            Err(Error::PoseFailure { inlier_ratio }) => {
                log::debug!("frame {frame}: RANSAC inlier ratio {inlier_ratio:.2}");
                return None;
            }
            Err(_) => {
                let res = pose_only_ba(&self.rig, &predicted, corr, &cfg.ba).ok()?;
                res.pose
            }
        };
        let inliers_of = |pose: &Se3| -> Vec<bool> { corr.iter().map(|c| c.angular_error(&self.rig, pose) < threshold).collect() };
        let mut inliers = inliers_of(&init);
        let mut pose = init;
        for _ in 0..2 {
            let subset: Vec<Correspondence> = corr.iter().zip(&inliers).filter(|(_, &i)| i).map(|(c, _)| *c).collect();
            if subset.len() < cfg.min_inliers {
                return None;
            }
            pose = pose_only_ba(&self.rig, &pose, &subset, &cfg.ba).ok()?.pose;
            inliers = inliers_of(&pose);
        }
        let n = inliers.iter().filter(|&&b| b).count();
        (n >= cfg.min_inliers && n as f64 >= cfg.ransac.min_inlier_ratio * corr.len() as f64).then_some((pose, inliers))
    }

    fn extend_pending(&mut self, tracks: &FrameTracks, features: &[Feature], pose: &Se3) {
        let threshold = self.config.ransac.threshold;
        for f in features {
            let Some(b) = f.bearing else { continue };
            if self.associations.contains_key(&f.key) {
                continue;
            }
            let cam = &self.rig.cameras[f.key.0];
            let ray = Ray {
                origin: pose.transform_point(&cam.center()),
                direction: pose.rotate(&cam.cam_to_rig.rotate(&b.unit)),
            };
            let obs = LandmarkObservation { frame: tracks.frame, cam: f.key.0, pixel: tracks.cameras[f.key.0][f.index].pixel };
            let entry = self.pending.entry(f.key).or_insert_with(|| PendingTrack { observations: Vec::new(), rays: Vec::new() });
            if entry.rays.len() >= MAX_PENDING_RAYS {
                entry.rays.remove(1);
                entry.observations.remove(1);
            }
            entry.rays.push(ray);
            entry.observations.push(obs);
            if entry.rays.len() < 2 || angle_between(&entry.rays[0].direction, &ray.direction) < 2.0 * super::triangulate::MIN_TRIANGULATION_ANGLE {
                continue;
            }
            let Ok(t) = triangulate(&entry.rays) else { continue };
            if t.residual > threshold || (t.point - ray.origin).norm() < 0.1 {
                continue;
            }
            let entry = self.pending.remove(&f.key).unwrap();
            let id = self.next_landmark;
            self.next_landmark += 1;
            self.landmarks.insert(
                id,
                Landmark { id, position: t.point, source: LandmarkSource::Triangulated, observations: entry.observations, anchor: None },
            );
            self.associations.insert(f.key, id);
        }
    }

    fn keyframe_wanted(&self, tracked: &BTreeSet<u64>, pose: &Se3) -> bool {
        let Some(kf) = self.keyframes.last() else { return true };
        let reference: BTreeSet<u64> = kf.features.iter().filter_map(|f| f.landmark).collect();
        if reference.is_empty() {
            return true;
        }
        let common: Vec<u64> = reference.intersection(tracked).copied().collect();
        let ratio = common.len() as f64 / reference.len() as f64;
        if ratio < self.config.keyframe_min_tracked_ratio {
            return true;
        }
        let parallax = common
            .iter()
            .map(|id| {
                let x = self.landmarks[id].position;
                angle_between(&(x - kf.pose.translation), &(x - pose.translation))
            })
            .sum::<f64>()
            / common.len() as f64;
        parallax > self.config.keyframe_parallax
    }

    fn add_keyframe(&mut self, tracks: &FrameTracks, features: &[Feature], pose: Se3) {
        let features = features
            .iter()
            .map(|f| {
                let obs = &tracks.cameras[f.key.0][f.index];
                KeyframeFeature {
                    cam: f.key.0,
                    track_id: obs.track_id,
                    pixel: obs.pixel,
                    descriptor: obs.descriptor,
                    rig_point: f.rig_point,
                    landmark: self.associations.get(&f.key).copied(),
                }
            })
            .collect();
        self.keyframes.push(KeyframeRecord { frame: tracks.frame, pose, features });
    }

    fn local_ba(&mut self) {
        let start = self.session_start.max(self.keyframes.len().saturating_sub(self.config.window));
        let window: Vec<usize> = (start..self.keyframes.len()).collect();
        let lm_ids: BTreeSet<u64> = window
            .iter()
            .flat_map(|&k| self.keyframes[k].features.iter().filter_map(|f| f.landmark))
            .filter(|id| self.landmarks.contains_key(id))
            .collect();
        let lm_index: BTreeMap<u64, usize> = lm_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let mut prob = LocalBaProblem {
            keyframes: window.iter().map(|&k| self.keyframes[k].pose).collect(),
            fixed: window.iter().enumerate().map(|(i, _)| i == 0).collect(),
            landmarks: lm_ids.iter().map(|id| self.landmarks[id].position).collect(),
            priors: vec![None; lm_ids.len()],
            observations: Vec::new(),
        };
        for (wi, &k) in window.iter().enumerate() {
            for f in &self.keyframes[k].features {
                let Some(l) = f.landmark.and_then(|id| lm_index.get(&id)) else { continue };
                let Ok(b) = self.rig.cameras[f.cam].unproject(&f.pixel) else { continue };
                prob.observations.push(BaObservation { keyframe: wi, landmark: *l, cam: f.cam, bearing: Bearing::new(&b) });
            }
        }
        if self.config.depth_prior {
            let mut anchors: BTreeMap<u32, usize> = window.iter().enumerate().map(|(wi, &k)| (self.keyframes[k].frame, wi)).collect();
            for (li, id) in lm_ids.iter().enumerate() {
                let Some((frame, range)) = self.landmarks[id].anchor else { continue };
                let idx = match anchors.get(&frame) {
                    Some(&i) => i,
                    None => {
                        let Ok(p) = self.poses.binary_search_by_key(&frame, |(f, _)| *f) else { continue };
                        prob.keyframes.push(self.poses[p].1);
                        prob.fixed.push(true);
                        anchors.insert(frame, prob.keyframes.len() - 1);
                        prob.keyframes.len() - 1
                    }
                };
                prob.priors[li] = Some(RangePrior { anchor: idx, range });
            }
        }
        match prob.optimize(&self.rig, &self.config.ba) {
            Ok(res) => {
                for (wi, &k) in window.iter().enumerate().skip(1) {
                    let pose = prob.keyframes[wi];
                    self.keyframes[k].pose = pose;
                    let frame = self.keyframes[k].frame;
                    if let Ok(p) = self.poses.binary_search_by_key(&frame, |(f, _)| *f) {
                        self.poses[p].1 = pose;
                    }
                }
                for (li, id) in lm_ids.iter().enumerate() {
                    if res.active[li] {
                        self.landmarks.get_mut(id).unwrap().position = prob.landmarks[li];
                    }
                }
            }
            Err(e) => log::warn!("local BA skipped: {e}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SphereGrid;
    use crate::io::tracks::Observation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn rig() -> Rig {
        Rig::cardinal(0.3, 512, [125.0, -3.0, 0.0, 0.0], 110f64.to_radians()).unwrap()
    }

    /// Sphere room of radius `r` centered at the world origin.
    struct SphereRoom {
        radius: f64,
        anchors: Vec<Vector3<f64>>,
    }

    impl SphereRoom {
        fn new(radius: f64, n: usize, rng: &mut impl Rng) -> Self {
            let anchors = (0..n)
                .map(|_| {
                    let y: f64 = rng.random_range(-0.6..0.6);
                    let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                    let h = (1.0 - y * y).sqrt();
                    Vector3::new(h * a.cos(), y, h * a.sin()) * radius
                })
                .collect();
            Self { radius, anchors }
        }

        fn depth(&self, pose: &Se3, grid: SphereGrid) -> DepthMap {
            let mut data = vec![0.0; grid.num_pixels()];
            for j in 0..grid.height {
                for i in 0..grid.width {
                    let d = pose.rotate(&grid.ray_unchecked(i, j));
                    let p = pose.translation;
                    let b = p.dot(&d);
                    data[grid.index(i, j)] = -b + (b * b - p.norm_squared() + self.radius * self.radius).sqrt();
                }
            }
            DepthMap::new(grid, data).unwrap()
        }

        fn tracks(&self, rig: &Rig, pose: &Se3, frame: u32, noise: f64, rng: &mut impl Rng) -> FrameTracks {
            let n = Normal::new(0.0, noise.max(1e-300)).unwrap();
            let mut out = FrameTracks::empty(frame);
            for (a, x) in self.anchors.iter().enumerate() {
                let x_r = pose.inverse().transform_point(x);
                for c in 0..4 {
                    let cam = &rig.cameras[c];
                    let p = cam.project(&cam.cam_to_rig.inverse().transform_point(&x_r)).unwrap();
                    let mut px = p.pixel;
                    if noise > 0.0 {
                        px += Vector2::new(n.sample(rng), n.sample(rng));
                    }
                    if p.valid && cam.in_image(&px) {
                        out.cameras[c].push(Observation { track_id: a as u64, pixel: px, descriptor: None });
                    }
                }
            }
            out
        }
    }

    fn grid() -> SphereGrid {
        SphereGrid::new(320, 80, -std::f64::consts::FRAC_PI_4, std::f64::consts::FRAC_PI_4, 64, 0.5).unwrap()
    }

    #[test]
    fn stationary_rig_keeps_identity_and_one_keyframe() {
        let rig = rig();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let room = SphereRoom::new(5.0, 300, &mut rng);
        let pose = Se3::identity();
        let tracks = room.tracks(&rig, &pose, 0, 0.0, &mut rng);
        let depth = room.depth(&pose, grid());
        let mut odo = Odometry::new(rig, OdometryConfig::default()).unwrap();
        for f in 0..8 {
            let t = FrameTracks { frame: f, ..tracks.clone() };
            let r = odo.process_frame(&t, (f % 4 == 0).then_some(&depth)).unwrap();
            assert!(r.pose.translation.norm() < 1e-9 && r.pose.rotation_angle() < 1e-9, "{:?}", r.pose);
            assert_eq!(r.keyframe, f == 0);
        }
        assert_eq!(odo.keyframe_ids(), vec![0]);
    }

    #[test]
    fn empty_frames_lose_tracking() {
        let rig = rig();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let room = SphereRoom::new(5.0, 300, &mut rng);
        let depth = room.depth(&Se3::identity(), grid());
        let mut odo = Odometry::new(rig.clone(), OdometryConfig::default()).unwrap();
        let t0 = room.tracks(&rig, &Se3::identity(), 0, 0.0, &mut rng);
        assert_eq!(odo.process_frame(&t0, Some(&depth)).unwrap().status, FrameStatus::Initialized);
        let statuses: Vec<FrameStatus> = (1..5).map(|f| odo.process_frame(&FrameTracks::empty(f), None).unwrap().status).collect();
        assert_eq!(statuses, vec![FrameStatus::Predicted, FrameStatus::Predicted, FrameStatus::Lost, FrameStatus::Lost]);
        assert!(odo.is_lost());
        // the next depth frame starts a new session
        let t5 = FrameTracks { frame: 5, ..t0 };
        assert_eq!(odo.process_frame(&t5, Some(&depth)).unwrap().status, FrameStatus::Initialized);
        assert!(odo.process_frame(&FrameTracks::empty(5), None).is_err());
    }

    #[test]
    fn circular_trajectory_with_sparse_depth() {
        let rig = rig();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let room = SphereRoom::new(6.0, 600, &mut rng);
        let radius = 1.0;
        let truth: Vec<Se3> = (0..60)
            .map(|k| {
                let a = k as f64 * std::f64::consts::TAU / 60.0;
                Se3::new(Se3::yaw(-a), Vector3::new(radius * a.cos(), 0.0, radius * a.sin()))
            })
            .collect();
        let mut odo = Odometry::new(rig.clone(), OdometryConfig::default()).unwrap();
        for (k, pose) in truth.iter().enumerate() {
            let tracks = room.tracks(&rig, pose, k as u32, 0.3, &mut rng);
            let depth = (k % 4 == 0).then(|| room.depth(pose, grid()));
            let r = odo.process_frame(&tracks, depth.as_ref()).unwrap();
            assert!(matches!(r.status, FrameStatus::Tracked | FrameStatus::Initialized), "frame {k}: {r:?}");
        }
        let est = odo.trajectory();
        let rmse = (est.poses.iter().zip(&truth).map(|(e, t)| (e.pose.translation - (truth[0].inverse() * *t).translation).norm_squared()).sum::<f64>()
            / truth.len() as f64)
            .sqrt();
        assert!(rmse < 0.01 * radius, "rmse {rmse}");
        assert!(odo.keyframes().len() > 3);
        assert!(odo.keyframes().iter().all(|k| k.frame % 4 == 0));
    }
}
