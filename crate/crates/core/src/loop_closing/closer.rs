use rayon::prelude::*;

use super::candidates::{detect_candidates, proximity_candidates, CandidateParams, LoopCandidate};
use super::graph::{GraphParams, PoseGraph};
use super::verify::{verify_candidate, LoopEdge, VerifyParams};
use crate::error::{Error, Result};
use crate::geometry::{Rig, Se3};
use crate::io::trajectory::{TimedPose, Trajectory};
use crate::odometry::KeyframeRecord;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LoopParams {
    pub candidates: CandidateParams,
    pub verify: VerifyParams,
    pub graph: GraphParams,
    /// Also propose keyframes within this distance of the query's odometry
    /// position.
    pub proximity_radius: Option<f64>,
}

/// Verified loop edges, at most one per query keyframe (the candidate with
/// the most inliers). Queries are processed in parallel; the result is in
/// query order.
pub fn find_loops(rig: &Rig, keyframes: &[KeyframeRecord], params: &LoopParams) -> Vec<LoopEdge> {
    let descriptors: Vec<Vec<_>> = keyframes
        .iter()
        .map(|k| k.features.iter().filter_map(|f| f.descriptor).collect())
        .collect();
    let poses: Vec<Se3> = keyframes.iter().map(|k| k.pose).collect();
    if descriptors.iter().all(Vec::is_empty) && params.proximity_radius.is_none() {
        log::warn!("no descriptors and no proximity source; loop search skipped");
        return Vec::new();
    }
    (0..keyframes.len())
        .into_par_iter()
        .filter_map(|q| {
            let mut cands: Vec<LoopCandidate> = if descriptors[q].is_empty() {
                Vec::new()
            } else {
                detect_candidates(&descriptors, q, &params.candidates)
            };
            if let Some(r) = params.proximity_radius {
                for c in proximity_candidates(&poses, q, r, params.candidates.exclusion_window, params.candidates.top_k) {
                    if !cands.iter().any(|d| d.matched == c.matched) {
                        cands.push(c);
                    }
                }
            }
            cands
                .iter()
                .filter(|c| c.matched != q)
                .filter_map(|c| {
                    let v = verify_candidate(rig, &keyframes[q].features, &keyframes[c.matched].features, &params.verify).ok()?;
                    Some(LoopEdge { query: q, matched: c.matched, shift: v.shift, relative: v.relative, inliers: v.inliers })
                })
                .max_by(|a, b| a.inliers.cmp(&b.inliers).then(b.matched.cmp(&a.matched)))
        })
        .collect()
}

/// Pose-graph correction of keyframe poses with gated loop edges. Returns the
/// corrected poses and the accepted edges.
pub fn correct_keyframes(poses: &[Se3], edges: &[LoopEdge], params: &GraphParams) -> Result<(Vec<Se3>, Vec<LoopEdge>)> {
    if edges.iter().any(|e| e.query >= poses.len() || e.matched >= e.query) {
        return Err(Error::invalid("loop edge references a missing keyframe"));
    }
    let mut graph = PoseGraph::from_poses(poses);
    let loops: Vec<(usize, usize, Se3)> = edges.iter().map(|e| (e.query, e.matched, e.relative)).collect();
    let accepted = graph.add_loops_gated(&loops, params)?;
    Ok((graph.nodes, accepted.into_iter().map(|k| edges[k]).collect()))
}

/// Moves every frame rigidly with its most recent keyframe (the first
/// keyframe for frames before it). Frame ids are recovered from timestamps
/// as `round(timestamp / frame_interval)`.
pub fn propagate_correction(traj: &Trajectory, frame_interval: f64, keyframe_frames: &[u32], old: &[Se3], new: &[Se3]) -> Result<Trajectory> {
    if keyframe_frames.is_empty() || keyframe_frames.len() != old.len() || old.len() != new.len() {
        return Err(Error::invalid("keyframe ids and poses disagree"));
    }
    if !(frame_interval > 0.0) {
        return Err(Error::invalid("frame interval must be positive"));
    }
    let poses = traj
        .poses
        .iter()
        .map(|p| {
            let frame = (p.timestamp / frame_interval).round().max(0.0) as u32;
            let k = keyframe_frames.partition_point(|&f| f <= frame).saturating_sub(1);
            let delta = new[k] * old[k].inverse();
            TimedPose { timestamp: p.timestamp, pose: (delta * p.pose).renormalized() }
        })
        .collect();
    Ok(Trajectory::new(poses))
}
