use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::{Rig, Se3, NUM_CAMERAS};
use crate::odometry::{ransac_rig_pose, Bearing, Correspondence, KeyframeFeature, RansacParams};

// The shift search enumerates the rig's cyclic camera assignments; a rig
// with a different camera count needs a different search.
const _: () = assert!(NUM_CAMERAS == 4);
pub const NUM_SHIFTS: usize = NUM_CAMERAS;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VerifyParams {
    pub ransac: RansacParams,
    /// Maximum Hamming distance of a descriptor match.
    pub hamming_max: u32,
    pub min_inliers: usize,
}

impl Default for VerifyParams {
    fn default() -> Self {
        Self { ransac: RansacParams::default(), hamming_max: 50, min_inliers: 25 }
    }
}

/// An accepted loop: the query keyframe's camera `c` was matched against the
/// candidate's camera `(c + shift) mod 4`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoopEdge {
    pub query: usize,
    pub matched: usize,
    pub shift: usize,
    /// Query-from-candidate rig transform.
    pub relative: Se3,
    pub inliers: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Verification {
    pub shift: usize,
    pub relative: Se3,
    pub inliers: usize,
}

/// Descriptor matches from query camera `c` to candidate camera
/// `(c + shift) mod 4`, as correspondences whose "world" is the candidate
/// rig frame. Ties go to the lower candidate track id.
fn shifted_matches(rig: &Rig, query: &[KeyframeFeature], candidate: &[KeyframeFeature], shift: usize, hamming_max: u32) -> Vec<Correspondence> {
    let mut out = Vec::new();
    for q in query {
        let (Some(qd), Some(qx)) = (q.descriptor, q.rig_point) else { continue };
        let target = (q.cam + shift) % NUM_CAMERAS;
        let best = candidate
            .iter()
            .filter(|c| c.cam == target && c.rig_point.is_some())
            .filter_map(|c| c.descriptor.map(|d| (qd.hamming(&d), c.track_id, c)))
            .filter(|(h, _, _)| *h <= hamming_max)
            .min_by_key(|(h, id, _)| (*h, *id));
        let Some((_, _, c)) = best else { continue };
        let Ok(b) = rig.cameras[q.cam].unproject(&q.pixel) else { continue };
        out.push(Correspondence { cam: q.cam, bearing: Bearing::new(&b), world: c.rig_point.unwrap(), rig_point: Some(qx) });
    }
    out
}

/// Tries all four cyclic camera assignments and keeps the one with the most
/// RANSAC inliers (ties to the smaller shift).
pub fn verify_candidate(rig: &Rig, query: &[KeyframeFeature], candidate: &[KeyframeFeature], params: &VerifyParams) -> Result<Verification> {
    let mut best: Option<Verification> = None;
    for shift in 0..NUM_SHIFTS {
        let corr = shifted_matches(rig, query, candidate, shift, params.hamming_max);
        let Ok(res) = ransac_rig_pose(rig, &corr, &params.ransac) else { continue };
        let inliers = res.num_inliers();
        if best.is_none_or(|b| inliers > b.inliers) {
            // RANSAC returns candidate-from-query
            best = Some(Verification { shift, relative: res.pose.inverse(), inliers });
        }
    }
    match best {
        Some(v) if v.inliers >= params.min_inliers => Ok(v),
        Some(v) => Err(Error::PoseFailure { inlier_ratio: v.inliers as f64 / params.min_inliers as f64 }),
        None => Err(Error::InsufficientData("no shift produced a pose".into())),
    }
}

pub fn format_loop_edges(edges: &[LoopEdge]) -> String {
    let mut out = String::new();
    for e in edges {
        let t = e.relative.translation;
        let q = e.relative.rotation;
        let _ = writeln!(
            out,
            "{} {} {} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {}",
            e.query, e.matched, e.shift, t.x, t.y, t.z, q.i, q.j, q.k, q.w, e.inliers
        );
    }
    out
}

pub fn parse_loop_edges(text: &str) -> Result<Vec<LoopEdge>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 11 {
            return Err(Error::parse_line(n + 1, format!("loop edges need 11 fields, found {}", f.len())));
        }
        let int = |k: usize| f[k].parse::<usize>().map_err(|_| Error::parse_line(n + 1, "bad integer field"));
        let num = |k: usize| {
            f[k].parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse_line(n + 1, "bad numeric field"))
        };
        let q = nalgebra::Quaternion::new(num(9)?, num(6)?, num(7)?, num(8)?);
        if q.norm() < 1e-9 {
            return Err(Error::parse_line(n + 1, "zero quaternion"));
        }
        let (query, matched, shift) = (int(0)?, int(1)?, int(2)?);
        if matched >= query || shift >= NUM_SHIFTS {
            return Err(Error::parse_line(n + 1, "loop edges point backward with shift < 4"));
        }
        out.push(LoopEdge {
            query,
            matched,
            shift,
            relative: Se3::new(nalgebra::UnitQuaternion::new_normalize(q), nalgebra::Vector3::new(num(3)?, num(4)?, num(5)?)),
            inliers: int(10)?,
        });
    }
    Ok(out)
}
