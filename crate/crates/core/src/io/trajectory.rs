//! Timestamped rig trajectories in TUM format
//! (`timestamp tx ty tz qx qy qz qw`).

use std::fmt::Write as _;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::geometry::Se3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimedPose {
    pub timestamp: f64,
    /// World-from-rig.
    pub pose: Se3,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub poses: Vec<TimedPose>,
}

impl Trajectory {
    pub fn new(poses: Vec<TimedPose>) -> Self {
        Self { poses }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.poses.iter().map(|p| p.pose.translation).collect()
    }

    pub fn parse_tum(text: &str) -> Result<Self> {
        let mut poses = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let v: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::parse_line(n + 1, "non-numeric TUM field"))?;
            if v.len() != 8 || v.iter().any(|x| !x.is_finite()) {
                return Err(Error::parse_line(n + 1, "TUM lines need 8 finite values"));
            }
            let q = Quaternion::new(v[7], v[4], v[5], v[6]);
            if q.norm() < 1e-9 {
                return Err(Error::parse_line(n + 1, "zero quaternion"));
            }
            poses.push(TimedPose {
                timestamp: v[0],
                pose: Se3::new(UnitQuaternion::new_normalize(q), Vector3::new(v[1], v[2], v[3])),
            });
        }
        Ok(Self { poses })
    }

    pub fn to_tum(&self) -> String {
        let mut out = String::new();
        for p in &self.poses {
            let t = p.pose.translation;
            let q = p.pose.rotation;
            let _ = writeln!(
                out,
                "{:.6} {:?} {:?} {:?} {:?} {:?} {:?} {:?}",
                p.timestamp, t.x, t.y, t.z, q.i, q.j, q.k, q.w
            );
        }
        out
    }
}

/// Keyframe sidecar: one frame id per line.
pub fn format_keyframe_ids(ids: &[u32]) -> String {
    ids.iter().map(|id| format!("{id}\n")).collect()
}

pub fn parse_keyframe_ids(text: &str) -> Result<Vec<u32>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let id = line.parse::<u32>().map_err(|_| Error::parse_line(n + 1, "bad keyframe id"))?;
        if out.last().is_some_and(|&last| id <= last) {
            return Err(Error::parse_line(n + 1, "keyframe ids must increase"));
        }
        out.push(id);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector6;

    #[test]
    fn tum_round_trip_is_exact() {
        let traj = Trajectory::new(
            (0..5)
                .map(|k| TimedPose {
                    timestamp: k as f64 * 0.1,
                    pose: Se3::exp(&Vector6::new(0.1 * k as f64, 0.2, -0.3, 1.0, k as f64, 2.5)),
                })
                .collect(),
        );
        let back = Trajectory::parse_tum(&traj.to_tum()).unwrap();
        for (a, b) in traj.poses.iter().zip(&back.poses) {
            assert_eq!(a.pose.translation, b.pose.translation);
            assert!((a.pose.inverse() * b.pose).log().norm() < 1e-15);
        }
    }

    #[test]
    fn keyframe_ids_round_trip() {
        let ids = vec![0, 4, 12];
        assert_eq!(parse_keyframe_ids(&format_keyframe_ids(&ids)).unwrap(), ids);
        assert!(parse_keyframe_ids("4\n2\n").is_err());
    }

    #[test]
    fn rejects_short_lines() {
        assert!(Trajectory::parse_tum("0 1 2 3\n").is_err());
        assert!(Trajectory::parse_tum("# c\n\n").unwrap().is_empty());
    }
}
