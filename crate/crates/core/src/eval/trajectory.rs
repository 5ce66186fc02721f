use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{kabsch, Se3};
use crate::io::trajectory::Trajectory;

/// Seconds.
pub const DEFAULT_ASSOCIATION_TOLERANCE: f64 = 0.01;

/// Pairs each estimated pose with the nearest ground-truth timestamp within
/// `tolerance`. Returns (estimate index, truth index) pairs.
pub fn associate(estimate: &Trajectory, truth: &Trajectory, tolerance: f64) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..truth.len()).collect();
    order.sort_by(|&a, &b| truth.poses[a].timestamp.total_cmp(&truth.poses[b].timestamp));
    let stamps: Vec<f64> = order.iter().map(|&k| truth.poses[k].timestamp).collect();
    let mut pairs = Vec::new();
    for (i, p) in estimate.poses.iter().enumerate() {
        let pos = stamps.partition_point(|&t| t < p.timestamp);
        let best = [pos.checked_sub(1), (pos < stamps.len()).then_some(pos)]
            .into_iter()
            .flatten()
            .min_by(|&a, &b| (stamps[a] - p.timestamp).abs().total_cmp(&(stamps[b] - p.timestamp).abs()));
        if let Some(b) = best {
            if (stamps[b] - p.timestamp).abs() <= tolerance {
                pairs.push((i, order[b]));
            }
        }
    }
    pairs
}

/// Rigid alignment mapping associated estimated positions onto ground truth,
/// together with the aligned pairs.
pub fn align_trajectories(
    estimate: &Trajectory,
    truth: &Trajectory,
    tolerance: f64,
) -> Result<(Se3, Vec<(Vector3<f64>, Vector3<f64>)>)> {
    let pairs = associate(estimate, truth, tolerance);
    if pairs.len() < 3 {
        return Err(Error::UndefinedMetric(format!(
            "only {} poses associated within {tolerance} s",
            pairs.len()
        )));
    }
    let src: Vec<_> = pairs.iter().map(|&(i, _)| estimate.poses[i].pose.translation).collect();
    let dst: Vec<_> = pairs.iter().map(|&(_, j)| truth.poses[j].pose.translation).collect();
    // collinear paths leave rotation about the line free; translation alone
    // is then the least-squares answer up to that freedom
    let t = kabsch(&src, &dst).unwrap_or_else(|| {
        let n = src.len() as f64;
        Se3::from_translation((dst.iter().sum::<Vector3<f64>>() - src.iter().sum::<Vector3<f64>>()) / n)
    });
    Ok((t, src.into_iter().zip(dst).collect()))
}

/// Root-mean-square position error after rigid alignment (no scale).
pub fn ate_rmse(estimate: &Trajectory, truth: &Trajectory, tolerance: f64) -> Result<f64> {
    let (t, pairs) = align_trajectories(estimate, truth, tolerance)?;
    let sq: f64 = pairs.iter().map(|(s, d)| (t.transform_point(s) - d).norm_squared()).sum();
    Ok((sq / pairs.len() as f64).sqrt())
}

/// Distance between the first and last positions.
pub fn start_to_end(traj: &Trajectory) -> Result<f64> {
    match (traj.poses.first(), traj.poses.last()) {
        (Some(a), Some(b)) if traj.len() >= 2 => Ok((a.pose.translation - b.pose.translation).norm()),
        _ => Err(Error::UndefinedMetric("start-to-end needs at least two poses".into())),
    }
}
