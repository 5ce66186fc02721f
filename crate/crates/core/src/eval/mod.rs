//! Depth, mesh and trajectory metrics.

mod cloud;
mod report;
mod trajectory;

pub use cloud::{accuracy, completeness, distance_curve, min_distances, PointIndex};
pub use report::{MetricReport, RatioCurve};
pub use trajectory::{align_trajectories, associate, ate_rmse, start_to_end, DEFAULT_ASSOCIATION_TOLERANCE};

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Per-pixel index error `E(p) = 100/N · |n(p) − n*(p)|`; NaN where either
/// map is invalid.
#[derive(Clone, Debug)]
pub struct IndexErrorMap {
    pub errors: Vec<f64>,
    pub invalid: usize,
}

impl IndexErrorMap {
    /// Mean over valid pixels, if any.
    pub fn mean(&self) -> Option<f64> {
        let valid: Vec<f64> = self.errors.iter().copied().filter(|e| !e.is_nan()).collect();
        (!valid.is_empty()).then(|| valid.iter().sum::<f64>() / valid.len() as f64)
    }
}

pub fn depth_index_error(estimate: &[f64], truth: &[f64], num_hypotheses: usize) -> Result<IndexErrorMap> {
    if estimate.len() != truth.len() {
        return Err(Error::invalid(format!(
            "index maps differ in size ({} vs {})",
            estimate.len(),
            truth.len()
        )));
    }
    if num_hypotheses < 1 {
        return Err(Error::invalid("need at least one hypothesis"));
    }
    let scale = 100.0 / num_hypotheses as f64;
    let errors: Vec<f64> = estimate
        .par_iter()
        .zip(truth)
        .map(|(a, b)| if a.is_nan() || b.is_nan() { f64::NAN } else { scale * (a - b).abs() })
        .collect();
    let invalid = errors.iter().filter(|e| e.is_nan()).count();
    Ok(IndexErrorMap { errors, invalid })
}

/// Mean over frames of each frame's mean error. Frames without valid pixels
/// are skipped.
pub fn mean_abs_index_error(frames: &[IndexErrorMap]) -> Result<f64> {
    let means: Vec<f64> = frames.iter().filter_map(IndexErrorMap::mean).collect();
    if means.is_empty() {
        return Err(Error::UndefinedMetric("no valid pixels in any frame".into()));
    }
    Ok(means.iter().sum::<f64>() / means.len() as f64)
}

/// Mean absolute difference in raw index units over pixels valid in both maps.
pub fn mean_index_difference(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    let m = depth_index_error(estimate, truth, 100)?;
    m.mean()
        .ok_or_else(|| Error::UndefinedMetric("no pixel is valid in both maps".into()))
}
