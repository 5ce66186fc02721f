use std::collections::HashMap;

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Uniform hash grid over a point set. Queries are exact for radii up to the
/// cell size.
pub struct PointIndex<'a> {
    points: &'a [Vector3<f64>],
    cell: f64,
    cells: HashMap<[i64; 3], Vec<u32>>,
}

impl<'a> PointIndex<'a> {
    pub fn new(points: &'a [Vector3<f64>], cell: f64) -> Result<Self> {
        if !(cell > 0.0 && cell.is_finite()) {
            return Err(Error::invalid("cell size must be positive"));
        }
        let mut cells: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
        for (k, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, cell)).or_default().push(k as u32);
        }
        Ok(Self { points, cell, cells })
    }

    fn key(p: &Vector3<f64>, cell: f64) -> [i64; 3] {
        [0, 1, 2].map(|a| (p[a] / cell).floor() as i64)
    }

    /// Distance to the nearest indexed point if it is within the cell size.
    pub fn nearest_within_cell(&self, q: &Vector3<f64>) -> Option<f64> {
        let k = Self::key(q, self.cell);
        let mut best = f64::INFINITY;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(ids) = self.cells.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        for &i in ids {
                            best = best.min((self.points[i as usize] - q).norm());
                        }
                    }
                }
            }
        }
        (best <= self.cell).then_some(best)
    }
}

/// Distance from each query to its nearest target, or `+∞` when none is
/// within `max_distance`.
pub fn min_distances(queries: &[Vector3<f64>], targets: &[Vector3<f64>], max_distance: f64) -> Result<Vec<f64>> {
    let index = PointIndex::new(targets, max_distance)?;
    Ok(queries
        .par_iter()
        .map(|q| index.nearest_within_cell(q).unwrap_or(f64::INFINITY))
        .collect())
}

fn ratio_below(distances: &[f64], t: f64) -> f64 {
    distances.iter().filter(|&&d| d < t).count() as f64 / distances.len() as f64
}

/// Fraction of ground-truth vertices with an estimated vertex closer than `t`.
pub fn completeness(estimate: &[Vector3<f64>], truth: &[Vector3<f64>], t: f64) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::UndefinedMetric("ground-truth vertex set is empty".into()));
    }
    if estimate.is_empty() {
        log::warn!("estimated vertex set is empty; completeness is 0");
        return Ok(0.0);
    }
    Ok(ratio_below(&min_distances(truth, estimate, t)?, t))
}

/// Fraction of estimated vertices with a ground-truth vertex closer than `t`.
pub fn accuracy(estimate: &[Vector3<f64>], truth: &[Vector3<f64>], t: f64) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::UndefinedMetric("ground-truth vertex set is empty".into()));
    }
    if estimate.is_empty() {
        return Err(Error::UndefinedMetric("estimated vertex set is empty".into()));
    }
    Ok(ratio_below(&min_distances(estimate, truth, t)?, t))
}

/// Ratio of `queries` within each threshold of `targets`, computed from one
/// nearest-neighbour pass at the largest threshold.
pub fn distance_curve(queries: &[Vector3<f64>], targets: &[Vector3<f64>], thresholds: &[f64]) -> Result<Vec<(f64, f64)>> {
    if queries.is_empty() {
        return Err(Error::UndefinedMetric("query vertex set is empty".into()));
    }
    let t_max = thresholds.iter().copied().fold(0.0, f64::max);
    let d = if targets.is_empty() {
        vec![f64::INFINITY; queries.len()]
    } else {
        min_distances(queries, targets, t_max)?
    };
    Ok(thresholds.iter().map(|&t| (t, ratio_below(&d, t))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn brute(queries: &[Vector3<f64>], targets: &[Vector3<f64>], t: f64) -> f64 {
        let hits = queries
            .iter()
            .filter(|q| targets.iter().map(|p| (p - *q).norm()).fold(f64::INFINITY, f64::min) < t)
            .count();
        hits as f64 / queries.len() as f64
    }

    fn cloud(rng: &mut impl Rng, n: usize) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|_| Vector3::new(rng.random_range(0.0..4.0), rng.random_range(0.0..4.0), rng.random_range(0.0..1.0)))
            .collect()
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let (a, b) = (cloud(&mut rng, 1000), cloud(&mut rng, 1000));
        for t in [0.01, 0.05, 0.1, 0.3, 1.0] {
            assert_eq!(completeness(&a, &b, t).unwrap(), brute(&b, &a, t));
            assert_eq!(accuracy(&a, &b, t).unwrap(), brute(&a, &b, t));
        }
        let ts: Vec<f64> = (1..=20).map(|k| k as f64 * 0.02).collect();
        let curve = distance_curve(&a, &b, &ts).unwrap();
        for w in curve.windows(2) {
            assert!(w[1].1 >= w[0].1);
        }
        for (t, r) in curve {
            assert_eq!(r, brute(&a, &b, t));
        }
    }

    #[test]
    fn simple_cases() {
        let v: Vec<_> = (0..10).map(|k| Vector3::new(k as f64, 0.0, 0.0)).collect();
        assert_eq!(completeness(&v, &v, 1e-6).unwrap(), 1.0);
        assert_eq!(accuracy(&v, &v, 1e-6).unwrap(), 1.0);
        let t = 0.1;
        assert_eq!(completeness(&[Vector3::new(2.0 * t, 0.0, 0.0)], &[Vector3::zeros()], t).unwrap(), 0.0);
        let mut noisy = v.clone();
        noisy.push(Vector3::new(0.0, 10.0 * t, 0.0));
        assert!((accuracy(&noisy, &v, t).unwrap() - 10.0 / 11.0).abs() < 1e-15);
        assert_eq!(completeness(&[], &v, t).unwrap(), 0.0);
        assert!(matches!(completeness(&v, &[], t), Err(Error::UndefinedMetric(_))));
    }
}
