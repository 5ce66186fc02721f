use std::path::Path;

use super::{CostVolume, HypothesisSet};
use crate::error::{Error, Result};
use crate::geometry::{DepthMap, SphereGrid};
use crate::io::pfm::{load_grid_map, save_grid_map, GridMapKind};

pub const DEFAULT_TEMPERATURE: f64 = 0.02;
pub const DEFAULT_FAR_CAP: f64 = 1000.0;

/// Per-ray fractional hypothesis index. Invalid pixels hold NaN.
#[derive(Clone, Debug)]
pub struct InverseDepthMap {
    pub grid: SphereGrid,
    pub hypotheses: HypothesisSet,
    pub index: Vec<f64>,
    pub confidence: Vec<f64>,
}

impl InverseDepthMap {
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let v = self.index[self.grid.index(i, j)];
        (!v.is_nan()).then_some(v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_grid_map(path, &self.grid, &self.index, GridMapKind::InverseDepthIndex)
    }

    /// Loads an index map; confidences are not stored and come back as NaN.
    pub fn load(path: &Path) -> Result<Self> {
        let (grid, kind, index) = load_grid_map(path)?;
        if kind != GridMapKind::InverseDepthIndex {
            return Err(Error::invalid(format!("{} is not an inverse-depth index map", path.display())));
        }
        let confidence = vec![f64::NAN; index.len()];
        Ok(Self {
            grid,
            hypotheses: HypothesisSet::from_grid(&grid)?,
            index,
            confidence,
        })
    }
}

/// Soft-argmin over `softmax(−cost/temperature)`. A pixel is invalid when no
/// hypothesis is seen by at least two cameras.
pub fn regress_inverse_depth(vol: &CostVolume, grid: &SphereGrid, temperature: f64) -> Result<InverseDepthMap> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::invalid("temperature must be positive"));
    }
    if vol.width != grid.width || vol.height != grid.height || vol.depth != grid.num_hypotheses {
        return Err(Error::invalid("cost volume does not match the grid"));
    }
    let hyp = HypothesisSet::from_grid(grid)?;
    let d = vol.depth;
    let mut index = vec![f64::NAN; grid.num_pixels()];
    let mut confidence = vec![f64::NAN; grid.num_pixels()];
    let mut weights = vec![0.0; d];
    for p in 0..grid.num_pixels() {
        let costs = &vol.cost[p * d..(p + 1) * d];
        let vis = &vol.visibility[p * d..(p + 1) * d];
        if vis.iter().all(|&v| v < 1) {
            continue;
        }
        let Some((best, c_min)) = costs
            .iter()
            .copied()
            .enumerate()
            .filter(|(_, c)| c.is_finite())
            .min_by(|a, b| a.1.total_cmp(&b.1))
        else {
            continue;
        };
        let mut total = 0.0;
        let mut peak: f64 = 0.0;
        for (w, &c) in weights.iter_mut().zip(costs) {
            *w = if c.is_finite() { (-(c - c_min) / temperature).exp() } else { 0.0 };
            total += *w;
            peak = peak.max(*w);
        }
        // offsets are accumulated in mirrored pairs about the argmin so that
        // symmetric weights cancel exactly
        let mut offset = 0.0;
        for k in 1..d {
            let up = weights.get(best + k).copied().unwrap_or(0.0);
            let down = if k <= best { weights[best - k] } else { 0.0 };
            offset += k as f64 * (up - down);
        }
        index[p] = (best as f64 + offset / total).clamp(0.0, (d - 1) as f64);
        confidence[p] = peak / total;
    }
    Ok(InverseDepthMap {
        grid: *grid,
        hypotheses: hyp,
        index,
        confidence,
    })
}

/// Depth `1/ρ(n)`, with `ρ` linear in `n`; depths beyond `far_cap` (including
/// `n = 0`) are reported as `far_cap`.
pub fn index_to_depth(map: &InverseDepthMap, far_cap: f64) -> DepthMap {
    let data = map
        .index
        .iter()
        .map(|&n| {
            if n.is_nan() {
                return f64::NAN;
            }
            let rho = map.hypotheses.inverse_depth(n);
            if rho * far_cap <= 1.0 {
                far_cap
            } else {
                1.0 / rho
            }
        })
        .collect();
    DepthMap { grid: map.grid, data }
}

/// Fractional hypothesis index of each depth. Pixels without depth or nearer
/// than `min_depth` are NaN.
pub fn depth_to_index_map(depth: &DepthMap, hyp: &HypothesisSet) -> Vec<f64> {
    depth
        .data
        .iter()
        .map(|&z| {
            if !(z > 0.0) || z < hyp.min_depth * (1.0 - 1e-12) {
                return f64::NAN;
            }
            hyp.index_of(1.0 / z).clamp(0.0, (hyp.count - 1) as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(n: usize) -> SphereGrid {
        SphereGrid::new(2, 1, -0.5, 0.5, n, 0.55).unwrap()
    }

    fn regress(costs: Vec<f64>, n: usize) -> InverseDepthMap {
        let mut both = costs.clone();
        both.extend(costs);
        let vol = CostVolume::from_costs(2, 1, n, both, 1).unwrap();
        regress_inverse_depth(&vol, &grid(n), DEFAULT_TEMPERATURE).unwrap()
    }

    #[test]
    fn one_hot_cost_regresses_to_its_index() {
        let mut costs = vec![1.0; 32];
        costs[17] = 0.0;
        let m = regress(costs, 32);
        assert!((m.index[0] - 17.0).abs() < 1e-3);
        assert!(m.confidence[0] > 0.999);
    }

    #[test]
    fn symmetric_costs_regress_exactly() {
        let k = 11usize;
        let costs: Vec<f64> = (0..23).map(|n| 0.01 * (n as f64 - k as f64).abs().sqrt()).collect();
        let m = regress(costs, 23);
        assert_eq!(m.index[0], k as f64);
    }

    #[test]
    fn uniform_costs_regress_to_the_middle() {
        let m = regress(vec![0.3; 64], 64);
        assert_eq!(m.index[0], 31.5);
        assert!((m.confidence[0] - 1.0 / 64.0).abs() < 1e-15);
    }

    #[test]
    fn unseen_pixels_are_invalid() {
        let mut vol = CostVolume::from_costs(2, 1, 4, vec![0.5; 8], 1).unwrap();
        for k in 0..4 {
            vol.visibility[k] = 0;
            vol.cost[k] = f64::INFINITY;
        }
        let m = regress_inverse_depth(&vol, &grid(4), 0.02).unwrap();
        assert!(m.index[0].is_nan());
        assert!(m.get(1, 0).is_some());
        assert!(regress_inverse_depth(&vol, &grid(4), 0.0).is_err());
    }

    #[test]
    fn index_depth_conversions() {
        let g = grid(65);
        let hyp = HypothesisSet::from_grid(&g).unwrap();
        let m = InverseDepthMap {
            grid: g,
            hypotheses: hyp,
            index: vec![64.0, 32.0],
            confidence: vec![1.0, 1.0],
        };
        let d = index_to_depth(&m, DEFAULT_FAR_CAP);
        assert!((d.data[0] - 0.55).abs() < 1e-12);
        assert!((d.data[1] - 1.1).abs() < 1e-12);
        let m0 = InverseDepthMap { index: vec![0.0, f64::NAN], ..m };
        let d0 = index_to_depth(&m0, 250.0);
        assert_eq!(d0.data[0], 250.0);
        assert!(d0.data[1].is_nan());
        let back = depth_to_index_map(&d, &hyp);
        assert!((back[0] - 64.0).abs() < 1e-9 && (back[1] - 32.0).abs() < 1e-9);
        let near = DepthMap { grid: g, data: vec![0.3, f64::NAN] };
        assert!(depth_to_index_map(&near, &hyp).iter().all(|v| v.is_nan()));
    }

    #[test]
    fn round_trips_through_pfm() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("inv.pfm");
        let m = regress((0..16).map(|n| (n as f64 - 5.2).abs() * 0.01).collect(), 16);
        m.save(&path).unwrap();
        let back = InverseDepthMap::load(&path).unwrap();
        assert_eq!(back.grid, m.grid);
        for (a, b) in m.index.iter().zip(&back.index) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    proptest! {
        #[test]
        fn regression_stays_in_bounds(costs in prop::collection::vec(0.0f64..1.0, 2..40), t in 0.001f64..1.0) {
            let n = costs.len();
            let mut both = costs.clone();
            both.extend(costs);
            let vol = CostVolume::from_costs(2, 1, n, both, 3).unwrap();
            let m = regress_inverse_depth(&vol, &grid(n), t).unwrap();
            prop_assert!(m.index[0] >= 0.0 && m.index[0] <= (n - 1) as f64);
            prop_assert!(m.confidence[0] >= 1.0 / n as f64 - 1e-12 && m.confidence[0] <= 1.0);
        }
    }
}
