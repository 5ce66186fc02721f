use rayon::prelude::*;

use super::SweepTable;
use crate::error::{Error, Result};
use crate::geometry::{Rig, NUM_CAMERAS};
use crate::io::pfm::FloatImage;

/// Photometric dissimilarity used between two camera patches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum CostKind {
    /// `(1 − ZNCC)/2`.
    #[default]
    Zncc,
    /// Mean absolute intensity difference, clamped to [0, 1].
    Sad,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostParams {
    pub patch_radius: usize,
    pub kind: CostKind,
    /// 3×3×3 box filter over (i, j, n) after matching.
    pub smoothing: bool,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            patch_radius: 2,
            kind: CostKind::Zncc,
            smoothing: false,
        }
    }
}

/// Matching costs indexed `(j·W + i)·N + n`.
#[derive(Clone, Debug)]
pub struct CostVolume {
    pub width: usize,
    pub height: usize,
    pub depth: usize,
    /// In [0, 1]; `+∞` where no camera pair contributes.
    pub cost: Vec<f64>,
    /// Number of camera pairs that contributed.
    pub visibility: Vec<u8>,
    /// Some contributing patch had zero variance.
    pub textureless: Vec<bool>,
}

impl CostVolume {
    /// Volume with every cell visible to `pairs` pairs.
    pub fn from_costs(width: usize, height: usize, depth: usize, cost: Vec<f64>, pairs: u8) -> Result<Self> {
        let len = width * height * depth;
        if cost.len() != len {
            return Err(Error::invalid(format!("cost volume needs {len} values, got {}", cost.len())));
        }
        Ok(Self {
            width,
            height,
            depth,
            cost,
            visibility: vec![pairs; len],
            textureless: vec![false; len],
        })
    }

    #[inline]
    pub fn offset(&self, i: usize, j: usize, n: usize) -> usize {
        (j * self.width + i) * self.depth + n
    }

    pub fn cost_at(&self, i: usize, j: usize, n: usize) -> f64 {
        self.cost[self.offset(i, j, n)]
    }

    pub fn visibility_at(&self, i: usize, j: usize, n: usize) -> u8 {
        self.visibility[self.offset(i, j, n)]
    }

    /// Lowest-cost hypothesis for a grid pixel, if any is visible.
    pub fn argmin(&self, i: usize, j: usize) -> Option<usize> {
        let base = self.offset(i, j, 0);
        self.cost[base..base + self.depth]
            .iter()
            .enumerate()
            .filter(|(_, c)| c.is_finite())
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(n, _)| n)
    }
}

fn bilinear(img: &FloatImage, x: f32, y: f32) -> f32 {
    let (x, y) = (x as f64, y as f64);
    let x0 = (x.floor() as usize).min(img.width.saturating_sub(2));
    let y0 = (y.floor() as usize).min(img.height.saturating_sub(2));
    let x1 = (x0 + 1).min(img.width - 1);
    let y1 = (y0 + 1).min(img.height - 1);
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let top = img.get(x0, y0) as f64 * (1.0 - fx) + img.get(x1, y0) as f64 * fx;
    let bottom = img.get(x0, y1) as f64 * (1.0 - fx) + img.get(x1, y1) as f64 * fx;
    (top * (1.0 - fy) + bottom * fy) as f32
}

const MIN_VARIANCE: f64 = 1e-10;

struct Patch {
    values: Vec<f64>,
    mean: f64,
    norm: f64,
}

impl Patch {
    fn new(values: Vec<f64>) -> Self {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        Self {
            values,
            mean,
            norm: ss.sqrt(),
        }
    }

    fn textureless(&self) -> bool {
        self.norm * self.norm / (self.values.len() as f64) < MIN_VARIANCE
    }
}

fn pair_cost(a: &Patch, b: &Patch, kind: CostKind) -> f64 {
    match kind {
        CostKind::Zncc => {
            if a.textureless() || b.textureless() {
                return 1.0;
            }
            let dot: f64 = a
                .values
                .iter()
                .zip(&b.values)
                .map(|(x, y)| (x - a.mean) * (y - b.mean))
                .sum();
            let zncc = (dot / (a.norm * b.norm)).clamp(-1.0, 1.0);
            (1.0 - zncc) / 2.0
        }
        CostKind::Sad => {
            let sad: f64 = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).sum();
            (sad / a.values.len() as f64).min(1.0)
        }
    }
}

/// Patch matching over the sweep. Each camera image is first resampled onto
/// every sphere, then `(2r+1)²` grid-space patches (wrapping in θ, clamped in
/// φ) are compared between every pair of cameras that sees the whole patch.
/// NaN image pixels (masked out) count as unseen.
pub fn compute_cost_volume(
    images: &[FloatImage; NUM_CAMERAS],
    rig: &Rig,
    table: &SweepTable,
    params: &CostParams,
) -> Result<CostVolume> {
    for (c, (img, cam)) in images.iter().zip(&rig.cameras).enumerate() {
        if img.width != cam.image_width as usize || img.height != cam.image_height as usize {
            return Err(Error::invalid(format!(
                "image {c} is {}x{}, camera expects {}x{}",
                img.width, img.height, cam.image_width, cam.image_height
            )));
        }
        if img.width < 2 || img.height < 2 {
            return Err(Error::invalid("images must be at least 2x2"));
        }
    }
    if params.patch_radius < 1 {
        return Err(Error::invalid("patch_radius must be at least 1"));
    }
    let (w, h, n_hyp) = (table.grid.width, table.grid.height, table.hypotheses.count);
    let row_len = w * n_hyp;

    let warped: Vec<Vec<f32>> = (0..NUM_CAMERAS)
        .map(|c| {
            let coords = table.camera_coords(c);
            let mut out = vec![f32::NAN; coords.len()];
            out.par_chunks_mut(row_len)
                .zip(coords.par_chunks(row_len))
                .for_each(|(dst, src)| {
                    for (d, s) in dst.iter_mut().zip(src) {
                        if !s[0].is_nan() {
                            *d = bilinear(&images[c], s[0], s[1]);
                        }
                    }
                });
            out
        })
        .collect();

    let r = params.patch_radius as isize;
    let mut cost = vec![f64::INFINITY; w * h * n_hyp];
    let mut visibility = vec![0u8; w * h * n_hyp];
    let mut textureless = vec![false; w * h * n_hyp];
    cost.par_chunks_mut(row_len)
        .zip(visibility.par_chunks_mut(row_len))
        .zip(textureless.par_chunks_mut(row_len))
        .enumerate()
        .for_each(|(j, ((cost_row, vis_row), flat_row))| {
            let mut offsets = Vec::with_capacity(((2 * r + 1) * (2 * r + 1)) as usize);
            for i in 0..w {
                offsets.clear();
                for dj in -r..=r {
                    let jj = (j as isize + dj).clamp(0, h as isize - 1) as usize;
                    for di in -r..=r {
                        let ii = (i as isize + di).rem_euclid(w as isize) as usize;
                        offsets.push((jj * w + ii) * n_hyp);
                    }
                }
                for n in 0..n_hyp {
                    let patches: Vec<Patch> = warped
                        .iter()
                        .filter_map(|wc| {
                            let vals: Option<Vec<f64>> = offsets
                                .iter()
                                .map(|&o| {
                                    let v = wc[o + n];
                                    (!v.is_nan()).then_some(v as f64)
                                })
                                .collect();
                            vals.map(Patch::new)
                        })
                        .collect();
                    if patches.len() < 2 {
                        continue;
                    }
                    let mut sum = 0.0;
                    let mut pairs = 0u8;
                    for a in 0..patches.len() {
                        for b in a + 1..patches.len() {
                            sum += pair_cost(&patches[a], &patches[b], params.kind);
                            pairs += 1;
                        }
                    }
                    let k = i * n_hyp + n;
                    cost_row[k] = sum / pairs as f64;
                    vis_row[k] = pairs;
                    flat_row[k] = params.kind == CostKind::Zncc && patches.iter().any(Patch::textureless);
                }
            }
        });

    let mut vol = CostVolume {
        width: w,
        height: h,
        depth: n_hyp,
        cost,
        visibility,
        textureless,
    };
    if params.smoothing {
        box_smooth(&mut vol);
    }
    Ok(vol)
}

/// Replaces every visible cost with the mean of the visible costs in its
/// 3×3×3 neighbourhood.
pub fn box_smooth(vol: &mut CostVolume) {
    let (w, h, d) = (vol.width, vol.height, vol.depth);
    let src = vol.cost.clone();
    vol.cost
        .par_chunks_mut(w * d)
        .enumerate()
        .for_each(|(j, row)| {
            for i in 0..w {
                for n in 0..d {
                    if !row[i * d + n].is_finite() {
                        continue;
                    }
                    let (mut sum, mut count) = (0.0, 0usize);
                    for jj in j.saturating_sub(1)..=(j + 1).min(h - 1) {
                        for di in -1isize..=1 {
                            let ii = (i as isize + di).rem_euclid(w as isize) as usize;
                            for nn in n.saturating_sub(1)..=(n + 1).min(d - 1) {
                                let v = src[(jj * w + ii) * d + nn];
                                if v.is_finite() {
                                    sum += v;
                                    count += 1;
                                }
                            }
                        }
                    }
                    row[i * d + n] = sum / count as f64;
                }
            }
        });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{outward_rotation, FisheyeCamera, Se3, SphereGrid};
    use crate::sweep::{build_sweep_table, HypothesisSet};
    use nalgebra::{Matrix2, Vector2, Vector3};

    fn textured(size: usize, phase: f32) -> FloatImage {
        let data = (0..size * size)
            .map(|k| {
                let (x, y) = ((k % size) as f32, (k / size) as f32);
                0.5 + 0.25 * (0.37 * x + phase).sin() * (0.23 * y).cos() + 0.1 * (0.71 * (x + y)).sin()
            })
            .collect();
        FloatImage::new(size, size, data).unwrap()
    }

    fn setup(rig: &Rig) -> SweepTable {
        let grid = SphereGrid::new(48, 12, -0.6, 0.6, 8, 0.5).unwrap();
        build_sweep_table(rig, &grid, &HypothesisSet::from_grid(&grid).unwrap())
    }

    fn concentric_rig() -> Rig {
        let cam = FisheyeCamera::new(
            101,
            101,
            Vector2::new(50.0, 50.0),
            [30.0, 0.0, 0.0, 0.0],
            Matrix2::identity(),
            1.5,
            Se3::from_rotation_matrix(&outward_rotation(0.3), Vector3::zeros()),
        )
        .unwrap();
        Rig::new(std::array::from_fn(|_| cam.clone()))
    }

    #[test]
    fn nan_pixels_are_unseen() {
        let rig = concentric_rig();
        let table = setup(&rig);
        let mut images: [FloatImage; NUM_CAMERAS] = std::array::from_fn(|_| textured(101, 0.0));
        let full = compute_cost_volume(&images, &rig, &table, &CostParams::default()).unwrap();
        images[3].data.fill(f32::NAN);
        let masked = compute_cost_volume(&images, &rig, &table, &CostParams::default()).unwrap();
        assert_eq!(full.visibility.iter().max(), Some(&6));
        assert_eq!(masked.visibility.iter().max(), Some(&3));
        for (v, c) in masked.visibility.iter().zip(&masked.cost) {
            assert!(*v == 0 || c.is_finite());
        }
    }

    #[test]
    fn constant_images_are_textureless() {
        let rig = Rig::cardinal(0.2, 101, [30.0, 0.0, 0.0, 0.0], 1.9).unwrap();
        let table = setup(&rig);
        let img = FloatImage::new(101, 101, vec![0.4; 101 * 101]).unwrap();
        let images = std::array::from_fn(|_| img.clone());
        let vol = compute_cost_volume(&images, &rig, &table, &CostParams::default()).unwrap();
        let mut seen = 0;
        for k in 0..vol.cost.len() {
            if vol.visibility[k] > 0 {
                assert_eq!(vol.cost[k], 1.0);
                assert!(vol.textureless[k]);
                seen += 1;
            } else {
                assert_eq!(vol.cost[k], f64::INFINITY);
            }
        }
        assert!(seen > 0);
    }

    #[test]
    fn duplicate_images_from_coincident_cameras_cost_nothing() {
        let rig = concentric_rig();
        let table = setup(&rig);
        let img = textured(101, 0.0);
        let images = std::array::from_fn(|_| img.clone());
        let vol = compute_cost_volume(&images, &rig, &table, &CostParams::default()).unwrap();
        let mut seen = 0;
        for k in 0..vol.cost.len() {
            if vol.visibility[k] > 0 {
                assert_eq!(vol.visibility[k], 6);
                assert!(vol.cost[k] < 1e-12, "{}", vol.cost[k]);
                seen += 1;
            }
        }
        assert!(seen > 0);
    }

    #[test]
    fn permuting_cameras_with_images_keeps_costs() {
        let rig = Rig::cardinal(0.2, 101, [30.0, 0.0, 0.0, 0.0], 1.9).unwrap();
        let table = setup(&rig);
        let images: [FloatImage; 4] = std::array::from_fn(|c| textured(101, c as f32 * 0.7));
        let params = CostParams {
            smoothing: true,
            ..Default::default()
        };
        let vol = compute_cost_volume(&images, &rig, &table, &params).unwrap();
        let perm = [2usize, 0, 3, 1];
        let rig_p = Rig::new(std::array::from_fn(|c| rig.cameras[perm[c]].clone()));
        let images_p = std::array::from_fn(|c| images[perm[c]].clone());
        let table_p = setup(&rig_p);
        let vol_p = compute_cost_volume(&images_p, &rig_p, &table_p, &params).unwrap();
        assert_eq!(vol.visibility, vol_p.visibility);
        for (a, b) in vol.cost.iter().zip(&vol_p.cost) {
            assert!(a == b || (a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn partitioning_does_not_change_results() {
        let rig = Rig::cardinal(0.2, 101, [30.0, 0.0, 0.0, 0.0], 1.9).unwrap();
        let table = setup(&rig);
        let images: [FloatImage; 4] = std::array::from_fn(|c| textured(101, c as f32));
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| compute_cost_volume(&images, &rig, &table, &CostParams::default()).unwrap())
        };
        let (a, b) = (run(1), run(3));
        assert_eq!(a.visibility, b.visibility);
        assert!(a.cost.iter().zip(&b.cost).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn rejects_mismatched_images() {
        let rig = concentric_rig();
        let table = setup(&rig);
        let images = std::array::from_fn(|_| textured(64, 0.0));
        assert!(compute_cost_volume(&images, &rig, &table, &CostParams::default()).is_err());
        let images = std::array::from_fn(|_| textured(101, 0.0));
        let bad = CostParams {
            patch_radius: 0,
            ..Default::default()
        };
        assert!(compute_cost_volume(&images, &rig, &table, &bad).is_err());
    }
}
