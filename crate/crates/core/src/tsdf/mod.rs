//! Block-sparse truncated signed distance volume with ray-cast integration.

mod snapshot;
mod traverse;

pub use snapshot::{load_volume, read_volume, save_volume, write_volume};
pub use traverse::{traverse_segment, voxel_of};

use std::collections::HashMap;

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Voxels per block edge.
pub const BLOCK_SIZE: i32 = 16;
const BLOCK_VOXELS: usize = (BLOCK_SIZE * BLOCK_SIZE * BLOCK_SIZE) as usize;
const RAY_BATCH: usize = 4096;

/// Integer voxel coordinate; voxel `k` spans `[k·v, (k+1)·v)` on each axis.
pub type VoxelIndex = [i32; 3];
pub type BlockIndex = [i32; 3];

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Voxel {
    pub distance: f64,
    pub weight: f64,
    pub observations: u32,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WeightMode {
    Constant(f64),
    /// `ρ = 1/|P − O_r|²`.
    InverseSquare,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DistanceMode {
    /// `|P−O| − (P−O)/|P−O| · (X−O)`.
    #[default]
    Projective,
    /// `|P−O| − (P−O) · (X−O)`, without normalizing the ray.
    Literal,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TsdfConfig {
    pub voxel_size: f64,
    pub truncation: f64,
    pub weight_mode: WeightMode,
    pub distance_mode: DistanceMode,
}

impl TsdfConfig {
    pub fn new(voxel_size: f64, truncation: f64, weight_mode: WeightMode) -> Result<Self> {
        let cfg = Self {
            voxel_size,
            truncation,
            weight_mode,
            distance_mode: DistanceMode::Projective,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.voxel_size > 0.0 && self.truncation > self.voxel_size && self.truncation.is_finite()) {
            return Err(Error::invalid(format!(
                "need truncation > voxel size > 0, got v={} δ={}",
                self.voxel_size, self.truncation
            )));
        }
        if let WeightMode::Constant(rho) = self.weight_mode {
            if !(rho >= 0.0 && rho.is_finite()) {
                return Err(Error::invalid("weight ρ must be non-negative"));
            }
        }
        Ok(())
    }
}

pub fn signed_distance(x: &Vector3<f64>, p: &Vector3<f64>, origin: &Vector3<f64>, mode: DistanceMode) -> Result<f64> {
    let ray = p - origin;
    let range = ray.norm();
    if range == 0.0 {
        return Err(Error::invalid("observed point coincides with the sensor origin"));
    }
    let along = match mode {
        DistanceMode::Projective => ray.dot(&(x - origin)) / range,
        DistanceMode::Literal => ray.dot(&(x - origin)),
    };
    Ok(range - along)
}

/// Linear drop-off: full weight in front of `−v`, falling to zero at `−δ`.
pub fn dropoff_weight(d: f64, rho: f64, v: f64, delta: f64) -> Result<f64> {
    if !(delta > v && v > 0.0) {
        return Err(Error::invalid("need truncation > voxel size > 0"));
    }
    Ok(if d > -v {
        rho
    } else if d > -delta {
        rho * (d + delta) / (delta - v)
    } else {
        0.0
    })
}

/// Weighted running average of one observation into a voxel.
pub fn update_voxel(voxel: Voxel, d: f64, gamma: f64) -> Voxel {
    let total = voxel.weight + gamma;
    if gamma <= 0.0 || total <= 0.0 {
        return voxel;
    }
    let (lo, hi) = if voxel.weight > 0.0 { (voxel.distance.min(d), voxel.distance.max(d)) } else { (d, d) };
    Voxel {
        // a convex combination; the clamp only removes rounding drift
        distance: ((voxel.weight * voxel.distance + gamma * d) / total).clamp(lo, hi),
        weight: total,
        observations: voxel.observations + 1,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct IntegrationStats {
    pub rays: usize,
    pub voxels_touched: usize,
    pub points_skipped: usize,
}

impl std::ops::AddAssign for IntegrationStats {
    fn add_assign(&mut self, o: Self) {
        self.rays += o.rays;
        self.voxels_touched += o.voxels_touched;
        self.points_skipped += o.points_skipped;
    }
}

#[derive(Clone, Debug)]
pub struct Block {
    pub voxels: Vec<Voxel>,
}

impl Block {
    fn new() -> Self {
        Self {
            voxels: vec![Voxel::default(); BLOCK_VOXELS],
        }
    }
}

/// Splits a voxel index into its block and the linear offset inside it.
#[inline]
pub fn split_index(idx: VoxelIndex) -> (BlockIndex, usize) {
    let b = idx.map(|k| k.div_euclid(BLOCK_SIZE));
    let l = idx.map(|k| k.rem_euclid(BLOCK_SIZE) as usize);
    let bs = BLOCK_SIZE as usize;
    (b, (l[2] * bs + l[1]) * bs + l[0])
}

#[derive(Clone, Copy, Debug)]
struct Update {
    block: BlockIndex,
    offset: usize,
    distance: f64,
    weight: f64,
}

#[derive(Clone, Debug)]
pub struct TsdfVolume {
    pub config: TsdfConfig,
    blocks: HashMap<BlockIndex, Block>,
}

impl TsdfVolume {
    pub fn new(config: TsdfConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            blocks: HashMap::new(),
        })
    }

    pub fn voxel_size(&self) -> f64 {
        self.config.voxel_size
    }

    pub fn truncation(&self) -> f64 {
        self.config.truncation
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn blocks(&self) -> impl Iterator<Item = (&BlockIndex, &Block)> {
        self.blocks.iter()
    }

    /// Overwrites a voxel, allocating its block if needed.
    pub fn set_voxel(&mut self, idx: VoxelIndex, voxel: Voxel) {
        let (b, o) = split_index(idx);
        self.blocks.entry(b).or_insert_with(Block::new).voxels[o] = voxel;
    }

    pub(crate) fn insert_block(&mut self, index: BlockIndex, block: Block) {
        self.blocks.insert(index, block);
    }

    pub fn get(&self, idx: VoxelIndex) -> Option<&Voxel> {
        let (b, o) = split_index(idx);
        self.blocks.get(&b).map(|blk| &blk.voxels[o])
    }

    /// Voxel at a voxel index, or an unobserved voxel.
    pub fn voxel(&self, idx: VoxelIndex) -> Voxel {
        self.get(idx).copied().unwrap_or_default()
    }

    pub fn voxel_center(&self, idx: VoxelIndex) -> Vector3<f64> {
        let v = self.config.voxel_size;
        Vector3::new(idx[0] as f64 + 0.5, idx[1] as f64 + 0.5, idx[2] as f64 + 0.5) * v
    }

    /// Indices of voxels with positive weight.
    pub fn observed_voxels(&self) -> Vec<VoxelIndex> {
        let bs = BLOCK_SIZE as usize;
        let mut out = Vec::new();
        for (b, blk) in &self.blocks {
            for (o, vx) in blk.voxels.iter().enumerate() {
                if vx.weight > 0.0 {
                    let l = [o % bs, (o / bs) % bs, o / (bs * bs)];
                    out.push([0, 1, 2].map(|a| b[a] * BLOCK_SIZE + l[a] as i32));
                }
            }
        }
        out.sort_unstable();
        out
    }

    fn ray_updates(&self, point: &Vector3<f64>, origin: &Vector3<f64>, out: &mut Vec<Update>) -> bool {
        let cfg = &self.config;
        let ray = point - origin;
        let range = ray.norm();
        if !(range > 0.0) || !point.iter().all(|x| x.is_finite()) {
            return false;
        }
        let rho = match cfg.weight_mode {
            WeightMode::Constant(r) => r,
            WeightMode::InverseSquare => 1.0 / (range * range),
        };
        let end = point + ray * (cfg.truncation / range);
        traverse_segment(origin, &end, cfg.voxel_size, |idx| {
            let x = self.voxel_center(idx);
            let d = signed_distance(&x, point, origin, cfg.distance_mode)
                .expect("range checked above")
                .clamp(-cfg.truncation, cfg.truncation);
            let gamma = dropoff_weight(d, rho, cfg.voxel_size, cfg.truncation).expect("config validated");
            let (block, offset) = split_index(idx);
            out.push(Update {
                block,
                offset,
                distance: d,
                weight: gamma,
            });
        });
        true
    }

    /// Single-threaded integration, ray by ray.
    pub fn integrate_serial(&mut self, points: &[Vector3<f64>], origin: &Vector3<f64>) -> IntegrationStats {
        let mut stats = IntegrationStats::default();
        let mut updates = Vec::new();
        for p in points {
            updates.clear();
            if !self.ray_updates(p, origin, &mut updates) {
                stats.points_skipped += 1;
                continue;
            }
            stats.rays += 1;
            stats.voxels_touched += updates.len();
            for u in &updates {
                let blk = self.blocks.entry(u.block).or_insert_with(Block::new);
                let vx = &mut blk.voxels[u.offset];
                *vx = update_voxel(*vx, u.distance, u.weight);
            }
        }
        stats
    }

    /// Parallel integration. Rays are traced concurrently, then each block
    /// applies its updates in ray order, so the result equals
    /// [`integrate_serial`](Self::integrate_serial) bit for bit.
    pub fn integrate(&mut self, points: &[Vector3<f64>], origin: &Vector3<f64>) -> Result<IntegrationStats> {
        if !origin.iter().all(|x| x.is_finite()) {
            return Err(Error::invalid("rig origin must be finite"));
        }
        let mut stats = IntegrationStats::default();
        for batch in points.chunks(RAY_BATCH) {
            let traced: Vec<Option<Vec<Update>>> = batch
                .par_iter()
                .map(|p| {
                    let mut u = Vec::new();
                    self.ray_updates(p, origin, &mut u).then_some(u)
                })
                .collect();
            let mut by_block: HashMap<BlockIndex, Vec<Update>> = HashMap::new();
            for ray in traced {
                match ray {
                    None => stats.points_skipped += 1,
                    Some(updates) => {
                        stats.rays += 1;
                        stats.voxels_touched += updates.len();
                        for u in updates {
                            by_block.entry(u.block).or_default().push(u);
                        }
                    }
                }
            }
            for b in by_block.keys() {
                self.blocks.entry(*b).or_insert_with(Block::new);
            }
            let mut work: Vec<(&mut Block, Vec<Update>)> = Vec::with_capacity(by_block.len());
            for (b, blk) in self.blocks.iter_mut() {
                if let Some(u) = by_block.remove(b) {
                    work.push((blk, u));
                }
            }
            work.par_iter_mut().for_each(|(blk, updates)| {
                for u in updates.iter() {
                    let vx = &mut blk.voxels[u.offset];
                    *vx = update_voxel(*vx, u.distance, u.weight);
                }
            });
        }
        Ok(stats)
    }
}
