//! Binary volume snapshot, little-endian:
//! magic `OMTSDF01`, v: f64, δ: f64, weight mode: u8 (0 constant, 1 inverse
//! square), ρ: f64, distance mode: u8, block size: u32, block count: u64, then
//! per block three i32 coordinates followed by `block size³` records of
//! (D: f32, Γ: f32, obs: u32) in x-fastest order.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Block, DistanceMode, TsdfConfig, TsdfVolume, Voxel, WeightMode, BLOCK_SIZE, BLOCK_VOXELS};
use crate::error::{Error, Result};

fn parse_offset(offset: u64, msg: impl Into<String>) -> Error {
    Error::parse_offset(offset, msg)
}

const MAGIC: &[u8; 8] = b"OMTSDF01";

pub fn write_volume<W: Write>(mut w: W, vol: &TsdfVolume) -> Result<()> {
    let cfg = &vol.config;
    w.write_all(MAGIC)?;
    w.write_all(&cfg.voxel_size.to_le_bytes())?;
    w.write_all(&cfg.truncation.to_le_bytes())?;
    let (mode, rho) = match cfg.weight_mode {
        WeightMode::Constant(r) => (0u8, r),
        WeightMode::InverseSquare => (1u8, 0.0),
    };
    w.write_all(&[mode])?;
    w.write_all(&rho.to_le_bytes())?;
    w.write_all(&[(cfg.distance_mode == DistanceMode::Literal) as u8])?;
    w.write_all(&(BLOCK_SIZE as u32).to_le_bytes())?;
    let mut keys: Vec<_> = vol.blocks.keys().copied().collect();
    keys.sort_unstable();
    w.write_all(&(keys.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(BLOCK_VOXELS * 12);
    for k in keys {
        for c in k {
            w.write_all(&c.to_le_bytes())?;
        }
        buf.clear();
        for vx in &vol.blocks[&k].voxels {
            buf.extend_from_slice(&(vx.distance as f32).to_le_bytes());
            buf.extend_from_slice(&(vx.weight as f32).to_le_bytes());
            buf.extend_from_slice(&vx.observations.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

struct Cursor<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    fn bytes<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner
            .read_exact(&mut b)
            .map_err(|_| parse_offset(self.offset, format!("truncated snapshot reading {what}")))?;
        self.offset += N as u64;
        Ok(b)
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        self.bytes::<8>(what).map(f64::from_le_bytes)
    }
}

pub fn read_volume<R: Read>(r: R) -> Result<TsdfVolume> {
    let mut cur = Cursor { inner: r, offset: 0 };
    if &cur.bytes::<8>("magic")? != MAGIC {
        return Err(parse_offset(0, "not a TSDF snapshot"));
    }
    let voxel_size = cur.f64("voxel size")?;
    let truncation = cur.f64("truncation")?;
    let mode_at = cur.offset;
    let mode = cur.bytes::<1>("weight mode")?[0];
    let rho = cur.f64("rho")?;
    let weight_mode = match mode {
        0 => WeightMode::Constant(rho),
        1 => WeightMode::InverseSquare,
        m => return Err(parse_offset(mode_at, format!("unknown weight mode {m}"))),
    };
    let distance_mode = match cur.bytes::<1>("distance mode")?[0] {
        0 => DistanceMode::Projective,
        _ => DistanceMode::Literal,
    };
    let bs_at = cur.offset;
    let bs = u32::from_le_bytes(cur.bytes::<4>("block size")?);
    if bs != BLOCK_SIZE as u32 {
        return Err(parse_offset(bs_at, format!("block size {bs} unsupported")));
    }
    let count = u64::from_le_bytes(cur.bytes::<8>("block count")?);
    let config = TsdfConfig {
        voxel_size,
        truncation,
        weight_mode,
        distance_mode,
    };
    let mut vol = TsdfVolume::new(config).map_err(|e| parse_offset(8, e.to_string()))?;
    let mut buf = vec![0u8; BLOCK_VOXELS * 12];
    for _ in 0..count {
        let mut key = [0i32; 3];
        for k in &mut key {
            *k = i32::from_le_bytes(cur.bytes::<4>("block index")?);
        }
        cur.inner
            .read_exact(&mut buf)
            .map_err(|_| parse_offset(cur.offset, "truncated voxel records"))?;
        cur.offset += buf.len() as u64;
        let voxels = buf
            .chunks_exact(12)
            .map(|r| Voxel {
                distance: f32::from_le_bytes(r[0..4].try_into().unwrap()) as f64,
                weight: f32::from_le_bytes(r[4..8].try_into().unwrap()) as f64,
                observations: u32::from_le_bytes(r[8..12].try_into().unwrap()),
            })
            .collect();
        vol.insert_block(key, Block { voxels });
    }
    Ok(vol)
}

pub fn save_volume(path: &Path, vol: &TsdfVolume) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write_volume(&mut w, vol)?;
    w.flush()?;
    Ok(())
}

pub fn load_volume(path: &Path) -> Result<TsdfVolume> {
    read_volume(BufReader::new(std::fs::File::open(path)?))
}
