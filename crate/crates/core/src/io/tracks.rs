//! Per-frame keypoint tracks: `frame cam track_id u v [descriptor_hex]`.

use std::collections::{BTreeMap, HashSet};
use std::fmt::{self, Write as _};

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::geometry::{Rig, NUM_CAMERAS};

/// 256-bit binary feature descriptor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct Descriptor(pub [u64; 4]);

impl Descriptor {
    #[inline]
    pub fn hamming(&self, other: &Descriptor) -> u32 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        if s.len() != 64 || !s.is_ascii() {
            return None;
        }
        let mut words = [0u64; 4];
        for (k, w) in words.iter_mut().enumerate() {
            *w = u64::from_str_radix(&s[k * 16..(k + 1) * 16], 16).ok()?;
        }
        Some(Self(words))
    }
}

impl fmt::Display for Descriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for w in &self.0 {
            write!(f, "{w:016x}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub track_id: u64,
    pub pixel: Vector2<f64>,
    pub descriptor: Option<Descriptor>,
}

/// All keypoints of one frame, grouped by camera.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameTracks {
    pub frame: u32,
    pub cameras: [Vec<Observation>; NUM_CAMERAS],
}

impl FrameTracks {
    pub fn empty(frame: u32) -> Self {
        Self {
            frame,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.cameras.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrackTable {
    frames: BTreeMap<u32, FrameTracks>,
}

impl TrackTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an observation, enforcing unique track ids per (frame, camera).
    pub fn push(&mut self, frame: u32, cam: usize, obs: Observation) -> Result<()> {
        if cam >= NUM_CAMERAS {
            return Err(Error::invalid(format!("camera index {cam} out of range")));
        }
        let entry = self
            .frames
            .entry(frame)
            .or_insert_with(|| FrameTracks::empty(frame));
        if entry.cameras[cam].iter().any(|o| o.track_id == obs.track_id) {
            return Err(Error::invalid(format!(
                "duplicate track {} in frame {frame} camera {cam}",
                obs.track_id
            )));
        }
        entry.cameras[cam].push(obs);
        Ok(())
    }

    pub fn insert_frame(&mut self, tracks: FrameTracks) {
        self.frames.insert(tracks.frame, tracks);
    }

    /// Tracks of `frame`, empty when the frame has no observations.
    pub fn frame(&self, frame: u32) -> FrameTracks {
        self.frames
            .get(&frame)
            .cloned()
            .unwrap_or_else(|| FrameTracks::empty(frame))
    }

    pub fn frames(&self) -> impl Iterator<Item = &FrameTracks> {
        self.frames.values()
    }

    pub fn last_frame(&self) -> Option<u32> {
        self.frames.keys().next_back().copied()
    }

    /// Checks every pixel against its camera's image bounds.
    pub fn validate(&self, rig: &Rig) -> Result<()> {
        for ft in self.frames.values() {
            for (c, obs) in ft.cameras.iter().enumerate() {
                for o in obs {
                    if !rig.cameras[c].in_image(&o.pixel) {
                        return Err(Error::invalid(format!(
                            "frame {} camera {c} track {} pixel ({}, {}) outside image",
                            ft.frame, o.track_id, o.pixel.x, o.pixel.y
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut table = Self::new();
        let mut seen: HashSet<(u32, usize, u64)> = HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 5 && f.len() != 6 {
                return Err(Error::parse_line(line_no, format!("expected 5 or 6 fields, found {}", f.len())));
            }
            let bad = |what: &str| Error::parse_line(line_no, format!("bad {what}"));
            let frame: u32 = f[0].parse().map_err(|_| bad("frame"))?;
            let cam: usize = f[1].parse().map_err(|_| bad("camera"))?;
            let track_id: u64 = f[2].parse().map_err(|_| bad("track id"))?;
            let u: f64 = f[3].parse().map_err(|_| bad("u"))?;
            let v: f64 = f[4].parse().map_err(|_| bad("v"))?;
            if cam >= NUM_CAMERAS || !u.is_finite() || !v.is_finite() {
                return Err(bad("camera index or pixel"));
            }
            let descriptor = match f.get(5) {
                Some(h) => Some(Descriptor::from_hex(h).ok_or_else(|| bad("descriptor"))?),
                None => None,
            };
            if !seen.insert((frame, cam, track_id)) {
                return Err(Error::parse_line(
                    line_no,
                    format!("duplicate track {track_id} in frame {frame} camera {cam}"),
                ));
            }
            table.push(
                frame,
                cam,
                Observation {
                    track_id,
                    pixel: Vector2::new(u, v),
                    descriptor,
                },
            )?;
        }
        Ok(table)
    }

    pub fn format(&self) -> String {
        let mut out = String::new();
        for ft in self.frames.values() {
            for (c, obs) in ft.cameras.iter().enumerate() {
                for o in obs {
                    let _ = write!(out, "{} {} {} {:?} {:?}", ft.frame, c, o.track_id, o.pixel.x, o.pixel.y);
                    if let Some(d) = &o.descriptor {
                        let _ = write!(out, " {d}");
                    }
                    out.push('\n');
                }
            }
        }
        out
    }
}
