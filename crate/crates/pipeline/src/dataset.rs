//! On-disk layout of datasets and intermediate artifacts.
//!
//! A dataset directory holds `rig.calib`, `images/<frame>_<cam>.pfm`,
//! `tracks.txt`, `depth_frames.txt` and, for synthetic data, the ground truth:
//! `gt_traj.txt`, `gt_depth/<frame>.pfm`, `track_labels.txt`, `gt_mesh.ply`
//! (observed surface) and `gt_mesh_full.ply`. An optional mask directory
//! holds `mask_<cam>.pfm` per camera.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Quaternion, UnitQuaternion, Vector2, Vector3};
use omnimap_core::geometry::calib::{format_calibration, parse_calibration};
use omnimap_core::io::pfm::{load_depth_map, load_pfm, save_depth_map, save_pfm, FloatImage};
use omnimap_core::io::tracks::{Descriptor, TrackTable};
use omnimap_core::io::trajectory::{format_keyframe_ids, parse_keyframe_ids, TimedPose, Trajectory};
use omnimap_core::mesh::{save_ply, PlyFormat};
use omnimap_core::odometry::{KeyframeFeature, KeyframeRecord};
use omnimap_core::{DepthMap, Rig, Se3, SphereGrid, NUM_CAMERAS};

use crate::error::{PipelineError, Result};
use crate::render::Dataset;

pub fn image_path(dir: &Path, frame: u32, cam: usize) -> PathBuf {
    dir.join(format!("{frame:05}_{cam}.pfm"))
}

pub fn depth_path(dir: &Path, frame: u32) -> PathBuf {
    dir.join(format!("{frame:05}.pfm"))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(PipelineError::file(dir))
}

/// Writes `text` through a temporary file so an interrupted stage never
/// leaves a truncated artifact behind.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let tmp = path.with_extension("partial");
    fs::write(&tmp, text).map_err(PipelineError::file(&tmp))?;
    fs::rename(&tmp, path).map_err(PipelineError::file(path))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(PipelineError::file(path))
}

pub fn load_rig(path: &Path) -> Result<Rig> {
    parse_calibration(&read_text(path)?).map_err(PipelineError::file(path))
}

pub fn load_tracks(path: &Path) -> Result<TrackTable> {
    TrackTable::parse(&read_text(path)?).map_err(PipelineError::file(path))
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory> {
    Trajectory::parse_tum(&read_text(path)?).map_err(PipelineError::file(path))
}

pub fn load_frame_ids(path: &Path) -> Result<Vec<u32>> {
    parse_keyframe_ids(&read_text(path)?).map_err(PipelineError::file(path))
}

pub fn load_images(dir: &Path, frame: u32) -> Result<[FloatImage; NUM_CAMERAS]> {
    let mut out = Vec::with_capacity(NUM_CAMERAS);
    for c in 0..NUM_CAMERAS {
        let p = image_path(dir, frame, c);
        out.push(load_pfm(&p).map_err(PipelineError::file(&p))?);
    }
    Ok(out.try_into().expect("one image per camera"))
}

pub fn mask_path(dir: &Path, cam: usize) -> PathBuf {
    dir.join(format!("mask_{cam}.pfm"))
}

/// Static per-camera masks; cameras without a mask file get `None`.
pub fn load_masks(dir: &Path) -> Result<[Option<FloatImage>; NUM_CAMERAS]> {
    let mut out: [Option<FloatImage>; NUM_CAMERAS] = Default::default();
    for (c, m) in out.iter_mut().enumerate() {
        let p = mask_path(dir, c);
        if p.exists() {
            *m = Some(load_pfm(&p).map_err(PipelineError::file(&p))?);
        }
    }
    Ok(out)
}

/// Marks pixels whose mask value is not above 0.5 as unobserved (NaN), which
/// the sweep treats like pixels outside the field of view.
pub fn apply_masks(images: &mut [FloatImage; NUM_CAMERAS], masks: &[Option<FloatImage>; NUM_CAMERAS]) -> Result<()> {
    for (c, (img, mask)) in images.iter_mut().zip(masks).enumerate() {
        let Some(mask) = mask else { continue };
        if (mask.width, mask.height) != (img.width, img.height) {
            return Err(PipelineError::Config(format!(
                "mask {c} is {}x{}, image is {}x{}",
                mask.width, mask.height, img.width, img.height
            )));
        }
        for (v, m) in img.data.iter_mut().zip(&mask.data) {
            if !(*m > 0.5) {
                *v = f32::NAN;
            }
        }
    }
    Ok(())
}

pub fn load_depth(dir: &Path, frame: u32) -> Result<DepthMap> {
    let p = depth_path(dir, frame);
    load_depth_map(&p).map_err(PipelineError::file(&p))
}

pub fn save_depth(dir: &Path, frame: u32, depth: &DepthMap) -> Result<()> {
    let p = depth_path(dir, frame);
    save_depth_map(&p, depth).map_err(PipelineError::file(&p))
}

pub fn confidence_path(dir: &Path, frame: u32) -> PathBuf {
    dir.join(format!("{frame:05}_conf.pfm"))
}

/// Per-pixel sweep confidence, stored upright like the grid maps (top row =
/// highest elevation).
pub fn save_confidence(path: &Path, grid: &SphereGrid, values: &[f64]) -> Result<()> {
    let (w, h) = (grid.width, grid.height);
    let data = (0..w * h).map(|k| values[(h - 1 - k / w) * w + k % w] as f32).collect();
    save_pfm(path, &FloatImage { width: w, height: h, data }).map_err(PipelineError::file(path))
}

pub fn load_confidence(path: &Path, grid: &SphereGrid) -> Result<Vec<f64>> {
    let img = load_pfm(path).map_err(PipelineError::file(path))?;
    let (w, h) = (grid.width, grid.height);
    if img.width != w || img.height != h {
        return Err(PipelineError::File { path: path.to_path_buf(), source: omnimap_core::Error::InvalidArgument("confidence map size disagrees with the grid".into()) });
    }
    Ok((0..w * h).map(|k| img.data[(h - 1 - k / w) * w + k % w] as f64).collect())
}

/// Frames `0..n` at `frame · interval` seconds.
pub fn frames_to_trajectory(poses: &[Se3], interval: f64) -> Trajectory {
    Trajectory::new(poses.iter().enumerate().map(|(f, p)| TimedPose { timestamp: f as f64 * interval, pose: *p }).collect())
}

pub fn save_dataset(dir: &Path, data: &Dataset, frame_interval: f64) -> Result<()> {
    create_dir(&dir.join("images"))?;
    create_dir(&dir.join("gt_depth"))?;
    write_text(&dir.join("rig.calib"), &format_calibration(&data.rig))?;
    for (f, imgs) in &data.images {
        for (c, img) in imgs.iter().enumerate() {
            let p = image_path(&dir.join("images"), *f, c);
            save_pfm(&p, img).map_err(PipelineError::file(&p))?;
        }
    }
    for (f, d) in &data.depth {
        save_depth(&dir.join("gt_depth"), *f, d)?;
    }
    write_text(&dir.join("tracks.txt"), &data.tracks.format())?;
    let labels: String = data.labels.iter().map(|(t, a)| format!("{t} {a}\n")).collect();
    write_text(&dir.join("track_labels.txt"), &labels)?;
    write_text(&dir.join("depth_frames.txt"), &format_keyframe_ids(&data.depth_frames))?;
    write_text(&dir.join("gt_traj.txt"), &frames_to_trajectory(&data.trajectory, frame_interval).to_tum())?;
    for (name, mesh) in [("gt_mesh.ply", &data.mesh), ("gt_mesh_full.ply", &data.mesh_full)] {
        let p = dir.join(name);
        save_ply(&p, mesh, PlyFormat::BinaryLittleEndian).map_err(PipelineError::file(&p))?;
    }
    Ok(())
}

fn parse_err(path: &str, line: usize, msg: &str) -> PipelineError {
    PipelineError::File {
        path: PathBuf::from(path),
        source: omnimap_core::Error::Parse { location: format!("line {line}"), message: msg.to_string() },
    }
}

/// Keyframe records as text: a `keyframe` line (frame, TUM-ordered pose,
/// feature count) followed by one `f` line per feature.
pub fn format_keyframes(records: &[KeyframeRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let (t, q) = (r.pose.translation, r.pose.rotation);
        let _ = writeln!(out, "keyframe {} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {}", r.frame, t.x, t.y, t.z, q.i, q.j, q.k, q.w, r.features.len());
        for f in &r.features {
            let desc = f.descriptor.map_or_else(|| "-".to_string(), |d| d.to_string());
            let point = f.rig_point.map_or_else(|| "- - -".to_string(), |p| format!("{:?} {:?} {:?}", p.x, p.y, p.z));
            let lm = f.landmark.map_or_else(|| "-".to_string(), |l| l.to_string());
            let _ = writeln!(out, "f {} {} {:?} {:?} {desc} {point} {lm}", f.cam, f.track_id, f.pixel.x, f.pixel.y);
        }
    }
    out
}

pub fn parse_keyframes(text: &str, name: &str) -> Result<Vec<KeyframeRecord>> {
    let mut out: Vec<KeyframeRecord> = Vec::new();
    let mut expected = 0usize;
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let tok: Vec<&str> = raw.split_whitespace().collect();
        let err = |m: &str| parse_err(name, line, m);
        let float = |s: &str| s.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| err("bad number"));
        match tok.first() {
            None => continue,
            Some(&"keyframe") => {
                if expected != 0 {
                    return Err(err("previous keyframe has missing features"));
                }
                if tok.len() != 10 {
                    return Err(err("keyframe lines need 9 fields"));
                }
                let frame: u32 = tok[1].parse().map_err(|_| err("bad frame id"))?;
                let v: Vec<f64> = tok[2..9].iter().map(|s| float(s)).collect::<Result<_>>()?;
                let q = Quaternion::new(v[6], v[3], v[4], v[5]);
                if q.norm() < 1e-9 {
                    return Err(err("zero quaternion"));
                }
                expected = tok[9].parse().map_err(|_| err("bad feature count"))?;
                out.push(KeyframeRecord {
                    frame,
                    pose: Se3::new(UnitQuaternion::new_normalize(q), Vector3::new(v[0], v[1], v[2])),
                    features: Vec::with_capacity(expected),
                });
            }
            Some(&"f") => {
                let rec = out.last_mut().filter(|_| expected > 0).ok_or_else(|| err("feature outside a keyframe"))?;
                if tok.len() != 10 {
                    return Err(err("feature lines need 9 fields"));
                }
                let cam: usize = tok[1].parse().ok().filter(|c| *c < NUM_CAMERAS).ok_or_else(|| err("bad camera"))?;
                let track_id: u64 = tok[2].parse().map_err(|_| err("bad track id"))?;
                let pixel = Vector2::new(float(tok[3])?, float(tok[4])?);
                let descriptor = match tok[5] {
                    "-" => None,
                    s => Some(Descriptor::from_hex(s).ok_or_else(|| err("bad descriptor"))?),
                };
                let rig_point = match tok[6] {
                    "-" => None,
                    _ => Some(Vector3::new(float(tok[6])?, float(tok[7])?, float(tok[8])?)),
                };
                let landmark = match tok[9] {
                    "-" => None,
                    s => Some(s.parse().map_err(|_| err("bad landmark id"))?),
                };
                rec.features.push(KeyframeFeature { cam, track_id, pixel, descriptor, rig_point, landmark });
                expected -= 1;
            }
            Some(_) => return Err(err("unknown record")),
        }
    }
    if expected != 0 {
        return Err(parse_err(name, text.lines().count(), "last keyframe has missing features"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector6;

    #[test]
    fn confidence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let grid = SphereGrid::new(4, 3, -0.5, 0.5, 8, 0.5).unwrap();
        let v: Vec<f64> = (0..12).map(|k| k as f64 / 16.0).collect();
        let p = dir.path().join("c.pfm");
        save_confidence(&p, &grid, &v).unwrap();
        assert_eq!(load_confidence(&p, &grid).unwrap(), v);
        assert_eq!(load_pfm(&p).unwrap().get(0, 0), 8.0 / 16.0);
    }

    #[test]
    fn masks_blank_excluded_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let img = || FloatImage::new(2, 2, vec![0.25; 4]).unwrap();
        save_pfm(&mask_path(dir.path(), 1), &FloatImage::new(2, 2, vec![1.0, 0.0, 0.7, 0.5]).unwrap()).unwrap();
        let masks = load_masks(dir.path()).unwrap();
        assert!(masks[0].is_none() && masks[1].is_some());
        let mut images: [FloatImage; NUM_CAMERAS] = std::array::from_fn(|_| img());
        apply_masks(&mut images, &masks).unwrap();
        assert_eq!(images[0].data, vec![0.25; 4]);
        let nan: Vec<bool> = images[1].data.iter().map(|v| v.is_nan()).collect();
        assert_eq!(nan, vec![false, true, false, true]);
        let mut wrong: [FloatImage; NUM_CAMERAS] = std::array::from_fn(|_| FloatImage::new(3, 2, vec![0.0; 6]).unwrap());
        assert!(apply_masks(&mut wrong, &masks).is_err());
    }

    #[test]
    fn keyframe_records_round_trip() {
        let recs = vec![
            KeyframeRecord {
                frame: 0,
                pose: Se3::exp(&Vector6::new(0.1, -0.2, 0.3, 1.0, 2.0, 3.0)),
                features: vec![
                    KeyframeFeature {
                        cam: 2,
                        track_id: 77,
                        pixel: Vector2::new(10.25, 300.125),
                        descriptor: Some(Descriptor([1, 2, 3, u64::MAX])),
                        rig_point: Some(Vector3::new(0.1, 0.2, -3.0)),
                        landmark: Some(5),
                    },
                    KeyframeFeature { cam: 0, track_id: 3, pixel: Vector2::new(1.0, 2.0), descriptor: None, rig_point: None, landmark: None },
                ],
            },
            KeyframeRecord { frame: 8, pose: Se3::identity(), features: vec![] },
        ];
        let back = parse_keyframes(&format_keyframes(&recs), "k").unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].features, recs[0].features);
        assert_eq!(back[0].pose.translation, recs[0].pose.translation);
        assert!((back[0].pose.inverse() * recs[0].pose).log().norm() < 1e-15);
        assert!(parse_keyframes("keyframe 0 0 0 0 0 0 0 1 2\nf 0 1 1 1 - - - - -\n", "k").is_err());
        assert!(parse_keyframes("f 0 1 1 1 - - - - -\n", "k").is_err());
    }
}
