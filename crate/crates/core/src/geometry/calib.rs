//! Plain-text rig calibration.
//!
//! One stanza per camera, in camera-index order:
//!
//! ```text
//! camera 0
//! model odd_poly4
//! size 800 768
//! principal 399.5 383.5
//! poly 220.0 -8.0 0.6 -0.02
//! affine 1 0 0 1
//! fov_half_angle 1.9198621771937625
//! cam_to_rig r00 r01 r02 tx r10 r11 r12 ty r20 r21 r22 tz 0 0 0 1
//! end
//! ```
//!
//! `#` starts a comment. Unknown model names are rejected.

use std::fmt::Write as _;

use nalgebra::{Matrix2, Matrix4, Vector2};

use super::camera::{FisheyeCamera, Rig, NUM_CAMERAS};
use super::se3::Se3;
use crate::error::{Error, Result};

pub const MODEL_ODD_POLY: &str = "odd_poly4";

#[derive(Default)]
struct Stanza {
    index: usize,
    start_line: usize,
    model: Option<String>,
    size: Option<(u32, u32)>,
    principal: Option<Vector2<f64>>,
    poly: Option<[f64; 4]>,
    affine: Option<Matrix2<f64>>,
    fov: Option<f64>,
    cam_to_rig: Option<Matrix4<f64>>,
}

fn numbers(line: usize, fields: &[&str], count: usize) -> Result<Vec<f64>> {
    if fields.len() != count {
        return Err(Error::parse_line(
            line,
            format!("expected {count} values, found {}", fields.len()),
        ));
    }
    fields
        .iter()
        .map(|f| {
            f.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse_line(line, format!("bad number '{f}'")))
        })
        .collect()
}

impl Stanza {
    fn finish(self, end_line: usize) -> Result<FisheyeCamera> {
        let missing = |what: &str| {
            Error::parse_line(
                end_line,
                format!("camera {} stanza lacks '{what}'", self.index),
            )
        };
        let model = self.model.ok_or_else(|| missing("model"))?;
        if model != MODEL_ODD_POLY {
            return Err(Error::parse_line(
                self.start_line,
                format!("unknown camera model '{model}'"),
            ));
        }
        let (w, h) = self.size.ok_or_else(|| missing("size"))?;
        let pose = Se3::from_matrix(&self.cam_to_rig.ok_or_else(|| missing("cam_to_rig"))?)
            .map_err(|e| Error::parse_line(end_line, e.to_string()))?;
        FisheyeCamera::new(
            w,
            h,
            self.principal.ok_or_else(|| missing("principal"))?,
            self.poly.ok_or_else(|| missing("poly"))?,
            self.affine.ok_or_else(|| missing("affine"))?,
            self.fov.ok_or_else(|| missing("fov_half_angle"))?,
            pose,
        )
        .map_err(|e| Error::parse_line(end_line, e.to_string()))
    }
}

pub fn parse_calibration(text: &str) -> Result<Rig> {
    let mut cameras: Vec<FisheyeCamera> = Vec::new();
    let mut current: Option<Stanza> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let (key, rest) = (fields[0], &fields[1..]);
        match (key, current.as_mut()) {
            ("camera", None) => {
                let index: usize = rest
                    .first()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::parse_line(line_no, "camera needs an index"))?;
                if index != cameras.len() {
                    return Err(Error::parse_line(
                        line_no,
                        format!("expected camera {}, found {index}", cameras.len()),
                    ));
                }
                current = Some(Stanza {
                    index,
                    start_line: line_no,
                    ..Default::default()
                });
            }
            ("end", Some(_)) => {
                let stanza = current.take().expect("checked");
                cameras.push(stanza.finish(line_no)?);
            }
            (_, None) => {
                return Err(Error::parse_line(line_no, format!("'{key}' outside a camera stanza")))
            }
            ("model", Some(s)) => {
                s.model = Some(
                    rest.first()
                        .ok_or_else(|| Error::parse_line(line_no, "model needs a name"))?
                        .to_string(),
                )
            }
            ("size", Some(s)) => {
                let v = numbers(line_no, rest, 2)?;
                if v.iter().any(|x| *x < 1.0 || x.fract() != 0.0) {
                    return Err(Error::parse_line(line_no, "size must be positive integers"));
                }
                s.size = Some((v[0] as u32, v[1] as u32));
            }
            ("principal", Some(s)) => {
                let v = numbers(line_no, rest, 2)?;
                s.principal = Some(Vector2::new(v[0], v[1]));
            }
            ("poly", Some(s)) => {
                let v = numbers(line_no, rest, 4)?;
                s.poly = Some([v[0], v[1], v[2], v[3]]);
            }
            ("affine", Some(s)) => {
                let v = numbers(line_no, rest, 4)?;
                s.affine = Some(Matrix2::new(v[0], v[1], v[2], v[3]));
            }
            ("fov_half_angle", Some(s)) => {
                s.fov = Some(numbers(line_no, rest, 1)?[0]);
            }
            ("cam_to_rig", Some(s)) => {
                let v = numbers(line_no, rest, 16)?;
                s.cam_to_rig = Some(Matrix4::from_row_slice(&v));
            }
            (other, Some(_)) => {
                return Err(Error::parse_line(line_no, format!("unknown key '{other}'")))
            }
        }
    }
    if current.is_some() {
        return Err(Error::parse_line(text.lines().count(), "unterminated camera stanza"));
    }
    let cameras: [FisheyeCamera; NUM_CAMERAS] = cameras.try_into().map_err(|v: Vec<_>| {
        Error::parse_line(
            text.lines().count(),
            format!("rig needs exactly {NUM_CAMERAS} cameras, found {}", v.len()),
        )
    })?;
    Ok(Rig::new(cameras))
}

pub fn format_calibration(rig: &Rig) -> String {
    let mut out = String::from("# four-camera fisheye rig calibration\n");
    for (c, cam) in rig.cameras.iter().enumerate() {
        let k = cam.radial_poly;
        let a = cam.affine;
        let m = cam.cam_to_rig.to_matrix();
        let _ = writeln!(out, "camera {c}");
        let _ = writeln!(out, "model {MODEL_ODD_POLY}");
        let _ = writeln!(out, "size {} {}", cam.image_width, cam.image_height);
        let _ = writeln!(out, "principal {:?} {:?}", cam.principal_point.x, cam.principal_point.y);
        let _ = writeln!(out, "poly {:?} {:?} {:?} {:?}", k[0], k[1], k[2], k[3]);
        let _ = writeln!(out, "affine {:?} {:?} {:?} {:?}", a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)]);
        let _ = writeln!(out, "fov_half_angle {:?}", cam.fov_half_angle);
        let vals: Vec<String> = (0..4)
            .flat_map(|r| (0..4).map(move |col| (r, col)))
            .map(|(r, col)| format!("{:?}", m[(r, col)]))
            .collect();
        let _ = writeln!(out, "cam_to_rig {}", vals.join(" "));
        let _ = writeln!(out, "end");
    }
    out
}
