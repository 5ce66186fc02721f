//! Portable float maps (grayscale `Pf`), little-endian with scale −1.0.
//!
//! Rasters passed to and returned from this module are row-major with row 0
//! at the top; the file itself stores rows bottom-to-top as the format
//! requires.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::{DepthMap, SphereGrid};

#[derive(Clone, Debug, PartialEq)]
pub struct FloatImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl FloatImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "{}x{} image needs {} values, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }
}

pub fn write_pfm<W: Write>(mut w: W, img: &FloatImage) -> Result<()> {
    write!(w, "Pf\n{} {}\n-1.0\n", img.width, img.height)?;
    let mut buf = Vec::with_capacity(img.data.len() * 4);
    for row in (0..img.height).rev() {
        for v in &img.data[row * img.width..(row + 1) * img.width] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

fn header_token<R: BufRead>(r: &mut R, offset: &mut u64) -> Result<String> {
    let mut tok = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            return Err(Error::parse_offset(*offset, "truncated PFM header"));
        }
        *offset += 1;
        if byte[0].is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            return String::from_utf8(tok).map_err(|_| Error::parse_offset(*offset, "non-ASCII header"));
        }
        tok.push(byte[0]);
        if tok.len() > 32 {
            return Err(Error::parse_offset(*offset, "PFM header token too long"));
        }
    }
}

pub fn read_pfm<R: Read>(reader: R) -> Result<FloatImage> {
    let mut r = BufReader::new(reader);
    let mut offset = 0u64;
    let magic = header_token(&mut r, &mut offset)?;
    if magic != "Pf" {
        return Err(Error::parse_offset(0, format!("expected grayscale 'Pf', found '{magic}'")));
    }
    let mut dim = |name: &str, offset: &mut u64| -> Result<usize> {
        let t = header_token(&mut r, offset)?;
        t.parse::<usize>()
            .ok()
            .filter(|v| *v > 0)
            .ok_or_else(|| Error::parse_offset(*offset, format!("bad {name} '{t}'")))
    };
    let width = dim("width", &mut offset)?;
    let height = dim("height", &mut offset)?;
    let scale_tok = header_token(&mut r, &mut offset)?;
    let scale: f32 = scale_tok
        .parse()
        .ok()
        .filter(|s: &f32| *s != 0.0 && s.is_finite())
        .ok_or_else(|| Error::parse_offset(offset, format!("bad scale '{scale_tok}'")))?;
    let little = scale < 0.0;
    let mut bytes = vec![0u8; width * height * 4];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::parse_offset(offset, "truncated PFM payload"))?;
    let mut data = vec![0f32; width * height];
    for (k, chunk) in bytes.chunks_exact(4).enumerate() {
        let arr = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(arr)
        } else {
            f32::from_be_bytes(arr)
        };
        let (file_row, col) = (k / width, k % width);
        data[(height - 1 - file_row) * width + col] = v;
    }
    FloatImage::new(width, height, data)
}

pub fn save_pfm(path: &Path, img: &FloatImage) -> Result<()> {
    let f = fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_pfm(&mut w, img)?;
    w.flush()?;
    Ok(())
}

pub fn load_pfm(path: &Path) -> Result<FloatImage> {
    read_pfm(fs::File::open(path)?)
}

/// What a sphere-grid raster holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridMapKind {
    /// Range in meters.
    Depth,
    /// Fractional inverse-depth hypothesis index.
    InverseDepthIndex,
}

impl GridMapKind {
    fn as_str(self) -> &'static str {
        match self {
            GridMapKind::Depth => "depth",
            GridMapKind::InverseDepthIndex => "inverse_depth_index",
        }
    }
}

/// Sidecar header path for a sphere-grid PFM: `<file>.pfm` → `<file>.pfm.grid`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".grid");
    PathBuf::from(s)
}

/// Converts a grid-ordered array (row `j` = elevation index, bottom up) to an
/// upright raster.
fn grid_to_raster(grid: &SphereGrid, values: &[f64]) -> Vec<f32> {
    let (w, h) = (grid.width, grid.height);
    let mut out = vec![0f32; w * h];
    for j in 0..h {
        for i in 0..w {
            out[(h - 1 - j) * w + i] = values[j * w + i] as f32;
        }
    }
    out
}

pub fn save_grid_map(path: &Path, grid: &SphereGrid, values: &[f64], kind: GridMapKind) -> Result<()> {
    if values.len() != grid.num_pixels() {
        return Err(Error::invalid("grid map size mismatch"));
    }
    let img = FloatImage::new(grid.width, grid.height, grid_to_raster(grid, values))?;
    save_pfm(path, &img)?;
    let header = format!(
        "kind={}\nwidth={}\nheight={}\nphi_min={:?}\nphi_max={:?}\nnum_hypotheses={}\nmin_depth={:?}\n",
        kind.as_str(),
        grid.width,
        grid.height,
        grid.phi_min,
        grid.phi_max,
        grid.num_hypotheses,
        grid.min_depth
    );
    fs::write(sidecar_path(path), header)?;
    Ok(())
}

pub fn parse_grid_header(text: &str) -> Result<(SphereGrid, GridMapKind)> {
    let mut kv = std::collections::HashMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse_line(n + 1, "expected key=value"))?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |k: &str| -> Result<&String> {
        kv.get(k)
            .ok_or_else(|| Error::parse_line(0, format!("grid header lacks '{k}'")))
    };
    let num = |k: &str| -> Result<f64> {
        get(k)?
            .parse::<f64>()
            .map_err(|_| Error::parse_line(0, format!("bad value for '{k}'")))
    };
    let int = |k: &str| -> Result<usize> {
        get(k)?
            .parse::<usize>()
            .map_err(|_| Error::parse_line(0, format!("bad value for '{k}'")))
    };
    let kind = match get("kind")?.as_str() {
        "depth" => GridMapKind::Depth,
        "inverse_depth_index" => GridMapKind::InverseDepthIndex,
        other => return Err(Error::parse_line(0, format!("unknown map kind '{other}'"))),
    };
    let grid = SphereGrid::new(
        int("width")?,
        int("height")?,
        num("phi_min")?,
        num("phi_max")?,
        int("num_hypotheses")?,
        num("min_depth")?,
    )?;
    Ok((grid, kind))
}

pub fn load_grid_map(path: &Path) -> Result<(SphereGrid, GridMapKind, Vec<f64>)> {
    let (grid, kind) = parse_grid_header(&fs::read_to_string(sidecar_path(path))?)?;
    let img = load_pfm(path)?;
    if img.width != grid.width || img.height != grid.height {
        return Err(Error::invalid("PFM size disagrees with its grid header"));
    }
    let (w, h) = (grid.width, grid.height);
    let mut values = vec![0f64; w * h];
    for j in 0..h {
        for i in 0..w {
            values[j * w + i] = img.data[(h - 1 - j) * w + i] as f64;
        }
    }
    Ok((grid, kind, values))
}

pub fn save_depth_map(path: &Path, depth: &DepthMap) -> Result<()> {
    save_grid_map(path, &depth.grid, &depth.data, GridMapKind::Depth)
}

pub fn load_depth_map(path: &Path) -> Result<DepthMap> {
    let (grid, kind, values) = load_grid_map(path)?;
    if kind != GridMapKind::Depth {
        return Err(Error::invalid(format!("{} is not a depth map", path.display())));
    }
    DepthMap::new(grid, values)
}
