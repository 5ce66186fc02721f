use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use super::TriangleMesh;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PlyFormat {
    Ascii,
    #[default]
    BinaryLittleEndian,
}

pub fn write_ply<W: Write>(mut w: W, mesh: &TriangleMesh, format: PlyFormat) -> Result<()> {
    mesh.validate()?;
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    writeln!(w, "ply\nformat {fmt} 1.0")?;
    writeln!(w, "element vertex {}", mesh.vertices.len())?;
    writeln!(w, "property float x\nproperty float y\nproperty float z")?;
    if mesh.gray.is_some() {
        writeln!(w, "property uchar gray")?;
    }
    writeln!(w, "element face {}", mesh.triangles.len())?;
    writeln!(w, "property list uchar int vertex_indices\nend_header")?;
    match format {
        PlyFormat::Ascii => {
            for (k, v) in mesh.vertices.iter().enumerate() {
                write!(w, "{} {} {}", v.x as f32, v.y as f32, v.z as f32)?;
                if let Some(g) = &mesh.gray {
                    write!(w, " {}", g[k])?;
                }
                writeln!(w)?;
            }
            for t in &mesh.triangles {
                writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?;
            }
        }
        PlyFormat::BinaryLittleEndian => {
            for (k, v) in mesh.vertices.iter().enumerate() {
                for c in v.iter() {
                    w.write_all(&(*c as f32).to_le_bytes())?;
                }
                if let Some(g) = &mesh.gray {
                    w.write_all(&[g[k]])?;
                }
            }
            for t in &mesh.triangles {
                w.write_all(&[3u8])?;
                for i in t {
                    w.write_all(&(*i as i32).to_le_bytes())?;
                }
            }
        }
    }
    Ok(())
}

pub fn save_ply(path: &Path, mesh: &TriangleMesh, format: PlyFormat) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write_ply(&mut w, mesh, format)?;
    w.flush()?;
    Ok(())
}

pub fn load_ply(path: &Path) -> Result<TriangleMesh> {
    read_ply(std::fs::File::open(path)?)
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn decode(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Clone, Debug)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

#[derive(Clone, Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

/// Source of property values: whitespace tokens (ASCII) or raw bytes.
enum Body<'a> {
    Ascii { lines: std::iter::Enumerate<std::str::Lines<'a>>, first_line: usize, pending: Vec<&'a str>, line: usize },
    Binary { data: &'a [u8], pos: usize, base: usize },
}

impl Body<'_> {
    /// Starts the next record (one line in ASCII).
    fn begin_record(&mut self) -> Result<()> {
        if let Body::Ascii { lines, first_line, pending, line } = self {
            loop {
                let (k, text) = lines
                    .next()
                    .ok_or_else(|| Error::parse_line(*line + 1, "unexpected end of file"))?;
                *line = *first_line + k;
                let toks: Vec<&str> = text.split_whitespace().collect();
                if !toks.is_empty() {
                    *pending = toks;
                    pending.reverse();
                    return Ok(());
                }
            }
        }
        Ok(())
    }

    fn end_record(&mut self) -> Result<()> {
        if let Body::Ascii { pending, line, .. } = self {
            if !pending.is_empty() {
                return Err(Error::parse_line(*line, "too many values on line"));
            }
        }
        Ok(())
    }

    fn value(&mut self, ty: Scalar) -> Result<f64> {
        match self {
            Body::Ascii { pending, line, .. } => {
                let tok = pending.pop().ok_or_else(|| Error::parse_line(*line, "too few values on line"))?;
                let bad = || Error::parse_line(*line, format!("bad number '{tok}'"));
                // match the binary path, which widens stored f32 values
                if ty == Scalar::F32 {
                    tok.parse::<f32>().map(f64::from).map_err(|_| bad())
                } else {
                    tok.parse::<f64>().map_err(|_| bad())
                }
            }
            Body::Binary { data, pos, base } => {
                let n = ty.size();
                if *pos + n > data.len() {
                    return Err(Error::parse_offset((*base + *pos) as u64, "unexpected end of data"));
                }
                let v = ty.decode(&data[*pos..*pos + n]);
                *pos += n;
                Ok(v)
            }
        }
    }

    fn location(&self) -> Error {
        match self {
            Body::Ascii { line, .. } => Error::parse_line(*line, ""),
            Body::Binary { pos, base, .. } => Error::parse_offset((*base + *pos) as u64, ""),
        }
    }

    fn error(&self, msg: &str) -> Error {
        match self.location() {
            Error::Parse { location, .. } => Error::Parse { location, message: msg.to_string() },
            e => e,
        }
    }
}

pub fn read_ply<R: Read>(mut r: R) -> Result<TriangleMesh> {
    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    const END: &[u8] = b"end_header";
    let end = data
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| Error::parse_offset(0, "missing end_header"))?;
    let body_start = data[end..]
        .iter()
        .position(|&b| b == b'\n')
        .map(|p| end + p + 1)
        .unwrap_or(data.len());
    let header = std::str::from_utf8(&data[..end]).map_err(|_| Error::parse_offset(0, "header is not UTF-8"))?;

    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut header_lines = 0;
    for (k, line) in header.lines().enumerate() {
        header_lines = k + 1;
        let ln = k + 1;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            [] => {}
            ["ply"] if k == 0 => {}
            _ if k == 0 => return Err(Error::parse_line(1, "not a PLY file")),
            ["format", f, _] => {
                format = Some(match *f {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    other => return Err(Error::parse_line(ln, format!("unsupported format {other}"))),
                })
            }
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| Error::parse_line(ln, "bad element count"))?,
                props: Vec::new(),
            }),
            ["property", "list", ct, it, name] => {
                let el = elements.last_mut().ok_or_else(|| Error::parse_line(ln, "property before element"))?;
                let (ct, it) = Scalar::parse(ct)
                    .zip(Scalar::parse(it))
                    .ok_or_else(|| Error::parse_line(ln, "unknown list type"))?;
                el.props.push(Property::List(name.to_string(), ct, it));
            }
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or_else(|| Error::parse_line(ln, "property before element"))?;
                let ty = Scalar::parse(ty).ok_or_else(|| Error::parse_line(ln, format!("unknown type {ty}")))?;
                el.props.push(Property::Scalar(name.to_string(), ty));
            }
            _ => return Err(Error::parse_line(ln, format!("unrecognized header line '{line}'"))),
        }
    }
    let format = format.ok_or_else(|| Error::parse_line(1, "missing format line"))?;

    let mut body = match format {
        PlyFormat::Ascii => {
            let text = std::str::from_utf8(&data[body_start..]).map_err(|_| Error::parse_offset(body_start as u64, "body is not UTF-8"))?;
            Body::Ascii {
                lines: text.lines().enumerate(),
                first_line: header_lines + 2,
                pending: Vec::new(),
                line: header_lines + 1,
            }
        }
        PlyFormat::BinaryLittleEndian => Body::Binary { data: &data[body_start..], pos: 0, base: body_start },
    };

    let mut mesh = TriangleMesh::default();
    let mut gray: Vec<u8> = Vec::new();
    let mut has_gray = false;
    for el in &elements {
        for _ in 0..el.count {
            body.begin_record()?;
            let mut xyz = [f64::NAN; 3];
            let mut rgb = [None; 3];
            let mut g = None;
            for prop in &el.props {
                match prop {
                    Property::Scalar(name, ty) => {
                        let v = body.value(*ty)?;
                        match name.as_str() {
                            "x" => xyz[0] = v,
                            "y" => xyz[1] = v,
                            "z" => xyz[2] = v,
                            "gray" | "grey" | "intensity" => g = Some(v),
                            "red" => rgb[0] = Some(v),
                            "green" => rgb[1] = Some(v),
                            "blue" => rgb[2] = Some(v),
                            _ => {}
                        }
                    }
                    Property::List(name, ct, it) => {
                        let n = body.value(*ct)?;
                        if !(n >= 0.0 && n.fract() == 0.0) {
                            return Err(body.error("bad list length"));
                        }
                        let items = (0..n as usize).map(|_| body.value(*it)).collect::<Result<Vec<_>>>()?;
                        if el.name == "face" && (name == "vertex_indices" || name == "vertex_index") {
                            if items.len() < 3 {
                                return Err(body.error("face with fewer than 3 vertices"));
                            }
                            if items.iter().any(|&i| i < 0.0 || i.fract() != 0.0) {
                                return Err(body.error("bad vertex index"));
                            }
                            for k in 1..items.len() - 1 {
                                mesh.triangles.push([items[0] as u32, items[k] as u32, items[k + 1] as u32]);
                            }
                        }
                    }
                }
            }
            body.end_record()?;
            if el.name == "vertex" {
                if xyz.iter().any(|c| c.is_nan()) {
                    return Err(body.error("vertex without x, y, z"));
                }
                mesh.vertices.push(Vector3::from(xyz));
                let level = g.or_else(|| match rgb {
                    [Some(r), Some(gr), Some(b)] => Some((r + gr + b) / 3.0),
                    _ => None,
                });
                has_gray |= level.is_some();
                gray.push(level.unwrap_or(0.0).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    if has_gray {
        mesh.gray = Some(gray);
    }
    mesh.validate().map_err(|e| body.error(&e.to_string()))?;
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TriangleMesh {
        TriangleMesh {
            vertices: vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(1.25, 0.0, -0.1),
                Vector3::new(0.0, 2.0, 1.0 / 3.0),
                Vector3::new(-1.0, 1.0, 1.0),
            ],
            gray: Some(vec![0, 64, 128, 255]),
            triangles: vec![[0, 1, 2], [0, 2, 3]],
        }
    }

    fn round_trip(mesh: &TriangleMesh, format: PlyFormat) -> TriangleMesh {
        let mut buf = Vec::new();
        write_ply(&mut buf, mesh, format).unwrap();
        read_ply(buf.as_slice()).unwrap()
    }

    #[test]
    fn formats_round_trip_identically() {
        let m = sample();
        let a = round_trip(&m, PlyFormat::Ascii);
        let b = round_trip(&m, PlyFormat::BinaryLittleEndian);
        assert_eq!(a, b);
        assert_eq!(a.triangles, m.triangles);
        assert_eq!(a.gray, m.gray);
        for (p, q) in a.vertices.iter().zip(&m.vertices) {
            assert!((p - q).norm() < 1e-6);
        }
    }

    #[test]
    fn empty_mesh_is_valid() {
        for f in [PlyFormat::Ascii, PlyFormat::BinaryLittleEndian] {
            let m = round_trip(&TriangleMesh::default(), f);
            assert!(m.vertices.is_empty() && m.triangles.is_empty() && m.gray.is_none());
        }
    }

    #[test]
    fn quads_are_split_and_errors_located() {
        let text = "ply\nformat ascii 1.0\nelement vertex 4\nproperty double x\nproperty double y\nproperty double z\n\
                    element face 1\nproperty list uchar uint vertex_indices\nend_header\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n";
        let m = read_ply(text.as_bytes()).unwrap();
        assert_eq!(m.triangles, vec![[0, 1, 2], [0, 2, 3]]);
        let bad = text.replace("1 1 0", "1 x 0");
        match read_ply(bad.as_bytes()) {
            Err(Error::Parse { location, .. }) => assert_eq!(location, "line 12"),
            other => panic!("{other:?}"),
        }
        let out_of_range = text.replace("4 0 1 2 3", "3 0 1 9");
        assert!(read_ply(out_of_range.as_bytes()).is_err());
        let mut bin = Vec::new();
        write_ply(&mut bin, &sample(), PlyFormat::BinaryLittleEndian).unwrap();
        bin.truncate(bin.len() - 3);
        assert!(matches!(read_ply(bin.as_slice()), Err(Error::Parse { .. })));
    }
}
