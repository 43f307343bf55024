//! PLY mesh ingestion: vertex positions only (faces ignored), ASCII and
//! binary-little-endian encodings, with an optional millimeter→meter
//! conversion at the boundary.

use std::io::Read;
use std::path::Path;

use pose6d::geometry::PointCloud;
use pose6d::linalg::Vec3;

use crate::IoFormatError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Encoding {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScalarType {
    F32,
    F64,
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
}

impl ScalarType {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "float" | "float32" => Some(Self::F32),
            "double" | "float64" => Some(Self::F64),
            "char" | "int8" => Some(Self::I8),
            "uchar" | "uint8" => Some(Self::U8),
            "short" | "int16" => Some(Self::I16),
            "ushort" | "uint16" => Some(Self::U16),
            "int" | "int32" => Some(Self::I32),
            "uint" | "uint32" => Some(Self::U32),
            _ => None,
        }
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::F32 | Self::I32 | Self::U32 => 4,
            Self::F64 => 8,
        }
    }

    fn read_le(self, bytes: &[u8]) -> f64 {
        match self {
            Self::F32 => f32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            Self::F64 => f64::from_le_bytes(bytes[..8].try_into().unwrap()),
            Self::I8 => bytes[0] as i8 as f64,
            Self::U8 => bytes[0] as f64,
            Self::I16 => i16::from_le_bytes(bytes[..2].try_into().unwrap()) as f64,
            Self::U16 => u16::from_le_bytes(bytes[..2].try_into().unwrap()) as f64,
            Self::I32 => i32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            Self::U32 => u32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
        }
    }
}

/// Loads vertex positions from an ASCII or binary-little-endian PLY file.
/// `millimeters` converts positions to meters on load.
pub fn load_ply(path: &Path, millimeters: bool) -> Result<PointCloud, IoFormatError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;

    // header is ASCII lines up to end_header
    let mut offset = 0usize;
    let mut lines: Vec<(usize, String)> = Vec::new(); // (line number, text)
    let mut line_no = 0usize;
    while offset < bytes.len() {
        let end = bytes[offset..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|p| offset + p)
            .unwrap_or(bytes.len());
        let text = String::from_utf8_lossy(&bytes[offset..end])
            .trim_end_matches('\r')
            .to_string();
        line_no += 1;
        offset = end + 1;
        let is_end = text.trim() == "end_header";
        lines.push((line_no, text));
        if is_end {
            break;
        }
    }

    if lines.first().map(|(_, t)| t.trim()) != Some("ply") {
        return Err(IoFormatError::parse(path, 1, "missing ply magic"));
    }

    let mut encoding = None;
    let mut vertex_count = None;
    // (is_vertex_element, properties of the current element)
    let mut elements: Vec<(bool, Vec<(ScalarType, String)>)> = Vec::new();
    for (ln, text) in &lines[1..] {
        let fields: Vec<&str> = text.split_whitespace().collect();
        match fields.as_slice() {
            ["comment", ..] | ["end_header"] | [] => {}
            ["format", fmt, _version] => {
                encoding = match *fmt {
                    "ascii" => Some(Encoding::Ascii),
                    "binary_little_endian" => Some(Encoding::BinaryLittleEndian),
                    "binary_big_endian" => {
                        return Err(IoFormatError::Unsupported(
                            "big-endian PLY is not supported".into(),
                        ))
                    }
                    other => {
                        return Err(IoFormatError::parse(path, *ln, format!("bad format {other}")))
                    }
                };
            }
            ["element", "vertex", count] => {
                let n: usize = count
                    .parse()
                    .map_err(|_| IoFormatError::parse(path, *ln, "bad vertex count"))?;
                vertex_count = Some(n);
                elements.push((true, Vec::new()));
            }
            ["element", _, _] => elements.push((false, Vec::new())),
            ["property", "list", ..] => {
                if let Some((is_vertex, _)) = elements.last() {
                    if *is_vertex {
                        return Err(IoFormatError::Unsupported(
                            "list properties on vertices are not supported".into(),
                        ));
                    }
                }
                // list properties on later elements (faces) are never read
            }
            ["property", ty, name] => {
                let Some((_, props)) = elements.last_mut() else {
                    return Err(IoFormatError::parse(path, *ln, "property before element"));
                };
                let Some(st) = ScalarType::parse(ty) else {
                    return Err(IoFormatError::parse(path, *ln, format!("bad type {ty}")));
                };
                props.push((st, (*name).to_string()));
            }
            _ => return Err(IoFormatError::parse(path, *ln, format!("bad line: {text}"))),
        }
    }

    let encoding =
        encoding.ok_or_else(|| IoFormatError::parse(path, 0, "missing format line"))?;
    let vertex_count =
        vertex_count.ok_or_else(|| IoFormatError::parse(path, 0, "missing vertex element"))?;
    let vertex_props = elements
        .iter()
        .find(|(is_vertex, _)| *is_vertex)
        .map(|(_, p)| p.clone())
        .unwrap_or_default();
    let find = |name: &str| vertex_props.iter().position(|(_, n)| n == name);
    let (Some(xi), Some(yi), Some(zi)) = (find("x"), find("y"), find("z")) else {
        return Err(IoFormatError::parse(
            path,
            0,
            "vertex element must carry x, y, z properties",
        ));
    };

    let scale = if millimeters { 1e-3 } else { 1.0 };
    let mut points = Vec::with_capacity(vertex_count);
    match encoding {
        Encoding::Ascii => {
            let body = String::from_utf8_lossy(&bytes[offset..]).to_string();
            let mut body_lines = body.lines();
            for k in 0..vertex_count {
                let ln = line_no + k + 1;
                let Some(line) = body_lines.next() else {
                    return Err(IoFormatError::parse(path, ln, "unexpected end of file"));
                };
                let vals: Vec<f64> = line
                    .split_whitespace()
                    .map(|t| t.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| IoFormatError::parse(path, ln, "bad vertex line"))?;
                if vals.len() < vertex_props.len() {
                    return Err(IoFormatError::parse(path, ln, "short vertex line"));
                }
                points.push(Vec3::new(vals[xi] * scale, vals[yi] * scale, vals[zi] * scale));
            }
        }
        Encoding::BinaryLittleEndian => {
            let stride: usize = vertex_props.iter().map(|(t, _)| t.size()).sum();
            let needed = stride * vertex_count;
            if bytes.len() < offset + needed {
                return Err(IoFormatError::parse(path, line_no, "binary body too short"));
            }
            let field_offset = |idx: usize| -> usize {
                vertex_props[..idx].iter().map(|(t, _)| t.size()).sum()
            };
            let (ox, oy, oz) = (field_offset(xi), field_offset(yi), field_offset(zi));
            for k in 0..vertex_count {
                let base = offset + k * stride;
                let x = vertex_props[xi].0.read_le(&bytes[base + ox..]);
                let y = vertex_props[yi].0.read_le(&bytes[base + oy..]);
                let z = vertex_props[zi].0.read_le(&bytes[base + oz..]);
                points.push(Vec3::new(x * scale, y * scale, z * scale));
            }
        }
    }
    PointCloud::new(points)
        .map_err(|_| IoFormatError::parse(path, 0, "PLY has no vertices"))
}

/// Writes a vertex-only ASCII PLY (meters unless `millimeters`).
pub fn write_ply_ascii(
    path: &Path,
    cloud: &PointCloud,
    millimeters: bool,
) -> Result<(), IoFormatError> {
    let scale = if millimeters { 1e3 } else { 1.0 };
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    out.push_str(&format!("element vertex {}\n", cloud.len()));
    out.push_str("property float x\nproperty float y\nproperty float z\nend_header\n");
    for p in cloud.points() {
        out.push_str(&format!(
            "{} {} {}\n",
            (p.x * scale) as f32,
            (p.y * scale) as f32,
            (p.z * scale) as f32
        ));
    }
    crate::write_atomic(path, out.as_bytes())?;
    Ok(())
}

/// Writes a vertex-only binary-little-endian PLY.
pub fn write_ply_binary(
    path: &Path,
    cloud: &PointCloud,
    millimeters: bool,
) -> Result<(), IoFormatError> {
    let scale = if millimeters { 1e3 } else { 1.0 };
    let mut out = Vec::new();
    out.extend_from_slice(b"ply\nformat binary_little_endian 1.0\n");
    out.extend_from_slice(format!("element vertex {}\n", cloud.len()).as_bytes());
    out.extend_from_slice(b"property float x\nproperty float y\nproperty float z\nend_header\n");
    for p in cloud.points() {
        for v in [p.x, p.y, p.z] {
            out.extend_from_slice(&((v * scale) as f32).to_le_bytes());
        }
    }
    crate::write_atomic(path, &out)?;
    Ok(())
}
