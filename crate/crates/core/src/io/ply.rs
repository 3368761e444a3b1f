//! PLY point clouds, ASCII and binary little-endian.
//!
//! Reading understands any scalar property type and skips unknown vertex
//! properties. `x`, `y`, `z` are required; `nx`, `ny`, `nz` and `curvature`
//! are picked up when present. Writing always emits doubles.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::Vector3;

use super::FormatError;
use crate::correspond::PointCloud;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
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
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug)]
enum Property {
    Scalar(String, Scalar),
    List(Scalar, Scalar),
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

fn bad(msg: impl Into<String>) -> FormatError {
    FormatError::Ply(msg.into())
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<PointCloud, FormatError> {
    let file = std::fs::File::open(path.as_ref())
        .map_err(|e| FormatError::io(path.as_ref(), e))?;
    read_ply_from(BufReader::new(file))
}

pub fn read_ply_from<R: BufRead>(mut r: R) -> Result<PointCloud, FormatError> {
    fn next_line<R: BufRead>(r: &mut R, line: &mut String) -> Result<(), FormatError> {
        line.clear();
        if r.read_line(line)? == 0 {
            return Err(bad("unexpected end of header"));
        }
        Ok(())
    }
    let mut line = String::new();
    next_line(&mut r, &mut line)?;
    if line.trim() != "ply" {
        return Err(bad("missing 'ply' magic"));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        next_line(&mut r, &mut line)?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["format", "ascii", _] => format = Some(PlyFormat::Ascii),
            ["format", "binary_little_endian", _] => format = Some(PlyFormat::BinaryLittleEndian),
            ["format", other, _] => return Err(bad(format!("unsupported format {other}"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| bad("bad element count"))?,
                props: Vec::new(),
            }),
            ["property", "list", ct, it, _name] => {
                let el = elements.last_mut().ok_or_else(|| bad("property before element"))?;
                let ct = Scalar::parse(ct).ok_or_else(|| bad(format!("unknown type {ct}")))?;
                let it = Scalar::parse(it).ok_or_else(|| bad(format!("unknown type {it}")))?;
                el.props.push(Property::List(ct, it));
            }
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or_else(|| bad("property before element"))?;
                let ty = Scalar::parse(ty).ok_or_else(|| bad(format!("unknown type {ty}")))?;
                el.props.push(Property::Scalar(name.to_string(), ty));
            }
            ["end_header"] => break,
            _ => return Err(bad(format!("unrecognized header line '{}'", line.trim()))),
        }
    }
    let format = format.ok_or_else(|| bad("missing format line"))?;

    let mut cloud = None;
    for el in &elements {
        if el.name == "vertex" {
            cloud = Some(read_vertices(&mut r, el, format)?);
            break;
        }
        skip_element(&mut r, el, format)?;
    }
    cloud.ok_or_else(|| bad("no vertex element"))
}

fn scalar_index(el: &Element, name: &str) -> Option<usize> {
    el.props
        .iter()
        .position(|p| matches!(p, Property::Scalar(n, _) if n == name))
}

fn read_row<R: BufRead>(
    r: &mut R,
    el: &Element,
    format: PlyFormat,
    values: &mut Vec<f64>,
    line: &mut String,
) -> Result<(), FormatError> {
    values.clear();
    match format {
        PlyFormat::Ascii => {
            line.clear();
            if r.read_line(line)? == 0 {
                return Err(bad("unexpected end of data"));
            }
            let mut toks = line.split_whitespace();
            let mut next = || -> Result<f64, FormatError> {
                toks.next()
                    .ok_or_else(|| bad("short data row"))?
                    .parse::<f64>()
                    .map_err(|_| bad("bad number"))
            };
            for p in &el.props {
                match p {
                    Property::Scalar(..) => values.push(next()?),
                    Property::List(..) => {
                        let n = next()? as usize;
                        for _ in 0..n {
                            next()?;
                        }
                        values.push(f64::NAN);
                    }
                }
            }
        }
        PlyFormat::BinaryLittleEndian => {
            let mut buf = [0u8; 8];
            for p in &el.props {
                match p {
                    Property::Scalar(_, ty) => {
                        r.read_exact(&mut buf[..ty.size()])?;
                        values.push(ty.read_le(&buf));
                    }
                    Property::List(ct, it) => {
                        r.read_exact(&mut buf[..ct.size()])?;
                        let n = ct.read_le(&buf) as usize;
                        let mut skip = vec![0u8; n * it.size()];
                        r.read_exact(&mut skip)?;
                        values.push(f64::NAN);
                    }
                }
            }
        }
    }
    Ok(())
}

fn skip_element<R: BufRead>(r: &mut R, el: &Element, format: PlyFormat) -> Result<(), FormatError> {
    let mut values = Vec::new();
    let mut line = String::new();
    for _ in 0..el.count {
        read_row(r, el, format, &mut values, &mut line)?;
    }
    Ok(())
}

fn read_vertices<R: BufRead>(r: &mut R, el: &Element, format: PlyFormat) -> Result<PointCloud, FormatError> {
    let idx = |n: &str| scalar_index(el, n);
    let (x, y, z) = match (idx("x"), idx("y"), idx("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(bad("vertex element lacks x, y or z")),
    };
    let normal_idx = match (idx("nx"), idx("ny"), idx("nz")) {
        (Some(a), Some(b), Some(c)) => Some((a, b, c)),
        _ => None,
    };
    let curv_idx = idx("curvature");
    let mut points = Vec::with_capacity(el.count);
    let mut normals = normal_idx.map(|_| Vec::with_capacity(el.count));
    let mut curvatures = curv_idx.map(|_| Vec::with_capacity(el.count));
    let mut values = Vec::new();
    let mut line = String::new();
    for _ in 0..el.count {
        read_row(r, el, format, &mut values, &mut line)?;
        points.push(Vector3::new(values[x], values[y], values[z]));
        if let (Some((a, b, c)), Some(ns)) = (normal_idx, normals.as_mut()) {
            ns.push(Vector3::new(values[a], values[b], values[c]));
        }
        if let (Some(ci), Some(cs)) = (curv_idx, curvatures.as_mut()) {
            cs.push(values[ci]);
        }
    }
    Ok(PointCloud {
        points,
        normals,
        curvatures,
    })
}

pub fn write_ply(path: impl AsRef<Path>, cloud: &PointCloud, format: PlyFormat) -> Result<(), FormatError> {
    let file = std::fs::File::create(path.as_ref())
        .map_err(|e| FormatError::io(path.as_ref(), e))?;
    let mut w = std::io::BufWriter::new(file);
    write_ply_to(&mut w, cloud, format)?;
    w.flush()?;
    Ok(())
}

pub fn write_ply_to<W: Write>(w: &mut W, cloud: &PointCloud, format: PlyFormat) -> Result<(), FormatError> {
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    writeln!(w, "ply\nformat {fmt} 1.0\nelement vertex {}", cloud.len())?;
    for p in ["x", "y", "z"] {
        writeln!(w, "property double {p}")?;
    }
    if cloud.normals.is_some() {
        for p in ["nx", "ny", "nz"] {
            writeln!(w, "property double {p}")?;
        }
    }
    if cloud.curvatures.is_some() {
        writeln!(w, "property double curvature")?;
    }
    writeln!(w, "end_header")?;
    let mut row = Vec::with_capacity(7);
    for i in 0..cloud.len() {
        row.clear();
        row.extend(cloud.points[i].iter());
        if let Some(ns) = &cloud.normals {
            row.extend(ns[i].iter());
        }
        if let Some(cs) = &cloud.curvatures {
            row.push(cs[i]);
        }
        match format {
            PlyFormat::Ascii => {
                let strs: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
                writeln!(w, "{}", strs.join(" "))?;
            }
            PlyFormat::BinaryLittleEndian => {
                for v in &row {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
    }
    Ok(())
}

/// Reads a PLY from an in-memory buffer.
pub fn read_ply_bytes(bytes: &[u8]) -> Result<PointCloud, FormatError> {
    read_ply_from(BufReader::new(bytes))
}
