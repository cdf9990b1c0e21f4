//! Polygon-format point files with per-vertex normals.
//!
//! Both `ascii 1.0` and `binary_little_endian 1.0` bodies are read; the
//! format is taken from the header. Extra vertex properties are skipped.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};
use crate::geom::OrientedPoint;

use super::Fragment;

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
    fn parse(name: &str) -> Option<Scalar> {
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

    fn decode(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]),
        }
    }
}

struct Header {
    format: PlyFormat,
    vertex_count: usize,
    properties: Vec<(String, Scalar)>,
    comments: Vec<String>,
    lines: usize,
}

fn read_header<R: BufRead>(reader: &mut R, path: &Path) -> Result<Header> {
    let mut line = String::new();
    let mut lineno = 0;
    let mut next_line = |reader: &mut R, line: &mut String| -> Result<bool> {
        line.clear();
        lineno += 1;
        let n = reader.read_line(line).map_err(|e| Error::io(path, e))?;
        Ok(n > 0)
    };

    if !next_line(reader, &mut line)? || line.trim() != "ply" {
        return Err(Error::parse(path, 1, "expected 'ply' magic line"));
    }
    let mut format = None;
    let mut vertex_count = None;
    let mut properties = Vec::new();
    let mut comments = Vec::new();
    let mut in_vertex = false;
    let mut seen_vertex = false;
    let mut current = 1;
    loop {
        if !next_line(reader, &mut line)? {
            return Err(Error::parse(path, current + 1, "header ended before end_header"));
        }
        current += 1;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            [] => continue,
            ["end_header"] => break,
            ["format", kind, _version] => {
                format = Some(match *kind {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    other => {
                        return Err(Error::parse(path, current, format!("unsupported format '{other}'")))
                    }
                });
            }
            ["comment", ..] | ["obj_info", ..] => {
                let text = line.trim_start()[tokens[0].len()..].trim().to_string();
                comments.push(text);
            }
            ["element", name, count] => {
                let count: usize = count
                    .parse()
                    .map_err(|_| Error::parse(path, current, format!("bad element count '{count}'")))?;
                if *name == "vertex" {
                    vertex_count = Some(count);
                    in_vertex = true;
                    seen_vertex = true;
                } else {
                    if !seen_vertex && count > 0 {
                        return Err(Error::parse(path, current, "non-empty element before vertex"));
                    }
                    in_vertex = false;
                }
            }
            ["property", "list", ..] => {
                if in_vertex {
                    return Err(Error::parse(path, current, "list properties on vertices are not supported"));
                }
            }
            ["property", ty, name] => {
                if in_vertex {
                    let scalar = Scalar::parse(ty)
                        .ok_or_else(|| Error::parse(path, current, format!("unknown property type '{ty}'")))?;
                    properties.push((name.to_string(), scalar));
                }
            }
            _ => return Err(Error::parse(path, current, format!("unrecognized header line '{}'", line.trim()))),
        }
    }
    let format = format.ok_or_else(|| Error::parse(path, current, "missing format line"))?;
    let vertex_count = vertex_count.ok_or_else(|| Error::parse(path, current, "missing vertex element"))?;
    Ok(Header {
        format,
        vertex_count,
        properties,
        comments,
        lines: current,
    })
}

/// Header comments understood by the reader.
const SENSOR_TAG: &str = "sensor_origin";
const ID_TAG: &str = "fragment_id";

/// Reads a fragment. The fragment id and sensor origin are taken from
/// header comments when present; otherwise id 0 and the local origin.
pub fn read_fragment(path: impl AsRef<Path>) -> Result<Fragment> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let header = read_header(&mut reader, path)?;

    let find = |name: &str| header.properties.iter().position(|(n, _)| n == name);
    let pos_idx = ["x", "y", "z"].map(find);
    let normal_idx = ["nx", "ny", "nz"].map(find);
    let [Some(ix), Some(iy), Some(iz)] = pos_idx else {
        return Err(Error::parse(path, header.lines, "vertex element lacks x, y, z"));
    };
    let [Some(inx), Some(iny), Some(inz)] = normal_idx else {
        return Err(Error::MissingNormals(path.to_path_buf()));
    };

    let mut id = 0usize;
    let mut sensor_origin = Point3::origin();
    for c in &header.comments {
        let mut parts = c.split_whitespace();
        match parts.next() {
            Some(ID_TAG) => {
                id = parts
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::parse(path, 0, "malformed fragment_id comment"))?;
            }
            Some(SENSOR_TAG) => {
                let v: Vec<f64> = parts.filter_map(|s| s.parse().ok()).collect();
                if v.len() != 3 {
                    return Err(Error::parse(path, 0, "malformed sensor_origin comment"));
                }
                sensor_origin = Point3::new(v[0], v[1], v[2]);
            }
            _ => {}
        }
    }

    let nprop = header.properties.len();
    let mut values = vec![0.0; nprop];
    let mut points = Vec::with_capacity(header.vertex_count);
    let push = |values: &[f64], line: usize, points: &mut Vec<OrientedPoint>| -> Result<()> {
        let p = Point3::new(values[ix], values[iy], values[iz]);
        let n = Vector3::new(values[inx], values[iny], values[inz]);
        if !(p.coords.iter().all(|v| v.is_finite()) && n.iter().all(|v| v.is_finite())) {
            return Err(Error::parse(path, line, "non-finite vertex value"));
        }
        let op = OrientedPoint::new(p, n).ok_or_else(|| Error::parse(path, line, "zero-length normal"))?;
        points.push(op);
        Ok(())
    };

    match header.format {
        PlyFormat::Ascii => {
            let mut line = String::new();
            let mut lineno = header.lines;
            while points.len() < header.vertex_count {
                line.clear();
                lineno += 1;
                let n = reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
                if n == 0 {
                    return Err(Error::parse(
                        path,
                        lineno,
                        format!("expected {} vertices, found {}", header.vertex_count, points.len()),
                    ));
                }
                if line.trim().is_empty() {
                    continue;
                }
                let mut count = 0;
                for (slot, tok) in values.iter_mut().zip(line.split_whitespace()) {
                    *slot = tok
                        .parse()
                        .map_err(|_| Error::parse(path, lineno, format!("bad number '{tok}'")))?;
                    count += 1;
                }
                if count != nprop {
                    return Err(Error::parse(
                        path,
                        lineno,
                        format!("expected {nprop} values, found {count}"),
                    ));
                }
                push(&values, lineno, &mut points)?;
            }
        }
        PlyFormat::BinaryLittleEndian => {
            let stride: usize = header.properties.iter().map(|(_, s)| s.size()).sum();
            let mut record = vec![0u8; stride];
            for v in 0..header.vertex_count {
                reader.read_exact(&mut record).map_err(|_| {
                    Error::parse(
                        path,
                        header.lines,
                        format!("binary body truncated at vertex {v} of {}", header.vertex_count),
                    )
                })?;
                let mut offset = 0;
                for (slot, (_, scalar)) in values.iter_mut().zip(&header.properties) {
                    *slot = scalar.decode(&record[offset..]);
                    offset += scalar.size();
                }
                push(&values, header.lines, &mut points)?;
            }
        }
    }
    if points.is_empty() {
        return Err(Error::parse(path, header.lines, "fragment has no points"));
    }
    Ok(Fragment {
        id,
        points,
        sensor_origin,
    })
}

pub fn write_fragment(fragment: &Fragment, path: impl AsRef<Path>, format: PlyFormat) -> Result<()> {
    let o = &fragment.sensor_origin;
    let comments = [
        format!("{ID_TAG} {}", fragment.id),
        format!("{SENSOR_TAG} {} {} {}", o.x, o.y, o.z),
    ];
    write_points(&fragment.points, &comments, path, format)
}

/// Writes oriented points with double-precision properties.
pub fn write_points(
    points: &[OrientedPoint],
    comments: &[String],
    path: impl AsRef<Path>,
    format: PlyFormat,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    writeln!(w, "ply\nformat {fmt} 1.0").map_err(io)?;
    for c in comments {
        writeln!(w, "comment {c}").map_err(io)?;
    }
    writeln!(w, "element vertex {}", points.len()).map_err(io)?;
    for name in ["x", "y", "z", "nx", "ny", "nz"] {
        writeln!(w, "property double {name}").map_err(io)?;
    }
    writeln!(w, "end_header").map_err(io)?;
    for p in points {
        let v = [
            p.position.x,
            p.position.y,
            p.position.z,
            p.normal.x,
            p.normal.y,
            p.normal.z,
        ];
        match format {
            PlyFormat::Ascii => {
                writeln!(w, "{} {} {} {} {} {}", v[0], v[1], v[2], v[3], v[4], v[5]).map_err(io)?;
            }
            PlyFormat::BinaryLittleEndian => {
                for x in v {
                    w.write_all(&x.to_le_bytes()).map_err(io)?;
                }
            }
        }
    }
    w.flush().map_err(io)
}

/// Reads any point file with normals, ignoring fragment metadata.
pub fn read_points(path: impl AsRef<Path>) -> Result<Vec<OrientedPoint>> {
    read_fragment(path).map(|f| f.points)
}
