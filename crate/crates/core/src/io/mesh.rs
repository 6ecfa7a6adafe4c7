//! OBJ and PLY triangle meshes.

use std::fmt::Write as _;
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn extension(path: &Path) -> Result<String> {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .ok_or_else(|| Error::InvalidArgument(format!("{}: missing mesh extension", path.display())))
}

/// Load an `.obj` or `.ply` mesh.
pub fn load_mesh(path: &Path) -> Result<TriangleMesh> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    match extension(path)?.as_str() {
        "obj" => {
            let text = String::from_utf8(bytes).map_err(|_| parse_err(path, 0, "not valid UTF-8"))?;
            parse_obj(&text, path)
        }
        "ply" => parse_ply(&bytes, path),
        other => Err(Error::InvalidArgument(format!("unsupported mesh format `{other}`"))),
    }
}

/// Save as `.obj` or binary `.ply`, chosen by extension.
pub fn save_mesh(mesh: &TriangleMesh, path: &Path) -> Result<()> {
    let bytes = match extension(path)?.as_str() {
        "obj" => write_obj(mesh).into_bytes(),
        "ply" => write_ply(mesh, PlyFormat::BinaryLittleEndian),
        other => return Err(Error::InvalidArgument(format!("unsupported mesh format `{other}`"))),
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_ply(mesh: &TriangleMesh, path: &Path, format: PlyFormat) -> Result<()> {
    std::fs::write(path, write_ply(mesh, format)).map_err(|e| Error::io(path, e))
}

/// Polygons with more than three corners are fan-triangulated.
pub fn parse_obj(text: &str, path: &Path) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut normals = Vec::new();
    let mut faces = Vec::new();
    let mut fanned = 0usize;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") | Some("vn") => {
                let coords: Vec<f64> = tok
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| parse_err(path, line_no, format!("bad coordinate: {e}")))?;
                if coords.len() < 3 {
                    return Err(parse_err(path, line_no, "expected three coordinates"));
                }
                let v = Vec3::new(coords[0], coords[1], coords[2]);
                if line.starts_with("vn") {
                    normals.push(v);
                } else {
                    vertices.push(v);
                }
            }
            Some("f") => {
                let mut idx = Vec::new();
                for t in tok {
                    let first = t.split('/').next().unwrap_or("");
                    let k: i64 = first
                        .parse()
                        .map_err(|_| parse_err(path, line_no, format!("bad face index `{t}`")))?;
                    let n = vertices.len() as i64;
                    let resolved = if k > 0 { k - 1 } else { n + k };
                    if k == 0 || resolved < 0 || resolved >= n {
                        return Err(parse_err(path, line_no, format!("face index {k} out of range")));
                    }
                    idx.push(resolved as usize);
                }
                if idx.len() < 3 {
                    return Err(parse_err(path, line_no, "face needs at least three vertices"));
                }
                if idx.len() > 3 {
                    fanned += 1;
                }
                for j in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[j], idx[j + 1]]);
                }
            }
            _ => {}
        }
    }
    if fanned > 0 {
        warn!("{}: fan-triangulated {fanned} polygon(s)", path.display());
    }
    let mut mesh = TriangleMesh::new(vertices, faces)?;
    if !normals.is_empty() && normals.len() == mesh.vertices.len() {
        mesh.normals = Some(normals);
    }
    Ok(mesh)
}

/// OBJ text with 17 significant digits per coordinate.
pub fn write_obj(mesh: &TriangleMesh) -> String {
    let mut out = String::new();
    for v in &mesh.vertices {
        writeln!(out, "v {:.16e} {:.16e} {:.16e}", v.x, v.y, v.z).unwrap();
    }
    if let Some(normals) = &mesh.normals {
        for n in normals {
            writeln!(out, "vn {:.16e} {:.16e} {:.16e}", n.x, n.y, n.z).unwrap();
        }
    }
    for f in &mesh.faces {
        writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).unwrap();
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
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

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { name: String, count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

/// Little-endian cursor over a binary PLY body.
struct BinaryReader<'a> {
    data: &'a [u8],
    offset: usize,
    base: usize,
}

impl BinaryReader<'_> {
    fn next(&mut self, ty: Scalar, path: &Path) -> Result<f64> {
        let n = ty.size();
        if self.offset + n > self.data.len() {
            return Err(parse_err(
                path,
                0,
                format!("truncated binary body at byte {}", self.base + self.offset),
            ));
        }
        let v = ty.read_le(&self.data[self.offset..self.offset + n]);
        self.offset += n;
        Ok(v)
    }
}

fn header_end(bytes: &[u8]) -> Option<usize> {
    let marker = b"end_header";
    let at = bytes.windows(marker.len()).position(|w| w == marker)?;
    let nl = bytes[at..].iter().position(|&b| b == b'\n')?;
    Some(at + nl + 1)
}

pub fn parse_ply(bytes: &[u8], path: &Path) -> Result<TriangleMesh> {
    if !bytes.starts_with(b"ply") {
        return Err(parse_err(path, 1, "missing `ply` magic"));
    }
    let end = header_end(bytes).ok_or_else(|| parse_err(path, 0, "missing end_header"))?;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| parse_err(path, 0, "header is not UTF-8"))?;
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut header_lines = 0;
    for (i, raw) in header.lines().enumerate() {
        header_lines = i + 1;
        let tok: Vec<&str> = raw.split_whitespace().collect();
        match tok.as_slice() {
            ["ply"] | ["end_header"] | [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", f, _] => {
                format = Some(match *f {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    other => return Err(parse_err(path, i + 1, format!("unsupported format `{other}`"))),
                })
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| parse_err(path, i + 1, "bad element count"))?,
                props: Vec::new(),
            }),
            ["property", "list", c, t, name] => {
                let (count, item) = match (Scalar::parse(c), Scalar::parse(t)) {
                    (Some(c), Some(t)) => (c, t),
                    _ => return Err(parse_err(path, i + 1, "bad list property types")),
                };
                elements
                    .last_mut()
                    .ok_or_else(|| parse_err(path, i + 1, "property before element"))?
                    .props
                    .push(Property::List {
                        name: name.to_string(),
                        count,
                        item,
                    });
            }
            ["property", t, name] => {
                let ty = Scalar::parse(t).ok_or_else(|| parse_err(path, i + 1, format!("bad type `{t}`")))?;
                elements
                    .last_mut()
                    .ok_or_else(|| parse_err(path, i + 1, "property before element"))?
                    .props
                    .push(Property::Scalar {
                        name: name.to_string(),
                        ty,
                    });
            }
            _ => return Err(parse_err(path, i + 1, format!("unrecognized header line `{raw}`"))),
        }
    }
    let format = format.ok_or_else(|| parse_err(path, 1, "missing format line"))?;
    let body = &bytes[end..];
    match format {
        PlyFormat::Ascii => {
            let text = std::str::from_utf8(body).map_err(|_| parse_err(path, header_lines, "body is not UTF-8"))?;
            read_ascii_body(&elements, text, header_lines, path)
        }
        PlyFormat::BinaryLittleEndian => {
            let mut reader = BinaryReader {
                data: body,
                offset: 0,
                base: end,
            };
            read_binary_body(&elements, &mut reader, path)
        }
    }
}

fn read_ascii_body(elements: &[Element], text: &str, header_lines: usize, path: &Path) -> Result<TriangleMesh> {
    let mut it = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + header_lines, l))
        .filter(|(_, l)| !l.trim().is_empty());
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut last_line = header_lines;
    for el in elements {
        for _ in 0..el.count {
            let (i, l) = it
                .next()
                .ok_or_else(|| parse_err(path, last_line + 1, format!("truncated `{}` element", el.name)))?;
            last_line = i + 1;
            let tokens: Vec<&str> = l.split_whitespace().collect();
            let mut pos = 0;
            let mut take = || -> Result<f64> {
                let t = tokens
                    .get(pos)
                    .ok_or_else(|| parse_err(path, i + 1, "record has too few values"))?;
                pos += 1;
                t.parse::<f64>()
                    .map_err(|_| parse_err(path, i + 1, format!("bad value `{t}`")))
            };
            let record = read_record(el, &mut take)?;
            collect(el, record, &mut vertices, &mut faces, path, i + 1)?;
        }
    }
    TriangleMesh::new(vertices, faces)
}

fn read_binary_body(elements: &[Element], reader: &mut BinaryReader, path: &Path) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for el in elements {
        for _ in 0..el.count {
            let mut cell = |ty| reader.next(ty, path);
            let record = read_record_typed(el, &mut cell)?;
            collect(el, record, &mut vertices, &mut faces, path, 0)?;
        }
    }
    TriangleMesh::new(vertices, faces)
}

type Record = Vec<(String, Vec<f64>)>;

fn read_record(el: &Element, take: &mut impl FnMut() -> Result<f64>) -> Result<Record> {
    read_record_typed(el, &mut |_| take())
}

fn read_record_typed(el: &Element, take: &mut impl FnMut(Scalar) -> Result<f64>) -> Result<Record> {
    let mut out = Vec::with_capacity(el.props.len());
    for p in &el.props {
        match p {
            Property::Scalar { name, ty } => out.push((name.clone(), vec![take(*ty)?])),
            Property::List { name, count, item } => {
                let n = take(*count)?;
                let mut vals = Vec::with_capacity(n as usize);
                for _ in 0..n as usize {
                    vals.push(take(*item)?);
                }
                out.push((name.clone(), vals));
            }
        }
    }
    Ok(out)
}

fn collect(
    el: &Element,
    record: Record,
    vertices: &mut Vec<Vec3>,
    faces: &mut Vec<[usize; 3]>,
    path: &Path,
    line: usize,
) -> Result<()> {
    let get = |key: &str| record.iter().find(|(n, _)| n == key).map(|(_, v)| v);
    match el.name.as_str() {
        "vertex" => {
            let c = |k| {
                get(k)
                    .and_then(|v| v.first().copied())
                    .ok_or_else(|| parse_err(path, line, format!("vertex lacks `{k}`")))
            };
            vertices.push(Vec3::new(c("x")?, c("y")?, c("z")?));
        }
        "face" => {
            let idx = get("vertex_indices")
                .or_else(|| get("vertex_index"))
                .ok_or_else(|| parse_err(path, line, "face lacks vertex_indices"))?;
            if idx.len() < 3 {
                return Err(parse_err(path, line, "face needs at least three vertices"));
            }
            if idx.len() > 3 {
                warn!("{}: fan-triangulated a {}-gon", path.display(), idx.len());
            }
            let idx: Vec<usize> = idx.iter().map(|&v| v as usize).collect();
            for j in 1..idx.len() - 1 {
                faces.push([idx[0], idx[j], idx[j + 1]]);
            }
        }
        _ => {}
    }
    Ok(())
}

/// PLY with double coordinates and int face indices.
pub fn write_ply(mesh: &TriangleMesh, format: PlyFormat) -> Vec<u8> {
    let tag = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    let mut out = format!(
        "ply\nformat {tag} 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n\
         element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.vertices.len(),
        mesh.faces.len()
    )
    .into_bytes();
    match format {
        PlyFormat::Ascii => {
            let mut s = String::new();
            for v in &mesh.vertices {
                writeln!(s, "{:.16e} {:.16e} {:.16e}", v.x, v.y, v.z).unwrap();
            }
            for f in &mesh.faces {
                writeln!(s, "3 {} {} {}", f[0], f[1], f[2]).unwrap();
            }
            out.extend(s.into_bytes());
        }
        PlyFormat::BinaryLittleEndian => {
            for v in &mesh.vertices {
                for c in [v.x, v.y, v.z] {
                    out.extend(c.to_le_bytes());
                }
            }
            for f in &mesh.faces {
                out.push(3);
                for &i in f {
                    out.extend((i as i32).to_le_bytes());
                }
            }
        }
    }
    out
}
