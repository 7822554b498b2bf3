//! OBJ and PLY reading and writing.
//!
//! OBJ: `v` and `f` records (polygons fan-triangulated, `v/vt/vn` forms and
//! negative indices accepted) and `g`/`o` groups. PLY: ascii and
//! binary_little_endian, vertices with optional normals, optional faces.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::mesh::TriMesh;
use super::Vec3;
use crate::{Error, Result};

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Error::Read {
        path: path.to_path_buf(),
        source,
    })
}

fn write_bytes(path: &Path, data: &[u8]) -> Result<()> {
    fs::write(path, data).map_err(|source| Error::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Named face groups of an OBJ file, in order of first appearance. Faces
/// before any `g`/`o` record belong to a group named `default`.
#[derive(Debug, Clone)]
pub struct ObjGroups {
    pub vertices: Vec<Vec3>,
    pub groups: Vec<(String, Vec<[usize; 3]>)>,
}

impl ObjGroups {
    pub fn merged(&self) -> Result<TriMesh> {
        let faces = self.groups.iter().flat_map(|(_, f)| f.iter().copied()).collect();
        TriMesh::new(self.vertices.clone(), faces)
    }

    /// One mesh per group, sharing the full vertex list.
    pub fn meshes(&self) -> Result<Vec<(String, TriMesh)>> {
        self.groups
            .iter()
            .map(|(name, f)| Ok((name.clone(), TriMesh::new(self.vertices.clone(), f.clone())?)))
            .collect()
    }
}

pub fn parse_obj(text: &str) -> std::result::Result<ObjGroups, String> {
    let mut vertices = Vec::new();
    let mut groups: Vec<(String, Vec<[usize; 3]>)> = Vec::new();
    let mut current: Option<usize> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut it = line.split_whitespace();
        let Some(tag) = it.next() else { continue };
        let at = |m: &str| format!("line {}: {m}", lineno + 1);
        match tag {
            "v" => {
                let c: Vec<f64> = it
                    .take(3)
                    .map(|s| s.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| at(&e.to_string()))?;
                if c.len() != 3 {
                    return Err(at("vertex needs 3 coordinates"));
                }
                vertices.push(Vec3::new(c[0], c[1], c[2]));
            }
            "f" => {
                let mut idx = Vec::new();
                for tok in it {
                    let first = tok.split('/').next().unwrap_or("");
                    let i: i64 = first.parse().map_err(|_| at(&format!("bad index `{tok}`")))?;
                    let resolved = if i > 0 {
                        i - 1
                    } else if i < 0 {
                        vertices.len() as i64 + i
                    } else {
                        return Err(at("index 0 is not valid in OBJ"));
                    };
                    if resolved < 0 {
                        return Err(at(&format!("index {i} out of range")));
                    }
                    idx.push(resolved as usize);
                }
                if idx.len() < 3 {
                    return Err(at("face needs at least 3 vertices"));
                }
                let g = match current {
                    Some(g) => g,
                    None => {
                        groups.push(("default".to_string(), Vec::new()));
                        current = Some(groups.len() - 1);
                        groups.len() - 1
                    }
                };
                for k in 1..idx.len() - 1 {
                    groups[g].1.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            "g" | "o" => {
                let name = it.collect::<Vec<_>>().join(" ");
                let name = if name.is_empty() { "default".to_string() } else { name };
                current = Some(match groups.iter().position(|(n, _)| *n == name) {
                    Some(p) => p,
                    None => {
                        groups.push((name, Vec::new()));
                        groups.len() - 1
                    }
                });
            }
            _ => {}
        }
    }
    groups.retain(|(_, f)| !f.is_empty());
    Ok(ObjGroups { vertices, groups })
}

pub fn read_obj_groups(path: &Path) -> Result<ObjGroups> {
    let bytes = read_bytes(path)?;
    let text = String::from_utf8(bytes).map_err(|_| parse_err(path, "not UTF-8"))?;
    parse_obj(&text).map_err(|m| parse_err(path, m))
}

pub fn format_obj(groups: &[(&str, &TriMesh)]) -> String {
    let mut out = String::new();
    let mut base = 1;
    for (name, mesh) in groups {
        for v in mesh.vertices() {
            let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
        }
        let _ = writeln!(out, "g {name}");
        for f in mesh.faces() {
            let _ = writeln!(out, "f {} {} {}", f[0] + base, f[1] + base, f[2] + base);
        }
        base += mesh.vertices().len();
    }
    out
}

pub fn write_obj_groups(path: &Path, groups: &[(&str, &TriMesh)]) -> Result<()> {
    write_bytes(path, format_obj(groups).as_bytes())
}

/// Any supported mesh format, chosen by extension.
pub fn read_mesh(path: &Path) -> Result<TriMesh> {
    match extension(path).as_str() {
        "obj" => read_obj_groups(path)?.merged(),
        "ply" => {
            let ply = read_ply(path)?;
            if ply.faces.is_empty() {
                return Err(parse_err(path, "PLY has no faces"));
            }
            TriMesh::new(ply.points, ply.faces)
        }
        other => Err(Error::invalid(format!(
            "unsupported mesh format `{other}` for {}",
            path.display()
        ))),
    }
}

pub fn write_mesh(path: &Path, mesh: &TriMesh) -> Result<()> {
    match extension(path).as_str() {
        "obj" => write_obj_groups(path, &[("mesh", mesh)]),
        "ply" => write_bytes(path, format_ply(mesh.vertices(), None, mesh.faces(), None, &[]).as_bytes()),
        other => Err(Error::invalid(format!("unsupported mesh format `{other}`"))),
    }
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

/// Contents of a PLY file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlyData {
    pub points: Vec<Vec3>,
    pub normals: Option<Vec<Vec3>>,
    pub faces: Vec<[usize; 3]>,
    pub comments: Vec<String>,
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
    fn parse(s: &str) -> Option<Scalar> {
        Some(match s {
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
    Single(String, Scalar),
    List(String, Scalar, Scalar),
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

enum Source<'a> {
    Ascii(std::str::SplitWhitespace<'a>),
    Binary(&'a [u8], usize),
}

impl Source<'_> {
    fn next(&mut self, ty: Scalar) -> std::result::Result<f64, String> {
        match self {
            Source::Ascii(it) => it
                .next()
                .ok_or("unexpected end of data")?
                .parse::<f64>()
                .map_err(|e| e.to_string()),
            Source::Binary(buf, pos) => {
                let n = ty.size();
                if *pos + n > buf.len() {
                    return Err("unexpected end of data".into());
                }
                let v = ty.read_le(&buf[*pos..*pos + n]);
                *pos += n;
                Ok(v)
            }
        }
    }
}

pub fn parse_ply(bytes: &[u8]) -> std::result::Result<PlyData, String> {
    let header_end = find_header_end(bytes).ok_or("missing end_header")?;
    let header = std::str::from_utf8(&bytes[..header_end.0]).map_err(|_| "header is not UTF-8")?;
    let mut lines = header.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err("missing `ply` magic".into());
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut comments = Vec::new();
    for line in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", f, _] => format = Some(f.to_string()),
            ["comment", rest @ ..] => comments.push(rest.join(" ")),
            ["obj_info", ..] | [] | ["end_header"] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| format!("bad element count `{count}`"))?,
                props: Vec::new(),
            }),
            ["property", "list", c, t, name] => {
                let (c, t) = (Scalar::parse(c), Scalar::parse(t));
                let el = elements.last_mut().ok_or("property before element")?;
                el.props.push(Property::List(
                    name.to_string(),
                    c.ok_or("bad list count type")?,
                    t.ok_or("bad list item type")?,
                ));
            }
            ["property", t, name] => {
                let t = Scalar::parse(t).ok_or_else(|| format!("bad property type `{t}`"))?;
                let el = elements.last_mut().ok_or("property before element")?;
                el.props.push(Property::Single(name.to_string(), t));
            }
            other => return Err(format!("unrecognized header line `{}`", other.join(" "))),
        }
    }
    let body = &bytes[header_end.1..];
    let mut src = match format.as_deref() {
        Some("ascii") => Source::Ascii(
            std::str::from_utf8(body)
                .map_err(|_| "ascii body is not UTF-8")?
                .split_whitespace(),
        ),
        Some("binary_little_endian") => Source::Binary(body, 0),
        Some(f) => return Err(format!("unsupported PLY format `{f}`")),
        None => return Err("missing format line".into()),
    };

    let mut out = PlyData {
        comments,
        ..Default::default()
    };
    for el in &elements {
        let prop_index = |n: &str| {
            el.props
                .iter()
                .position(|p| matches!(p, Property::Single(name, _) if name == n))
        };
        let xyz = ["x", "y", "z"].map(prop_index);
        let nxyz = ["nx", "ny", "nz"].map(prop_index);
        let has_normals = nxyz.iter().all(Option::is_some);
        let mut normals = Vec::new();
        for _ in 0..el.count {
            let mut vals = vec![0.0; el.props.len()];
            let mut list: Vec<usize> = Vec::new();
            for (k, p) in el.props.iter().enumerate() {
                match p {
                    Property::Single(_, t) => vals[k] = src.next(*t)?,
                    Property::List(name, ct, it) => {
                        let n = src.next(*ct)? as usize;
                        let keep = name == "vertex_indices" || name == "vertex_index";
                        for _ in 0..n {
                            let v = src.next(*it)?;
                            if keep {
                                if v < 0.0 {
                                    return Err("negative vertex index".into());
                                }
                                list.push(v as usize);
                            }
                        }
                    }
                }
            }
            if el.name == "vertex" {
                let c = xyz.map(|i| i.map(|i| vals[i]));
                match c {
                    [Some(x), Some(y), Some(z)] => out.points.push(Vec3::new(x, y, z)),
                    _ => return Err("vertex element lacks x/y/z".into()),
                }
                if has_normals {
                    let n = nxyz.map(|i| vals[i.unwrap()]);
                    normals.push(Vec3::new(n[0], n[1], n[2]));
                }
            } else if el.name == "face" {
                if list.len() < 3 {
                    return Err("face with fewer than 3 vertices".into());
                }
                for k in 1..list.len() - 1 {
                    out.faces.push([list[0], list[k], list[k + 1]]);
                }
            }
        }
        if el.name == "vertex" && has_normals {
            out.normals = Some(normals);
        }
    }
    Ok(out)
}

/// (end of header text, start of body)
fn find_header_end(bytes: &[u8]) -> Option<(usize, usize)> {
    let key = b"end_header";
    let pos = bytes.windows(key.len()).position(|w| w == key)?;
    let mut body = pos + key.len();
    if bytes.get(body) == Some(&b'\r') {
        body += 1;
    }
    if bytes.get(body) == Some(&b'\n') {
        body += 1;
    }
    Some((pos, body))
}

pub fn read_ply(path: &Path) -> Result<PlyData> {
    let bytes = read_bytes(path)?;
    parse_ply(&bytes).map_err(|m| parse_err(path, m))
}

/// ASCII PLY. `face_labels`, when given, adds an integer `label` per face.
pub fn format_ply(
    points: &[Vec3],
    normals: Option<&[Vec3]>,
    faces: &[[usize; 3]],
    face_labels: Option<&[u32]>,
    comments: &[String],
) -> String {
    let mut s = String::from("ply\nformat ascii 1.0\n");
    for c in comments {
        let _ = writeln!(s, "comment {}", c.replace('\n', " "));
    }
    let _ = writeln!(s, "element vertex {}", points.len());
    s.push_str("property double x\nproperty double y\nproperty double z\n");
    if normals.is_some() {
        s.push_str("property double nx\nproperty double ny\nproperty double nz\n");
    }
    if !faces.is_empty() {
        let _ = writeln!(s, "element face {}", faces.len());
        s.push_str("property list uchar int vertex_indices\n");
        if face_labels.is_some() {
            s.push_str("property int label\n");
        }
    }
    s.push_str("end_header\n");
    for (i, p) in points.iter().enumerate() {
        let _ = write!(s, "{} {} {}", p.x, p.y, p.z);
        if let Some(n) = normals {
            let _ = write!(s, " {} {} {}", n[i].x, n[i].y, n[i].z);
        }
        s.push('\n');
    }
    for (i, f) in faces.iter().enumerate() {
        let _ = write!(s, "3 {} {} {}", f[0], f[1], f[2]);
        if let Some(l) = face_labels {
            let _ = write!(s, " {}", l[i]);
        }
        s.push('\n');
    }
    s
}

/// Binary little-endian point cloud (float32 coordinates).
pub fn format_ply_binary_points(points: &[Vec3], normals: Option<&[Vec3]>) -> Vec<u8> {
    let mut s = String::from("ply\nformat binary_little_endian 1.0\n");
    let _ = writeln!(s, "element vertex {}", points.len());
    s.push_str("property float x\nproperty float y\nproperty float z\n");
    if normals.is_some() {
        s.push_str("property float nx\nproperty float ny\nproperty float nz\n");
    }
    s.push_str("end_header\n");
    let mut out = s.into_bytes();
    for (i, p) in points.iter().enumerate() {
        for c in p.iter() {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
        if let Some(n) = normals {
            for c in n[i].iter() {
                out.extend_from_slice(&(*c as f32).to_le_bytes());
            }
        }
    }
    out
}

pub fn write_ply_points(path: &Path, points: &[Vec3], normals: Option<&[Vec3]>) -> Result<()> {
    write_bytes(path, format_ply(points, normals, &[], None, &[]).as_bytes())
}

pub fn write_ply_labeled(
    path: &Path,
    mesh: &TriMesh,
    face_labels: &[u32],
    comments: &[String],
) -> Result<()> {
    let text = format_ply(mesh.vertices(), None, mesh.faces(), Some(face_labels), comments);
    write_bytes(path, text.as_bytes())
}
