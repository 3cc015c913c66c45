//! OBJ and PLY readers/writers plus small text formats for landmarks.
//!
//! Writers print f64 coordinates with Rust's shortest round-trip formatting
//! (OBJ, PLY ascii) or as raw little-endian doubles (PLY binary), so a
//! write/parse cycle reproduces vertices bit-identically.

use crate::mesh::{PointCloud, TriMesh};
use crate::MeshError;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// On-disk mesh encodings understood by [`parse_mesh`] and [`write_mesh`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    PlyAscii,
    PlyBinary,
}

impl MeshFormat {
    /// Picks a format from a path extension (`.obj` or `.ply`).
    pub fn from_path(path: &Path) -> Option<MeshFormat> {
        match path.extension().and_then(|e| e.to_str())?.to_ascii_lowercase().as_str() {
            "obj" => Some(MeshFormat::Obj),
            "ply" => Some(MeshFormat::PlyBinary),
            _ => None,
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>, MeshError> {
    Ok(BufReader::new(File::open(path).map_err(|e| MeshError::io(path, e))?))
}

fn create(path: &Path) -> Result<BufWriter<File>, MeshError> {
    Ok(BufWriter::new(File::create(path).map_err(|e| MeshError::io(path, e))?))
}

/// Reads a triangle mesh from `.obj` or `.ply` (format chosen by extension
/// for OBJ, by the header for PLY variants).
pub fn parse_mesh(path: &Path) -> Result<TriMesh, MeshError> {
    let label = path.display().to_string();
    match MeshFormat::from_path(path) {
        Some(MeshFormat::Obj) => parse_obj(open(path)?, &label),
        Some(_) => {
            let (mesh, _normals) = parse_ply(open(path)?, &label, true)?;
            Ok(mesh)
        }
        None => Err(MeshError::Parse {
            path: label,
            line: 0,
            msg: "unknown mesh extension, expected .obj or .ply".into(),
        }),
    }
}

/// Reads a point cloud (PLY vertex element; faces, if any, are ignored).
/// Per-point normals are kept when nx/ny/nz properties are present.
pub fn parse_point_cloud(path: &Path) -> Result<PointCloud, MeshError> {
    let label = path.display().to_string();
    let (mesh, normals) = parse_ply(open(path)?, &label, false)?;
    Ok(PointCloud { points: mesh.vertices, normals })
}

/// Writes a mesh in the requested format.
pub fn write_mesh(path: &Path, mesh: &TriMesh, format: MeshFormat) -> Result<(), MeshError> {
    let mut w = create(path)?;
    let res = match format {
        MeshFormat::Obj => write_obj(&mut w, mesh),
        MeshFormat::PlyAscii => write_ply(&mut w, mesh, false, None),
        MeshFormat::PlyBinary => write_ply(&mut w, mesh, true, None),
    };
    res.map_err(|e| MeshError::io(path, e))
}

/// Writes a PLY mesh carrying one extra per-vertex scalar property, e.g.
/// an attention mask or a per-vertex error.
pub fn write_mesh_with_property(
    path: &Path,
    mesh: &TriMesh,
    binary: bool,
    prop: (&str, &[f64]),
) -> Result<(), MeshError> {
    assert_eq!(prop.1.len(), mesh.vertices.len(), "property length must match vertex count");
    let mut w = create(path)?;
    write_ply(&mut w, mesh, binary, Some(prop)).map_err(|e| MeshError::io(path, e))
}

/// Writes a point cloud as a faceless PLY, optionally with one extra
/// per-point scalar property.
pub fn write_point_cloud(
    path: &Path,
    cloud: &PointCloud,
    binary: bool,
    prop: Option<(&str, &[f64])>,
) -> Result<(), MeshError> {
    let mesh = TriMesh {
        vertices: cloud.points.clone(),
        faces: Vec::new(),
        landmarks: Default::default(),
    };
    let mut w = create(path)?;
    write_ply_impl(&mut w, &mesh, cloud.normals.as_deref(), binary, prop, false)
        .map_err(|e| MeshError::io(path, e))
}

// ---------------------------------------------------------------- OBJ

pub fn parse_obj<R: BufRead>(reader: R, path: &str) -> Result<TriMesh, MeshError> {
    let mut vertices: Vec<[f64; 3]> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| MeshError::Io { path: path.into(), source: e })?;
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let mut v = [0.0f64; 3];
                for c in &mut v {
                    let tok = it.next().ok_or_else(|| MeshError::Parse {
                        path: path.into(),
                        line: lineno,
                        msg: "vertex record needs 3 coordinates".into(),
                    })?;
                    *c = tok.parse().map_err(|_| MeshError::Parse {
                        path: path.into(),
                        line: lineno,
                        msg: format!("invalid coordinate {tok:?}"),
                    })?;
                }
                vertices.push(v);
            }
            Some("f") => {
                let corners: Vec<&str> = it.collect();
                if corners.len() != 3 {
                    return Err(MeshError::UnsupportedTopology {
                        path: path.into(),
                        line: lineno,
                        msg: format!("face with {} corners, only triangles are supported", corners.len()),
                    });
                }
                let mut f = [0usize; 3];
                for (k, tok) in corners.iter().enumerate() {
                    // "i", "i/t", "i/t/n" and "i//n" all start with the vertex index.
                    let head = tok.split('/').next().unwrap_or("");
                    let i: i64 = head.parse().map_err(|_| MeshError::Parse {
                        path: path.into(),
                        line: lineno,
                        msg: format!("invalid face index {tok:?}"),
                    })?;
                    if i < 1 {
                        return Err(MeshError::Parse {
                            path: path.into(),
                            line: lineno,
                            msg: format!("face index {i} is not positive, relative indices are unsupported"),
                        });
                    }
                    f[k] = (i - 1) as usize;
                }
                faces.push(f);
            }
            // Normals, texcoords, groups, materials and comments are ignored.
            _ => {}
        }
    }
    TriMesh::new(vertices, faces)
}

fn write_obj<W: Write>(w: &mut W, mesh: &TriMesh) -> std::io::Result<()> {
    for v in &mesh.vertices {
        writeln!(w, "v {} {} {}", v[0], v[1], v[2])?;
    }
    for f in &mesh.faces {
        writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    Ok(())
}

// ---------------------------------------------------------------- PLY

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScalarType {
    Char,
    UChar,
    Short,
    UShort,
    Int,
    UInt,
    Float,
    Double,
}

impl ScalarType {
    fn from_name(name: &str) -> Option<ScalarType> {
        Some(match name {
            "char" | "int8" => ScalarType::Char,
            "uchar" | "uint8" => ScalarType::UChar,
            "short" | "int16" => ScalarType::Short,
            "ushort" | "uint16" => ScalarType::UShort,
            "int" | "int32" => ScalarType::Int,
            "uint" | "uint32" => ScalarType::UInt,
            "float" | "float32" => ScalarType::Float,
            "double" | "float64" => ScalarType::Double,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            ScalarType::Char | ScalarType::UChar => 1,
            ScalarType::Short | ScalarType::UShort => 2,
            ScalarType::Int | ScalarType::UInt | ScalarType::Float => 4,
            ScalarType::Double => 8,
        }
    }
}

#[derive(Debug, Clone)]
enum PropType {
    Scalar(ScalarType),
    List(ScalarType, ScalarType),
}

#[derive(Debug, Clone)]
struct PlyProp {
    name: String,
    ty: PropType,
}

#[derive(Debug, Clone)]
struct PlyElement {
    name: String,
    count: usize,
    props: Vec<PlyProp>,
}

struct PlyHeader {
    binary: bool,
    elements: Vec<PlyElement>,
    header_lines: usize,
}

fn parse_ply_header<R: BufRead>(reader: &mut R, path: &str) -> Result<PlyHeader, MeshError> {
    let perr = |line: usize, msg: String| MeshError::Parse { path: path.into(), line, msg };
    let mut lineno = 0usize;
    let read_line = |reader: &mut R, lineno: &mut usize| -> Result<String, MeshError> {
        let mut s = String::new();
        let n = reader
            .read_line(&mut s)
            .map_err(|e| MeshError::Io { path: path.into(), source: e })?;
        if n == 0 {
            return Err(MeshError::Parse {
                path: path.into(),
                line: *lineno,
                msg: "unexpected end of header".into(),
            });
        }
        *lineno += 1;
        Ok(s.trim_end().to_string())
    };

    let magic = read_line(reader, &mut lineno)?;
    if magic.trim() != "ply" {
        return Err(perr(1, "missing 'ply' magic".into()));
    }
    let mut binary = None;
    let mut elements: Vec<PlyElement> = Vec::new();
    loop {
        let line = read_line(reader, &mut lineno)?;
        let mut it = line.split_whitespace();
        match it.next() {
            Some("comment") | Some("obj_info") | None => {}
            Some("format") => match it.next() {
                Some("ascii") => binary = Some(false),
                Some("binary_little_endian") => binary = Some(true),
                other => {
                    return Err(perr(lineno, format!("unsupported format {other:?}")));
                }
            },
            Some("element") => {
                let name = it.next().ok_or_else(|| perr(lineno, "element needs a name".into()))?;
                let count: usize = it
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| perr(lineno, "element needs a count".into()))?;
                elements.push(PlyElement { name: name.into(), count, props: Vec::new() });
            }
            Some("property") => {
                let elem = elements
                    .last_mut()
                    .ok_or_else(|| perr(lineno, "property before any element".into()))?;
                let t1 = it.next().ok_or_else(|| perr(lineno, "property needs a type".into()))?;
                if t1 == "list" {
                    let ct = it
                        .next()
                        .and_then(ScalarType::from_name)
                        .ok_or_else(|| perr(lineno, "bad list count type".into()))?;
                    let et = it
                        .next()
                        .and_then(ScalarType::from_name)
                        .ok_or_else(|| perr(lineno, "bad list element type".into()))?;
                    let name = it.next().ok_or_else(|| perr(lineno, "property needs a name".into()))?;
                    elem.props.push(PlyProp { name: name.into(), ty: PropType::List(ct, et) });
                } else {
                    let st = ScalarType::from_name(t1)
                        .ok_or_else(|| perr(lineno, format!("unknown property type {t1:?}")))?;
                    let name = it.next().ok_or_else(|| perr(lineno, "property needs a name".into()))?;
                    elem.props.push(PlyProp { name: name.into(), ty: PropType::Scalar(st) });
                }
            }
            Some("end_header") => break,
            Some(other) => {
                return Err(perr(lineno, format!("unknown header keyword {other:?}")));
            }
        }
    }
    let binary = binary.ok_or_else(|| perr(lineno, "header has no format line".into()))?;
    Ok(PlyHeader { binary, elements, header_lines: lineno })
}

/// Row-wise PLY payload cursor over either ascii tokens or raw bytes.
struct PlyCursor<'a, R: BufRead> {
    reader: &'a mut R,
    binary: bool,
    path: String,
    line: usize,
    tokens: Vec<String>,
    token_pos: usize,
}

impl<'a, R: BufRead> PlyCursor<'a, R> {
    fn err(&self, msg: String) -> MeshError {
        MeshError::Parse { path: self.path.clone(), line: self.line, msg }
    }

    fn next_token(&mut self) -> Result<String, MeshError> {
        while self.token_pos >= self.tokens.len() {
            let mut s = String::new();
            let n = self
                .reader
                .read_line(&mut s)
                .map_err(|e| MeshError::Io { path: self.path.clone(), source: e })?;
            if n == 0 {
                return Err(self.err("unexpected end of file".into()));
            }
            self.line += 1;
            self.tokens = s.split_whitespace().map(|t| t.to_string()).collect();
            self.token_pos = 0;
        }
        let t = self.tokens[self.token_pos].clone();
        self.token_pos += 1;
        Ok(t)
    }

    fn read_scalar(&mut self, ty: ScalarType) -> Result<f64, MeshError> {
        if self.binary {
            let mut buf = [0u8; 8];
            let sz = ty.size();
            self.reader
                .read_exact(&mut buf[..sz])
                .map_err(|e| MeshError::Io { path: self.path.clone(), source: e })?;
            Ok(match ty {
                ScalarType::Char => i8::from_le_bytes([buf[0]]) as f64,
                ScalarType::UChar => buf[0] as f64,
                ScalarType::Short => i16::from_le_bytes([buf[0], buf[1]]) as f64,
                ScalarType::UShort => u16::from_le_bytes([buf[0], buf[1]]) as f64,
                ScalarType::Int => i32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
                ScalarType::UInt => u32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
                ScalarType::Float => f32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
                ScalarType::Double => f64::from_le_bytes(buf),
            })
        } else {
            let tok = self.next_token()?;
            tok.parse::<f64>().map_err(|_| self.err(format!("invalid scalar {tok:?}")))
        }
    }

    fn read_index(&mut self, ty: ScalarType) -> Result<usize, MeshError> {
        let v = self.read_scalar(ty)?;
        if v < 0.0 || v.fract() != 0.0 {
            return Err(self.err(format!("invalid index {v}")));
        }
        Ok(v as usize)
    }
}

fn parse_ply<R: BufRead>(
    mut reader: R,
    path: &str,
    require_faces: bool,
) -> Result<(TriMesh, Option<Vec<[f64; 3]>>), MeshError> {
    let header = parse_ply_header(&mut reader, path)?;
    let mut cursor = PlyCursor {
        reader: &mut reader,
        binary: header.binary,
        path: path.into(),
        line: header.header_lines,
        tokens: Vec::new(),
        token_pos: 0,
    };

    let mut vertices: Vec<[f64; 3]> = Vec::new();
    let mut normals: Vec<[f64; 3]> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    let mut saw_vertex = false;
    let mut saw_face = false;

    for elem in &header.elements {
        if elem.name == "vertex" {
            saw_vertex = true;
            let pos = ["x", "y", "z"].map(|n| elem.props.iter().position(|p| p.name == n));
            if pos.iter().any(|p| p.is_none()) {
                return Err(cursor.err("vertex element must declare x, y and z".into()));
            }
            let npos = ["nx", "ny", "nz"].map(|n| elem.props.iter().position(|p| p.name == n));
            let has_normals = npos.iter().all(|p| p.is_some());
            vertices.reserve(elem.count);
            for _ in 0..elem.count {
                let mut v = [0.0f64; 3];
                let mut n = [0.0f64; 3];
                for (pi, prop) in elem.props.iter().enumerate() {
                    match prop.ty {
                        PropType::Scalar(st) => {
                            let val = cursor.read_scalar(st)?;
                            if let Some(k) = pos.iter().position(|p| *p == Some(pi)) {
                                v[k] = val;
                            } else if let Some(k) = npos.iter().position(|p| *p == Some(pi)) {
                                n[k] = val;
                            }
                        }
                        PropType::List(ct, et) => {
                            let len = cursor.read_index(ct)?;
                            for _ in 0..len {
                                cursor.read_scalar(et)?;
                            }
                        }
                    }
                }
                vertices.push(v);
                if has_normals {
                    normals.push(n);
                }
            }
        } else if elem.name == "face" {
            saw_face = true;
            faces.reserve(elem.count);
            for row in 0..elem.count {
                let mut got = false;
                for prop in &elem.props {
                    match prop.ty {
                        PropType::Scalar(st) => {
                            cursor.read_scalar(st)?;
                        }
                        PropType::List(ct, et) => {
                            let len = cursor.read_index(ct)?;
                            if prop.name == "vertex_indices" || prop.name == "vertex_index" {
                                if len != 3 {
                                    return Err(MeshError::UnsupportedTopology {
                                        path: path.into(),
                                        line: cursor.line,
                                        msg: format!(
                                            "face {row} has {len} corners, only triangles are supported"
                                        ),
                                    });
                                }
                                let mut f = [0usize; 3];
                                for k in &mut f {
                                    *k = cursor.read_index(et)?;
                                }
                                faces.push(f);
                                got = true;
                            } else {
                                for _ in 0..len {
                                    cursor.read_scalar(et)?;
                                }
                            }
                        }
                    }
                }
                if !got {
                    return Err(cursor.err("face element has no vertex_indices property".into()));
                }
            }
        } else {
            // Unknown element: consume and discard its rows.
            for _ in 0..elem.count {
                for prop in &elem.props {
                    match prop.ty {
                        PropType::Scalar(st) => {
                            cursor.read_scalar(st)?;
                        }
                        PropType::List(ct, et) => {
                            let len = cursor.read_index(ct)?;
                            for _ in 0..len {
                                cursor.read_scalar(et)?;
                            }
                        }
                    }
                }
            }
        }
    }

    if !saw_vertex {
        return Err(MeshError::Parse {
            path: path.into(),
            line: header.header_lines,
            msg: "file has no vertex element".into(),
        });
    }
    if require_faces && !saw_face {
        return Err(MeshError::Parse {
            path: path.into(),
            line: header.header_lines,
            msg: "file has no face element, is this a point cloud?".into(),
        });
    }
    let mesh = TriMesh::new(vertices, faces)?;
    let normals = if normals.is_empty() { None } else { Some(normals) };
    Ok((mesh, normals))
}

fn write_ply<W: Write>(
    w: &mut W,
    mesh: &TriMesh,
    binary: bool,
    prop: Option<(&str, &[f64])>,
) -> std::io::Result<()> {
    write_ply_impl(w, mesh, None, binary, prop, true)
}

fn write_ply_impl<W: Write>(
    w: &mut W,
    mesh: &TriMesh,
    normals: Option<&[[f64; 3]]>,
    binary: bool,
    prop: Option<(&str, &[f64])>,
    with_faces: bool,
) -> std::io::Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format {} 1.0", if binary { "binary_little_endian" } else { "ascii" })?;
    writeln!(w, "element vertex {}", mesh.vertices.len())?;
    writeln!(w, "property double x")?;
    writeln!(w, "property double y")?;
    writeln!(w, "property double z")?;
    if normals.is_some() {
        writeln!(w, "property double nx")?;
        writeln!(w, "property double ny")?;
        writeln!(w, "property double nz")?;
    }
    if let Some((name, _)) = prop {
        writeln!(w, "property double {name}")?;
    }
    if with_faces {
        writeln!(w, "element face {}", mesh.faces.len())?;
        writeln!(w, "property list uchar int vertex_indices")?;
    }
    writeln!(w, "end_header")?;

    for (i, v) in mesh.vertices.iter().enumerate() {
        let mut row: Vec<f64> = v.to_vec();
        if let Some(ns) = normals {
            row.extend_from_slice(&ns[i]);
        }
        if let Some((_, vals)) = prop {
            row.push(vals[i]);
        }
        if binary {
            for x in row {
                w.write_all(&x.to_le_bytes())?;
            }
        } else {
            let strs: Vec<String> = row.iter().map(|x| x.to_string()).collect();
            writeln!(w, "{}", strs.join(" "))?;
        }
    }
    if with_faces {
        for f in &mesh.faces {
            if binary {
                w.write_all(&[3u8])?;
                for &i in f {
                    w.write_all(&(i as i32).to_le_bytes())?;
                }
            } else {
                writeln!(w, "3 {} {} {}", f[0], f[1], f[2])?;
            }
        }
    }
    Ok(())
}

// ------------------------------------------------------- small text files

/// Reads a landmark file: one `label vertex_index` pair per line. Blank
/// lines and `#` comments are skipped. Duplicate labels are an error.
pub fn parse_landmarks(path: &Path) -> Result<BTreeMap<String, usize>, MeshError> {
    let reader = open(path)?;
    let label = path.display().to_string();
    let mut out = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| MeshError::Io { path: label.clone(), source: e })?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let (name, index) = match (it.next(), it.next(), it.next()) {
            (Some(n), Some(i), None) => (n, i),
            _ => {
                return Err(MeshError::Landmark {
                    path: label,
                    line: lineno,
                    msg: "expected 'label vertex_index'".into(),
                })
            }
        };
        let index: usize = index.parse().map_err(|_| MeshError::Landmark {
            path: label.clone(),
            line: lineno,
            msg: format!("invalid vertex index {index:?}"),
        })?;
        if out.insert(name.to_string(), index).is_some() {
            return Err(MeshError::Landmark {
                path: label,
                line: lineno,
                msg: format!("duplicate label {name:?}"),
            });
        }
    }
    Ok(out)
}

pub fn write_landmarks(path: &Path, landmarks: &BTreeMap<String, usize>) -> Result<(), MeshError> {
    let mut w = create(path)?;
    for (name, idx) in landmarks {
        writeln!(w, "{name} {idx}").map_err(|e| MeshError::io(path, e))?;
    }
    Ok(())
}

/// Reads a vertex-set file: one vertex index per line.
pub fn parse_vertex_set(path: &Path) -> Result<Vec<usize>, MeshError> {
    let reader = open(path)?;
    let label = path.display().to_string();
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| MeshError::Io { path: label.clone(), source: e })?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: usize = line.parse().map_err(|_| MeshError::Landmark {
            path: label.clone(),
            line: idx + 1,
            msg: format!("invalid vertex index {line:?}"),
        })?;
        out.push(v);
    }
    Ok(out)
}

pub fn write_vertex_set(path: &Path, set: &[usize]) -> Result<(), MeshError> {
    let mut w = create(path)?;
    for v in set {
        writeln!(w, "{v}").map_err(|e| MeshError::io(path, e))?;
    }
    Ok(())
}

/// Reads annotated 3D landmark positions: one `label x y z` per line.
pub fn parse_annotations(path: &Path) -> Result<BTreeMap<String, [f64; 3]>, MeshError> {
    let reader = open(path)?;
    let label = path.display().to_string();
    let mut out = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| MeshError::Io { path: label.clone(), source: e })?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 4 {
            return Err(MeshError::Landmark {
                path: label,
                line: lineno,
                msg: "expected 'label x y z'".into(),
            });
        }
        let mut p = [0.0f64; 3];
        for (k, t) in toks[1..].iter().enumerate() {
            p[k] = t.parse().map_err(|_| MeshError::Landmark {
                path: label.clone(),
                line: lineno,
                msg: format!("invalid coordinate {t:?}"),
            })?;
        }
        if out.insert(toks[0].to_string(), p).is_some() {
            return Err(MeshError::Landmark {
                path: label,
                line: lineno,
                msg: format!("duplicate label {:?}", toks[0]),
            });
        }
    }
    Ok(out)
}

pub fn write_annotations(path: &Path, ann: &BTreeMap<String, [f64; 3]>) -> Result<(), MeshError> {
    let mut w = create(path)?;
    for (name, p) in ann {
        writeln!(w, "{name} {} {} {}", p[0], p[1], p[2]).map_err(|e| MeshError::io(path, e))?;
    }
    Ok(())
}
