//! OBJ and PLY input, ASCII PLY output.
//!
//! PLY vertices may carry an integer `segment` property assigning each vertex
//! to a centerline segment. Point clouds are read from the vertex element of a
//! PLY file; faces are optional there.

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::{MeshError, TriMesh, Vec3};

#[derive(Debug, Error)]
pub enum MeshIoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Obj { line: usize, msg: String },
    #[error("ply: {0}")]
    Ply(String),
    #[error("unsupported mesh extension: {0}")]
    Extension(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, MeshIoError> {
    fs::read(path).map_err(|source| MeshIoError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// A mesh file's geometry plus its optional per-vertex segment ids.
#[derive(Debug, Clone)]
pub struct LoadedMesh {
    pub mesh: TriMesh,
    pub segment_ids: Option<Vec<usize>>,
}

/// Dispatches on extension (`.obj`, `.ply`).
pub fn load_mesh(path: &Path) -> Result<LoadedMesh, MeshIoError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    match ext.as_str() {
        "obj" => {
            let text = String::from_utf8_lossy(&read_bytes(path)?).into_owned();
            Ok(LoadedMesh {
                mesh: parse_obj(&text)?,
                segment_ids: None,
            })
        }
        "ply" => {
            let ply = parse_ply(&read_bytes(path)?)?;
            let faces = ply.faces.clone();
            let segment_ids = ply.int_property("segment");
            Ok(LoadedMesh {
                mesh: TriMesh::new(ply.vertices, faces)?,
                segment_ids,
            })
        }
        other => Err(MeshIoError::Extension(other.to_string())),
    }
}

/// Wavefront OBJ: `v` and `f` records; polygons are fan-triangulated and
/// negative (relative) indices are honoured.
pub fn parse_obj(text: &str) -> Result<TriMesh, MeshIoError> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut it = line.split_whitespace();
        let err = |msg: &str| MeshIoError::Obj {
            line: lineno + 1,
            msg: msg.to_string(),
        };
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| err("bad vertex coordinate"))?;
                if c.len() != 3 {
                    return Err(err("vertex needs three coordinates"));
                }
                vertices.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let mut idx = Vec::new();
                for tok in it {
                    let first = tok.split('/').next().unwrap_or("");
                    let i: i64 = first.parse().map_err(|_| err("bad face index"))?;
                    let resolved = if i > 0 {
                        i - 1
                    } else if i < 0 {
                        vertices.len() as i64 + i
                    } else {
                        return Err(err("face index 0"));
                    };
                    if resolved < 0 {
                        return Err(err("face index out of range"));
                    }
                    idx.push(resolved as usize);
                }
                if idx.len() < 3 {
                    return Err(err("face needs three vertices"));
                }
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok(TriMesh::new(vertices, triangles)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Format {
    Ascii,
    BinaryLe,
    BinaryBe,
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
}

#[derive(Debug, Clone)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

/// Parsed PLY vertex and face data.
#[derive(Debug, Clone, Default)]
pub struct PlyData {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    /// Extra scalar vertex properties by name, in declaration order.
    pub vertex_scalars: Vec<(String, Vec<f64>)>,
}

impl PlyData {
    pub fn int_property(&self, name: &str) -> Option<Vec<usize>> {
        self.vertex_scalars
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.iter().map(|&x| x.max(0.0) as usize).collect())
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
    format: Format,
}

impl Reader<'_> {
    fn token(&mut self) -> Result<&str, MeshIoError> {
        while self.pos < self.data.len() && self.data[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        while self.pos < self.data.len() && !self.data[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(MeshIoError::Ply("unexpected end of data".into()));
        }
        std::str::from_utf8(&self.data[start..self.pos])
            .map_err(|_| MeshIoError::Ply("non-utf8 token".into()))
    }

    fn read(&mut self, s: Scalar) -> Result<f64, MeshIoError> {
        if self.format == Format::Ascii {
            let t = self.token()?;
            return t
                .parse::<f64>()
                .map_err(|_| MeshIoError::Ply(format!("bad number {t:?}")));
        }
        let n = s.size();
        if self.pos + n > self.data.len() {
            return Err(MeshIoError::Ply("unexpected end of data".into()));
        }
        let mut buf = [0u8; 8];
        buf[..n].copy_from_slice(&self.data[self.pos..self.pos + n]);
        self.pos += n;
        if self.format == Format::BinaryBe {
            buf[..n].reverse();
        }
        Ok(match s {
            Scalar::I8 => buf[0] as i8 as f64,
            Scalar::U8 => buf[0] as f64,
            Scalar::I16 => i16::from_le_bytes([buf[0], buf[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([buf[0], buf[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(buf),
        })
    }
}

pub fn parse_ply(data: &[u8]) -> Result<PlyData, MeshIoError> {
    let bad = |m: &str| MeshIoError::Ply(m.to_string());
    let header_end = find_subslice(data, b"end_header")
        .ok_or_else(|| bad("missing end_header"))?;
    let header = std::str::from_utf8(&data[..header_end]).map_err(|_| bad("non-utf8 header"))?;
    let mut body = header_end + "end_header".len();
    if data.get(body) == Some(&b'\r') {
        body += 1;
    }
    if data.get(body) == Some(&b'\n') {
        body += 1;
    }

    let mut lines = header.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(bad("missing ply magic"));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    for line in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", f, _ver] => {
                format = Some(match *f {
                    "ascii" => Format::Ascii,
                    "binary_little_endian" => Format::BinaryLe,
                    "binary_big_endian" => Format::BinaryBe,
                    _ => return Err(bad("unknown format")),
                })
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| bad("bad element count"))?,
                props: Vec::new(),
            }),
            ["property", "list", c, i, name] => {
                let el = elements.last_mut().ok_or_else(|| bad("property before element"))?;
                el.props.push(Property::List(
                    name.to_string(),
                    Scalar::parse(c).ok_or_else(|| bad("bad list count type"))?,
                    Scalar::parse(i).ok_or_else(|| bad("bad list item type"))?,
                ));
            }
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or_else(|| bad("property before element"))?;
                el.props.push(Property::Scalar(
                    name.to_string(),
                    Scalar::parse(ty).ok_or_else(|| bad("bad property type"))?,
                ));
            }
            _ => {}
        }
    }
    let format = format.ok_or_else(|| bad("missing format line"))?;
    let mut reader = Reader {
        data,
        pos: body,
        format,
    };
    let mut out = PlyData::default();
    for el in &elements {
        let is_vertex = el.name == "vertex";
        let is_face = el.name == "face";
        let names: Vec<&str> = el
            .props
            .iter()
            .map(|p| match p {
                Property::Scalar(n, _) | Property::List(n, _, _) => n.as_str(),
            })
            .collect();
        if is_vertex {
            for n in ["x", "y", "z"] {
                if !names.contains(&n) {
                    return Err(bad("vertex element lacks x/y/z"));
                }
            }
            for p in &el.props {
                if let Property::Scalar(n, _) = p {
                    if !matches!(n.as_str(), "x" | "y" | "z") {
                        out.vertex_scalars.push((n.clone(), Vec::with_capacity(el.count)));
                    }
                }
            }
        }
        for _ in 0..el.count {
            let mut xyz = [0.0; 3];
            let mut extra = 0;
            for p in &el.props {
                match p {
                    Property::Scalar(n, s) => {
                        let v = reader.read(*s)?;
                        if is_vertex {
                            match n.as_str() {
                                "x" => xyz[0] = v,
                                "y" => xyz[1] = v,
                                "z" => xyz[2] = v,
                                _ => {
                                    out.vertex_scalars[extra].1.push(v);
                                    extra += 1;
                                }
                            }
                        }
                    }
                    Property::List(n, c, i) => {
                        let len = reader.read(*c)? as usize;
                        let mut items = Vec::with_capacity(len);
                        for _ in 0..len {
                            items.push(reader.read(*i)? as usize);
                        }
                        if is_face && (n == "vertex_indices" || n == "vertex_index") {
                            if items.len() < 3 {
                                return Err(bad("face with fewer than 3 vertices"));
                            }
                            for k in 1..items.len() - 1 {
                                out.faces.push([items[0], items[k], items[k + 1]]);
                            }
                        }
                    }
                }
            }
            if is_vertex {
                out.vertices.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
            }
        }
    }
    Ok(out)
}

fn find_subslice(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len()).position(|w| w == needle)
}

pub fn read_ply(path: &Path) -> Result<PlyData, MeshIoError> {
    parse_ply(&read_bytes(path)?)
}

/// ASCII PLY of points with an optional per-point scalar property.
pub fn ply_points_to_string(points: &[Vec3], scalar: Option<(&str, &[f64])>) -> String {
    use std::fmt::Write;
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", points.len());
    s.push_str("property double x\nproperty double y\nproperty double z\n");
    if let Some((name, _)) = scalar {
        let _ = writeln!(s, "property double {name}");
    }
    s.push_str("end_header\n");
    for (i, p) in points.iter().enumerate() {
        let _ = write!(s, "{} {} {}", p.x, p.y, p.z);
        if let Some((_, vals)) = scalar {
            let _ = write!(s, " {}", vals[i]);
        }
        s.push('\n');
    }
    s
}

pub fn write_ply_points(
    path: &Path,
    points: &[Vec3],
    scalar: Option<(&str, &[f64])>,
) -> std::io::Result<()> {
    fs::write(path, ply_points_to_string(points, scalar))
}

/// ASCII PLY of a mesh with an optional integer `segment` property.
pub fn ply_mesh_to_string(mesh: &TriMesh, segment_ids: Option<&[usize]>) -> String {
    use std::fmt::Write;
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", mesh.vertex_count());
    s.push_str("property double x\nproperty double y\nproperty double z\n");
    if segment_ids.is_some() {
        s.push_str("property int segment\n");
    }
    let _ = writeln!(s, "element face {}", mesh.triangles().len());
    s.push_str("property list uchar int vertex_indices\nend_header\n");
    for (i, p) in mesh.vertices().iter().enumerate() {
        let _ = write!(s, "{} {} {}", p.x, p.y, p.z);
        if let Some(ids) = segment_ids {
            let _ = write!(s, " {}", ids[i]);
        }
        s.push('\n');
    }
    for t in mesh.triangles() {
        let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn obj_quads_and_negative_indices() {
        let text = "# square\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1/1 2/2/2 3/3/3 4/4/4\nf -4 -3 -1\n";
        let m = parse_obj(text).unwrap();
        assert_eq!(m.vertex_count(), 4);
        assert_eq!(m.triangles().len(), 3);
    }

    #[test]
    fn obj_reports_line() {
        let err = parse_obj("v 0 0 0\nv 1 x 0\n").unwrap_err();
        assert!(matches!(err, MeshIoError::Obj { line: 2, .. }));
    }

    #[test]
    fn ascii_ply_with_segment() {
        let text = "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nproperty int segment\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0 0\n1 0 0 1\n0 1 0 1\n3 0 1 2\n";
        let ply = parse_ply(text.as_bytes()).unwrap();
        assert_eq!(ply.vertices.len(), 3);
        assert_eq!(ply.faces, vec![[0, 1, 2]]);
        assert_eq!(ply.int_property("segment"), Some(vec![0, 1, 1]));
    }

    #[test]
    fn binary_ply_both_endians() {
        for (fmt, le) in [("binary_little_endian", true), ("binary_big_endian", false)] {
            let mut data = format!(
                "ply\nformat {fmt} 1.0\nelement vertex 3\nproperty double x\nproperty double y\nproperty double z\nproperty int segment\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n"
            )
            .into_bytes();
            let pts = [[0.0f64, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.5]];
            for (k, p) in pts.iter().enumerate() {
                for c in p {
                    data.extend(if le { c.to_le_bytes() } else { c.to_be_bytes() });
                }
                let seg = k as i32;
                data.extend(if le { seg.to_le_bytes() } else { seg.to_be_bytes() });
            }
            data.push(3);
            for i in [0i32, 1, 2] {
                data.extend(if le { i.to_le_bytes() } else { i.to_be_bytes() });
            }
            let ply = parse_ply(&data).unwrap();
            assert_eq!(ply.vertices[2], Vec3::new(0.0, 1.0, 0.5));
            assert_eq!(ply.faces, vec![[0, 1, 2]]);
            assert_eq!(ply.int_property("segment"), Some(vec![0, 1, 2]));
        }
    }

    #[test]
    fn point_ply_round_trip() {
        let pts = vec![Vec3::new(0.1, -2.5, 3.0), Vec3::new(1e-9, 0.0, 7.25)];
        let vals = [0.5, 1.0 / 3.0];
        let text = ply_points_to_string(&pts, Some(("c2c_dist", &vals)));
        let ply = parse_ply(text.as_bytes()).unwrap();
        assert_eq!(ply.vertices, pts);
        assert_eq!(ply.vertex_scalars[0].0, "c2c_dist");
        assert_eq!(ply.vertex_scalars[0].1, vals.to_vec());
    }
}
