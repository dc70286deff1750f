//! Mesh readers (OFF, OBJ, ASCII/binary PLY) and writers (OBJ, OFF).
//!
//! Polygons are fan-triangulated around their first vertex. Indices are 0-based
//! in OFF and PLY, 1-based in OBJ (negative OBJ indices are relative).

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::mesh::Mesh;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Off,
    Obj,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "off" => Some(Self::Off),
            "obj" => Some(Self::Obj),
            "ply" => Some(Self::Ply),
            _ => None,
        }
    }
}

/// Loads a triangle mesh. `format = None` infers it from the file extension.
pub fn load_mesh(path: impl AsRef<Path>, format: Option<MeshFormat>) -> Result<Mesh> {
    let path = path.as_ref();
    let format = match format.or_else(|| MeshFormat::from_path(path)) {
        Some(f) => f,
        None => {
            return Err(Error::parse(
                path,
                0,
                "cannot infer mesh format from extension",
            ))
        }
    };
    let bytes =
        fs::read(path).map_err(|e| Error::parse(path, 0, format!("cannot read file: {e}")))?;
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("mesh")
        .to_string();
    let (verts, polys) = match format {
        MeshFormat::Off => parse_off(path, &bytes)?,
        MeshFormat::Obj => parse_obj(path, &bytes)?,
        MeshFormat::Ply => parse_ply(path, &bytes)?,
    };
    build(path, verts, polys, name)
}

/// A polygon with the source line it came from.
type Poly = (usize, Vec<usize>);

fn build(path: &Path, verts: Vec<Vector3<f64>>, polys: Vec<Poly>, name: String) -> Result<Mesh> {
    let n = verts.len();
    let mut faces = Vec::with_capacity(polys.len());
    for (line, poly) in polys {
        if poly.len() < 3 {
            return Err(Error::parse(
                path,
                line,
                format!("face with {} vertices", poly.len()),
            ));
        }
        if let Some(&bad) = poly.iter().find(|&&i| i >= n) {
            return Err(Error::parse(
                path,
                line,
                format!("face index {bad} out of range for {n} vertices"),
            ));
        }
        for k in 1..poly.len() - 1 {
            let tri = [poly[0], poly[k], poly[k + 1]];
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::parse(
                    path,
                    line,
                    format!("face repeats a vertex: {poly:?}"),
                ));
            }
            faces.push(tri);
        }
    }
    if let Some(i) = verts.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
        return Err(Error::parse(
            path,
            0,
            format!("vertex {i} has a non-finite coordinate"),
        ));
    }
    Mesh::new(verts, faces, name)
}

fn utf8<'a>(path: &Path, bytes: &'a [u8]) -> Result<&'a str> {
    std::str::from_utf8(bytes).map_err(|e| Error::parse(path, 0, format!("not valid UTF-8: {e}")))
}

/// Whitespace tokens with line numbers, `#` comments stripped.
fn tokens(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().flat_map(|(i, line)| {
        let line = line.split('#').next().unwrap_or("");
        line.split_whitespace().map(move |t| (i + 1, t))
    })
}

fn num<T: std::str::FromStr>(path: &Path, tok: Option<(usize, &str)>, what: &str) -> Result<T> {
    match tok {
        Some((line, t)) => t
            .parse()
            .map_err(|_| Error::parse(path, line, format!("expected {what}, found '{t}'"))),
        None => Err(Error::parse(
            path,
            0,
            format!("unexpected end of file, expected {what}"),
        )),
    }
}

fn parse_off(path: &Path, bytes: &[u8]) -> Result<(Vec<Vector3<f64>>, Vec<Poly>)> {
    let text = utf8(path, bytes)?;
    let mut toks = tokens(text).peekable();
    match toks.next() {
        Some((_, "OFF")) => {}
        Some((line, t)) if t.starts_with("OFF") && t.len() > 3 => {
            return Err(Error::parse(
                path,
                line,
                format!("unsupported OFF variant '{t}'"),
            ));
        }
        Some((line, t)) => {
            return Err(Error::parse(
                path,
                line,
                format!("expected 'OFF', found '{t}'"),
            ))
        }
        None => return Err(Error::parse(path, 0, "empty file")),
    }
    let nv: usize = num(path, toks.next(), "vertex count")?;
    let nf: usize = num(path, toks.next(), "face count")?;
    let _ne: usize = num(path, toks.next(), "edge count")?;
    let mut verts = Vec::with_capacity(nv);
    for _ in 0..nv {
        let x = num(path, toks.next(), "coordinate")?;
        let y = num(path, toks.next(), "coordinate")?;
        let z = num(path, toks.next(), "coordinate")?;
        verts.push(Vector3::new(x, y, z));
    }
    // Faces may carry trailing color values on the same line, so read per line.
    let mut polys = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (line, first) = match toks.next() {
            Some(t) => t,
            None => return Err(Error::parse(path, 0, "unexpected end of file in face list")),
        };
        let count: usize = num(path, Some((line, first)), "polygon size")?;
        let mut poly = Vec::with_capacity(count);
        for _ in 0..count {
            poly.push(num(path, toks.next(), "face index")?);
        }
        while matches!(toks.peek(), Some(&(l, _)) if l == line) {
            toks.next();
        }
        polys.push((line, poly));
    }
    Ok((verts, polys))
}

fn parse_obj(path: &Path, bytes: &[u8]) -> Result<(Vec<Vector3<f64>>, Vec<Poly>)> {
    let text = utf8(path, bytes)?;
    let mut verts = Vec::new();
    let mut polys = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("");
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let mut c = [0.0; 3];
                for v in &mut c {
                    *v = num(path, it.next().map(|t| (line_no, t)), "coordinate")?;
                }
                verts.push(Vector3::from(c));
            }
            Some("f") => {
                let mut poly = Vec::new();
                for t in it {
                    let idx = t.split('/').next().unwrap_or("");
                    let k: i64 = num(path, Some((line_no, idx)), "face index")?;
                    let resolved = match k {
                        k if k > 0 => k - 1,
                        k if k < 0 => verts.len() as i64 + k,
                        _ => return Err(Error::parse(path, line_no, "OBJ face index 0")),
                    };
                    if resolved < 0 {
                        return Err(Error::parse(
                            path,
                            line_no,
                            format!("face index {k} out of range"),
                        ));
                    }
                    poly.push(resolved as usize);
                }
                polys.push((line_no, poly));
            }
            _ => {}
        }
    }
    Ok((verts, polys))
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

    fn decode(self, b: &[u8], big_endian: bool) -> f64 {
        macro_rules! rd {
            ($t:ty, $n:expr) => {{
                let mut a = [0u8; $n];
                a.copy_from_slice(&b[..$n]);
                if big_endian {
                    <$t>::from_be_bytes(a) as f64
                } else {
                    <$t>::from_le_bytes(a) as f64
                }
            }};
        }
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => rd!(i16, 2),
            Self::U16 => rd!(u16, 2),
            Self::I32 => rd!(i32, 4),
            Self::U32 => rd!(u32, 4),
            Self::F32 => rd!(f32, 4),
            Self::F64 => rd!(f64, 8),
        }
    }
}

#[derive(Debug)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PlyEncoding {
    Ascii,
    Binary { big_endian: bool },
}

fn parse_ply(path: &Path, bytes: &[u8]) -> Result<(Vec<Vector3<f64>>, Vec<Poly>)> {
    let header_end = find_subslice(bytes, b"end_header")
        .ok_or_else(|| Error::parse(path, 0, "missing end_header"))?;
    let body_start = bytes[header_end..]
        .iter()
        .position(|&b| b == b'\n')
        .map(|p| header_end + p + 1)
        .ok_or_else(|| Error::parse(path, 0, "truncated header"))?;
    let header = utf8(path, &bytes[..header_end])?;
    let header_lines = header.lines().count();

    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    for (i, line) in header.lines().enumerate() {
        let line_no = i + 1;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["ply"] if i == 0 => {}
            _ if i == 0 => return Err(Error::parse(path, 1, "missing 'ply' magic")),
            ["format", fmt, _] => {
                encoding = Some(match *fmt {
                    "ascii" => PlyEncoding::Ascii,
                    "binary_little_endian" => PlyEncoding::Binary { big_endian: false },
                    "binary_big_endian" => PlyEncoding::Binary { big_endian: true },
                    other => {
                        return Err(Error::parse(
                            path,
                            line_no,
                            format!("unknown format '{other}'"),
                        ))
                    }
                })
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: num(path, Some((line_no, count)), "element count")?,
                props: Vec::new(),
            }),
            ["property", "list", ct, it, name] => {
                let (Some(ct), Some(it)) = (Scalar::parse(ct), Scalar::parse(it)) else {
                    return Err(Error::parse(path, line_no, "unknown list property type"));
                };
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(path, line_no, "property before element"))?;
                el.props.push(Property::List(name.to_string(), ct, it));
            }
            ["property", ty, name] => {
                let ty = Scalar::parse(ty).ok_or_else(|| {
                    Error::parse(path, line_no, format!("unknown property type '{ty}'"))
                })?;
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(path, line_no, "property before element"))?;
                el.props.push(Property::Scalar(name.to_string(), ty));
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            _ => {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("unrecognized header line '{line}'"),
                ))
            }
        }
    }
    let encoding = encoding.ok_or_else(|| Error::parse(path, 0, "missing format line"))?;

    let mut verts = Vec::new();
    let mut polys = Vec::new();
    let mut reader = PlyBody::new(path, &bytes[body_start..], encoding, header_lines + 1)?;
    for el in &elements {
        let coord_idx: Vec<Option<usize>> = ["x", "y", "z"]
            .iter()
            .map(|c| {
                el.props
                    .iter()
                    .position(|p| matches!(p, Property::Scalar(n, _) if n == c))
            })
            .collect();
        for _ in 0..el.count {
            let line = reader.line();
            let mut coords = [0.0; 3];
            let mut poly = None;
            for (pi, prop) in el.props.iter().enumerate() {
                match prop {
                    Property::Scalar(_, ty) => {
                        let v = reader.scalar(*ty)?;
                        if let Some(c) = coord_idx.iter().position(|&ci| ci == Some(pi)) {
                            coords[c] = v;
                        }
                    }
                    Property::List(name, ct, it) => {
                        let count = reader.scalar(*ct)?;
                        if count < 0.0 {
                            return Err(Error::parse(path, line, "negative list length"));
                        }
                        let mut items = Vec::with_capacity(count as usize);
                        for _ in 0..count as usize {
                            items.push(reader.scalar(*it)?);
                        }
                        if name == "vertex_indices" || name == "vertex_index" {
                            let mut p = Vec::with_capacity(items.len());
                            for v in items {
                                if v < 0.0 {
                                    return Err(Error::parse(path, line, "negative face index"));
                                }
                                p.push(v as usize);
                            }
                            poly = Some(p);
                        }
                    }
                }
            }
            reader.end_record();
            match el.name.as_str() {
                "vertex" => {
                    if coord_idx.iter().any(Option::is_none) {
                        return Err(Error::parse(path, 0, "vertex element lacks x/y/z"));
                    }
                    verts.push(Vector3::from(coords));
                }
                "face" => {
                    let p = poly
                        .ok_or_else(|| Error::parse(path, line, "face without vertex_indices"))?;
                    polys.push((line, p));
                }
                _ => {}
            }
        }
    }
    Ok((verts, polys))
}

fn find_subslice(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len()).position(|w| w == needle)
}

struct PlyBody<'a> {
    path: &'a Path,
    encoding: PlyEncoding,
    bytes: &'a [u8],
    pos: usize,
    // ascii state: tokens of the current line
    lines: Vec<(usize, Vec<&'a str>)>,
    line_idx: usize,
    tok_idx: usize,
}

impl<'a> PlyBody<'a> {
    fn new(
        path: &'a Path,
        bytes: &'a [u8],
        encoding: PlyEncoding,
        first_line: usize,
    ) -> Result<Self> {
        let lines = if encoding == PlyEncoding::Ascii {
            utf8(path, bytes)?
                .lines()
                .enumerate()
                .map(|(i, l)| (first_line + i, l.split_whitespace().collect::<Vec<_>>()))
                .filter(|(_, t)| !t.is_empty())
                .collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            path,
            encoding,
            bytes,
            pos: 0,
            lines,
            line_idx: 0,
            tok_idx: 0,
        })
    }

    fn line(&self) -> usize {
        self.lines.get(self.line_idx).map_or(0, |l| l.0)
    }

    fn scalar(&mut self, ty: Scalar) -> Result<f64> {
        match self.encoding {
            PlyEncoding::Ascii => {
                let (line, toks) = self
                    .lines
                    .get(self.line_idx)
                    .ok_or_else(|| Error::parse(self.path, 0, "unexpected end of PLY body"))?;
                let t = toks
                    .get(self.tok_idx)
                    .ok_or_else(|| Error::parse(self.path, *line, "too few values on line"))?;
                self.tok_idx += 1;
                t.parse::<f64>()
                    .map_err(|_| Error::parse(self.path, *line, format!("bad number '{t}'")))
            }
            PlyEncoding::Binary { big_endian } => {
                let n = ty.size();
                if self.pos + n > self.bytes.len() {
                    return Err(Error::parse(
                        self.path,
                        0,
                        "unexpected end of binary PLY body",
                    ));
                }
                let v = ty.decode(&self.bytes[self.pos..], big_endian);
                self.pos += n;
                Ok(v)
            }
        }
    }

    fn end_record(&mut self) {
        if self.encoding == PlyEncoding::Ascii {
            self.line_idx += 1;
            self.tok_idx = 0;
        }
    }
}

/// Writes a mesh as OBJ (1-based indices). Coordinates use the shortest
/// round-tripping decimal representation, so output is byte-stable.
pub fn write_obj(path: impl AsRef<Path>, mesh: &Mesh) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::with_capacity(mesh.n_vertices() * 48 + mesh.n_faces() * 24);
    use std::fmt::Write as _;
    for v in mesh.vertices() {
        let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
    }
    for f in mesh.faces() {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    write_bytes(path, out.as_bytes())
}

/// Writes a mesh as OFF (0-based indices).
pub fn write_off(path: impl AsRef<Path>, mesh: &Mesh) -> Result<()> {
    let path = path.as_ref();
    use std::fmt::Write as _;
    let mut out = format!("OFF\n{} {} 0\n", mesh.n_vertices(), mesh.n_faces());
    for v in mesh.vertices() {
        let _ = writeln!(out, "{} {} {}", v.x, v.y, v.z);
    }
    for f in mesh.faces() {
        let _ = writeln!(out, "3 {} {} {}", f[0], f[1], f[2]);
    }
    write_bytes(path, out.as_bytes())
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Little-endian binary payload helpers shared by the `*1` file formats.
pub(crate) mod binary {
    use super::*;

    pub fn header(magic: &[u8], dims: &[u64]) -> Vec<u8> {
        let mut out = magic.to_vec();
        for d in dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out
    }

    pub fn push_f64s(out: &mut Vec<u8>, values: impl IntoIterator<Item = f64>) {
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub struct Reader<'a> {
        path: &'a Path,
        bytes: &'a [u8],
        pos: usize,
    }

    impl<'a> Reader<'a> {
        pub fn new(path: &'a Path, bytes: &'a [u8], magic: &[u8]) -> Result<Self> {
            if !bytes.starts_with(magic) {
                return Err(Error::parse(
                    path,
                    0,
                    format!("bad magic, expected {:?}", String::from_utf8_lossy(magic)),
                ));
            }
            Ok(Self {
                path,
                bytes,
                pos: magic.len(),
            })
        }

        fn take(&mut self, n: usize) -> Result<&'a [u8]> {
            if self.pos + n > self.bytes.len() {
                return Err(Error::parse(self.path, 0, "truncated binary file"));
            }
            let s = &self.bytes[self.pos..self.pos + n];
            self.pos += n;
            Ok(s)
        }

        pub fn u64(&mut self) -> Result<u64> {
            Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
        }

        pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
            let raw = self.take(
                n.checked_mul(8)
                    .ok_or_else(|| Error::parse(self.path, 0, "size overflow"))?,
            )?;
            Ok(raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect())
        }

        pub fn finish(&self) -> Result<()> {
            if self.pos != self.bytes.len() {
                return Err(Error::parse(self.path, 0, "trailing bytes after payload"));
            }
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, name: &str, contents: &[u8]) -> std::path::PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, contents).unwrap();
        p
    }

    #[test]
    fn off_single_triangle() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "tri.off",
            b"OFF\n# comment\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n",
        );
        let m = load_mesh(&p, None).unwrap();
        assert_eq!((m.n_vertices(), m.n_faces()), (3, 1));
        assert_eq!(m.name(), "tri");
    }

    #[test]
    fn off_out_of_range_index() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "bad.off",
            b"OFF\n4 1 0\n0 0 0\n1 0 0\n0 1 0\n1 1 0\n3 0 1 99\n",
        );
        match load_mesh(&p, None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 7),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn obj_quad_fan() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "quad.obj",
            b"v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1 4//1\n",
        );
        let m = load_mesh(&p, None).unwrap();
        assert_eq!(m.faces(), &[[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn obj_negative_indices() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "neg.obj", b"v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n");
        assert_eq!(load_mesh(&p, None).unwrap().faces(), &[[0, 1, 2]]);
    }

    #[test]
    fn nonmanifold_is_topology_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "nm.obj",
            b"v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 -1 0\nv 0 0 1\nf 1 2 3\nf 1 2 4\nf 2 1 5\n",
        );
        assert!(matches!(load_mesh(&p, None), Err(Error::Topology(_))));
    }

    #[test]
    fn missing_file_mentions_path() {
        let err = load_mesh("/definitely/not/here.off", None).unwrap_err();
        assert!(err.to_string().contains("/definitely/not/here.off"));
    }

    #[test]
    fn ply_ascii_and_binary_agree() {
        let dir = tempfile::tempdir().unwrap();
        let ascii = b"ply\nformat ascii 1.0\ncomment hi\nelement vertex 4\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0 255\n1 0 0 0\n1 1 0 0\n0 1 0 0\n4 0 1 2 3\n";
        let pa = write(&dir, "a.ply", ascii);

        let mut bin = b"ply\nformat binary_little_endian 1.0\nelement vertex 4\nproperty double x\nproperty double y\nproperty double z\nelement face 1\nproperty list uchar uint vertex_indices\nend_header\n".to_vec();
        for p in [
            [0.0f64, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [1.0, 1.0, 0.0],
            [0.0, 1.0, 0.0],
        ] {
            for c in p {
                bin.extend_from_slice(&c.to_le_bytes());
            }
        }
        bin.push(4);
        for i in 0u32..4 {
            bin.extend_from_slice(&i.to_le_bytes());
        }
        let pb = write(&dir, "b.ply", &bin);

        let mut be = b"ply\nformat binary_big_endian 1.0\nelement vertex 4\nproperty float x\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar short vertex_indices\nend_header\n".to_vec();
        for p in [
            [0.0f32, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [1.0, 1.0, 0.0],
            [0.0, 1.0, 0.0],
        ] {
            for c in p {
                be.extend_from_slice(&c.to_be_bytes());
            }
        }
        be.push(4);
        for i in 0i16..4 {
            be.extend_from_slice(&i.to_be_bytes());
        }
        let pc = write(&dir, "c.ply", &be);

        let a = load_mesh(&pa, None).unwrap();
        let b = load_mesh(&pb, None).unwrap();
        let c = load_mesh(&pc, None).unwrap();
        assert_eq!(a.vertices(), b.vertices());
        assert_eq!(a.faces(), b.faces());
        assert_eq!(a.vertices(), c.vertices());
        assert_eq!(a.faces(), &[[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn obj_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let m = crate::shapes::blob(1);
        let p = dir.path().join("blob.obj");
        write_obj(&p, &m).unwrap();
        let back = load_mesh(&p, None).unwrap();
        assert_eq!(back.vertices(), m.vertices());
        assert_eq!(back.faces(), m.faces());
        let q = dir.path().join("blob.off");
        write_off(&q, &m).unwrap();
        assert_eq!(load_mesh(&q, None).unwrap().vertices(), m.vertices());
    }
}
