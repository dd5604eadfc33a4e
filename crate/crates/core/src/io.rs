//! File formats: PLY point clouds, correspondence lists, transform JSON,
//! and atomic output.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geometry::{Point3, PointCloud, RigidTransform};
use crate::matching::Correspondence;
use crate::{Error, Result};

fn file_error(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::FileIo {
        path: path.to_path_buf(),
        source,
    }
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(file_error(path))
}

/// Writes through a temporary file in the destination directory and renames
/// it into place, so a failed write never leaves a partial file behind.
pub fn write_atomic<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<&mut tempfile::NamedTempFile>) -> Result<()>,
{
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(file_error(path))?;
    {
        let mut w = BufWriter::new(&mut tmp);
        write(&mut w)?;
        w.flush().map_err(file_error(path))?;
    }
    tmp.persist(path).map_err(|e| Error::FileIo {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

// ---------------------------------------------------------------- PLY

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

#[derive(Debug, Clone)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

impl Property {
    fn name(&self) -> &str {
        match self {
            Property::Scalar(n, _) | Property::List(n, _, _) => n,
        }
    }
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
    body_offset: usize,
}

fn ply_err(message: impl Into<String>, offset: usize) -> Error {
    Error::Ply {
        message: message.into(),
        offset: offset as u64,
    }
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut pos = 0;
    let next_line = |pos: &mut usize| -> Result<(usize, String)> {
        let start = *pos;
        let rest = &bytes[start..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| ply_err("unterminated header", start))?;
        *pos = start + end + 1;
        let line = std::str::from_utf8(&rest[..end]).map_err(|_| ply_err("header is not valid text", start))?;
        Ok((start, line.trim_end_matches('\r').to_string()))
    };

    let (_, magic) = next_line(&mut pos)?;
    if magic.trim() != "ply" {
        return Err(ply_err("missing 'ply' magic", 0));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let (at, line) = next_line(&mut pos)?;
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["end_header"] => break,
            ["format", f, version] => {
                if *version != "1.0" {
                    return Err(ply_err(format!("unsupported version {version}"), at));
                }
                format = Some(match *f {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    other => return Err(ply_err(format!("unsupported format {other}"), at)),
                });
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                let count = count.parse().map_err(|_| ply_err(format!("bad element count '{count}'"), at))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            ["property", "list", ct, it, name] => {
                let el = elements.last_mut().ok_or_else(|| ply_err("property before any element", at))?;
                let ct = Scalar::parse(ct).ok_or_else(|| ply_err(format!("unknown type '{ct}'"), at))?;
                let it = Scalar::parse(it).ok_or_else(|| ply_err(format!("unknown type '{it}'"), at))?;
                el.properties.push(Property::List(name.to_string(), ct, it));
            }
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or_else(|| ply_err("property before any element", at))?;
                let ty = Scalar::parse(ty).ok_or_else(|| ply_err(format!("unknown type '{ty}'"), at))?;
                el.properties.push(Property::Scalar(name.to_string(), ty));
            }
            _ => return Err(ply_err(format!("malformed header line '{line}'"), at)),
        }
    }
    let format = format.ok_or_else(|| ply_err("missing format line", 0))?;
    Ok(Header {
        format,
        elements,
        body_offset: pos,
    })
}

/// Positions of x, y, z among the vertex properties.
fn xyz_slots(el: &Element) -> Result<[usize; 3]> {
    let find = |axis: &str| {
        el.properties
            .iter()
            .position(|p| matches!(p, Property::Scalar(n, _) if n == axis))
            .ok_or_else(|| ply_err(format!("vertex element lacks scalar property '{axis}'"), 0))
    };
    let slots = [find("x")?, find("y")?, find("z")?];
    for p in &el.properties {
        if !["x", "y", "z"].contains(&p.name()) {
            log::warn!("ignoring vertex property '{}'", p.name());
        }
    }
    Ok(slots)
}

struct AsciiBody<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl AsciiBody<'_> {
    fn token(&mut self) -> Option<(usize, usize)> {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        (self.pos > start).then_some((start, self.pos))
    }

    fn number(&mut self, el: &Element, got: usize) -> Result<f64> {
        let end_of_body = self.bytes.len();
        let (at, end) = self.token().ok_or_else(|| truncated(el, got, end_of_body))?;
        let tok = std::str::from_utf8(&self.bytes[at..end]).unwrap_or("");
        tok.parse().map_err(|_| ply_err(format!("bad number '{tok}'"), at))
    }
}

fn truncated(el: &Element, got: usize, offset: usize) -> Error {
    ply_err(
        format!("truncated body: expected {} {} elements, found {got}", el.count, el.name),
        offset,
    )
}

/// Parses PLY bytes into a cloud. Elements other than `vertex` and
/// vertex properties other than x/y/z are skipped.
pub fn parse_ply(bytes: &[u8], id: &str) -> Result<PointCloud> {
    let header = parse_header(bytes)?;
    let vertex_el = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| ply_err("no vertex element", 0))?;
    let slots = xyz_slots(&header.elements[vertex_el])?;
    let mut points = Vec::with_capacity(header.elements[vertex_el].count);

    match header.format {
        PlyFormat::Ascii => {
            let mut body = AsciiBody {
                bytes,
                pos: header.body_offset,
            };
            for (ei, el) in header.elements.iter().enumerate().take(vertex_el + 1) {
                for got in 0..el.count {
                    let mut xyz = [0.0; 3];
                    for (pi, prop) in el.properties.iter().enumerate() {
                        match prop {
                            Property::Scalar(..) => {
                                let v = body.number(el, got)?;
                                if let Some(axis) = slots.iter().position(|&s| s == pi) {
                                    xyz[axis] = v;
                                }
                            }
                            Property::List(..) => {
                                let n = body.number(el, got)?;
                                for _ in 0..n as usize {
                                    body.number(el, got)?;
                                }
                            }
                        }
                    }
                    if ei == vertex_el {
                        points.push(Point3::from(xyz));
                    }
                }
            }
        }
        PlyFormat::BinaryLittleEndian => {
            let mut pos = header.body_offset;
            for (ei, el) in header.elements.iter().enumerate().take(vertex_el + 1) {
                for got in 0..el.count {
                    let mut xyz = [0.0; 3];
                    for (pi, prop) in el.properties.iter().enumerate() {
                        let (ty, n) = match prop {
                            Property::Scalar(_, ty) => (*ty, 1),
                            Property::List(_, ct, it) => {
                                let c = bytes.get(pos..pos + ct.size()).ok_or_else(|| truncated(el, got, bytes.len()))?;
                                pos += ct.size();
                                (*it, ct.read_le(c) as usize)
                            }
                        };
                        let len = ty.size() * n;
                        let raw = bytes.get(pos..pos + len).ok_or_else(|| truncated(el, got, bytes.len()))?;
                        if let Some(axis) = slots.iter().position(|&s| s == pi) {
                            xyz[axis] = ty.read_le(raw);
                        }
                        pos += len;
                    }
                    if ei == vertex_el {
                        points.push(Point3::from(xyz));
                    }
                }
            }
        }
    }
    PointCloud::new(id, points)
}

pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let bytes = std::fs::read(path).map_err(file_error(path))?;
    let id = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    parse_ply(&bytes, &id)
}

/// Encodes x/y/z as doubles, so a write/read round trip is lossless.
pub fn encode_ply<W: Write>(mut out: W, cloud: &PointCloud, format: PlyFormat) -> Result<()> {
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    write!(
        out,
        "ply\nformat {fmt} 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
        cloud.len()
    )?;
    for p in cloud.points() {
        match format {
            PlyFormat::Ascii => writeln!(out, "{} {} {}", p.x, p.y, p.z)?,
            PlyFormat::BinaryLittleEndian => {
                for v in p.to_array() {
                    out.write_all(&v.to_le_bytes())?;
                }
            }
        }
    }
    Ok(())
}

pub fn write_ply(cloud: &PointCloud, path: &Path, format: PlyFormat) -> Result<()> {
    write_atomic(path, |w| encode_ply(w, cloud, format))
}

// ---------------------------------------------------------- correspondences

/// One line of a correspondence file:
/// `p q descriptor_distance [inlier_prob|-] [label]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub correspondence: Correspondence,
    pub inlier_prob: Option<f64>,
    pub label: Option<bool>,
}

impl From<Correspondence> for MatchRecord {
    fn from(correspondence: Correspondence) -> Self {
        Self {
            correspondence,
            inlier_prob: None,
            label: None,
        }
    }
}

const MATCH_CONTEXT: &str = "correspondences";

fn parse_match_line(line: &str, no: usize) -> Result<MatchRecord> {
    let err = |m: String| Error::parse(MATCH_CONTEXT, no, m);
    let tok: Vec<&str> = line.split_whitespace().collect();
    if !(3..=5).contains(&tok.len()) {
        return Err(err(format!("expected 3 to 5 fields, found {}", tok.len())));
    }
    let index = |s: &str| s.parse::<usize>().map_err(|_| err(format!("invalid index '{s}'")));
    let real = |s: &str| match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(err(format!("invalid number '{s}'"))),
    };
    let p = index(tok[0])?;
    let q = index(tok[1])?;
    let d = real(tok[2])?;
    if d < 0.0 {
        return Err(err(format!("negative descriptor distance {d}")));
    }
    let inlier_prob = match tok.get(3) {
        None | Some(&"-") => None,
        Some(s) => {
            let v = real(s)?;
            if !(0.0..=1.0).contains(&v) {
                return Err(err(format!("inlier probability {v} outside [0, 1]")));
            }
            Some(v)
        }
    };
    let label = match tok.get(4) {
        None => None,
        Some(&"0") => Some(false),
        Some(&"1") => Some(true),
        Some(s) => return Err(err(format!("label must be 0 or 1, got '{s}'"))),
    };
    Ok(MatchRecord {
        correspondence: Correspondence::new(p, q, d),
        inlier_prob,
        label,
    })
}

/// Blank lines and `#` comments are skipped; errors carry 1-based line
/// numbers.
pub fn read_matches<R: BufRead>(source: R) -> Result<Vec<MatchRecord>> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        out.push(parse_match_line(body, i + 1)?);
    }
    Ok(out)
}

pub fn read_matches_file(path: &Path) -> Result<Vec<MatchRecord>> {
    read_matches(open(path)?)
}

pub fn write_matches<W: Write>(mut out: W, records: &[MatchRecord]) -> Result<()> {
    for r in records {
        let c = &r.correspondence;
        write!(out, "{} {} {}", c.p, c.q, c.descriptor_distance)?;
        match (r.inlier_prob, r.label) {
            (None, None) => {}
            (Some(p), None) => write!(out, " {p}")?,
            (p, Some(l)) => write!(
                out,
                " {} {}",
                p.map_or_else(|| "-".to_string(), |v| v.to_string()),
                u8::from(l)
            )?,
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn write_matches_file(path: &Path, records: &[MatchRecord]) -> Result<()> {
    write_atomic(path, |w| write_matches(w, records))
}

// ---------------------------------------------------------------- transform

/// Transform file contents. `rotation` is row-major: `rotation[r][c]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformRecord {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub consensus: usize,
    pub found: bool,
}

impl TransformRecord {
    pub fn new(t: &RigidTransform, consensus: usize, found: bool) -> Self {
        let v = t.translation();
        Self {
            rotation: t.rotation_rows(),
            translation: [v.x, v.y, v.z],
            consensus,
            found,
        }
    }

    pub fn transform(&self) -> Result<RigidTransform> {
        RigidTransform::from_rows(self.rotation, self.translation)
    }
}

pub fn write_transform(path: &Path, record: &TransformRecord) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, record)?;
        writeln!(w)?;
        Ok(())
    })
}

pub fn read_transform(path: &Path) -> Result<TransformRecord> {
    Ok(serde_json::from_reader(open(path)?)?)
}
