//! File formats: xyz/ply/obj points and meshes, pgm masks, key-value
//! documents for intrinsics and transforms, and CSV sweep reports.
//!
//! Every reader parses from bytes first (`parse_*`), with thin path wrappers
//! on top, and rejects malformed input with the offending line number rather
//! than repairing it. Numeric output uses Rust's shortest-exact decimal
//! formatting, so writing and re-reading a value reproduces its bits.
//!
//! Supported ply transfer encodings are ASCII and binary little-endian;
//! big-endian files are rejected up front.

use std::fmt::Write as _;
use std::path::Path;

use crate::camera::{CameraIntrinsics, PixelMask};
use crate::error::{Error, Result};
use crate::geometry::{Point3, PointSet, Quaternion, SimilarityTransform};
use crate::metrics::SweepReport;
use crate::solver::LevelRecord;
use crate::voxel::Mesh;

/// Point-cloud file formats for reading and writing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PointFormat {
    Xyz,
    /// ASCII ply on write; ASCII or binary little-endian on read.
    Ply,
    /// `v` records of a Wavefront obj file.
    ObjVertices,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Ply,
}

fn non_finite(line: usize, what: &str) -> Error {
    Error::parse(line, format!("{what} must be finite"))
}

fn parse_float(tok: &str, line: usize, what: &str) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| Error::parse(line, format!("invalid {what} value '{tok}'")))?;
    if !v.is_finite() {
        return Err(non_finite(line, what));
    }
    Ok(v)
}

/// One `x y z` triple per line, whitespace separated; blank lines and lines
/// starting with `#` are skipped.
pub fn parse_xyz(bytes: &[u8]) -> Result<PointSet> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| Error::parse(0, format!("file is not valid utf-8: {e}")))?;
    let mut points = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = trimmed.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(Error::parse(
                line,
                format!("expected 3 coordinates, found {}", toks.len()),
            ));
        }
        points.push(Point3::new(
            parse_float(toks[0], line, "coordinate")?,
            parse_float(toks[1], line, "coordinate")?,
            parse_float(toks[2], line, "coordinate")?,
        ));
    }
    Ok(PointSet::new(points))
}

pub fn format_xyz(set: &PointSet) -> String {
    let mut out = String::new();
    for p in set.as_slice() {
        let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
    }
    out
}

// --- ply ---

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
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
    fn from_name(name: &str, line: usize) -> Result<Scalar> {
        Ok(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            other => return Err(Error::parse(line, format!("unknown ply type '{other}'"))),
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

    /// Little-endian decode to f64 (integers exactly, floats widened).
    fn decode(self, bytes: &[u8]) -> f64 {
        match self {
            Scalar::I8 => bytes[0] as i8 as f64,
            Scalar::U8 => bytes[0] as f64,
            Scalar::I16 => i16::from_le_bytes([bytes[0], bytes[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([bytes[0], bytes[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(bytes[..8].try_into().unwrap()),
        }
    }
}

#[derive(Clone, Debug)]
enum PlyProp {
    Scalar { name: String, ty: Scalar },
    List { name: String, count: Scalar, item: Scalar },
}

impl PlyProp {
    fn name(&self) -> &str {
        match self {
            PlyProp::Scalar { name, .. } | PlyProp::List { name, .. } => name,
        }
    }
}

#[derive(Clone, Debug)]
struct PlyElement {
    name: String,
    count: usize,
    props: Vec<PlyProp>,
}

struct PlyHeader {
    ascii: bool,
    elements: Vec<PlyElement>,
    /// 1-based line number right after `end_header`.
    data_line: usize,
}

/// Splits the header (always text) from the payload and parses it.
fn parse_ply_header(bytes: &[u8]) -> Result<(PlyHeader, &[u8])> {
    // Find the end of the header in raw bytes so a binary payload is never
    // run through the utf-8 check.
    let marker = b"end_header";
    let mut header_end = None;
    let mut search = 0;
    while search + marker.len() <= bytes.len() {
        if &bytes[search..search + marker.len()] == marker {
            let mut e = search + marker.len();
            if bytes.get(e) == Some(&b'\r') {
                e += 1;
            }
            if bytes.get(e) == Some(&b'\n') {
                header_end = Some(e + 1);
                break;
            }
        }
        search += 1;
    }
    let header_end = header_end
        .ok_or_else(|| Error::parse(0, "ply header has no end_header line".to_string()))?;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|e| Error::parse(0, format!("ply header is not valid utf-8: {e}")))?;
    let payload = &bytes[header_end..];

    let mut lines = header.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let (_, magic) = lines
        .next()
        .ok_or_else(|| Error::parse(1, "empty ply file".to_string()))?;
    if magic != "ply" {
        return Err(Error::parse(1, "missing 'ply' magic".to_string()));
    }

    let mut ascii = None;
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut data_line = 2;
    for (line, text) in lines {
        data_line = line + 1;
        if text.is_empty() || text.starts_with("comment") || text.starts_with("obj_info") {
            continue;
        }
        if text == "end_header" {
            break;
        }
        let toks: Vec<&str> = text.split_whitespace().collect();
        match toks[0] {
            "format" => {
                if toks.len() != 3 {
                    return Err(Error::parse(line, "malformed format line".to_string()));
                }
                ascii = Some(match toks[1] {
                    "ascii" => true,
                    "binary_little_endian" => false,
                    "binary_big_endian" => {
                        return Err(Error::parse(
                            line,
                            "big-endian ply is not supported".to_string(),
                        ))
                    }
                    other => {
                        return Err(Error::parse(line, format!("unknown ply format '{other}'")))
                    }
                });
            }
            "element" => {
                if toks.len() != 3 {
                    return Err(Error::parse(line, "malformed element line".to_string()));
                }
                let count: usize = toks[2].parse().map_err(|_| {
                    Error::parse(line, format!("invalid element count '{}'", toks[2]))
                })?;
                elements.push(PlyElement {
                    name: toks[1].to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            "property" => {
                let el = elements.last_mut().ok_or_else(|| {
                    Error::parse(line, "property before any element".to_string())
                })?;
                let prop = if toks.get(1) == Some(&"list") {
                    if toks.len() != 5 {
                        return Err(Error::parse(line, "malformed list property".to_string()));
                    }
                    PlyProp::List {
                        name: toks[4].to_string(),
                        count: Scalar::from_name(toks[2], line)?,
                        item: Scalar::from_name(toks[3], line)?,
                    }
                } else {
                    if toks.len() != 3 {
                        return Err(Error::parse(line, "malformed property line".to_string()));
                    }
                    PlyProp::Scalar {
                        name: toks[2].to_string(),
                        ty: Scalar::from_name(toks[1], line)?,
                    }
                };
                if el.props.iter().any(|p| p.name() == prop.name()) {
                    return Err(Error::parse(
                        line,
                        format!("duplicate property '{}'", prop.name()),
                    ));
                }
                el.props.push(prop);
            }
            other => {
                return Err(Error::parse(
                    line,
                    format!("unknown ply header keyword '{other}'"),
                ))
            }
        }
    }
    let ascii = ascii
        .ok_or_else(|| Error::parse(0, "ply header has no format line".to_string()))?;
    Ok((
        PlyHeader {
            ascii,
            elements,
            data_line,
        },
        payload,
    ))
}

/// One parsed element row: scalar values by property position, list values
/// flattened per list property.
enum RowValue {
    Scalar(f64),
    List(Vec<f64>),
}

/// Streams ply payload rows element by element, ascii or binary.
struct PlyReader<'a> {
    ascii: bool,
    // ascii state
    lines: Vec<(usize, &'a str)>,
    next_line: usize,
    // binary state
    bytes: &'a [u8],
    offset: usize,
    data_line: usize,
}

impl<'a> PlyReader<'a> {
    fn new(header: &PlyHeader, payload: &'a [u8]) -> Result<PlyReader<'a>> {
        let mut lines = Vec::new();
        if header.ascii {
            let text = std::str::from_utf8(payload).map_err(|e| {
                Error::parse(header.data_line, format!("ply data is not valid utf-8: {e}"))
            })?;
            for (i, raw) in text.lines().enumerate() {
                let t = raw.trim();
                if !t.is_empty() {
                    lines.push((header.data_line + i, t));
                }
            }
        }
        Ok(PlyReader {
            ascii: header.ascii,
            lines,
            next_line: 0,
            bytes: payload,
            offset: 0,
            data_line: header.data_line,
        })
    }

    fn take_bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.offset + n > self.bytes.len() {
            return Err(Error::parse(
                self.data_line,
                format!("ply data truncated at byte {}", self.offset),
            ));
        }
        let s = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(s)
    }

    fn read_row(&mut self, el: &PlyElement) -> Result<(usize, Vec<RowValue>)> {
        let mut row = Vec::with_capacity(el.props.len());
        if self.ascii {
            let (line, text) = *self.lines.get(self.next_line).ok_or_else(|| {
                Error::parse(
                    self.data_line,
                    format!("missing data rows for element '{}'", el.name),
                )
            })?;
            self.next_line += 1;
            let mut toks = text.split_whitespace();
            for prop in &el.props {
                match prop {
                    PlyProp::Scalar { name, .. } => {
                        let tok = toks.next().ok_or_else(|| {
                            Error::parse(line, format!("missing value for '{name}'"))
                        })?;
                        row.push(RowValue::Scalar(parse_float(tok, line, name)?));
                    }
                    PlyProp::List { name, .. } => {
                        let tok = toks.next().ok_or_else(|| {
                            Error::parse(line, format!("missing count for '{name}'"))
                        })?;
                        let n: usize = tok.parse().map_err(|_| {
                            Error::parse(line, format!("invalid list count '{tok}'"))
                        })?;
                        let mut items = Vec::with_capacity(n);
                        for _ in 0..n {
                            let tok = toks.next().ok_or_else(|| {
                                Error::parse(line, format!("list '{name}' is short"))
                            })?;
                            items.push(parse_float(tok, line, name)?);
                        }
                        row.push(RowValue::List(items));
                    }
                }
            }
            if toks.next().is_some() {
                return Err(Error::parse(line, "extra values on data row".to_string()));
            }
            Ok((line, row))
        } else {
            for prop in &el.props {
                match prop {
                    PlyProp::Scalar { ty, .. } => {
                        let b = self.take_bytes(ty.size())?;
                        row.push(RowValue::Scalar(ty.decode(b)));
                    }
                    PlyProp::List { count, item, .. } => {
                        let b = self.take_bytes(count.size())?;
                        let n = count.decode(b);
                        if !(n >= 0.0 && n.fract() == 0.0 && n <= 1e9) {
                            return Err(Error::parse(
                                self.data_line,
                                format!("invalid list count {n}"),
                            ));
                        }
                        let n = n as usize;
                        let mut items = Vec::with_capacity(n);
                        for _ in 0..n {
                            let b = self.take_bytes(item.size())?;
                            items.push(item.decode(b));
                        }
                        row.push(RowValue::List(items));
                    }
                }
            }
            Ok((self.data_line, row))
        }
    }
}

fn ply_xyz_positions(el: &PlyElement) -> Result<[usize; 3]> {
    let mut pos = [usize::MAX; 3];
    for (i, p) in el.props.iter().enumerate() {
        match p {
            PlyProp::Scalar { name, .. } => match name.as_str() {
                "x" => pos[0] = i,
                "y" => pos[1] = i,
                "z" => pos[2] = i,
                _ => {}
            },
            PlyProp::List { .. } => {}
        }
    }
    if pos.contains(&usize::MAX) {
        return Err(Error::parse(
            0,
            "vertex element lacks x/y/z properties".to_string(),
        ));
    }
    Ok(pos)
}

fn parse_ply(bytes: &[u8], want_faces: bool) -> Result<(PointSet, Vec<[usize; 3]>)> {
    let (header, payload) = parse_ply_header(bytes)?;
    let mut reader = PlyReader::new(&header, payload)?;
    let mut points = Vec::new();
    let mut faces = Vec::new();
    let mut seen_vertex = false;

    for el in &header.elements {
        match el.name.as_str() {
            "vertex" => {
                seen_vertex = true;
                let pos = ply_xyz_positions(el)?;
                points.reserve(el.count);
                for _ in 0..el.count {
                    let (line, row) = reader.read_row(el)?;
                    let coord = |i: usize| -> Result<f64> {
                        match row[i] {
                            RowValue::Scalar(v) if v.is_finite() => Ok(v),
                            RowValue::Scalar(_) => Err(non_finite(line, "coordinate")),
                            RowValue::List(_) => {
                                Err(Error::parse(line, "coordinate is a list".to_string()))
                            }
                        }
                    };
                    points.push(Point3::new(coord(pos[0])?, coord(pos[1])?, coord(pos[2])?));
                }
            }
            "face" if want_faces => {
                let list_pos = el
                    .props
                    .iter()
                    .position(|p| {
                        matches!(p, PlyProp::List { name, .. }
                            if name == "vertex_indices" || name == "vertex_index")
                    })
                    .ok_or_else(|| {
                        Error::parse(0, "face element lacks a vertex index list".to_string())
                    })?;
                for _ in 0..el.count {
                    let (line, row) = reader.read_row(el)?;
                    let RowValue::List(items) = &row[list_pos] else {
                        return Err(Error::parse(line, "face indices missing".to_string()));
                    };
                    append_fan(&mut faces, items, line)?;
                }
            }
            _ => {
                // Unknown (or unwanted) element: consume and discard its rows.
                for _ in 0..el.count {
                    reader.read_row(el)?;
                }
            }
        }
    }
    if !seen_vertex {
        return Err(Error::parse(0, "ply file has no vertex element".to_string()));
    }
    Ok((PointSet::new(points), faces))
}

/// Triangulates one polygon's index list as a fan around its first vertex.
fn append_fan(faces: &mut Vec<[usize; 3]>, items: &[f64], line: usize) -> Result<()> {
    if items.len() < 3 {
        return Err(Error::parse(
            line,
            format!("face needs at least 3 indices, got {}", items.len()),
        ));
    }
    let as_index = |v: f64| -> Result<usize> {
        if v >= 0.0 && v.fract() == 0.0 && v <= 1e12 {
            Ok(v as usize)
        } else {
            Err(Error::parse(line, format!("invalid vertex index {v}")))
        }
    };
    let anchor = as_index(items[0])?;
    for w in items[1..].windows(2) {
        faces.push([anchor, as_index(w[0])?, as_index(w[1])?]);
    }
    Ok(())
}

/// Vertex positions of a ply file; any face data is ignored.
pub fn parse_ply_pointset(bytes: &[u8]) -> Result<PointSet> {
    Ok(parse_ply(bytes, false)?.0)
}

/// Vertices and fan-triangulated faces of a ply file.
pub fn parse_ply_mesh(bytes: &[u8]) -> Result<Mesh> {
    let (points, faces) = parse_ply(bytes, true)?;
    Mesh::new(points.points, faces).map_err(|e| match e {
        Error::InvalidParameter(msg) => Error::parse(0, msg),
        other => other,
    })
}

pub fn format_ply_pointset(set: &PointSet) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "ply");
    let _ = writeln!(out, "format ascii 1.0");
    let _ = writeln!(out, "element vertex {}", set.len());
    let _ = writeln!(out, "property double x");
    let _ = writeln!(out, "property double y");
    let _ = writeln!(out, "property double z");
    let _ = writeln!(out, "end_header");
    for p in set.as_slice() {
        let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
    }
    out
}

// --- obj ---

fn parse_obj(bytes: &[u8], want_faces: bool) -> Result<(Vec<Point3>, Vec<[usize; 3]>)> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| Error::parse(0, format!("file is not valid utf-8: {e}")))?;
    let mut vertices: Vec<Point3> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut toks = trimmed.split_whitespace();
        match toks.next().unwrap() {
            "v" => {
                let rest: Vec<&str> = toks.collect();
                // Either x y z or x y z w; the weight is ignored.
                if rest.len() != 3 && rest.len() != 4 {
                    return Err(Error::parse(
                        line,
                        format!("vertex needs 3 coordinates, found {}", rest.len()),
                    ));
                }
                vertices.push(Point3::new(
                    parse_float(rest[0], line, "coordinate")?,
                    parse_float(rest[1], line, "coordinate")?,
                    parse_float(rest[2], line, "coordinate")?,
                ));
            }
            "f" if want_faces => {
                let mut indices: Vec<f64> = Vec::new();
                for tok in toks {
                    // Texture and normal references sit after slashes.
                    let first = tok.split('/').next().unwrap_or("");
                    let v: i64 = first.parse().map_err(|_| {
                        Error::parse(line, format!("invalid face index '{tok}'"))
                    })?;
                    let resolved = if v > 0 {
                        (v - 1) as usize
                    } else if v < 0 {
                        let back = (-v) as usize;
                        if back > vertices.len() {
                            return Err(Error::parse(
                                line,
                                format!("negative index {v} reaches before the first vertex"),
                            ));
                        }
                        vertices.len() - back
                    } else {
                        return Err(Error::parse(line, "face index 0 is invalid".to_string()));
                    };
                    indices.push(resolved as f64);
                }
                append_fan(&mut faces, &indices, line)?;
            }
            // Everything else (vn, vt, g, o, s, usemtl, mtllib, f when only
            // vertices are wanted, ...) is irrelevant here.
            _ => {}
        }
    }
    Ok((vertices, faces))
}

/// The `v` records of an obj file, in file order.
pub fn parse_obj_pointset(bytes: &[u8]) -> Result<PointSet> {
    Ok(PointSet::new(parse_obj(bytes, false)?.0))
}

/// Vertices and fan-triangulated `f` records of an obj file. Indices may be
/// 1-based positive or negative (relative to the vertices seen so far).
pub fn parse_obj_mesh(bytes: &[u8]) -> Result<Mesh> {
    let (vertices, faces) = parse_obj(bytes, true)?;
    Mesh::new(vertices, faces).map_err(|e| match e {
        Error::InvalidParameter(msg) => Error::parse(0, msg),
        other => other,
    })
}

pub fn format_obj_pointset(set: &PointSet) -> String {
    let mut out = String::new();
    for p in set.as_slice() {
        let _ = writeln!(out, "v {} {} {}", p.x, p.y, p.z);
    }
    out
}

// --- pgm ---

/// Netpbm grayscale image, P2 (ASCII) or P5 (binary). A pixel is set in the
/// mask iff its sample value is nonzero. Binary samples are one byte up to
/// maxval 255 and two big-endian bytes beyond, per the format.
pub fn parse_pgm_mask(bytes: &[u8]) -> Result<PixelMask> {
    // Header tokens (magic, width, height, maxval) with '#' comments, all
    // hand-walked because the payload may be binary.
    let mut pos = 0usize;
    let mut line = 1usize;

    let next_token = |pos: &mut usize, line: &mut usize| -> Result<String> {
        loop {
            while *pos < bytes.len() {
                let b = bytes[*pos];
                if b == b'\n' {
                    *line += 1;
                    *pos += 1;
                } else if b.is_ascii_whitespace() {
                    *pos += 1;
                } else {
                    break;
                }
            }
            if *pos >= bytes.len() {
                return Err(Error::parse(*line, "unexpected end of pgm header".to_string()));
            }
            if bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            let start = *pos;
            while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            let tok = std::str::from_utf8(&bytes[start..*pos])
                .map_err(|_| Error::parse(*line, "pgm header is not ascii".to_string()))?;
            return Ok(tok.to_string());
        }
    };

    let magic = next_token(&mut pos, &mut line)?;
    let binary = match magic.as_str() {
        "P2" => false,
        "P5" => true,
        other => {
            return Err(Error::parse(
                line,
                format!("unsupported pgm magic '{other}'"),
            ))
        }
    };
    let parse_dim = |tok: String, line: usize, what: &str| -> Result<usize> {
        let v: usize = tok
            .parse()
            .map_err(|_| Error::parse(line, format!("invalid {what} '{tok}'")))?;
        if v == 0 {
            return Err(Error::parse(line, format!("{what} must be at least 1")));
        }
        Ok(v)
    };
    let width = parse_dim(next_token(&mut pos, &mut line)?, line, "width")?;
    let height = parse_dim(next_token(&mut pos, &mut line)?, line, "height")?;
    let maxval: u32 = next_token(&mut pos, &mut line)?
        .parse()
        .map_err(|_| Error::parse(line, "invalid maxval".to_string()))?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::parse(
            line,
            format!("maxval must be in 1..=65535, got {maxval}"),
        ));
    }

    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::parse(line, "image size overflows".to_string()))?;
    let mut data = Vec::with_capacity(n);

    if binary {
        // Exactly one whitespace byte separates maxval from the samples.
        if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
            return Err(Error::parse(
                line,
                "missing separator before binary samples".to_string(),
            ));
        }
        pos += 1;
        let per = if maxval > 255 { 2 } else { 1 };
        if bytes.len() - pos < n * per {
            return Err(Error::parse(
                line,
                format!(
                    "pgm data truncated: need {} bytes, have {}",
                    n * per,
                    bytes.len() - pos
                ),
            ));
        }
        for i in 0..n {
            let v = if per == 2 {
                u16::from_be_bytes([bytes[pos + 2 * i], bytes[pos + 2 * i + 1]]) as u32
            } else {
                bytes[pos + i] as u32
            };
            if v > maxval {
                return Err(Error::parse(
                    line,
                    format!("sample {v} exceeds maxval {maxval}"),
                ));
            }
            data.push(v > 0);
        }
    } else {
        for _ in 0..n {
            let tok = next_token(&mut pos, &mut line)?;
            let v: u32 = tok
                .parse()
                .map_err(|_| Error::parse(line, format!("invalid sample '{tok}'")))?;
            if v > maxval {
                return Err(Error::parse(
                    line,
                    format!("sample {v} exceeds maxval {maxval}"),
                ));
            }
            data.push(v > 0);
        }
        // Anything left must be whitespace or a trailing comment.
        while pos < bytes.len() {
            let b = bytes[pos];
            if b == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                pos += 1;
            } else {
                return Err(Error::parse(line, "extra data after samples".to_string()));
            }
        }
    }
    PixelMask::from_data(width, height, data)
}

// --- key = value dialect ---

/// `key = value` lines with `#` comments; keys must be unique. Returns
/// `(line, key, value)` in file order. The caller knows which keys exist.
pub fn parse_kv(bytes: &[u8]) -> Result<Vec<(usize, String, String)>> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| Error::parse(0, format!("file is not valid utf-8: {e}")))?;
    let mut out: Vec<(usize, String, String)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let Some((key, value)) = trimmed.split_once('=') else {
            return Err(Error::parse(line, format!("expected 'key = value', got '{trimmed}'")));
        };
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() {
            return Err(Error::parse(line, "empty key".to_string()));
        }
        if out.iter().any(|(_, k, _)| k == key) {
            return Err(Error::parse(line, format!("duplicate key '{key}'")));
        }
        out.push((line, key.to_string(), value.to_string()));
    }
    Ok(out)
}

/// Camera description: required keys fx, fy, cx, cy, width, height.
pub fn parse_intrinsics(bytes: &[u8]) -> Result<CameraIntrinsics> {
    let entries = parse_kv(bytes)?;
    let mut fx = None;
    let mut fy = None;
    let mut cx = None;
    let mut cy = None;
    let mut width = None;
    let mut height = None;
    for (line, key, value) in &entries {
        match key.as_str() {
            "fx" => fx = Some(parse_float(value, *line, "fx")?),
            "fy" => fy = Some(parse_float(value, *line, "fy")?),
            "cx" => cx = Some(parse_float(value, *line, "cx")?),
            "cy" => cy = Some(parse_float(value, *line, "cy")?),
            "width" => {
                width = Some(value.parse::<usize>().map_err(|_| {
                    Error::parse(*line, format!("invalid width '{value}'"))
                })?)
            }
            "height" => {
                height = Some(value.parse::<usize>().map_err(|_| {
                    Error::parse(*line, format!("invalid height '{value}'"))
                })?)
            }
            other => {
                return Err(Error::parse(
                    *line,
                    format!("unknown intrinsics key '{other}'"),
                ))
            }
        }
    }
    let need = |o: Option<f64>, name: &str| {
        o.ok_or_else(|| Error::parse(0, format!("missing intrinsics key '{name}'")))
    };
    let needu = |o: Option<usize>, name: &str| {
        o.ok_or_else(|| Error::parse(0, format!("missing intrinsics key '{name}'")))
    };
    CameraIntrinsics::new(
        need(fx, "fx")?,
        need(fy, "fy")?,
        need(cx, "cx")?,
        need(cy, "cy")?,
        needu(width, "width")?,
        needu(height, "height")?,
    )
}

pub fn format_intrinsics(k: &CameraIntrinsics) -> String {
    format!(
        "fx = {}\nfy = {}\ncx = {}\ncy = {}\nwidth = {}\nheight = {}\n",
        k.fx, k.fy, k.cx, k.cy, k.width, k.height
    )
}

// --- transform document ---

/// An alignment result as written to disk: the transform itself plus the
/// run's provenance (convergence, energy, per-level trace, config echo).
#[derive(Clone, Debug, PartialEq)]
pub struct TransformDoc {
    pub transform: SimilarityTransform,
    pub converged: bool,
    pub final_energy: f64,
    pub levels: Vec<LevelRecord>,
    /// `key = value` pairs echoing the configuration that produced this.
    pub config: Vec<(String, String)>,
}

impl TransformDoc {
    pub fn bare(transform: SimilarityTransform) -> TransformDoc {
        TransformDoc {
            transform,
            converged: true,
            final_energy: 0.0,
            levels: Vec::new(),
            config: Vec::new(),
        }
    }
}

pub fn format_transform_doc(doc: &TransformDoc) -> String {
    let q = doc.transform.rotation();
    let t = doc.transform.translation;
    let m = doc.transform.to_matrix();
    let mut out = String::new();
    let _ = writeln!(out, "# rigid/similarity alignment result");
    let _ = writeln!(out, "quaternion = {} {} {} {}", q.w, q.x, q.y, q.z);
    let _ = writeln!(out, "translation = {} {} {}", t.x, t.y, t.z);
    let _ = writeln!(out, "scale = {}", doc.transform.scale());
    let mut flat = String::new();
    for row in &m {
        for v in row {
            if !flat.is_empty() {
                flat.push(' ');
            }
            let _ = write!(flat, "{v}");
        }
    }
    let _ = writeln!(out, "matrix = {flat}");
    let _ = writeln!(out, "converged = {}", doc.converged);
    let _ = writeln!(out, "final_energy = {}", doc.final_energy);
    for l in &doc.levels {
        let _ = writeln!(
            out,
            "level = {} {} {} {} {} {} {} {}",
            l.sigma,
            l.source_count,
            l.target_count,
            l.iterations,
            l.accepted_steps,
            l.initial_energy,
            l.final_energy,
            if l.exhausted { 1 } else { 0 },
        );
    }
    for (k, v) in &doc.config {
        let _ = writeln!(out, "config:{k} = {v}");
    }
    out
}

pub fn parse_transform_doc(bytes: &[u8]) -> Result<TransformDoc> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| Error::parse(0, format!("file is not valid utf-8: {e}")))?;
    let mut quaternion = None;
    let mut translation = None;
    let mut scale = None;
    let mut matrix: Option<Vec<f64>> = None;
    let mut converged = None;
    let mut final_energy = None;
    let mut levels = Vec::new();
    let mut config = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let Some((key, value)) = trimmed.split_once('=') else {
            return Err(Error::parse(line, format!("expected 'key = value', got '{trimmed}'")));
        };
        let key = key.trim();
        let value = value.trim();
        let floats = |n: usize| -> Result<Vec<f64>> {
            let toks: Vec<&str> = value.split_whitespace().collect();
            if toks.len() != n {
                return Err(Error::parse(
                    line,
                    format!("'{key}' needs {n} values, found {}", toks.len()),
                ));
            }
            toks.iter().map(|t| parse_float(t, line, key)).collect()
        };
        let once = |slot_empty: bool| -> Result<()> {
            if !slot_empty {
                return Err(Error::parse(line, format!("duplicate key '{key}'")));
            }
            Ok(())
        };
        match key {
            "quaternion" => {
                once(quaternion.is_none())?;
                let v = floats(4)?;
                quaternion = Some(Quaternion::new(v[0], v[1], v[2], v[3]));
            }
            "translation" => {
                once(translation.is_none())?;
                let v = floats(3)?;
                translation = Some(Point3::new(v[0], v[1], v[2]));
            }
            "scale" => {
                once(scale.is_none())?;
                scale = Some(parse_float(value, line, "scale")?);
            }
            "matrix" => {
                once(matrix.is_none())?;
                matrix = Some(floats(16)?);
            }
            "converged" => {
                once(converged.is_none())?;
                converged = Some(match value {
                    "true" => true,
                    "false" => false,
                    other => {
                        return Err(Error::parse(
                            line,
                            format!("converged must be true or false, got '{other}'"),
                        ))
                    }
                });
            }
            "final_energy" => {
                once(final_energy.is_none())?;
                final_energy = Some(parse_float(value, line, "final_energy")?);
            }
            "level" => {
                let toks: Vec<&str> = value.split_whitespace().collect();
                if toks.len() != 8 {
                    return Err(Error::parse(
                        line,
                        format!("level rows carry 8 fields, found {}", toks.len()),
                    ));
                }
                let int = |tok: &str| -> Result<usize> {
                    tok.parse()
                        .map_err(|_| Error::parse(line, format!("invalid count '{tok}'")))
                };
                levels.push(LevelRecord {
                    sigma: parse_float(toks[0], line, "sigma")?,
                    source_count: int(toks[1])?,
                    target_count: int(toks[2])?,
                    iterations: int(toks[3])?,
                    accepted_steps: int(toks[4])?,
                    initial_energy: parse_float(toks[5], line, "initial_energy")?,
                    final_energy: parse_float(toks[6], line, "final_energy")?,
                    exhausted: match toks[7] {
                        "0" => false,
                        "1" => true,
                        other => {
                            return Err(Error::parse(
                                line,
                                format!("exhausted flag must be 0 or 1, got '{other}'"),
                            ))
                        }
                    },
                });
            }
            other => {
                if let Some(name) = other.strip_prefix("config:") {
                    config.push((name.to_string(), value.to_string()));
                } else {
                    return Err(Error::parse(
                        line,
                        format!("unknown transform key '{other}'"),
                    ));
                }
            }
        }
    }

    let quaternion =
        quaternion.ok_or_else(|| Error::parse(0, "missing 'quaternion'".to_string()))?;
    let translation =
        translation.ok_or_else(|| Error::parse(0, "missing 'translation'".to_string()))?;
    let scale = scale.ok_or_else(|| Error::parse(0, "missing 'scale'".to_string()))?;
    let transform = SimilarityTransform::new(quaternion, translation, scale)?;

    if let Some(m) = matrix {
        // The matrix is redundant with the fields above; a document where
        // the two disagree has been edited inconsistently and is rejected
        // instead of second-guessed.
        let own = transform.to_matrix();
        for (i, v) in m.iter().enumerate() {
            let mine = own[i / 4][i % 4];
            if (v - mine).abs() > 1e-9 * (1.0 + v.abs()) {
                return Err(Error::parse(
                    0,
                    format!(
                        "matrix entry {i} is {v} but the quaternion/translation/scale give {mine}"
                    ),
                ));
            }
        }
    }

    Ok(TransformDoc {
        transform,
        converged: converged.unwrap_or(true),
        final_energy: final_energy.unwrap_or(0.0),
        levels,
        config,
    })
}

// --- sweep csv ---

/// One row per trial under an `axis,angle_deg,trial,mean_error,success`
/// header; success is 1 or 0.
pub fn format_sweep_csv(report: &SweepReport) -> String {
    let mut out = String::from("axis,angle_deg,trial,mean_error,success\n");
    for t in &report.trials {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            t.axis,
            t.angle_degrees,
            t.trial,
            t.mean_error,
            if t.success { 1 } else { 0 },
        );
    }
    out
}

// --- path wrappers ---

/// Reads a point cloud; an empty result is rejected because nothing
/// downstream can use it.
pub fn read_pointset(path: impl AsRef<Path>, format: PointFormat) -> Result<PointSet> {
    let bytes = std::fs::read(path)?;
    let set = match format {
        PointFormat::Xyz => parse_xyz(&bytes)?,
        PointFormat::Ply => parse_ply_pointset(&bytes)?,
        PointFormat::ObjVertices => parse_obj_pointset(&bytes)?,
    };
    if set.is_empty() {
        return Err(Error::DegenerateInput("file contains no points".into()));
    }
    Ok(set)
}

/// Reads a mesh. A mesh with no faces is allowed here; the voxelizer rejects
/// it at the point of use.
pub fn read_mesh(path: impl AsRef<Path>, format: MeshFormat) -> Result<Mesh> {
    let bytes = std::fs::read(path)?;
    match format {
        MeshFormat::Obj => parse_obj_mesh(&bytes),
        MeshFormat::Ply => parse_ply_mesh(&bytes),
    }
}

pub fn write_pointset(
    path: impl AsRef<Path>,
    set: &PointSet,
    format: PointFormat,
) -> Result<()> {
    let text = match format {
        PointFormat::Xyz => format_xyz(set),
        PointFormat::Ply => format_ply_pointset(set),
        PointFormat::ObjVertices => format_obj_pointset(set),
    };
    std::fs::write(path, text)?;
    Ok(())
}

pub fn write_transform(path: impl AsRef<Path>, doc: &TransformDoc) -> Result<()> {
    std::fs::write(path, format_transform_doc(doc))?;
    Ok(())
}

pub fn read_transform(path: impl AsRef<Path>) -> Result<TransformDoc> {
    let bytes = std::fs::read(path)?;
    parse_transform_doc(&bytes)
}

pub fn read_intrinsics(path: impl AsRef<Path>) -> Result<CameraIntrinsics> {
    let bytes = std::fs::read(path)?;
    parse_intrinsics(&bytes)
}

pub fn read_pgm_mask(path: impl AsRef<Path>) -> Result<PixelMask> {
    let bytes = std::fs::read(path)?;
    parse_pgm_mask(&bytes)
}

pub fn write_sweep_csv(path: impl AsRef<Path>, report: &SweepReport) -> Result<()> {
    std::fs::write(path, format_sweep_csv(report))?;
    Ok(())
}
