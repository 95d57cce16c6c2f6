//! PLY reader/writer for colored vertex clouds.
//!
//! Reads `ascii` and `binary_little_endian` files; vertex properties other
//! than position and color (normals, confidences, list properties) are
//! skipped. Writes `binary_little_endian` with float32 positions.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::ColoredPointCloud;
use crate::error::{Error, Result};

/// Result of [`load_ply`]: the finite vertices plus how many were dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct PlyLoad {
    pub cloud: ColoredPointCloud,
    pub declared: usize,
    pub dropped_nonfinite: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Encoding {
    Ascii,
    BinaryLe,
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
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum PropKind {
    Scalar(Scalar),
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Property {
    name: String,
    kind: PropKind,
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

impl Element {
    /// Byte stride when every property is a scalar.
    fn fixed_stride(&self) -> Option<usize> {
        self.props
            .iter()
            .map(|p| match p.kind {
                PropKind::Scalar(s) => Some(s.size()),
                PropKind::List { .. } => None,
            })
            .sum()
    }
}

struct Header {
    encoding: Encoding,
    elements: Vec<Element>,
    /// Byte offset of the body.
    body_start: usize,
    /// Number of header lines, so ASCII body errors can report file lines.
    lines: usize,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut pos = 0;
    let mut line_no = 0;
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let rest = &bytes[pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| parse_err(line_no + 1, "unterminated header"))?;
        line_no += 1;
        let line = std::str::from_utf8(&rest[..end])
            .map_err(|_| parse_err(line_no, "header is not UTF-8"))?
            .trim_end_matches('\r');
        pos += end + 1;
        let mut tok = line.split_whitespace();
        let Some(keyword) = tok.next() else {
            continue;
        };
        if line_no == 1 {
            if keyword != "ply" {
                return Err(parse_err(1, "missing `ply` magic"));
            }
            continue;
        }
        match keyword {
            "format" => {
                encoding = Some(match tok.next() {
                    Some("ascii") => Encoding::Ascii,
                    Some("binary_little_endian") => Encoding::BinaryLe,
                    Some("binary_big_endian") => {
                        return Err(Error::Format(
                            "binary_big_endian PLY is not supported; convert to little endian".into(),
                        ))
                    }
                    other => return Err(parse_err(line_no, format!("unknown format {other:?}"))),
                });
            }
            "comment" | "obj_info" => {}
            "element" => {
                let name = tok.next().ok_or_else(|| parse_err(line_no, "element without name"))?;
                let count = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| parse_err(line_no, "element count is not an integer"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            "property" => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(line_no, "property before any element"))?;
                let ty = tok.next().ok_or_else(|| parse_err(line_no, "property without type"))?;
                let kind = if ty == "list" {
                    let count = tok.next().and_then(Scalar::parse);
                    let item = tok.next().and_then(Scalar::parse);
                    match (count, item) {
                        (Some(count), Some(item)) => PropKind::List { count, item },
                        _ => return Err(parse_err(line_no, "bad list property types")),
                    }
                } else {
                    PropKind::Scalar(
                        Scalar::parse(ty).ok_or_else(|| parse_err(line_no, format!("unknown type `{ty}`")))?,
                    )
                };
                let name = tok.next().ok_or_else(|| parse_err(line_no, "property without name"))?;
                element.props.push(Property {
                    name: name.to_string(),
                    kind,
                });
            }
            "end_header" => break,
            other => return Err(parse_err(line_no, format!("unexpected keyword `{other}`"))),
        }
    }
    let encoding = encoding.ok_or_else(|| parse_err(line_no, "header has no format line"))?;
    Ok(Header {
        encoding,
        elements,
        body_start: pos,
        lines: line_no,
    })
}

/// Where the six required values sit within a vertex record.
struct VertexLayout {
    xyz: [usize; 3],
    rgb: [usize; 3],
}

fn vertex_layout(el: &Element) -> Result<VertexLayout> {
    let find = |name: &str, allowed: &[Scalar]| -> Result<usize> {
        let idx = el
            .props
            .iter()
            .position(|p| p.name == name)
            .ok_or_else(|| Error::Schema(format!("vertex element lacks property `{name}`")))?;
        match el.props[idx].kind {
            PropKind::Scalar(s) if allowed.contains(&s) => Ok(idx),
            _ => Err(Error::Schema(format!(
                "vertex property `{name}` must be one of {allowed:?}"
            ))),
        }
    };
    let float = [Scalar::F32, Scalar::F64];
    let byte = [Scalar::U8];
    Ok(VertexLayout {
        xyz: [find("x", &float)?, find("y", &float)?, find("z", &float)?],
        rgb: [find("red", &byte)?, find("green", &byte)?, find("blue", &byte)?],
    })
}

struct Sink {
    cloud: ColoredPointCloud,
    dropped: usize,
}

impl Sink {
    fn accept(&mut self, values: &[f64], layout: &VertexLayout) {
        let p = layout.xyz.map(|i| values[i]);
        if !p.iter().all(|c| c.is_finite()) {
            self.dropped += 1;
            return;
        }
        let c = layout.rgb.map(|i| values[i] as u8);
        // finiteness checked above
        let _ = self.cloud.push(p, c);
    }
}

fn truncated(expected: usize, actual: usize) -> Error {
    Error::Truncated {
        expected: expected as u64,
        actual: actual as u64,
    }
}

fn read_binary(body: &[u8], header: &Header) -> Result<Sink> {
    let mut sink = Sink {
        cloud: ColoredPointCloud::default(),
        dropped: 0,
    };
    let mut pos = 0usize;
    for el in &header.elements {
        let layout = if el.name == "vertex" {
            sink.cloud = ColoredPointCloud::with_capacity(el.count);
            Some(vertex_layout(el)?)
        } else {
            None
        };
        if let Some(stride) = el.fixed_stride() {
            let need = stride * el.count;
            if body.len() < pos + need {
                return Err(truncated(pos + need, body.len()));
            }
            if let Some(layout) = &layout {
                let mut offsets = Vec::with_capacity(el.props.len());
                let mut off = 0;
                for p in &el.props {
                    offsets.push(off);
                    if let PropKind::Scalar(s) = p.kind {
                        off += s.size();
                    }
                }
                let mut values = vec![0.0; el.props.len()];
                for rec in body[pos..pos + need].chunks_exact(stride) {
                    for i in layout.xyz.iter().chain(&layout.rgb) {
                        if let PropKind::Scalar(s) = el.props[*i].kind {
                            values[*i] = s.read_le(&rec[offsets[*i]..]);
                        }
                    }
                    sink.accept(&values, layout);
                }
            }
            pos += need;
            continue;
        }
        let mut values = vec![0.0; el.props.len()];
        for _ in 0..el.count {
            for (i, p) in el.props.iter().enumerate() {
                match p.kind {
                    PropKind::Scalar(s) => {
                        if body.len() < pos + s.size() {
                            return Err(truncated(pos + s.size(), body.len()));
                        }
                        values[i] = s.read_le(&body[pos..]);
                        pos += s.size();
                    }
                    PropKind::List { count, item } => {
                        if body.len() < pos + count.size() {
                            return Err(truncated(pos + count.size(), body.len()));
                        }
                        let n = count.read_le(&body[pos..]) as usize;
                        pos += count.size() + n * item.size();
                        if body.len() < pos {
                            return Err(truncated(pos, body.len()));
                        }
                    }
                }
            }
            if let Some(layout) = &layout {
                sink.accept(&values, layout);
            }
        }
    }
    Ok(sink)
}

fn read_ascii(body: &[u8], header: &Header) -> Result<Sink> {
    let text = std::str::from_utf8(body).map_err(|_| parse_err(header.lines + 1, "body is not UTF-8"))?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (header.lines + 1 + i, l))
        .filter(|(_, l)| !l.trim().is_empty());
    let mut sink = Sink {
        cloud: ColoredPointCloud::default(),
        dropped: 0,
    };
    for el in &header.elements {
        let layout = if el.name == "vertex" {
            sink.cloud = ColoredPointCloud::with_capacity(el.count);
            Some(vertex_layout(el)?)
        } else {
            None
        };
        let mut values = vec![0.0; el.props.len()];
        for rec in 0..el.count {
            let (line_no, line) = lines.next().ok_or(Error::TruncatedRecords {
                element: el.name.clone(),
                expected: el.count,
                actual: rec,
            })?;
            let mut tok = line.split_whitespace();
            let mut next = |what: &str| -> Result<f64> {
                let t = tok
                    .next()
                    .ok_or_else(|| parse_err(line_no, format!("missing value for `{what}`")))?;
                // PLY writers spell non-finite values several ways; all parse through f64.
                t.parse::<f64>()
                    .map_err(|_| parse_err(line_no, format!("`{t}` is not a number")))
            };
            for (i, p) in el.props.iter().enumerate() {
                match p.kind {
                    PropKind::Scalar(_) => values[i] = next(&p.name)?,
                    PropKind::List { .. } => {
                        let n = next(&p.name)? as usize;
                        for _ in 0..n {
                            next(&p.name)?;
                        }
                    }
                }
            }
            if let Some(layout) = &layout {
                sink.accept(&values, layout);
            }
        }
    }
    Ok(sink)
}

/// Parses a PLY document held in memory.
pub fn read_ply(bytes: &[u8]) -> Result<PlyLoad> {
    let header = parse_header(bytes)?;
    let declared = header
        .elements
        .iter()
        .find(|e| e.name == "vertex")
        .map(|e| e.count)
        .ok_or_else(|| Error::Schema("no `vertex` element".into()))?;
    let body = &bytes[header.body_start..];
    let sink = match header.encoding {
        Encoding::Ascii => read_ascii(body, &header)?,
        Encoding::BinaryLe => read_binary(body, &header)?,
    };
    Ok(PlyLoad {
        cloud: sink.cloud,
        declared,
        dropped_nonfinite: sink.dropped,
    })
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<PlyLoad> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    read_ply(&bytes)
}

/// Serializes `cloud` as binary little-endian PLY with float32 positions.
pub fn write_ply<W: Write>(cloud: &ColoredPointCloud, mut out: W) -> std::io::Result<()> {
    write!(
        out,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        cloud.len()
    )?;
    let mut rec = [0u8; 15];
    for (p, c) in cloud.points().iter().zip(cloud.colors()) {
        for k in 0..3 {
            rec[4 * k..4 * k + 4].copy_from_slice(&(p[k] as f32).to_le_bytes());
        }
        rec[12..].copy_from_slice(c);
        out.write_all(&rec)?;
    }
    out.flush()
}

pub fn save_ply(cloud: &ColoredPointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    File::create(path)
        .and_then(|f| write_ply(cloud, BufWriter::new(f)))
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const ASCII3: &str = "ply\nformat ascii 1.0\ncomment test\nelement vertex 3\n\
        property float x\nproperty float y\nproperty float z\n\
        property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n\
        0 0 0 255 0 0\n1 0 0 0 255 0\n0 1 0.5 0 0 255\n";

    #[test]
    fn reads_ascii() {
        let load = read_ply(ASCII3.as_bytes()).unwrap();
        assert_eq!(load.cloud.len(), 3);
        assert_eq!(load.declared, 3);
        assert_eq!(load.cloud.points()[2], [0.0, 1.0, 0.5]);
        assert_eq!(load.cloud.colors()[1], [0, 255, 0]);
    }

    #[test]
    fn reads_single_binary_vertex() {
        let mut bytes = b"ply\nformat binary_little_endian 1.0\nelement vertex 1\n\
            property float x\nproperty float y\nproperty float z\n\
            property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n"
            .to_vec();
        bytes.extend_from_slice(&[0u8; 12]);
        bytes.extend_from_slice(&[255, 0, 0]);
        let load = read_ply(&bytes).unwrap();
        assert_eq!(load.cloud.points(), &[[0.0, 0.0, 0.0]]);
        assert_eq!(load.cloud.colors(), &[[255, 0, 0]]);
    }

    #[test]
    fn drops_nonfinite_vertices() {
        let text = "ply\nformat ascii 1.0\nelement vertex 4\n\
            property double x\nproperty double y\nproperty double z\n\
            property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n\
            0 0 0 1 2 3\nnan 0 0 1 2 3\n1 1 1 1 2 3\n2 2 2 1 2 3\n";
        let load = read_ply(text.as_bytes()).unwrap();
        assert_eq!(load.cloud.len(), 3);
        assert_eq!(load.dropped_nonfinite, 1);
        assert_eq!(load.declared, 4);
    }

    #[test]
    fn skips_extra_properties_and_other_elements() {
        let mut bytes = b"ply\nformat binary_little_endian 1.0\n\
            element camera 1\nproperty float fx\nproperty list uchar int idx\n\
            element vertex 2\nproperty double x\nproperty float nx\nproperty double y\n\
            property double z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\n\
            property uchar alpha\n\
            element face 1\nproperty list uchar int vertex_indices\nend_header\n"
            .to_vec();
        // camera: fx + list of 2 ints
        bytes.extend_from_slice(&1.5f32.to_le_bytes());
        bytes.push(2);
        bytes.extend_from_slice(&[0u8; 8]);
        for (i, v) in [[1.0f64, 2.0, 3.0], [4.0, 5.0, 6.0]].iter().enumerate() {
            bytes.extend_from_slice(&v[0].to_le_bytes());
            bytes.extend_from_slice(&0.25f32.to_le_bytes());
            bytes.extend_from_slice(&v[1].to_le_bytes());
            bytes.extend_from_slice(&v[2].to_le_bytes());
            bytes.extend_from_slice(&[i as u8, 7, 9, 255]);
        }
        bytes.push(3);
        bytes.extend_from_slice(&[0u8; 12]);
        let load = read_ply(&bytes).unwrap();
        assert_eq!(load.cloud.points(), &[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        assert_eq!(load.cloud.colors(), &[[0, 7, 9], [1, 7, 9]]);
    }

    #[test]
    fn malformed_header_reports_line() {
        let text = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nbogus line\n";
        match read_ply(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_color_is_schema_error() {
        let text = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\n\
            property float y\nproperty float z\nend_header\n0 0 0\n";
        assert!(matches!(read_ply(text.as_bytes()), Err(Error::Schema(_))));
    }

    #[test]
    fn float_colors_are_schema_error() {
        let text = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\n\
            property float y\nproperty float z\nproperty float red\nproperty uchar green\n\
            property uchar blue\nend_header\n0 0 0 0 0 0\n";
        assert!(matches!(read_ply(text.as_bytes()), Err(Error::Schema(_))));
    }

    #[test]
    fn big_endian_rejected() {
        let text = "ply\nformat binary_big_endian 1.0\nelement vertex 0\nend_header\n";
        assert!(matches!(read_ply(text.as_bytes()), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_binary_names_byte_counts() {
        let cloud = ColoredPointCloud::new(vec![[1.0, 2.0, 3.0]; 4], vec![[1, 2, 3]; 4]).unwrap();
        let mut bytes = Vec::new();
        write_ply(&cloud, &mut bytes).unwrap();
        bytes.truncate(bytes.len() - 5);
        match read_ply(&bytes) {
            Err(Error::Truncated { expected, actual }) => {
                assert_eq!(expected, 60);
                assert_eq!(actual, 55);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_ascii() {
        let text = ASCII3.rsplit_once("0 1 0.5").unwrap().0;
        assert!(matches!(
            read_ply(text.as_bytes()),
            Err(Error::TruncatedRecords {
                expected: 3,
                actual: 2,
                ..
            })
        ));
    }

    #[test]
    fn empty_cloud_round_trip() {
        let mut bytes = Vec::new();
        write_ply(&ColoredPointCloud::default(), &mut bytes).unwrap();
        let load = read_ply(&bytes).unwrap();
        assert_eq!(load.declared, 0);
        assert!(load.cloud.is_empty());
    }
}
