//! Point-cloud file formats and atomic file writes.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{CartesianPoint, PointCloud};

/// Writes `bytes` to a temporary file next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Parses KITTI velodyne scans: little-endian `f32` quadruples `x y z reflectance`.
pub fn parse_kitti_bin(bytes: &[u8]) -> Result<PointCloud> {
    if !bytes.len().is_multiple_of(16) {
        return Err(Error::format(format!("KITTI scan length {} is not a multiple of 16", bytes.len())));
    }
    let f = |b: &[u8]| f64::from(f32::from_le_bytes(b.try_into().expect("4 bytes")));
    Ok(bytes.chunks_exact(16).map(|c| CartesianPoint::new(f(&c[0..4]), f(&c[4..8]), f(&c[8..12]))).collect())
}

pub fn read_kitti_bin(path: impl AsRef<Path>) -> Result<PointCloud> {
    parse_kitti_bin(&std::fs::read(path)?)
}

/// Writes coordinates as `f32` with zero reflectance.
pub fn write_kitti_bin(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let mut out = Vec::with_capacity(cloud.len() * 16);
    for p in cloud.iter() {
        for v in [p.x as f32, p.y as f32, p.z as f32, 0.0] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_atomic(path.as_ref(), &out)
}

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

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => f64::from(b[0] as i8),
            Self::U8 => f64::from(b[0]),
            Self::I16 => f64::from(i16::from_le_bytes([b[0], b[1]])),
            Self::U16 => f64::from(u16::from_le_bytes([b[0], b[1]])),
            Self::I32 => f64::from(i32::from_le_bytes(b[..4].try_into().expect("4 bytes"))),
            Self::U32 => f64::from(u32::from_le_bytes(b[..4].try_into().expect("4 bytes"))),
            Self::F32 => f64::from(f32::from_le_bytes(b[..4].try_into().expect("4 bytes"))),
            Self::F64 => f64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
        }
    }
}

struct Element {
    name: String,
    count: usize,
    /// `None` marks a list property.
    props: Vec<(String, Option<Scalar>)>,
}

struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
    body_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut pos = 0;
    let mut next_line = || -> Result<String> {
        let rest = &bytes[pos..];
        let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| Error::format("PLY header not terminated"))?;
        pos += end + 1;
        Ok(String::from_utf8_lossy(&rest[..end]).trim().to_string())
    };
    if next_line()? != "ply" {
        return Err(Error::format("missing PLY magic"));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let line = next_line()?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => format = Some(PlyFormat::Ascii),
            ["format", "binary_little_endian", _] => format = Some(PlyFormat::BinaryLittleEndian),
            ["format", other, ..] => return Err(Error::format(format!("unsupported PLY format {other}"))),
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| Error::format(format!("bad element count {count}")))?,
                props: Vec::new(),
            }),
            ["property", "list", _, _, name] => elements
                .last_mut()
                .ok_or_else(|| Error::format("property before element"))?
                .props
                .push((name.to_string(), None)),
            ["property", ty, name] => {
                let scalar = Scalar::parse(ty).ok_or_else(|| Error::format(format!("unknown PLY type {ty}")))?;
                elements
                    .last_mut()
                    .ok_or_else(|| Error::format("property before element"))?
                    .props
                    .push((name.to_string(), Some(scalar)));
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            _ => return Err(Error::format(format!("unexpected PLY header line '{line}'"))),
        }
    }
    let format = format.ok_or_else(|| Error::format("PLY format line missing"))?;
    Ok(Header { format, elements, body_offset: pos })
}

/// Parses the `vertex` element's `x`, `y`, `z` properties; other properties
/// and elements are skipped.
pub fn parse_ply(bytes: &[u8]) -> Result<PointCloud> {
    let header = parse_header(bytes)?;
    let vidx = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| Error::format("PLY has no vertex element"))?;
    let vertex = &header.elements[vidx];
    let find = |axis: &str| {
        vertex
            .props
            .iter()
            .position(|(n, _)| n == axis)
            .ok_or_else(|| Error::format(format!("PLY vertex lacks property {axis}")))
    };
    let axes = [find("x")?, find("y")?, find("z")?];
    let body = &bytes[header.body_offset..];

    match header.format {
        PlyFormat::Ascii => {
            let text = std::str::from_utf8(body).map_err(|_| Error::format("PLY body is not UTF-8"))?;
            let mut lines = text.lines().filter(|l| !l.trim().is_empty());
            for e in &header.elements[..vidx] {
                for _ in 0..e.count {
                    lines.next().ok_or_else(|| Error::format("PLY body truncated"))?;
                }
            }
            let mut points = Vec::with_capacity(vertex.count);
            for _ in 0..vertex.count {
                let line = lines.next().ok_or_else(|| Error::format("PLY body truncated"))?;
                let values: Vec<&str> = line.split_whitespace().collect();
                if vertex.props.iter().any(|p| p.1.is_none()) {
                    return Err(Error::format("list properties on vertices are not supported"));
                }
                let get = |i: usize| -> Result<f64> {
                    values
                        .get(i)
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| Error::format(format!("bad PLY vertex line '{line}'")))
                };
                points.push(CartesianPoint::new(get(axes[0])?, get(axes[1])?, get(axes[2])?));
            }
            Ok(PointCloud::new(points))
        }
        PlyFormat::BinaryLittleEndian => {
            let stride = |e: &Element| -> Result<usize> {
                e.props
                    .iter()
                    .map(|(_, s)| s.map(Scalar::size))
                    .sum::<Option<usize>>()
                    .ok_or_else(|| Error::format(format!("list properties in element {} are not supported", e.name)))
            };
            let mut offset = 0usize;
            for e in &header.elements[..vidx] {
                offset += stride(e)? * e.count;
            }
            let vstride = stride(vertex)?;
            let mut prop_offsets = Vec::with_capacity(vertex.props.len());
            let mut acc = 0;
            for (_, s) in &vertex.props {
                prop_offsets.push(acc);
                acc += s.expect("scalar").size();
            }
            let needed = offset + vstride * vertex.count;
            if body.len() < needed {
                return Err(Error::format("PLY body truncated"));
            }
            let read = |rec: &[u8], i: usize| vertex.props[i].1.expect("scalar").read_le(&rec[prop_offsets[i]..]);
            Ok(body[offset..needed]
                .chunks_exact(vstride)
                .map(|rec| CartesianPoint::new(read(rec, axes[0]), read(rec, axes[1]), read(rec, axes[2])))
                .collect())
        }
    }
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    parse_ply(&std::fs::read(path)?)
}

/// Serializes `x y z` as `double` properties.
pub fn ply_bytes(cloud: &PointCloud, format: PlyFormat) -> Vec<u8> {
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    let mut out = format!(
        "ply\nformat {fmt} 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
        cloud.len()
    );
    match format {
        PlyFormat::Ascii => {
            for p in cloud.iter() {
                let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
            }
            out.into_bytes()
        }
        PlyFormat::BinaryLittleEndian => {
            let mut bytes = out.into_bytes();
            for p in cloud.iter() {
                for v in [p.x, p.y, p.z] {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
            }
            bytes
        }
    }
}

pub fn write_ply(cloud: &PointCloud, path: impl AsRef<Path>, format: PlyFormat) -> Result<()> {
    write_atomic(path.as_ref(), &ply_bytes(cloud, format))
}

/// Reads `.bin` as KITTI and anything else as PLY.
pub fn read_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("bin") => read_kitti_bin(path),
        _ => read_ply(path),
    }
}

/// Writes `.bin` as KITTI and anything else as binary PLY.
pub fn write_cloud(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("bin") => write_kitti_bin(cloud, path),
        _ => write_ply(cloud, path, PlyFormat::BinaryLittleEndian),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| CartesianPoint::new(rng.random_range(-80.0..80.0), rng.random_range(-80.0..80.0), rng.random_range(-3.0..3.0)))
            .collect()
    }

    #[test]
    fn kitti_examples() {
        let mut one = Vec::new();
        for v in [1.0f32, 2.0, 3.0, 0.5] {
            one.extend_from_slice(&v.to_le_bytes());
        }
        let c = parse_kitti_bin(&one).unwrap();
        assert_eq!(c.points, vec![CartesianPoint::new(1.0, 2.0, 3.0)]);
        assert_eq!(parse_kitti_bin(&[0u8; 32]).unwrap().len(), 2);
        assert!(matches!(parse_kitti_bin(&[0u8; 20]), Err(Error::Format(_))));
    }

    #[test]
    fn kitti_round_trip_is_bit_exact_in_f32() {
        let cloud = random_cloud(10_000, 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scan.bin");
        write_kitti_bin(&cloud, &path).unwrap();
        let back = read_kitti_bin(&path).unwrap();
        for (a, b) in cloud.iter().zip(back.iter()) {
            assert_eq!(b.x, f64::from(a.x as f32));
            assert_eq!(b.y, f64::from(a.y as f32));
            assert_eq!(b.z, f64::from(a.z as f32));
        }
    }

    #[test]
    fn minimal_ascii_ply_with_extra_properties() {
        let text = "ply\nformat ascii 1.0\ncomment test\nelement vertex 1\nproperty float intensity\nproperty float x\nproperty float y\nproperty float z\nelement face 0\nproperty list uchar int vertex_indices\nend_header\n7 1.5 -2 3\n";
        let c = parse_ply(text.as_bytes()).unwrap();
        assert_eq!(c.points, vec![CartesianPoint::new(1.5, -2.0, 3.0)]);
        let missing = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nend_header\n1 2\n";
        assert!(matches!(parse_ply(missing.as_bytes()), Err(Error::Format(_))));
    }

    #[test]
    fn binary_ply_with_mixed_types() {
        let mut bytes = b"ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty uchar tag\nproperty float x\nproperty float y\nproperty double z\nend_header\n".to_vec();
        for (tag, x, y, z) in [(1u8, 1.0f32, 2.0f32, 3.0f64), (2, -1.0, 0.5, 7.25)] {
            bytes.push(tag);
            bytes.extend_from_slice(&x.to_le_bytes());
            bytes.extend_from_slice(&y.to_le_bytes());
            bytes.extend_from_slice(&z.to_le_bytes());
        }
        let c = parse_ply(&bytes).unwrap();
        assert_eq!(c.points[1], CartesianPoint::new(-1.0, 0.5, 7.25));
        assert!(parse_ply(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn ascii_and_binary_forms_agree() {
        let cloud = random_cloud(100_000, 2);
        let ascii = parse_ply(&ply_bytes(&cloud, PlyFormat::Ascii)).unwrap();
        let binary = parse_ply(&ply_bytes(&cloud, PlyFormat::BinaryLittleEndian)).unwrap();
        assert_eq!(ascii.points, binary.points);
        assert_eq!(binary.points, cloud.points);
    }

    #[test]
    fn dispatch_by_extension() {
        let cloud = random_cloud(50, 3);
        let dir = tempfile::tempdir().unwrap();
        let ply = dir.path().join("a.ply");
        write_cloud(&cloud, &ply).unwrap();
        assert_eq!(read_cloud(&ply).unwrap().points, cloud.points);
        let bin = dir.path().join("a.bin");
        write_cloud(&cloud, &bin).unwrap();
        assert_eq!(read_cloud(&bin).unwrap().len(), 50);
    }
}
