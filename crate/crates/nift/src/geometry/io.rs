//! OBJ and PLY readers/writers.
//!
//! OBJ covers plain `v`/`f` data. PLY covers ASCII and binary little-endian,
//! with optional per-vertex RGB (for heatmaps) and named float properties
//! (bisector dumps store the two witness distances per point).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::transform::Pt3;
use super::{Geometry, GeometryError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GeometryFormat {
    Obj,
    Ply,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlyEncoding {
    Ascii,
    BinaryLittleEndian,
}

fn io_err(path: &Path, source: std::io::Error) -> GeometryError {
    GeometryError::Io { path: path.to_path_buf(), source }
}

fn parse_err(path: &Path, reason: impl Into<String>) -> GeometryError {
    GeometryError::Parse { path: path.to_path_buf(), reason: reason.into() }
}

/// Loads a mesh or splat cloud. Format defaults to the file extension.
/// Files without faces become splat clouds; `splat_radius = None` derives the
/// radius from point spacing. Loaded geometry must be non-coplanar.
pub fn load_geometry(
    path: impl AsRef<Path>,
    format: Option<GeometryFormat>,
    splat_radius: Option<f64>,
) -> Result<Geometry, GeometryError> {
    let path = path.as_ref();
    let format = match format {
        Some(f) => f,
        None => match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()) {
            Some(ref e) if e == "obj" => GeometryFormat::Obj,
            Some(ref e) if e == "ply" => GeometryFormat::Ply,
            other => {
                return Err(GeometryError::UnsupportedFormat(
                    other.unwrap_or_else(|| "<none>".into()),
                ))
            }
        },
    };
    let (points, faces) = match format {
        GeometryFormat::Obj => read_obj(path)?,
        GeometryFormat::Ply => read_ply(path)?,
    };
    let geom = if faces.is_empty() {
        Geometry::splat_cloud(points, splat_radius)?
    } else {
        Geometry::mesh(points, faces)?
    };
    geom.check_non_coplanar()?;
    Ok(geom)
}

fn read_obj(path: &Path) -> Result<(Vec<Pt3>, Vec<[u32; 3]>), GeometryError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut points = Vec::new();
    let mut faces = Vec::new();
    for (ln, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let mut coord = [0.0f64; 3];
                for c in &mut coord {
                    *c = it
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| parse_err(path, format!("bad vertex at line {}", ln + 1)))?;
                }
                points.push(Pt3::new(coord[0], coord[1], coord[2]));
            }
            Some("f") => {
                let mut idx = Vec::with_capacity(4);
                for tok in it {
                    let v = tok
                        .split('/')
                        .next()
                        .and_then(|t| t.parse::<i64>().ok())
                        .ok_or_else(|| parse_err(path, format!("bad face at line {}", ln + 1)))?;
                    if v < 1 {
                        return Err(parse_err(path, format!("non-positive face index at line {}", ln + 1)));
                    }
                    idx.push((v - 1) as u32);
                }
                if idx.len() < 3 {
                    return Err(parse_err(path, format!("face with <3 vertices at line {}", ln + 1)));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok((points, faces))
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum PlyType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl PlyType {
    fn parse(tok: &str) -> Option<Self> {
        Some(match tok {
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

    fn read_le(self, buf: &[u8]) -> f64 {
        match self {
            Self::I8 => buf[0] as i8 as f64,
            Self::U8 => buf[0] as f64,
            Self::I16 => i16::from_le_bytes([buf[0], buf[1]]) as f64,
            Self::U16 => u16::from_le_bytes([buf[0], buf[1]]) as f64,
            Self::I32 => i32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
            Self::U32 => u32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
            Self::F32 => f32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
            Self::F64 => f64::from_le_bytes(buf[..8].try_into().unwrap()),
        }
    }
}

struct PlyHeader {
    encoding: PlyEncoding,
    vertex_count: usize,
    face_count: usize,
    vertex_props: Vec<(PlyType, String)>,
    face_list: Option<(PlyType, PlyType)>,
    header_len: usize,
}

fn parse_ply_header(bytes: &[u8], path: &Path) -> Result<PlyHeader, GeometryError> {
    let mut pos = 0usize;
    let mut next_line = || -> Result<String, GeometryError> {
        let start = pos;
        while pos < bytes.len() && bytes[pos] != b'\n' {
            pos += 1;
        }
        if pos >= bytes.len() {
            return Err(parse_err(path, "truncated header"));
        }
        let line = String::from_utf8_lossy(&bytes[start..pos]).trim_end_matches('\r').to_string();
        pos += 1;
        Ok(line)
    };

    if next_line()? != "ply" {
        return Err(parse_err(path, "missing ply magic"));
    }
    let mut encoding = None;
    let mut vertex_count = 0usize;
    let mut face_count = 0usize;
    let mut vertex_props = Vec::new();
    let mut face_list = None;
    let mut current = String::new();
    loop {
        let line = next_line()?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", "ascii", _] => encoding = Some(PlyEncoding::Ascii),
            ["format", "binary_little_endian", _] => encoding = Some(PlyEncoding::BinaryLittleEndian),
            ["format", other, _] => {
                return Err(parse_err(path, format!("unsupported ply format {other}")))
            }
            ["element", name, count] => {
                current = (*name).to_string();
                let count: usize = count
                    .parse()
                    .map_err(|_| parse_err(path, "bad element count"))?;
                match current.as_str() {
                    "vertex" => vertex_count = count,
                    "face" => face_count = count,
                    _ => {}
                }
            }
            ["property", "list", ct, it, _name] if current == "face" => {
                let ct = PlyType::parse(ct).ok_or_else(|| parse_err(path, "bad list count type"))?;
                let it = PlyType::parse(it).ok_or_else(|| parse_err(path, "bad list item type"))?;
                face_list = Some((ct, it));
            }
            ["property", ty, name] if current == "vertex" => {
                let ty = PlyType::parse(ty).ok_or_else(|| parse_err(path, format!("bad type {ty}")))?;
                vertex_props.push((ty, (*name).to_string()));
            }
            ["property", ..] => {}
            ["end_header"] => break,
            _ => return Err(parse_err(path, format!("unrecognized header line: {line}"))),
        }
    }
    let encoding = encoding.ok_or_else(|| parse_err(path, "missing format line"))?;
    Ok(PlyHeader { encoding, vertex_count, face_count, vertex_props, face_list, header_len: pos })
}

fn read_ply(path: &Path) -> Result<(Vec<Pt3>, Vec<[u32; 3]>), GeometryError> {
    let mut bytes = Vec::new();
    File::open(path).map_err(|e| io_err(path, e))?.read_to_end(&mut bytes).map_err(|e| io_err(path, e))?;
    let header = parse_ply_header(&bytes, path)?;

    let xyz: Vec<usize> = ["x", "y", "z"]
        .iter()
        .map(|want| {
            header
                .vertex_props
                .iter()
                .position(|(_, name)| name == want)
                .ok_or_else(|| parse_err(path, format!("vertex property {want} missing")))
        })
        .collect::<Result<_, _>>()?;

    let mut points = Vec::with_capacity(header.vertex_count);
    let mut faces = Vec::with_capacity(header.face_count);

    match header.encoding {
        PlyEncoding::Ascii => {
            let body = String::from_utf8_lossy(&bytes[header.header_len..]);
            let mut lines = body.lines();
            for _ in 0..header.vertex_count {
                let line = lines.next().ok_or_else(|| parse_err(path, "missing vertex rows"))?;
                let vals: Vec<f64> = line
                    .split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|_| parse_err(path, "bad vertex value")))
                    .collect::<Result<_, _>>()?;
                if vals.len() < header.vertex_props.len() {
                    return Err(parse_err(path, "short vertex row"));
                }
                points.push(Pt3::new(vals[xyz[0]], vals[xyz[1]], vals[xyz[2]]));
            }
            for _ in 0..header.face_count {
                let line = lines.next().ok_or_else(|| parse_err(path, "missing face rows"))?;
                let vals: Vec<u32> = line
                    .split_whitespace()
                    .map(|t| t.parse::<u32>().map_err(|_| parse_err(path, "bad face value")))
                    .collect::<Result<_, _>>()?;
                if vals.is_empty() || vals.len() != vals[0] as usize + 1 {
                    return Err(parse_err(path, "bad face row"));
                }
                for k in 2..vals.len() - 1 {
                    faces.push([vals[1], vals[k], vals[k + 1]]);
                }
            }
        }
        PlyEncoding::BinaryLittleEndian => {
            let mut cursor = header.header_len;
            let stride_offsets: Vec<usize> = {
                let mut offs = Vec::with_capacity(header.vertex_props.len());
                let mut acc = 0usize;
                for (ty, _) in &header.vertex_props {
                    offs.push(acc);
                    acc += ty.size();
                }
                offs.push(acc);
                offs
            };
            let stride = *stride_offsets.last().unwrap();
            for _ in 0..header.vertex_count {
                if cursor + stride > bytes.len() {
                    return Err(parse_err(path, "truncated vertex data"));
                }
                let row = &bytes[cursor..cursor + stride];
                let mut coord = [0.0f64; 3];
                for (k, &pi) in xyz.iter().enumerate() {
                    let (ty, _) = header.vertex_props[pi];
                    coord[k] = ty.read_le(&row[stride_offsets[pi]..]);
                }
                points.push(Pt3::new(coord[0], coord[1], coord[2]));
                cursor += stride;
            }
            if header.face_count > 0 {
                let (ct, it) = header
                    .face_list
                    .ok_or_else(|| parse_err(path, "face element without list property"))?;
                for _ in 0..header.face_count {
                    if cursor + ct.size() > bytes.len() {
                        return Err(parse_err(path, "truncated face data"));
                    }
                    let n = ct.read_le(&bytes[cursor..]) as usize;
                    cursor += ct.size();
                    if cursor + n * it.size() > bytes.len() {
                        return Err(parse_err(path, "truncated face indices"));
                    }
                    let mut idx = Vec::with_capacity(n);
                    for k in 0..n {
                        idx.push(it.read_le(&bytes[cursor + k * it.size()..]) as u32);
                    }
                    cursor += n * it.size();
                    for k in 1..idx.len().saturating_sub(1) {
                        faces.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
            }
        }
    }
    Ok((points, faces))
}

pub fn save_obj(path: impl AsRef<Path>, geom: &Geometry) -> Result<(), GeometryError> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    for p in geom.points() {
        writeln!(w, "v {} {} {}", p.x, p.y, p.z).map_err(|e| io_err(path, e))?;
    }
    for t in geom.triangles() {
        writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

/// Vertex payload for PLY export. Positions are written as doubles so that a
/// write/read cycle is exact; colors are uchar RGB.
pub struct PlyPayload<'a> {
    pub points: &'a [Pt3],
    pub faces: &'a [[u32; 3]],
    pub colors: Option<&'a [[u8; 3]]>,
    pub scalars: &'a [(&'a str, &'a [f64])],
}

impl<'a> PlyPayload<'a> {
    pub fn cloud(points: &'a [Pt3]) -> Self {
        Self { points, faces: &[], colors: None, scalars: &[] }
    }
}

pub fn save_ply(
    path: impl AsRef<Path>,
    payload: &PlyPayload,
    encoding: PlyEncoding,
) -> Result<(), GeometryError> {
    let path = path.as_ref();
    if let Some(colors) = payload.colors {
        assert_eq!(colors.len(), payload.points.len(), "one color per vertex");
    }
    for (name, vals) in payload.scalars {
        assert_eq!(vals.len(), payload.points.len(), "one {name} value per vertex");
    }

    let mut w = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    let fmt = match encoding {
        PlyEncoding::Ascii => "ascii",
        PlyEncoding::BinaryLittleEndian => "binary_little_endian",
    };
    let mut header = format!("ply\nformat {fmt} 1.0\nelement vertex {}\n", payload.points.len());
    header.push_str("property double x\nproperty double y\nproperty double z\n");
    if payload.colors.is_some() {
        header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    for (name, _) in payload.scalars {
        header.push_str(&format!("property double {name}\n"));
    }
    if !payload.faces.is_empty() {
        header.push_str(&format!(
            "element face {}\nproperty list uchar uint vertex_indices\n",
            payload.faces.len()
        ));
    }
    header.push_str("end_header\n");
    w.write_all(header.as_bytes()).map_err(|e| io_err(path, e))?;

    match encoding {
        PlyEncoding::Ascii => {
            for (i, p) in payload.points.iter().enumerate() {
                let mut row = format!("{} {} {}", p.x, p.y, p.z);
                if let Some(colors) = payload.colors {
                    let [r, g, b] = colors[i];
                    row.push_str(&format!(" {r} {g} {b}"));
                }
                for (_, vals) in payload.scalars {
                    row.push_str(&format!(" {}", vals[i]));
                }
                writeln!(w, "{row}").map_err(|e| io_err(path, e))?;
            }
            for f in payload.faces {
                writeln!(w, "3 {} {} {}", f[0], f[1], f[2]).map_err(|e| io_err(path, e))?;
            }
        }
        PlyEncoding::BinaryLittleEndian => {
            for (i, p) in payload.points.iter().enumerate() {
                for c in [p.x, p.y, p.z] {
                    w.write_all(&c.to_le_bytes()).map_err(|e| io_err(path, e))?;
                }
                if let Some(colors) = payload.colors {
                    w.write_all(&colors[i]).map_err(|e| io_err(path, e))?;
                }
                for (_, vals) in payload.scalars {
                    w.write_all(&vals[i].to_le_bytes()).map_err(|e| io_err(path, e))?;
                }
            }
            for f in payload.faces {
                w.write_all(&[3u8]).map_err(|e| io_err(path, e))?;
                for &i in f {
                    w.write_all(&i.to_le_bytes()).map_err(|e| io_err(path, e))?;
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::fixtures::cube_mesh;
    use rand::Rng;

    #[test]
    fn obj_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cube.obj");
        let cube = cube_mesh(2.0);
        save_obj(&path, &cube).unwrap();
        let back = load_geometry(&path, None, None).unwrap();
        assert_eq!(back.points(), cube.points());
        assert_eq!(back.triangles(), cube.triangles());
    }

    #[test]
    fn obj_with_slashes_and_polygons() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("poly.obj");
        std::fs::write(
            &path,
            "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nv 0 0 1\nf 1/1/1 2/2/2 3/3/3 4/4/4\nf 1 2 5\n",
        )
        .unwrap();
        let g = load_geometry(&path, None, None).unwrap();
        assert_eq!(g.points().len(), 5);
        // Quad fan-triangulated into two triangles plus the explicit one.
        assert_eq!(g.triangles().len(), 3);
    }

    #[test]
    fn ply_binary_round_trip_1000_points() {
        let mut rng = crate::rng::rng_from_seed(33);
        let pts: Vec<Pt3> = (0..1000)
            .map(|_| Pt3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()))
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cloud.ply");
        save_ply(&path, &PlyPayload::cloud(&pts), PlyEncoding::BinaryLittleEndian).unwrap();
        let back = load_geometry(&path, None, Some(0.01)).unwrap();
        assert_eq!(back.points(), &pts[..], "double precision round trip is exact");
        assert_eq!(back.splat_radius(), Some(0.01));

        // Same cloud through the auto radius path: half median spacing.
        let auto = load_geometry(&path, None, None).unwrap();
        let expected = crate::geometry::median_nn_spacing(&pts) * 0.5;
        assert!((auto.splat_radius().unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn ply_ascii_mesh_with_colors_round_trip() {
        let cube = cube_mesh(1.0);
        let colors: Vec<[u8; 3]> = (0..cube.points().len()).map(|i| [i as u8, 0, 255]).collect();
        let scalars: Vec<f64> = (0..cube.points().len()).map(|i| i as f64 * 0.5).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mesh.ply");
        save_ply(
            &path,
            &PlyPayload {
                points: cube.points(),
                faces: cube.triangles(),
                colors: Some(&colors),
                scalars: &[("quality", &scalars)],
            },
            PlyEncoding::Ascii,
        )
        .unwrap();
        let back = load_geometry(&path, None, None).unwrap();
        assert_eq!(back.points(), cube.points());
        assert_eq!(back.triangles(), cube.triangles());
    }

    #[test]
    fn coplanar_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("flat.obj");
        std::fs::write(&path, "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3\nf 1 3 4\n").unwrap();
        assert!(matches!(load_geometry(&path, None, None), Err(GeometryError::Coplanar)));
    }

    #[test]
    fn unknown_extension_is_rejected() {
        assert!(matches!(
            load_geometry("/tmp/shape.stl", None, None),
            Err(GeometryError::UnsupportedFormat(_))
        ));
    }
}
