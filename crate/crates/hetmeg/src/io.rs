//! On-disk formats: the HMEG binary matrix container, the mesh and sensor
//! text formats, and a minimal CSV layer whose output re-parses to
//! identical bytes.
//!
//! All floating-point text is written with Rust's shortest-roundtrip
//! formatting, so write -> parse -> write is byte-stable.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::forward::SensorArray;
use crate::geometry::{CorticalMesh, SphereMesh, Vec3};

/// Magic bytes of the binary matrix container.
pub const HMEG_MAGIC: [u8; 4] = *b"HMEG";
const HMEG_VERSION: u16 = 1;
const HMEG_DTYPE_F64: u8 = 0;
const HMEG_HEADER_LEN: usize = 24;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes (expected HMEG)")]
    BadMagic,
    #[error("unsupported version {0}")]
    BadVersion(u16),
    #[error("unsupported dtype {0}")]
    BadDtype(u8),
    #[error("file length {actual} does not match header ({rows} x {cols} f64 = {expected})")]
    LengthMismatch {
        rows: u64,
        cols: u64,
        expected: u128,
        actual: usize,
    },
    #[error("matrix dimensions {0} x {1} overflow")]
    DimensionOverflow(u64, u64),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

fn parse_err(line: usize, message: impl Into<String>) -> FormatError {
    FormatError::Parse {
        line,
        message: message.into(),
    }
}

/// Dense row-major f64 matrix as stored in an HMEG file.
#[derive(Debug, Clone, PartialEq)]
pub struct HmegMatrix {
    pub rows: u64,
    pub cols: u64,
    /// Row-major payload, `rows * cols` values.
    pub data: Vec<f64>,
}

impl HmegMatrix {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.nrows() * m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        HmegMatrix {
            rows: m.nrows() as u64,
            cols: m.ncols() as u64,
            data,
        }
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        HmegMatrix {
            rows: v.len() as u64,
            cols: 1,
            data: v.iter().copied().collect(),
        }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows as usize, self.cols as usize, |i, j| {
            self.data[i * self.cols as usize + j]
        })
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_vec(self.data.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HMEG_HEADER_LEN + self.data.len() * 8);
        out.extend_from_slice(&HMEG_MAGIC);
        out.extend_from_slice(&HMEG_VERSION.to_le_bytes());
        out.push(HMEG_DTYPE_F64);
        out.push(0); // pad
        out.extend_from_slice(&self.rows.to_le_bytes());
        out.extend_from_slice(&self.cols.to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Strict decode: exact length, finite entries.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        if bytes.len() < HMEG_HEADER_LEN {
            return Err(FormatError::LengthMismatch {
                rows: 0,
                cols: 0,
                expected: HMEG_HEADER_LEN as u128,
                actual: bytes.len(),
            });
        }
        if bytes[0..4] != HMEG_MAGIC {
            return Err(FormatError::BadMagic);
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != HMEG_VERSION {
            return Err(FormatError::BadVersion(version));
        }
        if bytes[6] != HMEG_DTYPE_F64 {
            return Err(FormatError::BadDtype(bytes[6]));
        }
        let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
        let count = rows
            .checked_mul(cols)
            .ok_or(FormatError::DimensionOverflow(rows, cols))?;
        let expected = HMEG_HEADER_LEN as u128 + count as u128 * 8;
        if bytes.len() as u128 != expected {
            return Err(FormatError::LengthMismatch {
                rows,
                cols,
                expected,
                actual: bytes.len(),
            });
        }
        let mut data = Vec::with_capacity(count as usize);
        for (i, chunk) in bytes[HMEG_HEADER_LEN..].chunks_exact(8).enumerate() {
            let v = f64::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(FormatError::NonFinite(i));
            }
            data.push(v);
        }
        Ok(HmegMatrix { rows, cols, data })
    }
}

pub fn write_hmeg(path: &Path, m: &HmegMatrix) -> Result<(), FormatError> {
    let mut f = fs::File::create(path)?;
    f.write_all(&m.to_bytes())?;
    Ok(())
}

pub fn read_hmeg(path: &Path) -> Result<HmegMatrix, FormatError> {
    let bytes = fs::read(path)?;
    HmegMatrix::from_bytes(&bytes)
}

/// Mesh text format: one `v x y z nx ny nz area sx sy sz` line per node
/// (cortex position, outward normal, node area, sphere image), then one
/// `f i j k` line per triangle. The conductor center is the origin.
pub fn mesh_to_string(mesh: &CorticalMesh) -> String {
    let mut out = String::new();
    for i in 0..mesh.n_nodes() {
        let p = mesh.positions[i];
        let n = mesh.normals[i];
        let s = mesh.sphere.vertices[i];
        out.push_str(&format!(
            "v {} {} {} {} {} {} {} {} {} {}\n",
            p.x, p.y, p.z, n.x, n.y, n.z, mesh.node_areas[i], s.x, s.y, s.z
        ));
    }
    for t in &mesh.sphere.triangles {
        out.push_str(&format!("f {} {} {}\n", t[0], t[1], t[2]));
    }
    out
}

pub fn parse_mesh_text(text: &str) -> Result<CorticalMesh, FormatError> {
    let mut positions = Vec::new();
    let mut normals = Vec::new();
    let mut node_areas = Vec::new();
    let mut sphere_vertices = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_ascii_whitespace();
        match parts.next() {
            Some("v") => {
                if !triangles.is_empty() {
                    return Err(parse_err(lineno + 1, "vertex after faces"));
                }
                let nums: Vec<f64> = parts
                    .map(|p| p.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| parse_err(lineno + 1, format!("bad float: {e}")))?;
                if nums.len() != 10 {
                    return Err(parse_err(
                        lineno + 1,
                        format!("expected 10 fields on vertex line, got {}", nums.len()),
                    ));
                }
                if nums.iter().any(|v| !v.is_finite()) {
                    return Err(parse_err(lineno + 1, "non-finite vertex field"));
                }
                positions.push(Vec3::new(nums[0], nums[1], nums[2]));
                normals.push(Vec3::new(nums[3], nums[4], nums[5]));
                node_areas.push(nums[6]);
                sphere_vertices.push(Vec3::new(nums[7], nums[8], nums[9]));
            }
            Some("f") => {
                let idx: Vec<u32> = parts
                    .map(|p| p.parse::<u32>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| parse_err(lineno + 1, format!("bad index: {e}")))?;
                if idx.len() != 3 {
                    return Err(parse_err(
                        lineno + 1,
                        format!("expected 3 indices on face line, got {}", idx.len()),
                    ));
                }
                triangles.push([idx[0], idx[1], idx[2]]);
            }
            Some(other) => {
                return Err(parse_err(lineno + 1, format!("unknown record '{other}'")));
            }
            None => {}
        }
    }
    if positions.is_empty() || triangles.is_empty() {
        return Err(parse_err(0, "mesh needs at least one vertex and one face"));
    }

    let mut sphere = SphereMesh {
        vertices: sphere_vertices,
        triangles,
        mean_edge_arc: 0.0,
    };
    sphere
        .validate()
        .map_err(|e| parse_err(0, format!("invalid sphere mesh: {e}")))?;
    let edges = sphere.edges();
    sphere.mean_edge_arc = edges
        .iter()
        .map(|&(a, b)| {
            crate::geometry::geodesic_dist_on_sphere(
                &sphere.vertices[a as usize],
                &sphere.vertices[b as usize],
            )
        })
        .sum::<f64>()
        / edges.len() as f64;

    let mesh = CorticalMesh {
        sphere,
        positions,
        normals,
        node_areas,
        center: Vec3::zeros(),
    };
    mesh.validate()
        .map_err(|e| parse_err(0, format!("invalid cortical mesh: {e}")))?;
    Ok(mesh)
}

/// Sensor text format: one `s x y z ox oy oz` line per sensor.
pub fn sensors_to_string(arr: &SensorArray) -> String {
    let mut out = String::new();
    for i in 0..arr.len() {
        let p = arr.positions[i];
        let o = arr.orientations[i];
        out.push_str(&format!("s {} {} {} {} {} {}\n", p.x, p.y, p.z, o.x, o.y, o.z));
    }
    out
}

pub fn parse_sensors_text(text: &str) -> Result<SensorArray, FormatError> {
    let mut positions = Vec::new();
    let mut orientations = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_ascii_whitespace();
        if parts.next() != Some("s") {
            return Err(parse_err(lineno + 1, "expected 's' record"));
        }
        let nums: Vec<f64> = parts
            .map(|p| p.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| parse_err(lineno + 1, format!("bad float: {e}")))?;
        if nums.len() != 6 {
            return Err(parse_err(
                lineno + 1,
                format!("expected 6 fields on sensor line, got {}", nums.len()),
            ));
        }
        if nums.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(lineno + 1, "non-finite sensor field"));
        }
        let o = Vec3::new(nums[3], nums[4], nums[5]);
        if (o.norm() - 1.0).abs() > 1e-9 {
            return Err(parse_err(lineno + 1, "orientation not unit length"));
        }
        positions.push(Vec3::new(nums[0], nums[1], nums[2]));
        orientations.push(o);
    }
    if positions.is_empty() {
        return Err(parse_err(0, "no sensors"));
    }
    Ok(SensorArray {
        positions,
        orientations,
    })
}

/// Byte-stable CSV table: plain comma separation, no quoting. All values
/// this project writes are numeric or simple identifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        CsvTable {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_string(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, FormatError> {
        let mut lines = text.lines();
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| parse_err(0, "empty csv"))?
            .split(',')
            .map(|s| s.to_string())
            .collect();
        let mut rows = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let row: Vec<String> = line.split(',').map(|s| s.to_string()).collect();
            if row.len() != header.len() {
                return Err(parse_err(
                    lineno + 2,
                    format!("expected {} fields, got {}", header.len(), row.len()),
                ));
            }
            rows.push(row);
        }
        Ok(CsvTable { header, rows })
    }

    pub fn write(&self, path: &Path) -> Result<(), FormatError> {
        fs::write(path, self.to_string())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, FormatError> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::make_helmet_array;
    use crate::geometry::make_wrinkled_cortex;
    use proptest::prelude::*;

    #[test]
    fn hmeg_header_layout_is_pinned() {
        let m = HmegMatrix {
            rows: 2,
            cols: 3,
            data: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        };
        let b = m.to_bytes();
        assert_eq!(&b[0..4], b"HMEG");
        assert_eq!(u16::from_le_bytes([b[4], b[5]]), 1);
        assert_eq!(b[6], 0);
        assert_eq!(b[7], 0);
        assert_eq!(u64::from_le_bytes(b[8..16].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(b[16..24].try_into().unwrap()), 3);
        assert_eq!(b.len(), 24 + 48);
        assert_eq!(f64::from_le_bytes(b[24..32].try_into().unwrap()), 1.0);
    }

    #[test]
    fn hmeg_rejects_malformed_input() {
        assert!(matches!(
            HmegMatrix::from_bytes(b"NOPE"),
            Err(FormatError::LengthMismatch { .. })
        ));
        let good = HmegMatrix {
            rows: 1,
            cols: 1,
            data: vec![7.0],
        }
        .to_bytes();
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(
            HmegMatrix::from_bytes(&bad_magic),
            Err(FormatError::BadMagic)
        ));
        let mut bad_version = good.clone();
        bad_version[4] = 9;
        assert!(matches!(
            HmegMatrix::from_bytes(&bad_version),
            Err(FormatError::BadVersion(9))
        ));
        let mut truncated = good.clone();
        truncated.pop();
        assert!(matches!(
            HmegMatrix::from_bytes(&truncated),
            Err(FormatError::LengthMismatch { .. })
        ));
        let mut huge = good.clone();
        huge[8..16].copy_from_slice(&u64::MAX.to_le_bytes());
        huge[16..24].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(
            HmegMatrix::from_bytes(&huge),
            Err(FormatError::DimensionOverflow(..))
        ));
        let mut nan = good;
        nan[24..32].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(
            HmegMatrix::from_bytes(&nan),
            Err(FormatError::NonFinite(0))
        ));
    }

    #[test]
    fn mesh_text_roundtrip_is_exact() {
        let mesh = make_wrinkled_cortex(2, 0.08, 0.008, 5, 3).unwrap();
        let text = mesh_to_string(&mesh);
        let parsed = parse_mesh_text(&text).unwrap();
        assert_eq!(parsed.n_nodes(), mesh.n_nodes());
        for i in 0..mesh.n_nodes() {
            assert_eq!(parsed.positions[i], mesh.positions[i]);
            assert_eq!(parsed.normals[i], mesh.normals[i]);
            assert_eq!(parsed.node_areas[i], mesh.node_areas[i]);
            assert_eq!(parsed.sphere.vertices[i], mesh.sphere.vertices[i]);
        }
        assert_eq!(parsed.sphere.triangles, mesh.sphere.triangles);
        // Second serialization is byte-identical.
        assert_eq!(mesh_to_string(&parsed), text);
    }

    #[test]
    fn sensors_roundtrip_is_exact() {
        let arr = make_helmet_array(17, 0.12, 2.0, Vec3::zeros()).unwrap();
        let text = sensors_to_string(&arr);
        let parsed = parse_sensors_text(&text).unwrap();
        assert_eq!(parsed.positions, arr.positions);
        assert_eq!(parsed.orientations, arr.orientations);
        assert_eq!(sensors_to_string(&parsed), text);
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let mut t = CsvTable::new(&["a", "b", "c"]);
        t.push_row(vec!["1".into(), format!("{}", 0.1 + 0.2), "x".into()]);
        t.push_row(vec!["-3".into(), format!("{}", f64::NAN), "y".into()]);
        let s = t.to_string();
        let parsed = CsvTable::parse(&s).unwrap();
        assert_eq!(parsed.to_string(), s);
    }

    proptest! {
        #[test]
        fn hmeg_roundtrip(rows in 0u64..6, cols in 0u64..6, seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = (rows * cols) as usize;
            let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1e6..1e6)).collect();
            let m = HmegMatrix { rows, cols, data };
            let back = HmegMatrix::from_bytes(&m.to_bytes()).unwrap();
            prop_assert_eq!(back, m);
        }

        #[test]
        fn hmeg_decoder_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
            let _ = HmegMatrix::from_bytes(&bytes);
        }

        #[test]
        fn mesh_parser_never_panics(text in "[vf 0-9eE+.\\-\n]{0,160}") {
            let _ = parse_mesh_text(&text);
        }
    }
}
