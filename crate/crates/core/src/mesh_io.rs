//! OBJ and binary STL mesh input/output.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{TriMesh, Vec3};

/// STL vertices closer than this (mm) are welded into one.
pub const STL_WELD_TOLERANCE: f64 = 1e-6;

/// Loads a mesh, choosing the format from the file extension (`.obj` or `.stl`).
pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriMesh> {
    let path = path.as_ref();
    match extension(path).as_deref() {
        Some("obj") => read_obj(path),
        Some("stl") => read_stl(path),
        _ => Err(Error::parse(path, "unsupported mesh format (expected .obj or .stl)")),
    }
}

pub fn save_mesh(path: impl AsRef<Path>, mesh: &TriMesh) -> Result<()> {
    let path = path.as_ref();
    match extension(path).as_deref() {
        Some("obj") => write_obj(path, mesh),
        Some("stl") => write_stl(path, mesh),
        _ => Err(Error::parse(path, "unsupported mesh format (expected .obj or .stl)")),
    }
}

fn extension(path: &Path) -> Option<String> {
    path.extension().map(|e| e.to_string_lossy().to_ascii_lowercase())
}

pub fn read_obj(path: &Path) -> Result<TriMesh> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text).map_err(|m| Error::parse(path, m))?.build(path)
}

struct RawMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
}

impl RawMesh {
    fn build(self, path: &Path) -> Result<TriMesh> {
        TriMesh::new(self.vertices, self.triangles).map_err(|e| Error::parse(path, e.to_string()))
    }
}

fn parse_obj(text: &str) -> std::result::Result<RawMesh, String> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let coords: Vec<f64> = it
                    .take(3)
                    .map(|s| s.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| format!("line {}: bad vertex: {e}", lineno + 1))?;
                if coords.len() != 3 {
                    return Err(format!("line {}: vertex needs 3 coordinates", lineno + 1));
                }
                vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let mut idx = Vec::new();
                for tok in it {
                    let first = tok.split('/').next().unwrap_or("");
                    let i: i64 = first
                        .parse()
                        .map_err(|_| format!("line {}: bad face index `{tok}`", lineno + 1))?;
                    let resolved = if i > 0 {
                        i - 1
                    } else if i < 0 {
                        vertices.len() as i64 + i
                    } else {
                        return Err(format!("line {}: face index 0 is invalid", lineno + 1));
                    };
                    if resolved < 0 {
                        return Err(format!("line {}: face index {i} out of range", lineno + 1));
                    }
                    idx.push(resolved as usize);
                }
                if idx.len() < 3 {
                    return Err(format!("line {}: face needs at least 3 vertices", lineno + 1));
                }
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok(RawMesh {
        vertices,
        triangles,
    })
}

pub fn write_obj(path: &Path, mesh: &TriMesh) -> Result<()> {
    let mut out = String::with_capacity(mesh.vertex_count() * 40);
    for v in mesh.vertices() {
        // {:?} prints the shortest representation that round-trips exactly.
        let _ = writeln!(out, "v {:?} {:?} {:?}", v.x, v.y, v.z);
    }
    for t in mesh.triangles() {
        let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_stl(path: &Path) -> Result<TriMesh> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_stl(&bytes).map_err(|m| Error::parse(path, m))?.build(path)
}

fn parse_stl(bytes: &[u8]) -> std::result::Result<RawMesh, String> {
    if bytes.len() < 84 {
        return Err("binary STL shorter than its 84-byte header".into());
    }
    let count = u32::from_le_bytes(bytes[80..84].try_into().unwrap()) as usize;
    let expected = 84 + count * 50;
    if bytes.len() < expected {
        return Err(format!(
            "binary STL declares {count} triangles but holds {} bytes",
            bytes.len()
        ));
    }
    let mut welder = Welder::default();
    let mut triangles = Vec::with_capacity(count);
    for t in 0..count {
        let rec = &bytes[84 + t * 50..84 + (t + 1) * 50];
        let mut tri = [0usize; 3];
        for (k, slot) in tri.iter_mut().enumerate() {
            let off = 12 + k * 12;
            let c = |j: usize| f32::from_le_bytes(rec[off + j * 4..off + j * 4 + 4].try_into().unwrap()) as f64;
            *slot = welder.insert(Vec3::new(c(0), c(1), c(2)));
        }
        triangles.push(tri);
    }
    Ok(RawMesh {
        vertices: welder.vertices,
        triangles,
    })
}

/// Spatial hash on a grid with cell size equal to the weld tolerance; a point
/// is merged with any existing vertex in the 27 surrounding cells within tolerance.
#[derive(Default)]
struct Welder {
    vertices: Vec<Vec3>,
    cells: HashMap<[i64; 3], Vec<usize>>,
}

impl Welder {
    fn key(p: &Vec3) -> [i64; 3] {
        [0, 1, 2].map(|i| (p[i] / STL_WELD_TOLERANCE).floor() as i64)
    }

    fn insert(&mut self, p: Vec3) -> usize {
        let k = Self::key(&p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(list) = self.cells.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        if let Some(&i) = list
                            .iter()
                            .find(|&&i| (self.vertices[i] - p).norm() <= STL_WELD_TOLERANCE)
                        {
                            return i;
                        }
                    }
                }
            }
        }
        let i = self.vertices.len();
        self.vertices.push(p);
        self.cells.entry(k).or_default().push(i);
        i
    }
}

pub fn write_stl(path: &Path, mesh: &TriMesh) -> Result<()> {
    let tris = mesh.triangles();
    let mut out = Vec::with_capacity(84 + tris.len() * 50);
    out.extend_from_slice(&[0u8; 80]);
    out.extend_from_slice(&(tris.len() as u32).to_le_bytes());
    let v = mesh.vertices();
    for t in tris {
        let n = (v[t[1]] - v[t[0]]).cross(&(v[t[2]] - v[t[0]]));
        let n = if n.norm() > 0.0 { n.normalize() } else { n };
        for c in n.iter() {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
        for &i in t {
            for c in v[i].iter() {
                out.extend_from_slice(&(*c as f32).to_le_bytes());
            }
        }
        out.extend_from_slice(&[0u8; 2]);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
