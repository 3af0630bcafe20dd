//! Mesh files.
//!
//! The text format has explicit sections; coordinates are printed with 17
//! significant digits so a write/read cycle reproduces every bit:
//!
//! ```text
//! meshrecon-mesh 1
//! units mm
//! vertices 3
//! 0.0000000000000000e0 0.0000000000000000e0 0.0000000000000000e0
//! ...
//! faces 1
//! 0 1 2
//! ```
//!
//! Lines starting with `#` and blank lines are ignored.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::mesh::{face_normals, TriMesh, Units};

const MAGIC: &str = "meshrecon-mesh 1";

pub fn mesh_to_string(m: &TriMesh) -> String {
    let mut s = String::with_capacity(64 * (m.n_vertices() + m.n_faces()) + 64);
    s.push_str(MAGIC);
    s.push('\n');
    s.push_str(&format!("units {}\n", m.units().as_str()));
    s.push_str(&format!("vertices {}\n", m.n_vertices()));
    for p in m.vertices() {
        s.push_str(&format!("{:.16e} {:.16e} {:.16e}\n", p.x, p.y, p.z));
    }
    s.push_str(&format!("faces {}\n", m.n_faces()));
    for f in m.faces() {
        s.push_str(&format!("{} {} {}\n", f[0], f[1], f[2]));
    }
    s
}

pub fn write_mesh(path: impl AsRef<Path>, m: &TriMesh) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, mesh_to_string(m)).map_err(|e| Error::io(path, e))
}

pub fn read_mesh(path: impl AsRef<Path>) -> Result<TriMesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_mesh(&text, path)
}

pub fn parse_mesh(text: &str, path: &Path) -> Result<TriMesh> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let err = |line: usize, msg: String| Error::parse(path, line, msg);

    let (ln, magic) = lines.next().ok_or_else(|| err(0, "empty file".into()))?;
    if magic != MAGIC {
        return Err(err(ln, format!("expected `{MAGIC}`")));
    }

    let mut header = |key: &str| -> Result<(usize, String)> {
        let (ln, l) = lines.next().ok_or_else(|| err(0, format!("missing `{key}` line")))?;
        let rest = l
            .strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .ok_or_else(|| err(ln, format!("expected `{key} ...`")))?;
        Ok((ln, rest.trim().to_string()))
    };

    let (ln, units) = header("units")?;
    let units = match units.as_str() {
        "mm" => Units::Mm,
        "normalized" => Units::Normalized,
        other => return Err(err(ln, format!("unknown units `{other}`"))),
    };
    let (ln, nv) = header("vertices")?;
    let nv: usize = nv.parse().map_err(|_| err(ln, "bad vertex count".into()))?;

    let mut lines = lines;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, l) = lines.next().ok_or_else(|| err(0, "truncated vertex section".into()))?;
        let vals: Vec<f64> = l
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| err(ln, "bad coordinate".into()))?;
        if vals.len() != 3 {
            return Err(err(ln, format!("expected 3 coordinates, found {}", vals.len())));
        }
        vertices.push(Vec3::new(vals[0], vals[1], vals[2]));
    }

    let (ln, l) = lines.next().ok_or_else(|| err(0, "missing `faces` line".into()))?;
    let nf: usize = l
        .strip_prefix("faces ")
        .ok_or_else(|| err(ln, "expected `faces ...`".into()))?
        .trim()
        .parse()
        .map_err(|_| err(ln, "bad face count".into()))?;
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (ln, l) = lines.next().ok_or_else(|| err(0, "truncated face section".into()))?;
        let idx: Vec<usize> = l
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| err(ln, "bad vertex index".into()))?;
        if idx.len() != 3 {
            return Err(err(ln, format!("expected 3 indices, found {}", idx.len())));
        }
        faces.push([idx[0], idx[1], idx[2]]);
    }
    if let Some((ln, _)) = lines.next() {
        return Err(err(ln, "trailing content after face section".into()));
    }
    Ok(TriMesh::build(vertices, faces)?.with_units(units))
}

/// Binary triangle soup (STL layout) for CFD consumers.
pub fn write_stl(path: impl AsRef<Path>, m: &TriMesh) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(84 + 50 * m.n_faces());
    let mut header = [0u8; 80];
    let tag = format!("meshrecon binary export, units {}", m.units().as_str());
    header[..tag.len()].copy_from_slice(tag.as_bytes());
    buf.extend_from_slice(&header);
    buf.extend_from_slice(&(m.n_faces() as u32).to_le_bytes());
    let normals = face_normals(m).normals;
    for (f, n) in normals.iter().enumerate() {
        let pts = m.triangle(f);
        for v in std::iter::once(*n).chain(pts) {
            for c in v.to_array() {
                buf.extend_from_slice(&(c as f32).to_le_bytes());
            }
        }
        buf.extend_from_slice(&0u16.to_le_bytes());
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Reads back a binary triangle soup; used to check exports.
pub fn read_stl_triangles(path: impl AsRef<Path>) -> Result<Vec<[[f32; 3]; 3]>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 84 {
        return Err(Error::parse(path, 0, "file shorter than header"));
    }
    let n = u32::from_le_bytes(bytes[80..84].try_into().unwrap()) as usize;
    if bytes.len() != 84 + 50 * n {
        return Err(Error::parse(path, 0, "size does not match triangle count"));
    }
    let f = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    Ok((0..n)
        .map(|t| {
            let base = 84 + 50 * t + 12;
            let mut tri = [[0f32; 3]; 3];
            for (k, v) in tri.iter_mut().enumerate() {
                for (a, c) in v.iter_mut().enumerate() {
                    *c = f(base + 12 * k + 4 * a);
                }
            }
            tri
        })
        .collect())
}

/// Fluid and tissue properties written next to CFD exports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CfdMaterial {
    pub urine_density_kg_m3: f64,
    pub urine_specific_heat_j_kg_k: f64,
    pub urine_thermal_conductivity_w_m_k: f64,
    pub urine_viscosity_kg_m_s: f64,
    pub urine_initial_velocity_m_s: f64,
    pub tissue_density_kg_m3: f64,
    pub tissue_specific_heat_j_kg_k: f64,
    pub tissue_thermal_conductivity_w_m_k: f64,
}

impl Default for CfdMaterial {
    fn default() -> Self {
        CfdMaterial {
            urine_density_kg_m3: 1050.0,
            urine_specific_heat_j_kg_k: 4180.0,
            urine_thermal_conductivity_w_m_k: 0.6,
            urine_viscosity_kg_m_s: 0.002,
            urine_initial_velocity_m_s: 0.0001,
            tissue_density_kg_m3: 1050.0,
            tissue_specific_heat_j_kg_k: 3800.0,
            tissue_thermal_conductivity_w_m_k: 0.5,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    mesh: SidecarMesh,
    material: CfdMaterial,
}

#[derive(Serialize, Deserialize)]
struct SidecarMesh {
    file: String,
    units: String,
    vertices: usize,
    faces: usize,
    watertight: bool,
    manifold: bool,
    orientation_consistent: bool,
}

pub fn write_cfd_sidecar(path: impl AsRef<Path>, stl_name: &str, m: &TriMesh, material: &CfdMaterial) -> Result<()> {
    let path = path.as_ref();
    let sc = Sidecar {
        mesh: SidecarMesh {
            file: stl_name.to_string(),
            units: m.units().as_str().to_string(),
            vertices: m.n_vertices(),
            faces: m.n_faces(),
            watertight: m.is_watertight(),
            manifold: m.is_manifold(),
            orientation_consistent: m.topology().orientation_consistent,
        },
        material: material.clone(),
    };
    let text = toml::to_string(&sc).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_cfd_material(path: impl AsRef<Path>) -> Result<CfdMaterial> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let sc: Sidecar = toml::from_str(&text).map_err(|e| Error::parse(path, 0, e.to_string()))?;
    Ok(sc.material)
}
