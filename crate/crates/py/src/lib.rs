//! Python bindings. Meshes cross the boundary as `(vertices, faces)` lists in
//! normalized coordinates unless a function says otherwise; masks as a flat
//! list plus cubic dims.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use meshrecon::fit::fit_template;
use meshrecon::io::RunConfig;
use meshrecon::isosurface::IsoConfig;
use meshrecon::mesh::Units;
use meshrecon::metrics::overlap;
use meshrecon::validity::{audit, ValidityThresholds};
use meshrecon::voxel::{Grid, SynthParams, Volume, VolumeKind};
use meshrecon::{TriMesh, Vec3};

type PyMesh = (Vec<[f64; 3]>, Vec<[usize; 3]>);

fn err(e: meshrecon::Error) -> PyErr {
    use meshrecon::Error as E;
    match e {
        E::Config(_)
        | E::ShapeMismatch(_)
        | E::InvalidVolume(_)
        | E::DegenerateGrid(_)
        | E::IndexOutOfRange { .. }
        | E::DegenerateFace(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_mesh(m: PyMesh, units: Units) -> PyResult<TriMesh> {
    let verts = m.0.into_iter().map(Vec3::from_array).collect();
    Ok(TriMesh::build(verts, m.1).map_err(err)?.with_units(units))
}

fn from_mesh(m: &TriMesh) -> PyMesh {
    (m.vertices().iter().map(|v| v.to_array()).collect(), m.faces().to_vec())
}

fn to_mask(data: Vec<f64>, n: usize) -> PyResult<Volume> {
    Volume::new(Grid::cube(n), data, VolumeKind::Mask).map_err(err)
}

/// Runs a `meshrecon` command line, e.g. `run(["synth", "--out", "d"])`, and
/// returns its exit code.
#[pyfunction]
fn run(args: Vec<String>) -> i32 {
    meshrecon::cli::run(std::iter::once("meshrecon".to_string()).chain(args))
}

/// Synthetic blob mask of `dims`³ voxels (1 mm spacing), flattened x-fastest.
#[pyfunction]
#[pyo3(signature = (seed, dims=64))]
fn synth_mask(seed: u64, dims: usize) -> PyResult<Vec<f64>> {
    let c = meshrecon::voxel::synth_case(&SynthParams { seed, dims, ..Default::default() }).map_err(err)?;
    Ok(c.mask.into_data())
}

/// Marching-cubes surface of a mask, normalized to `[-1,1]^3`.
#[pyfunction]
fn pseudo_gold(mask: Vec<f64>, dims: usize) -> PyResult<PyMesh> {
    let m = meshrecon::isosurface::pseudo_gold(&to_mask(mask, dims)?, &IsoConfig::default()).map_err(err)?;
    Ok(from_mesh(&m))
}

/// Fits the default 162-vertex template to a normalized target mesh with the
/// default three-stage schedule.
#[pyfunction]
#[pyo3(signature = (target, seed=0))]
fn fit(target: PyMesh, seed: u64) -> PyResult<PyMesh> {
    let cfg = RunConfig::default().with_seed(seed);
    let q = to_mesh(target, Units::Normalized)?;
    let res = fit_template(&q, &cfg.template_mesh().map_err(err)?, &cfg.fit).map_err(err)?;
    Ok(from_mesh(&res.final_mesh))
}

/// Rasterizes a normalized mesh onto the `dims`³ grid.
#[pyfunction]
fn rasterize(mesh: PyMesh, dims: usize) -> PyResult<Vec<f64>> {
    let g = Grid::cube(dims);
    let m = meshrecon::isosurface::denormalize_coords(&to_mesh(mesh, Units::Normalized)?, &g).map_err(err)?;
    Ok(meshrecon::voxel::rasterize(&m, &g).map_err(err)?.into_data())
}

/// Dice overlap of two masks on the same grid.
#[pyfunction]
fn dice(a: Vec<f64>, b: Vec<f64>, dims: usize) -> PyResult<f64> {
    Ok(overlap(&to_mask(a, dims)?, &to_mask(b, dims)?).map_err(err)?.dice())
}

/// Validity report (TOML text) of a mesh, with coordinates taken as mm.
#[pyfunction]
fn audit_mesh(mesh: PyMesh) -> PyResult<String> {
    let m = to_mesh(mesh, Units::Mm)?;
    Ok(audit(&m, None, &ValidityThresholds::default()).map_err(err)?.to_text())
}

#[pymodule]
fn meshrecon_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(synth_mask, m)?)?;
    m.add_function(wrap_pyfunction!(pseudo_gold, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(rasterize, m)?)?;
    m.add_function(wrap_pyfunction!(dice, m)?)?;
    m.add_function(wrap_pyfunction!(audit_mesh, m)?)?;
    Ok(())
}
