//! The subcommand steps. Each writes fixed file names into an output
//! directory plus a `<command>.manifest.toml` describing the run.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::fit_template;
use crate::io::{read_mesh, write_cfd_sidecar, write_mesh, write_stl, RunConfig, RunManifest};
use crate::isosurface::{denormalize_coords, normalize_coords, pseudo_gold};
use crate::mesh::Units;
use crate::metrics::{evaluate_case, write_metric_rows, NearestQuery};
use crate::neural::{synthetic_dataset, train_toy};
use crate::validity::{audit, ValidityReport};
use crate::voxel::{rasterize, read_volume, synth_case, write_volume, Grid, SynthParams};
use crate::TriMesh;

pub const INTENSITY: &str = "intensity.vol";
pub const MASK: &str = "mask.vol";
pub const GOLD: &str = "gold.mesh";
pub const FIT_MESH: &str = "fit.mesh";
pub const TRACE: &str = "trace.csv";
pub const FIT_SUMMARY: &str = "fit_summary.toml";
pub const PARAMS: &str = "params";
pub const TRAIN_REPORT: &str = "train_report.toml";
pub const METRICS: &str = "metrics.csv";
pub const VALIDITY: &str = "validity.toml";
pub const STL: &str = "mesh.stl";
pub const SIDECAR: &str = "mesh.cfd.toml";

fn ensure_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn finish(mut m: RunManifest, out: &Path, outputs: &[&str]) -> Result<RunManifest> {
    m.collect_outputs(out, outputs)?;
    m.save_in(out)?;
    Ok(m)
}

/// `m` in the frame `units`, mapping through `grid` when they differ.
fn in_units(m: TriMesh, units: Units, grid: Option<&Grid>) -> Result<TriMesh> {
    if m.units() == units {
        return Ok(m);
    }
    let grid = grid.ok_or_else(|| {
        Error::Units(format!("mesh is in {} coordinates; pass the volume it belongs to", m.units().as_str()))
    })?;
    match units {
        Units::Mm => denormalize_coords(&m, grid),
        Units::Normalized => normalize_coords(&m, grid),
    }
}

/// Synthetic intensity and mask volumes.
pub fn synth(cfg: &RunConfig, out: &Path) -> Result<RunManifest> {
    ensure_dir(out)?;
    let mut m = RunManifest::new("synth", cfg);
    let case = m.time("synth", || synth_case(&cfg.synth))?;
    write_volume(out.join(INTENSITY), &case.intensity)?;
    write_volume(out.join(MASK), &case.mask)?;
    finish(m, out, &[INTENSITY, "intensity.raw", MASK, "mask.raw"])
}

/// Pseudo-gold surface of a mask.
pub fn extract(cfg: &RunConfig, mask: &Path, out: &Path) -> Result<RunManifest> {
    ensure_dir(out)?;
    let mut m = RunManifest::new("extract", cfg);
    m.add_input(mask)?;
    let vol = read_volume(mask)?;
    let gold = m.time("pseudo_gold", || pseudo_gold(&vol, &cfg.iso))?;
    write_mesh(out.join(GOLD), &gold)?;
    log::info!("extracted {} vertices, {} faces", gold.n_vertices(), gold.n_faces());
    finish(m, out, &[GOLD])
}

#[derive(Debug, Serialize, Deserialize)]
struct StageSummary {
    iterations: usize,
    converged: bool,
    initial_energy: f64,
    best_energy: f64,
    pruned: usize,
    vertices: usize,
    faces: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct FitSummary {
    stage: Vec<StageSummary>,
}

/// Fits the template to `target` (default: the mask's pseudo-gold) and
/// writes the final mesh, the per-stage meshes and the energy trace.
pub fn fit(cfg: &RunConfig, mask: &Path, target: Option<&Path>, out: &Path) -> Result<RunManifest> {
    ensure_dir(out)?;
    let mut m = RunManifest::new("fit", cfg);
    m.add_input(mask)?;
    let vol = read_volume(mask)?;
    let q = match target {
        Some(t) => {
            m.add_input(t)?;
            read_mesh(t)?
        }
        None => m.time("pseudo_gold", || pseudo_gold(&vol, &cfg.iso))?,
    };
    let q = in_units(q, Units::Normalized, Some(vol.grid()))?;
    if let Some(t) = &cfg.paths.template {
        m.add_input(t)?;
    }
    let template = cfg.template_mesh()?;
    let res = m.time("fit", || fit_template(&q, &template, &cfg.fit))?;
    let mut outputs = vec![FIT_MESH.to_string(), TRACE.to_string(), FIT_SUMMARY.to_string()];
    write_mesh(out.join(FIT_MESH), &in_units(res.final_mesh.clone(), cfg.units, Some(vol.grid()))?)?;
    for (i, s) in res.stages.iter().enumerate() {
        let name = format!("stage_{i}.mesh");
        write_mesh(out.join(&name), &in_units(s.mesh.clone(), cfg.units, Some(vol.grid()))?)?;
        outputs.push(name);
    }
    write_text(&out.join(TRACE), &res.trace_csv())?;
    let summary = FitSummary {
        stage: res
            .stages
            .iter()
            .map(|s| StageSummary {
                iterations: s.iterations,
                converged: s.converged,
                initial_energy: s.initial_energy,
                best_energy: s.best_energy,
                pruned: s.pruned,
                vertices: s.mesh.n_vertices(),
                faces: s.mesh.n_faces(),
            })
            .collect(),
    };
    write_text(&out.join(FIT_SUMMARY), &toml::to_string(&summary).expect("summary serializes"))?;
    let rels: Vec<&str> = outputs.iter().map(String::as_str).collect();
    finish(m, out, &rels)
}

#[derive(Debug, Serialize, Deserialize)]
struct TrainSummary {
    mean_test_dice: f64,
    loss: Vec<f64>,
    rec: Vec<f64>,
    ext: Vec<f64>,
    dice_epochs: Vec<usize>,
    dice: Vec<f64>,
    test_cases: Vec<String>,
    test_dice: Vec<f64>,
}

/// Trains on synthetic cases and writes the parameters and a report.
pub fn train(cfg: &RunConfig, out: &Path) -> Result<(RunManifest, f64)> {
    ensure_dir(out)?;
    let mut m = RunManifest::new("train", cfg);
    let d = cfg.train_data;
    let base = SynthParams { dims: d.dims, ..cfg.synth.clone() };
    let data = m.time("dataset", || synthetic_dataset(&base, d.train_cases + d.test_cases, &cfg.iso))?;
    let (train, test) = data.split_at(d.train_cases);
    let mut tc = cfg.train.clone();
    if tc.checkpoint.is_none() {
        tc.checkpoint = Some(out.join("last_good"));
    }
    let (params, report) = m.time("train", || train_toy(train, test, &tc))?;
    params.save(out.join(PARAMS))?;
    let summary = TrainSummary {
        mean_test_dice: report.mean_test_dice,
        loss: report.loss_trace,
        rec: report.rec_trace,
        ext: report.ext_trace,
        dice_epochs: report.dice_history.iter().map(|x| x.0).collect(),
        dice: report.dice_history.iter().map(|x| x.1).collect(),
        test_cases: report.test_dice.iter().map(|x| x.0.clone()).collect(),
        test_dice: report.test_dice.iter().map(|x| x.1).collect(),
    };
    write_text(&out.join(TRAIN_REPORT), &toml::to_string(&summary).expect("report serializes"))?;
    Ok((finish(m, out, &[PARAMS, TRAIN_REPORT])?, summary.mean_test_dice))
}

fn case_name(mask: &Path) -> String {
    let dir = mask.parent().and_then(|p| p.file_name()).and_then(|s| s.to_str());
    dir.map(str::to_string).unwrap_or_else(|| "case".into())
}

/// Overlap and surface-distance rows for a predicted mesh. The gold surface
/// defaults to the mask's pseudo-gold.
pub fn eval(
    cfg: &RunConfig,
    pred: &Path,
    mask: &Path,
    gold: Option<&Path>,
    case: Option<&str>,
    out: &Path,
) -> Result<RunManifest> {
    ensure_dir(out)?;
    let mut m = RunManifest::new("eval", cfg);
    m.add_input(pred)?;
    m.add_input(mask)?;
    let vol = read_volume(mask)?;
    let p = in_units(read_mesh(pred)?, Units::Mm, Some(vol.grid()))?;
    let g = match gold {
        Some(g) => {
            m.add_input(g)?;
            read_mesh(g)?
        }
        None => pseudo_gold(&vol, &cfg.iso)?,
    };
    let g = in_units(g, Units::Mm, Some(vol.grid()))?;
    let case = case.map(str::to_string).unwrap_or_else(|| case_name(mask));
    let rows = m.time("metrics", || {
        let pm = rasterize(&p, vol.grid())?;
        evaluate_case(&case, &p, &pm, &g, &vol, &cfg.metrics)
    })?;
    write_text(&out.join(METRICS), &write_metric_rows(&rows))?;
    finish(m, out, &[METRICS])
}

/// Audits a mesh. Defects are reported, not treated as failures.
pub fn validate(
    cfg: &RunConfig,
    mesh: &Path,
    reference: Option<&Path>,
    mask: Option<&Path>,
    out: &Path,
) -> Result<(RunManifest, ValidityReport)> {
    ensure_dir(out)?;
    let mut man = RunManifest::new("validate", cfg);
    man.add_input(mesh)?;
    let vol = match mask {
        Some(p) => {
            man.add_input(p)?;
            Some(read_volume(p)?)
        }
        None => None,
    };
    let grid = vol.as_ref().map(|v| v.grid());
    let m = read_mesh(mesh)?;
    let query = match reference {
        Some(r) => {
            man.add_input(r)?;
            let mm = in_units(m.clone(), Units::Mm, grid)?;
            let rm = in_units(read_mesh(r)?, Units::Mm, grid)?;
            Some((mm, NearestQuery::new(&rm)?))
        }
        None => None,
    };
    let report = man.time("audit", || match &query {
        Some((mm, q)) => audit(mm, Some(q), &cfg.validity),
        None => audit(&m, None, &cfg.validity),
    })?;
    write_text(&out.join(VALIDITY), &report.to_text())?;
    Ok((finish(man, out, &[VALIDITY])?, report))
}

/// Binary STL in mm plus the material sidecar. With `cfd` the mesh must pass
/// the audit first.
pub fn export(cfg: &RunConfig, mesh: &Path, mask: Option<&Path>, cfd: bool, out: &Path) -> Result<RunManifest> {
    let mut man = RunManifest::new("export", cfg);
    man.add_input(mesh)?;
    let vol = match mask {
        Some(p) => {
            man.add_input(p)?;
            Some(read_volume(p)?)
        }
        None => None,
    };
    let m = in_units(read_mesh(mesh)?, Units::Mm, vol.as_ref().map(|v| v.grid()))?;
    if cfd {
        let report = man.time("audit", || audit(&m, None, &cfg.validity))?;
        if !report.is_clean() {
            return Err(Error::ExportRefused(report.summary()));
        }
    }
    ensure_dir(out)?;
    write_stl(out.join(STL), &m)?;
    write_cfd_sidecar(out.join(SIDECAR), STL, &m, &cfg.material)?;
    finish(man, out, &[STL, SIDECAR])
}

/// Output directory for a subcommand: `--out` or the configured default.
pub fn out_dir(cfg: &RunConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.unwrap_or_else(|| cfg.paths.out_dir.clone())
}
