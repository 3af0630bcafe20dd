//! Surface distances and overlap scores.
//!
//! Surface metrics compare two point sets, each drawn from a surface: a mesh
//! is represented by its vertices plus stratified samples on every face, a
//! mask by the centers of its boundary voxels. Distances run from each sample
//! to the other side's surface (or point set, for masks).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::energy::surface_samples;
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::mesh::{TriMesh, Units};
use crate::spatial::{KdTree, SurfacePoint, TriangleBvh};
use crate::voxel::Volume;

/// Nearest-point queries against a triangle mesh.
pub struct NearestQuery {
    bvh: TriangleBvh,
    units: Units,
}

impl NearestQuery {
    pub fn new(target: &TriMesh) -> Result<NearestQuery> {
        if target.n_faces() == 0 {
            return Err(Error::Empty { what: "reference mesh" });
        }
        Ok(NearestQuery { bvh: TriangleBvh::from_mesh(target), units: target.units() })
    }

    pub fn units(&self) -> Units {
        self.units
    }

    pub fn nearest(&self, p: Vec3) -> SurfacePoint {
        self.bvh.nearest(p).expect("reference is nonempty")
    }

    /// Linear scan over all faces; same answer as [`Self::nearest`].
    pub fn nearest_brute(&self, p: Vec3) -> SurfacePoint {
        self.bvh.nearest_brute(p).expect("reference is nonempty")
    }
}

/// Distance from `p` to the reference surface and the closest point on it.
pub fn point_to_surface(p: Vec3, q: &NearestQuery) -> (f64, Vec3) {
    let s = q.nearest(p);
    (s.distance(), s.point)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMode {
    /// Against the pseudo-gold mesh surface.
    Mesh,
    /// Against the boundary-voxel centers of the mask.
    Outer,
}

impl DistanceMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DistanceMode::Mesh => "mesh",
            DistanceMode::Outer => "outer",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricSampling {
    pub samples_per_face: usize,
    pub seed: u64,
}

impl Default for MetricSampling {
    fn default() -> Self {
        MetricSampling { samples_per_face: 4, seed: 0 }
    }
}

/// What a prediction is compared against.
#[derive(Clone, Copy)]
pub enum Reference<'a> {
    Mesh(&'a TriMesh),
    Outer(&'a Volume),
}

impl Reference<'_> {
    pub fn mode(&self) -> DistanceMode {
        match self {
            Reference::Mesh(_) => DistanceMode::Mesh,
            Reference::Outer(_) => DistanceMode::Outer,
        }
    }
}

/// Per-sample distances in both directions.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceDistances {
    pub mode: DistanceMode,
    /// From samples of the prediction to the reference.
    pub forward: Vec<f64>,
    /// From the reference samples to the prediction surface.
    pub backward: Vec<f64>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn max(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

impl SurfaceDistances {
    /// Mean over the union of both sample sets.
    pub fn assd(&self) -> f64 {
        (self.forward.iter().sum::<f64>() + self.backward.iter().sum::<f64>())
            / (self.forward.len() + self.backward.len()) as f64
    }

    pub fn hausdorff(&self) -> f64 {
        max(&self.forward).max(max(&self.backward))
    }

    pub fn forward_mean(&self) -> f64 {
        mean(&self.forward)
    }

    pub fn backward_mean(&self) -> f64 {
        mean(&self.backward)
    }

    pub fn forward_max(&self) -> f64 {
        max(&self.forward)
    }

    pub fn backward_max(&self) -> f64 {
        max(&self.backward)
    }
}

/// Vertices plus stratified face samples of `m`.
pub fn mesh_samples(m: &TriMesh, s: &MetricSampling) -> Vec<Vec3> {
    surface_samples(m, s.samples_per_face, s.seed).0
}

/// World-coordinate centers of the mask's boundary voxels.
pub fn outer_points(mask: &Volume) -> Vec<Vec3> {
    let g = mask.grid();
    mask.boundary_voxels().into_iter().map(|[i, j, k]| g.center(i, j, k)).collect()
}

pub fn surface_distances(p: &TriMesh, reference: Reference, s: &MetricSampling) -> Result<SurfaceDistances> {
    if p.n_faces() == 0 {
        return Err(Error::Empty { what: "predicted mesh" });
    }
    let pq = NearestQuery::new(p)?;
    let ps = mesh_samples(p, s);
    let (forward, backward) = match reference {
        Reference::Mesh(q) => {
            if q.units() != p.units() {
                return Err(Error::Units(format!(
                    "prediction in {} but reference in {}",
                    p.units().as_str(),
                    q.units().as_str()
                )));
            }
            let qq = NearestQuery::new(q)?;
            let fwd = ps.iter().map(|&x| qq.nearest(x).distance()).collect();
            let bwd = mesh_samples(q, s).iter().map(|&x| pq.nearest(x).distance()).collect();
            (fwd, bwd)
        }
        Reference::Outer(mask) => {
            if p.units() != Units::Mm {
                return Err(Error::Units("outer-mode metrics need a mesh in mm".into()));
            }
            let pts = outer_points(mask);
            if pts.is_empty() {
                return Err(Error::Empty { what: "reference boundary" });
            }
            let tree = KdTree::new(&pts);
            let fwd = ps.iter().map(|&x| tree.nearest(x).expect("nonempty").1.sqrt()).collect();
            let bwd = pts.iter().map(|&x| pq.nearest(x).distance()).collect();
            (fwd, bwd)
        }
    };
    Ok(SurfaceDistances { mode: reference.mode(), forward, backward })
}

pub fn assd(p: &TriMesh, reference: Reference, s: &MetricSampling) -> Result<f64> {
    Ok(surface_distances(p, reference, s)?.assd())
}

pub fn hausdorff(p: &TriMesh, reference: Reference, s: &MetricSampling) -> Result<f64> {
    Ok(surface_distances(p, reference, s)?.hausdorff())
}

/// Overlap counts of two masks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Overlap {
    pub a: usize,
    pub b: usize,
    pub both: usize,
}

impl Overlap {
    pub fn dice(&self) -> f64 {
        if self.a + self.b == 0 {
            return 1.0;
        }
        (2 * self.both) as f64 / (self.a + self.b) as f64
    }

    pub fn jaccard(&self) -> f64 {
        let union = self.a + self.b - self.both;
        if union == 0 {
            return 1.0;
        }
        self.both as f64 / union as f64
    }
}

pub fn overlap(a: &Volume, b: &Volume) -> Result<Overlap> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch(format!("masks {:?} and {:?}", a.dims(), b.dims())));
    }
    let mut o = Overlap { a: 0, b: 0, both: 0 };
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (x, y) = (x != 0.0, y != 0.0);
        o.a += x as usize;
        o.b += y as usize;
        o.both += (x && y) as usize;
    }
    Ok(o)
}

/// `(dice, jaccard)`; two empty masks agree perfectly.
pub fn dice_jaccard(a: &Volume, b: &Volume) -> Result<(f64, f64)> {
    let o = overlap(a, b)?;
    Ok((o.dice(), o.jaccard()))
}

/// One line of a metric report.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub case: String,
    pub metric: String,
    pub mode: String,
    pub value: f64,
}

impl MetricRow {
    pub fn new(case: &str, metric: &str, mode: &str, value: f64) -> MetricRow {
        MetricRow { case: case.into(), metric: metric.into(), mode: mode.into(), value }
    }
}

pub fn write_metric_rows(rows: &[MetricRow]) -> String {
    let mut s = String::from("case,metric,mode,value\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{:.17e}", r.case, r.metric, r.mode, r.value);
    }
    s
}

pub fn parse_metric_rows(text: &str) -> Result<Vec<MetricRow>> {
    let perr = |line: usize, msg: String| Error::Parse { path: "<metrics>".into(), line, msg };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "case,metric,mode,value")) => {}
        _ => return Err(perr(1, "expected header case,metric,mode,value".into())),
    }
    let mut rows = Vec::new();
    for (i, l) in lines {
        if l.is_empty() {
            continue;
        }
        let f: Vec<&str> = l.split(',').collect();
        if f.len() != 4 {
            return Err(perr(i + 1, format!("expected 4 fields, found {}", f.len())));
        }
        let value = f[3].parse().map_err(|e| perr(i + 1, format!("bad value: {e}")))?;
        rows.push(MetricRow::new(f[0], f[1], f[2], value));
    }
    Ok(rows)
}

/// Distance and overlap rows comparing a prediction with its references.
pub fn evaluate_case(
    case: &str,
    pred: &TriMesh,
    pred_mask: &Volume,
    gold_mesh: &TriMesh,
    gold_mask: &Volume,
    s: &MetricSampling,
) -> Result<Vec<MetricRow>> {
    let (dice, jac) = dice_jaccard(pred_mask, gold_mask)?;
    let mut rows = vec![MetricRow::new(case, "dice", "voxel", dice), MetricRow::new(case, "jaccard", "voxel", jac)];
    for reference in [Reference::Mesh(gold_mesh), Reference::Outer(gold_mask)] {
        let d = surface_distances(pred, reference, s)?;
        let mode = d.mode.as_str();
        rows.push(MetricRow::new(case, "assd", mode, d.assd()));
        rows.push(MetricRow::new(case, "hd", mode, d.hausdorff()));
        rows.push(MetricRow::new(case, "assd_forward", mode, d.forward_mean()));
        rows.push(MetricRow::new(case, "assd_backward", mode, d.backward_mean()));
        rows.push(MetricRow::new(case, "hd_forward", mode, d.forward_max()));
        rows.push(MetricRow::new(case, "hd_backward", mode, d.backward_max()));
    }
    Ok(rows)
}
