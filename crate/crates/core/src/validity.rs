//! Surface-validity audit: dangling nodes, self-intersections, folded edges
//! and deviation from a reference surface.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::mesh::{face_cross, TriMesh, Units};
use crate::metrics::NearestQuery;
use crate::spatial::TriangleBvh;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidityThresholds {
    /// Normal-to-normal angle (degrees) beyond which an edge counts as folded.
    pub reflective_deg: f64,
    /// Deviation thresholds in mm, ascending.
    pub deviation_mm: Vec<f64>,
}

impl Default for ValidityThresholds {
    fn default() -> Self {
        ValidityThresholds { reflective_deg: 150.0, deviation_mm: vec![3.2, 6.4] }
    }
}

impl ValidityThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=180.0).contains(&self.reflective_deg) {
            return Err(Error::Config("reflective_deg must lie in [0,180]".into()));
        }
        if self.deviation_mm.windows(2).any(|w| w[1] <= w[0]) || self.deviation_mm.iter().any(|t| !(*t >= 0.0)) {
            return Err(Error::Config("deviation thresholds must be non-negative and ascending".into()));
        }
        Ok(())
    }
}

/// Vertices with no faces, or whose faces do not close into a single fan.
pub fn find_dangling(m: &TriMesh) -> Vec<usize> {
    let topo = m.topology();
    (0..m.n_vertices())
        .filter(|&v| {
            if m.fan_count(v) != 1 {
                return true;
            }
            // an open or overfull edge leaves the fan unclosed
            topo.vertex_neighbors[v].iter().any(|&w| {
                let e = topo.edge_id(v, w).expect("neighbor implies edge");
                topo.edge_faces[e].len() != 2
            })
        })
        .collect()
}

fn c3(p: Vec3) -> robust::Coord3D<f64> {
    robust::Coord3D { x: p.x, y: p.y, z: p.z }
}

fn orient3(a: Vec3, b: Vec3, c: Vec3, d: Vec3) -> i8 {
    sign(robust::orient3d(c3(a), c3(b), c3(c), c3(d)))
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

type P2 = [f64; 2];

fn orient2(a: P2, b: P2, c: P2) -> i8 {
    let c2 = |p: P2| robust::Coord { x: p[0], y: p[1] };
    sign(robust::orient2d(c2(a), c2(b), c2(c)))
}

/// `p` lies in the bounding box of collinear `a`,`b`.
fn within(a: P2, b: P2, p: P2) -> bool {
    (0..2).all(|k| a[k].min(b[k]) <= p[k] && p[k] <= a[k].max(b[k]))
}

fn segments_meet_2d(p: P2, q: P2, a: P2, b: P2) -> bool {
    let (d1, d2) = (orient2(a, b, p), orient2(a, b, q));
    let (d3, d4) = (orient2(p, q, a), orient2(p, q, b));
    if d1 * d2 < 0 && d3 * d4 < 0 {
        return true;
    }
    (d1 == 0 && within(a, b, p))
        || (d2 == 0 && within(a, b, q))
        || (d3 == 0 && within(p, q, a))
        || (d4 == 0 && within(p, q, b))
}

fn segment_meets_triangle_2d(p: P2, q: P2, t: [P2; 3]) -> bool {
    let area = orient2(t[0], t[1], t[2]);
    if area != 0 {
        let inside = |x: P2| (0..3).all(|i| orient2(t[i], t[(i + 1) % 3], x) * area >= 0);
        if inside(p) || inside(q) {
            return true;
        }
    }
    (0..3).any(|i| segments_meet_2d(p, q, t[i], t[(i + 1) % 3]))
}

fn drop_axis(p: Vec3, axis: usize) -> P2 {
    match axis {
        0 => [p.y, p.z],
        1 => [p.x, p.z],
        _ => [p.x, p.y],
    }
}

/// Closed segment against closed triangle, exact.
fn segment_meets_triangle(p: Vec3, q: Vec3, t: [Vec3; 3]) -> bool {
    let (o1, o2) = (orient3(t[0], t[1], t[2], p), orient3(t[0], t[1], t[2], q));
    if o1 * o2 > 0 {
        return false;
    }
    if o1 == 0 && o2 == 0 {
        // Coplanar: the three axis projections all preserve intersection and
        // at least one of them is injective on the common plane.
        return (0..3).all(|ax| {
            segment_meets_triangle_2d(drop_axis(p, ax), drop_axis(q, ax), t.map(|v| drop_axis(v, ax)))
        });
    }
    // the segment crosses the plane once; test the line against the edges
    let s: [i8; 3] = std::array::from_fn(|i| orient3(p, q, t[i], t[(i + 1) % 3]));
    !(s.contains(&1) && s.contains(&-1))
}

/// Whether two closed triangles share a point, using exact predicates.
pub fn triangles_intersect(a: [Vec3; 3], b: [Vec3; 3]) -> bool {
    (0..3).any(|i| segment_meets_triangle(a[i], a[(i + 1) % 3], b))
        || (0..3).any(|i| segment_meets_triangle(b[i], b[(i + 1) % 3], a))
}

fn share_vertex(f: [usize; 3], g: [usize; 3]) -> bool {
    f.iter().any(|v| g.contains(v))
}

/// Non-adjacent face pairs `(i, j)`, `i < j`, that intersect. Sorted.
pub fn find_self_intersections(m: &TriMesh) -> Vec<(usize, usize)> {
    let bvh = TriangleBvh::from_mesh(m);
    let f = m.faces();
    bvh.overlapping_pairs()
        .into_iter()
        .filter(|&(i, j)| !share_vertex(f[i], f[j]) && triangles_intersect(m.triangle(i), m.triangle(j)))
        .collect()
}

/// All-pairs version of [`find_self_intersections`].
pub fn find_self_intersections_brute(m: &TriMesh) -> Vec<(usize, usize)> {
    let f = m.faces();
    let mut out = Vec::new();
    for i in 0..f.len() {
        for j in i + 1..f.len() {
            if !share_vertex(f[i], f[j]) && triangles_intersect(m.triangle(i), m.triangle(j)) {
                out.push((i, j));
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldedEdge {
    pub edge: usize,
    pub vertices: [usize; 2],
    /// Interior dihedral angle in degrees (180 for a flat edge).
    pub dihedral_deg: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReflectiveScan {
    pub edges: Vec<FoldedEdge>,
    /// Edges without exactly two incident faces, not evaluated.
    pub skipped: Vec<usize>,
}

/// Angle between the two face normals across edge `e`, in degrees. Normals
/// are taken in the orientation that makes them agree on the edge direction.
fn normal_turn(m: &TriMesh, e: usize) -> Option<f64> {
    let topo = m.topology();
    let fs = &topo.edge_faces[e];
    if fs.len() != 2 {
        return None;
    }
    let [a, b] = topo.edges[e];
    let forward = |f: usize| {
        let t = m.faces()[f];
        (0..3).any(|i| t[i] == a && t[(i + 1) % 3] == b)
    };
    let n1 = face_cross(m, fs[0]);
    let mut n2 = face_cross(m, fs[1]);
    if forward(fs[0]) == forward(fs[1]) {
        n2 = n2 * -1.0;
    }
    Some(n1.cross(n2).norm().atan2(n1.dot(n2)).to_degrees())
}

/// Edges whose dihedral angle deviates from flat by more than `max_dev_deg`.
pub fn find_reflective_edges(m: &TriMesh, max_dev_deg: f64) -> ReflectiveScan {
    let mut out = ReflectiveScan::default();
    for e in 0..m.n_edges() {
        match normal_turn(m, e) {
            None => out.skipped.push(e),
            Some(turn) if turn > max_dev_deg => out.edges.push(FoldedEdge {
                edge: e,
                vertices: m.topology().edges[e],
                dihedral_deg: 180.0 - turn,
            }),
            Some(_) => {}
        }
    }
    if !out.skipped.is_empty() {
        log::debug!("reflective-edge scan skipped {} boundary or non-manifold edges", out.skipped.len());
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub thresholds_mm: Vec<f64>,
    /// Fraction of vertices farther than each threshold.
    pub fractions: Vec<f64>,
    pub distances: Vec<f64>,
}

pub fn deviation_fractions(m: &TriMesh, reference: &NearestQuery, thresholds_mm: &[f64]) -> Result<Deviation> {
    if m.units() != Units::Mm || reference.units() != Units::Mm {
        return Err(Error::Units("deviation fractions need both meshes in mm".into()));
    }
    if m.n_vertices() == 0 {
        return Err(Error::Empty { what: "mesh" });
    }
    let distances: Vec<f64> = m.vertices().iter().map(|&p| reference.nearest(p).distance()).collect();
    let n = distances.len() as f64;
    let fractions = thresholds_mm.iter().map(|&t| distances.iter().filter(|&&d| d > t).count() as f64 / n).collect();
    Ok(Deviation { thresholds_mm: thresholds_mm.to_vec(), fractions, distances })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub vertices: usize,
    pub faces: usize,
    pub euler_characteristic: i64,
    pub watertight: bool,
    pub manifold: bool,
    pub boundary_edges: usize,
    pub non_manifold_edges: usize,
    pub dangling_count: usize,
    pub self_intersection_count: usize,
    pub reflective_edge_count: usize,
    /// Distinct vertices touched by any defect.
    pub defect_vertex_count: usize,
    pub dangling_nodes: Vec<usize>,
    pub self_intersections: Vec<(usize, usize)>,
    pub reflective_edges: Vec<FoldedEdge>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deviation: Option<Deviation>,
}

impl ValidityReport {
    pub fn is_clean(&self) -> bool {
        self.watertight
            && self.manifold
            && self.dangling_count == 0
            && self.self_intersection_count == 0
            && self.euler_characteristic == 2
    }

    pub fn summary(&self) -> String {
        format!(
            "watertight={} manifold={} euler={} dangling={} self_intersections={} reflective_edges={}",
            self.watertight,
            self.manifold,
            self.euler_characteristic,
            self.dangling_count,
            self.self_intersection_count,
            self.reflective_edge_count
        )
    }

    /// Structured text with a fixed key order.
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }

    pub fn from_text(s: &str) -> Result<ValidityReport> {
        toml::from_str(s).map_err(|e| Error::Config(format!("validity report: {e}")))
    }
}

/// Runs every detector; deviation is filled only when a reference is given.
pub fn audit(m: &TriMesh, reference: Option<&NearestQuery>, th: &ValidityThresholds) -> Result<ValidityReport> {
    th.validate()?;
    let dangling = find_dangling(m);
    let si = find_self_intersections(m);
    let refl = find_reflective_edges(m, th.reflective_deg).edges;
    let mut touched: Vec<usize> = dangling.clone();
    for &(i, j) in &si {
        touched.extend(m.faces()[i]);
        touched.extend(m.faces()[j]);
    }
    for e in &refl {
        touched.extend(e.vertices);
    }
    touched.sort_unstable();
    touched.dedup();
    let deviation = reference.map(|r| deviation_fractions(m, r, &th.deviation_mm)).transpose()?;
    Ok(ValidityReport {
        vertices: m.n_vertices(),
        faces: m.n_faces(),
        euler_characteristic: m.euler_characteristic(),
        watertight: m.is_watertight(),
        manifold: m.is_manifold(),
        boundary_edges: m.boundary_edges().len(),
        non_manifold_edges: m.non_manifold_edges().len(),
        dangling_count: dangling.len(),
        self_intersection_count: si.len(),
        reflective_edge_count: refl.len(),
        defect_vertex_count: touched.len(),
        dangling_nodes: dangling,
        self_intersections: si,
        reflective_edges: refl,
        deviation,
    })
}
