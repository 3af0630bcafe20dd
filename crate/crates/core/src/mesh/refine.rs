//! Adaptive refinement: 1→4 midpoint unpooling and displacement-driven
//! pruning of the new midpoints with crack-free re-triangulation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;

use super::TriMesh;

/// Provenance of the vertices created by [`uniform_unpool`].
///
/// Vertex `base_vertices + k` is the midpoint of `parents[k]`.
#[derive(Clone, Debug)]
pub struct ParentMap {
    pub base_vertices: usize,
    pub base_faces: Vec<[usize; 3]>,
    /// Midpoint vertex ids of edges `(a,b)`, `(b,c)`, `(c,a)` per base face.
    pub face_midpoints: Vec<[usize; 3]>,
    pub parents: Vec<[usize; 2]>,
    /// Parent edge length before unpooling.
    pub parent_lengths: Vec<f64>,
}

impl ParentMap {
    pub fn parent_of(&self, v: usize) -> Option<[usize; 2]> {
        v.checked_sub(self.base_vertices).and_then(|k| self.parents.get(k).copied())
    }

    pub fn is_midpoint(&self, v: usize) -> bool {
        v >= self.base_vertices && v < self.base_vertices + self.parents.len()
    }
}

/// Pruning band, in fractions of the parent edge length.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VfThresholds {
    /// Midpoints that moved less than this are stationary.
    pub t_lo: f64,
    /// Midpoints that moved more than this are excessive.
    pub t_hi: f64,
}

impl Default for VfThresholds {
    fn default() -> Self {
        VfThresholds { t_lo: 0.01, t_hi: 1.0 }
    }
}

impl VfThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_lo >= 0.0 && self.t_lo < self.t_hi) {
            return Err(Error::Config(format!(
                "vertex filter thresholds need 0 <= t_lo < t_hi, got {} and {}",
                self.t_lo, self.t_hi
            )));
        }
        Ok(())
    }
}

/// Splits every face into four through its edge midpoints.
///
/// Midpoint of edge `e` becomes vertex `V + e`. Faces of base face `f` occupy
/// `4f..4f+4`, corners first and the central face last.
pub fn uniform_unpool(m: &TriMesh) -> Result<(TriMesh, ParentMap)> {
    if !m.is_watertight() {
        return Err(Error::NotWatertight(format!(
            "uniform unpool needs every edge shared by two faces ({} boundary, {} non-manifold)",
            m.boundary_edges().len(),
            m.non_manifold_edges().len()
        )));
    }
    let topo = m.topology();
    let nv = m.n_vertices();
    let pos = m.vertices();

    let mut vertices = pos.to_vec();
    vertices.reserve(topo.edges.len());
    let mut parent_lengths = Vec::with_capacity(topo.edges.len());
    for e in &topo.edges {
        let (a, b) = (pos[e[0]], pos[e[1]]);
        vertices.push((a + b) * 0.5);
        parent_lengths.push((a - b).norm());
    }

    let mut faces = Vec::with_capacity(4 * m.n_faces());
    let mut face_midpoints = Vec::with_capacity(m.n_faces());
    for (f, t) in m.faces().iter().enumerate() {
        let fe = topo.face_edges[f];
        let [mab, mbc, mca] = [nv + fe[0], nv + fe[1], nv + fe[2]];
        let [a, b, c] = *t;
        faces.push([a, mab, mca]);
        faces.push([mab, b, mbc]);
        faces.push([mca, mbc, c]);
        faces.push([mab, mbc, mca]);
        face_midpoints.push([mab, mbc, mca]);
    }

    let fine = TriMesh::build(vertices, faces)?.with_units(m.units());
    let pm = ParentMap {
        base_vertices: nv,
        base_faces: m.faces().to_vec(),
        face_midpoints,
        parents: topo.edges.clone(),
        parent_lengths,
    };
    Ok((fine, pm))
}

#[derive(Clone, Debug)]
pub struct FilterOutcome {
    pub mesh: TriMesh,
    /// For each output vertex, its index in the unpooled input.
    pub kept: Vec<usize>,
    /// Unpooled vertex ids that were removed.
    pub pruned: Vec<usize>,
}

/// Removes midpoints whose displacement is outside
/// `[t_lo·len, t_hi·len]` of their parent edge, then re-triangulates each base
/// face from the subset of its midpoints that survived (1-, 2-, 3- or 4-way
/// split). Base vertices are never removed.
pub fn vertex_filter(
    m: &TriMesh,
    displacements: &[Vec3],
    pm: &ParentMap,
    th: VfThresholds,
) -> Result<FilterOutcome> {
    let expected = pm.base_vertices + pm.parents.len();
    if m.n_vertices() != expected || displacements.len() != expected {
        return Err(Error::ShapeMismatch(format!(
            "vertex filter expects {expected} vertices and displacements, got {} and {}",
            m.n_vertices(),
            displacements.len()
        )));
    }

    let keep: Vec<bool> = (0..pm.parents.len())
        .map(|k| {
            let d = displacements[pm.base_vertices + k].norm();
            let len = pm.parent_lengths[k];
            !(d < th.t_lo * len || d > th.t_hi * len)
        })
        .collect();

    let mut new_id = vec![usize::MAX; expected];
    let mut kept: Vec<usize> = (0..pm.base_vertices).collect();
    let mut pruned = Vec::new();
    for (v, id) in new_id.iter_mut().enumerate().take(pm.base_vertices) {
        *id = v;
    }
    for (k, &keep_it) in keep.iter().enumerate() {
        let v = pm.base_vertices + k;
        if keep_it {
            new_id[v] = kept.len();
            kept.push(v);
        } else {
            pruned.push(v);
        }
    }

    let pos = m.vertices();
    let is_kept = |v: usize| keep[v - pm.base_vertices];
    let mut faces = Vec::with_capacity(m.n_faces());
    for (t, mids) in pm.base_faces.iter().zip(&pm.face_midpoints) {
        let flags = [is_kept(mids[0]), is_kept(mids[1]), is_kept(mids[2])];
        split_face(*t, *mids, flags, pos, &mut faces);
    }
    for f in &mut faces {
        for v in f.iter_mut() {
            *v = new_id[*v];
        }
    }

    let vertices = kept.iter().map(|&v| pos[v]).collect();
    let mesh = TriMesh::build(vertices, faces)?.with_units(m.units());
    Ok(FilterOutcome { mesh, kept, pruned })
}

/// Red-green split of one base face `(a,b,c)` with midpoints on
/// `(a,b)`, `(b,c)`, `(c,a)`; emits faces in unpooled vertex ids.
fn split_face(t: [usize; 3], mids: [usize; 3], flags: [bool; 3], pos: &[Vec3], out: &mut Vec<[usize; 3]>) {
    let count = flags.iter().filter(|&&k| k).count();
    match count {
        0 => out.push(t),
        3 => {
            let [a, b, c] = t;
            let [mab, mbc, mca] = mids;
            out.push([a, mab, mca]);
            out.push([mab, b, mbc]);
            out.push([mca, mbc, c]);
            out.push([mab, mbc, mca]);
        }
        1 => {
            // rotate so the kept midpoint sits on edge (a,b)
            let r = flags.iter().position(|&k| k).unwrap();
            let (a, b, c) = (t[r], t[(r + 1) % 3], t[(r + 2) % 3]);
            let m = mids[r];
            out.push([a, m, c]);
            out.push([m, b, c]);
        }
        2 => {
            // rotate so the pruned midpoint sits on edge (c,a)
            let p = flags.iter().position(|&k| !k).unwrap();
            let r = (p + 1) % 3;
            let (a, b, c) = (t[r], t[(r + 1) % 3], t[(r + 2) % 3]);
            let (mab, mbc) = (mids[r], mids[(r + 1) % 3]);
            out.push([mab, b, mbc]);
            // quad a, mab, mbc, c: cut along the shorter diagonal
            if pos[a].dist2(pos[mbc]) <= pos[mab].dist2(pos[c]) {
                out.push([a, mab, mbc]);
                out.push([a, mbc, c]);
            } else {
                out.push([a, mab, c]);
                out.push([mab, mbc, c]);
            }
        }
        _ => unreachable!(),
    }
}
