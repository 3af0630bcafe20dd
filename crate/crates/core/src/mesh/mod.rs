//! Indexed triangle meshes with cached adjacency.
//!
//! A [`TriMesh`] owns its vertex positions and faces and shares an immutable
//! [`Topology`] cache. Moving vertices (see [`TriMesh::with_positions`]) keeps
//! the cache; any change of connectivity goes through [`TriMesh::build`] and
//! rebuilds it.

mod differential;
mod icosphere;
mod refine;
mod template;

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geom::{Aabb, Vec3};

pub use differential::{face_areas, face_cross, face_normals, vertex_normals, FaceNormals};
pub use icosphere::{icosahedron, icosphere, torus};
pub use refine::{uniform_unpool, vertex_filter, FilterOutcome, ParentMap, VfThresholds};
pub use template::{load_template, validate_template};

/// Coordinate frame of a mesh's vertex positions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    /// Grid bounding box mapped to `[-1, 1]^3`.
    Normalized,
    /// Physical millimetres.
    Mm,
}

impl Units {
    pub fn as_str(self) -> &'static str {
        match self {
            Units::Normalized => "normalized",
            Units::Mm => "mm",
        }
    }
}

/// Connectivity caches derived from the face list.
#[derive(Debug)]
pub struct Topology {
    /// Undirected edges as `[lo, hi]`, numbered in first-appearance order
    /// while scanning faces.
    pub edges: Vec<[usize; 2]>,
    pub edge_faces: Vec<Vec<usize>>,
    /// Edge ids of `(a,b)`, `(b,c)`, `(c,a)` for each face `(a,b,c)`.
    pub face_edges: Vec<[usize; 3]>,
    /// Sorted one-ring neighbors.
    pub vertex_neighbors: Vec<Vec<usize>>,
    pub vertex_faces: Vec<Vec<usize>>,
    /// Every edge with two faces is traversed once in each direction.
    pub orientation_consistent: bool,
    lookup: HashMap<(usize, usize), usize>,
}

impl Topology {
    fn build(n_vertices: usize, faces: &[[usize; 3]]) -> Topology {
        let mut edges = Vec::with_capacity(faces.len() * 3 / 2 + 1);
        let mut edge_faces: Vec<Vec<usize>> = Vec::with_capacity(edges.capacity());
        let mut lookup = HashMap::with_capacity(edges.capacity());
        let mut face_edges = Vec::with_capacity(faces.len());
        let mut vertex_faces = vec![Vec::new(); n_vertices];
        // Directed half-edge counts, used for the orientation check.
        let mut forward = Vec::new();

        for (fi, f) in faces.iter().enumerate() {
            let mut fe = [0usize; 3];
            for k in 0..3 {
                let a = f[k];
                let b = f[(k + 1) % 3];
                let key = (a.min(b), a.max(b));
                let id = *lookup.entry(key).or_insert_with(|| {
                    edges.push([key.0, key.1]);
                    edge_faces.push(Vec::with_capacity(2));
                    forward.push(0i32);
                    edges.len() - 1
                });
                edge_faces[id].push(fi);
                forward[id] += if a < b { 1 } else { -1 };
                fe[k] = id;
                vertex_faces[a].push(fi);
            }
            face_edges.push(fe);
        }

        let orientation_consistent = edge_faces
            .iter()
            .zip(&forward)
            .all(|(fs, &d)| fs.len() != 2 || d == 0);

        let mut vertex_neighbors = vec![Vec::new(); n_vertices];
        for e in &edges {
            vertex_neighbors[e[0]].push(e[1]);
            vertex_neighbors[e[1]].push(e[0]);
        }
        for n in &mut vertex_neighbors {
            n.sort_unstable();
        }

        Topology {
            edges,
            edge_faces,
            face_edges,
            vertex_neighbors,
            vertex_faces,
            orientation_consistent,
            lookup,
        }
    }

    pub fn edge_id(&self, a: usize, b: usize) -> Option<usize> {
        self.lookup.get(&(a.min(b), a.max(b))).copied()
    }
}

#[derive(Clone, Debug)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    units: Units,
    topo: Arc<Topology>,
}

impl PartialEq for TriMesh {
    fn eq(&self, other: &Self) -> bool {
        self.units == other.units && self.faces == other.faces && self.vertices == other.vertices
    }
}

impl TriMesh {
    /// Builds a mesh in normalized units. Edges with more than two incident
    /// faces are accepted here; the validity audit reports them.
    pub fn build(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<TriMesh> {
        let n = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            for &i in f {
                if i >= n {
                    return Err(Error::IndexOutOfRange { face: fi, index: i, vertex_count: n });
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::DegenerateFace(fi));
            }
        }
        let topo = Arc::new(Topology::build(n, &faces));
        Ok(TriMesh { vertices, faces, units: Units::Normalized, topo })
    }

    pub fn empty(units: Units) -> TriMesh {
        TriMesh {
            vertices: Vec::new(),
            faces: Vec::new(),
            units,
            topo: Arc::new(Topology::build(0, &[])),
        }
    }

    pub fn with_units(mut self, units: Units) -> TriMesh {
        self.units = units;
        self
    }

    /// Same connectivity, new positions.
    ///
    /// Panics if the position count differs from the vertex count.
    pub fn with_positions(&self, vertices: Vec<Vec3>) -> TriMesh {
        assert_eq!(vertices.len(), self.vertices.len(), "position count must match vertex count");
        TriMesh {
            vertices,
            faces: self.faces.clone(),
            units: self.units,
            topo: Arc::clone(&self.topo),
        }
    }

    pub fn map_positions(&self, f: impl Fn(Vec3) -> Vec3) -> TriMesh {
        self.with_positions(self.vertices.iter().map(|&p| f(p)).collect())
    }

    /// Reverses the winding of every face.
    pub fn flipped(&self) -> TriMesh {
        let faces = self.faces.iter().map(|f| [f[0], f[2], f[1]]).collect();
        let mut m = TriMesh::build(self.vertices.clone(), faces).expect("flipping keeps indices valid");
        m.units = self.units;
        m
    }

    /// Disjoint union; `other`'s indices are shifted past `self`'s vertices.
    pub fn merged(&self, other: &TriMesh) -> TriMesh {
        let off = self.vertices.len();
        let mut v = self.vertices.clone();
        v.extend_from_slice(&other.vertices);
        let mut f = self.faces.clone();
        f.extend(other.faces.iter().map(|t| [t[0] + off, t[1] + off, t[2] + off]));
        let mut m = TriMesh::build(v, f).expect("merge keeps indices valid");
        m.units = self.units;
        m
    }

    #[inline]
    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    #[inline]
    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    #[inline]
    pub fn units(&self) -> Units {
        self.units
    }

    #[inline]
    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    #[inline]
    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    #[inline]
    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    #[inline]
    pub fn n_edges(&self) -> usize {
        self.topo.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    #[inline]
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.topo.vertex_neighbors[v]
    }

    pub fn triangle(&self, f: usize) -> [Vec3; 3] {
        let t = self.faces[f];
        [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]]
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::from_points(&self.vertices)
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.n_vertices() as i64 - self.n_edges() as i64 + self.n_faces() as i64
    }

    /// Every edge has exactly two incident faces.
    pub fn is_watertight(&self) -> bool {
        !self.faces.is_empty() && self.topo.edge_faces.iter().all(|f| f.len() == 2)
    }

    /// Watertight, and every vertex's incident faces form one fan.
    pub fn is_manifold(&self) -> bool {
        self.is_watertight() && (0..self.n_vertices()).all(|v| self.fan_count(v) == 1)
    }

    pub fn boundary_edges(&self) -> Vec<usize> {
        self.edges_with(|n| n == 1)
    }

    pub fn non_manifold_edges(&self) -> Vec<usize> {
        self.edges_with(|n| n > 2)
    }

    fn edges_with(&self, pred: impl Fn(usize) -> bool) -> Vec<usize> {
        (0..self.n_edges()).filter(|&e| pred(self.topo.edge_faces[e].len())).collect()
    }

    /// Number of edge-connected fans of faces around `v`. Zero for an
    /// unreferenced vertex.
    pub fn fan_count(&self, v: usize) -> usize {
        let vf = &self.topo.vertex_faces[v];
        if vf.is_empty() {
            return 0;
        }
        let mut parent: Vec<usize> = (0..vf.len()).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for &w in &self.topo.vertex_neighbors[v] {
            let e = self.topo.edge_id(v, w).expect("neighbor implies edge");
            let fs = &self.topo.edge_faces[e];
            let locals: Vec<usize> =
                fs.iter().map(|f| vf.iter().position(|g| g == f).expect("incident face")).collect();
            for pair in locals.windows(2) {
                let (a, b) = (find(&mut parent, pair[0]), find(&mut parent, pair[1]));
                if a != b {
                    parent[a] = b;
                }
            }
        }
        (0..vf.len()).filter(|&i| find(&mut parent, i) == i).count()
    }

    /// Number of edge-connected face components.
    pub fn component_count(&self) -> usize {
        let n = self.n_faces();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for fs in &self.topo.edge_faces {
            for w in fs.windows(2) {
                let (a, b) = (find(&mut parent, w[0]), find(&mut parent, w[1]));
                if a != b {
                    parent[a] = b;
                }
            }
        }
        (0..n).filter(|&i| find(&mut parent, i) == i).count()
    }

    /// Signed enclosed volume (positive for outward-oriented closed meshes).
    pub fn signed_volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let (a, b, c) = (self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]]);
                a.dot(b.cross(c)) / 6.0
            })
            .sum()
    }

    pub fn surface_area(&self) -> f64 {
        face_areas(self).iter().sum()
    }

    pub fn mean_edge_length(&self) -> f64 {
        if self.n_edges() == 0 {
            return 0.0;
        }
        let s: f64 = self
            .topo
            .edges
            .iter()
            .map(|e| (self.vertices[e[0]] - self.vertices[e[1]]).norm())
            .sum();
        s / self.n_edges() as f64
    }
}
