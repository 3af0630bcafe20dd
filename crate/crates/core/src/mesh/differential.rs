use crate::geom::Vec3;

use super::TriMesh;

/// Unnormalized face normal `(p1 - p0) x (p2 - p0)`; its length is twice the area.
#[inline]
pub fn face_cross(m: &TriMesh, f: usize) -> Vec3 {
    let [a, b, c] = m.triangle(f);
    (b - a).cross(c - a)
}

#[derive(Clone, Debug)]
pub struct FaceNormals {
    pub normals: Vec<Vec3>,
    /// Faces with zero area; their normal is the zero vector.
    pub degenerate: Vec<usize>,
}

pub fn face_normals(m: &TriMesh) -> FaceNormals {
    let mut degenerate = Vec::new();
    let normals = (0..m.n_faces())
        .map(|f| {
            let c = face_cross(m, f);
            let n = c.norm();
            if n > 0.0 {
                c / n
            } else {
                degenerate.push(f);
                Vec3::ZERO
            }
        })
        .collect();
    FaceNormals { normals, degenerate }
}

pub fn face_areas(m: &TriMesh) -> Vec<f64> {
    (0..m.n_faces()).map(|f| 0.5 * face_cross(m, f).norm()).collect()
}

/// Area-weighted mean of incident face normals, normalized.
pub fn vertex_normals(m: &TriMesh) -> Vec<Vec3> {
    let mut acc = vec![Vec3::ZERO; m.n_vertices()];
    for (f, t) in m.faces().iter().enumerate() {
        // |cross| = 2·area, so the raw cross product is already area-weighted.
        let c = face_cross(m, f);
        for &v in t {
            acc[v] += c;
        }
    }
    acc.into_iter().map(Vec3::normalized).collect()
}
