use std::f64::consts::TAU;

use crate::geom::Vec3;

use super::{uniform_unpool, TriMesh};

/// Regular icosahedron inscribed in the unit sphere, outward winding.
pub fn icosahedron() -> TriMesh {
    let p = (1.0 + 5f64.sqrt()) / 2.0;
    let raw = [
        (-1.0, p, 0.0),
        (1.0, p, 0.0),
        (-1.0, -p, 0.0),
        (1.0, -p, 0.0),
        (0.0, -1.0, p),
        (0.0, 1.0, p),
        (0.0, -1.0, -p),
        (0.0, 1.0, -p),
        (p, 0.0, -1.0),
        (p, 0.0, 1.0),
        (-p, 0.0, -1.0),
        (-p, 0.0, 1.0),
    ];
    let vertices = raw.iter().map(|&(x, y, z)| Vec3::new(x, y, z).normalized()).collect();
    let faces = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    TriMesh::build(vertices, faces).expect("icosahedron is valid")
}

/// Unit icosphere: `level` rounds of midpoint subdivision, each followed by
/// projection onto the sphere. `V = 10·4^level + 2`.
pub fn icosphere(level: u32) -> TriMesh {
    let mut m = icosahedron();
    for _ in 0..level {
        let (fine, _) = uniform_unpool(&m).expect("icosphere stays watertight");
        m = fine.map_positions(Vec3::normalized);
    }
    m
}

/// Triangulated torus on an `nu × nv` grid, major radius `big_r`, tube radius `r`.
pub fn torus(nu: usize, nv: usize, big_r: f64, r: f64) -> TriMesh {
    let mut v = Vec::with_capacity(nu * nv);
    for i in 0..nu {
        let u = TAU * i as f64 / nu as f64;
        for j in 0..nv {
            let w = TAU * j as f64 / nv as f64;
            let rr = big_r + r * w.cos();
            v.push(Vec3::new(rr * u.cos(), rr * u.sin(), r * w.sin()));
        }
    }
    let id = |i: usize, j: usize| (i % nu) * nv + (j % nv);
    let mut f = Vec::with_capacity(2 * nu * nv);
    for i in 0..nu {
        for j in 0..nv {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            f.push([a, b, c]);
            f.push([a, c, d]);
        }
    }
    TriMesh::build(v, f).expect("torus grid is valid")
}
