//! Inside/outside voxelization of closed meshes by ray parity.
//!
//! Rays run along +x through each voxel row. The projected triangle test uses
//! exact 2D orientation predicates; a ray that passes exactly through an edge
//! or vertex is nudged by a tiny deterministic offset and the row re-cast.

use robust::{orient2d, Coord};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::mesh::{TriMesh, Units};

use super::{Grid, Volume, VolumeKind};

const MAX_ATTEMPTS: usize = 16;
const NUDGE: f64 = 1e-6;
const BUCKET_MARGIN: f64 = 1e-3;

/// Position of each mesh vertex in fractional voxel index space.
fn index_space(mesh: &TriMesh, grid: &Grid) -> Vec<Vec3> {
    mesh.vertices()
        .iter()
        .map(|&p| {
            let world = match mesh.units() {
                Units::Mm => p,
                Units::Normalized => grid.from_normalized(p),
            };
            grid.index_of(world)
        })
        .collect()
}

enum RowHits {
    Clean(Vec<f64>),
    Degenerate,
}

fn cast_row(tris: &[[Vec3; 3]], candidates: &[u32], y: f64, z: f64) -> RowHits {
    let p = Coord { x: y, y: z };
    let mut xs = Vec::new();
    for &t in candidates {
        let [a, b, c] = tris[t as usize];
        let (pa, pb, pc) = (Coord { x: a.y, y: a.z }, Coord { x: b.y, y: b.z }, Coord { x: c.y, y: c.z });
        let o_ab = orient2d(pa, pb, p);
        let o_bc = orient2d(pb, pc, p);
        let o_ca = orient2d(pc, pa, p);
        let has_pos = o_ab > 0.0 || o_bc > 0.0 || o_ca > 0.0;
        let has_neg = o_ab < 0.0 || o_bc < 0.0 || o_ca < 0.0;
        if has_pos && has_neg {
            continue;
        }
        if o_ab == 0.0 || o_bc == 0.0 || o_ca == 0.0 {
            // on the closed boundary of the projected triangle
            return RowHits::Degenerate;
        }
        let sum = o_ab + o_bc + o_ca;
        let x = (o_bc * a.x + o_ca * b.x + o_ab * c.x) / sum;
        xs.push(x);
    }
    xs.sort_by(f64::total_cmp);
    RowHits::Clean(xs)
}

/// Voxel is 1 iff its centre lies inside the closed mesh. Meshes in
/// normalized units are mapped through the grid box.
pub fn rasterize(mesh: &TriMesh, grid: &Grid) -> Result<Volume> {
    if !mesh.is_watertight() {
        return Err(Error::NotClosed);
    }
    let d = grid.dims;
    let pts = index_space(mesh, grid);
    let tris: Vec<[Vec3; 3]> = mesh.faces().iter().map(|f| [pts[f[0]], pts[f[1]], pts[f[2]]]).collect();

    // bucket triangles by the rows their yz bounding box covers
    let rows = d[1] * d[2];
    let mut buckets: Vec<Vec<u32>> = vec![Vec::new(); rows];
    for (t, tri) in tris.iter().enumerate() {
        let lo_y = tri.iter().map(|p| p.y).fold(f64::INFINITY, f64::min) - BUCKET_MARGIN;
        let hi_y = tri.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max) + BUCKET_MARGIN;
        let lo_z = tri.iter().map(|p| p.z).fold(f64::INFINITY, f64::min) - BUCKET_MARGIN;
        let hi_z = tri.iter().map(|p| p.z).fold(f64::NEG_INFINITY, f64::max) + BUCKET_MARGIN;
        if hi_y < 0.0 || hi_z < 0.0 || lo_y > (d[1] - 1) as f64 || lo_z > (d[2] - 1) as f64 {
            continue;
        }
        let j0 = lo_y.ceil().max(0.0) as usize;
        let j1 = (hi_y.floor() as usize).min(d[1] - 1);
        let k0 = lo_z.ceil().max(0.0) as usize;
        let k1 = (hi_z.floor() as usize).min(d[2] - 1);
        for k in k0..=k1 {
            for j in j0..=j1 {
                buckets[j + d[1] * k].push(t as u32);
            }
        }
    }

    let mut data = vec![0.0; grid.len()];
    for k in 0..d[2] {
        for j in 0..d[1] {
            let cand = &buckets[j + d[1] * k];
            if cand.is_empty() {
                continue;
            }
            let mut hits = None;
            for attempt in 0..MAX_ATTEMPTS {
                let s = attempt as f64;
                let (dy, dz) = (NUDGE * s * std::f64::consts::SQRT_2, NUDGE * s * 3f64.sqrt());
                if let RowHits::Clean(xs) = cast_row(&tris, cand, j as f64 + dy, k as f64 + dz) {
                    hits = Some(xs);
                    break;
                }
            }
            let xs = hits.unwrap_or_else(|| {
                log::warn!("row ({j},{k}) stayed degenerate after {MAX_ATTEMPTS} nudges");
                Vec::new()
            });
            if xs.is_empty() {
                continue;
            }
            // count crossings strictly to the right of each centre
            let mut right = xs.len();
            let mut h = 0;
            for i in 0..d[0] {
                let x = i as f64;
                while h < xs.len() && xs[h] <= x {
                    h += 1;
                    right -= 1;
                }
                if right % 2 == 1 {
                    data[grid.index(i, j, k)] = 1.0;
                }
            }
        }
    }
    Volume::new(*grid, data, VolumeKind::Mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::icosphere;

    fn unit_box_grid(n: usize) -> Grid {
        let s = 1.0 / n as f64;
        Grid::new([n; 3], [s; 3], [0.5 * s; 3]).unwrap()
    }

    #[test]
    fn icosphere_volume_close_to_analytic() {
        let g = unit_box_grid(64);
        let m = icosphere(3).map_positions(|p| p * 0.5 + Vec3::splat(0.5)).with_units(Units::Mm);
        let v = rasterize(&m, &g).unwrap();
        let vox = v.count_nonzero() as f64 / 64f64.powi(3);
        let analytic = 4.0 / 3.0 * std::f64::consts::PI * 0.125;
        assert!((vox / analytic - 1.0).abs() < 0.03, "{vox} vs {analytic}");
    }

    #[test]
    fn tetrahedron_around_one_centre() {
        let g = Grid::cube(8);
        let c = g.center(3, 4, 5);
        let v = vec![
            c + Vec3::new(0.3, 0.0, -0.2),
            c + Vec3::new(-0.25, 0.3, -0.2),
            c + Vec3::new(-0.2, -0.3, -0.2),
            c + Vec3::new(0.0, 0.0, 0.4),
        ];
        let f = vec![[0, 2, 1], [0, 1, 3], [1, 2, 3], [2, 0, 3]];
        let m = TriMesh::build(v.clone(), f).unwrap().with_units(Units::Mm);
        let out = rasterize(&m, &g).unwrap();
        // brute-force point-in-tetrahedron by barycentric signs
        let inside = |p: Vec3| {
            let vol = |a: Vec3, b: Vec3, c: Vec3, d: Vec3| (b - a).cross(c - a).dot(d - a);
            let s = vol(v[0], v[1], v[2], v[3]).signum();
            [
                vol(p, v[1], v[2], v[3]),
                vol(v[0], p, v[2], v[3]),
                vol(v[0], v[1], p, v[3]),
                vol(v[0], v[1], v[2], p),
            ]
            .iter()
            .all(|x| x.signum() == s)
        };
        let mut expected = 0;
        for k in 0..8 {
            for j in 0..8 {
                for i in 0..8 {
                    let want = inside(g.center(i, j, k));
                    expected += want as usize;
                    assert_eq!(out.get(i, j, k) == 1.0, want);
                }
            }
        }
        assert_eq!(expected, 1);
        assert_eq!(out.count_nonzero(), 1);
    }

    #[test]
    fn outside_mesh_gives_empty() {
        let g = Grid::cube(8);
        let m = icosphere(1).map_positions(|p| p + Vec3::splat(50.0)).with_units(Units::Mm);
        assert_eq!(rasterize(&m, &g).unwrap().count_nonzero(), 0);
    }

    #[test]
    fn open_mesh_rejected() {
        let v = vec![Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)];
        let m = TriMesh::build(v, vec![[0, 1, 2]]).unwrap();
        assert!(matches!(rasterize(&m, &Grid::cube(8)), Err(Error::NotClosed)));
    }

    #[test]
    fn parity_ignores_orientation() {
        let g = Grid::cube(20);
        let m = icosphere(2).map_positions(|p| p * 7.0 + Vec3::splat(9.5)).with_units(Units::Mm);
        let a = rasterize(&m, &g).unwrap();
        let b = rasterize(&m.flipped(), &g).unwrap();
        assert_eq!(a, b);
    }
}
