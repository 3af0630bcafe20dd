//! Marching cubes by per-cell contour tracing, and the pseudo-gold pipeline.
//!
//! Each cell face contributes oriented segments between its edge crossings.
//! A face whose inside corners sit on a diagonal is resolved by separating
//! them, the same rule on both sides of the face, so neighbouring cells always
//! agree and the output is crack-free. Segments chain into closed loops inside
//! the cell; each loop is fanned, or triangulated around its centroid when a
//! fan diagonal could coincide with one from the neighbouring cell.
//!
//! The grid is padded by a virtual layer of outside values, so any level set
//! produces a closed surface. Crossings against the virtual layer sit half a
//! voxel beyond the boundary centres, on the grid box.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::mesh::{TriMesh, Units};
use crate::voxel::{morph_cleanup_with, CleanupOptions, Grid, Volume, VolumeKind};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IsoConfig {
    pub isovalue: f64,
    pub min_component_voxels: usize,
    pub normalize_to_unit_cube: bool,
}

impl Default for IsoConfig {
    fn default() -> Self {
        IsoConfig { isovalue: 0.5, min_component_voxels: 50, normalize_to_unit_cube: true }
    }
}

impl IsoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.isovalue > 0.0 && self.isovalue < 1.0) {
            return Err(Error::Config(format!("mask isovalue must lie in (0,1), got {}", self.isovalue)));
        }
        Ok(())
    }
}

// corner c = dx + 2·dy + 4·dz
const CORNER: [[usize; 3]; 8] =
    [[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0], [0, 0, 1], [1, 0, 1], [0, 1, 1], [1, 1, 1]];

// cell faces, corners counter-clockwise seen from outside the cell
const FACES: [[usize; 4]; 6] = [
    [0, 4, 6, 2], // x = 0
    [1, 3, 7, 5], // x = 1
    [0, 1, 5, 4], // y = 0
    [2, 6, 7, 3], // y = 1
    [0, 2, 3, 1], // z = 0
    [4, 5, 7, 6], // z = 1
];

/// Which side of the isovalue counts as the solid.
fn inside_is_below(kind: VolumeKind) -> bool {
    kind == VolumeKind::Sdf
}

struct Extractor<'a> {
    v: &'a Volume,
    iso: f64,
    below: bool,
    pd: [usize; 3],
    edge_vertex: Vec<u32>,
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
}

impl Extractor<'_> {
    /// Value at padded corner `p` (grid index + 1), `None` in the virtual layer.
    fn value(&self, p: [usize; 3]) -> Option<f64> {
        let d = self.v.dims();
        if (0..3).any(|a| p[a] == 0 || p[a] > d[a]) {
            None
        } else {
            Some(self.v.get(p[0] - 1, p[1] - 1, p[2] - 1))
        }
    }

    fn inside(&self, val: Option<f64>) -> bool {
        match val {
            None => false,
            Some(x) if self.below => x < self.iso,
            Some(x) => x > self.iso,
        }
    }

    fn world(&self, p: [usize; 3]) -> Vec3 {
        let q = Vec3::new(p[0] as f64 - 1.0, p[1] as f64 - 1.0, p[2] as f64 - 1.0);
        self.v.grid().point_at(q)
    }

    /// Welded vertex on the lattice edge between padded corners `a` and `b`.
    fn crossing(&mut self, a: [usize; 3], b: [usize; 3]) -> usize {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let axis = (0..3).find(|&ax| lo[ax] != hi[ax]).expect("distinct corners");
        let key = 3 * (lo[0] + self.pd[0] * (lo[1] + self.pd[1] * lo[2])) + axis;
        if self.edge_vertex[key] != u32::MAX {
            return self.edge_vertex[key] as usize;
        }
        let (va, vb) = (self.value(lo), self.value(hi));
        let t = match (va, vb) {
            (Some(x), Some(y)) => ((self.iso - x) / (y - x)).clamp(0.0, 1.0),
            _ => 0.5,
        };
        let (pa, pb) = (self.world(lo), self.world(hi));
        let id = self.vertices.len();
        self.vertices.push(pa + (pb - pa) * t);
        self.edge_vertex[key] = id as u32;
        id
    }

    fn cell(&mut self, base: [usize; 3]) {
        let mut corner = [[0usize; 3]; 8];
        let mut inside = [false; 8];
        for c in 0..8 {
            corner[c] = [base[0] + CORNER[c][0], base[1] + CORNER[c][1], base[2] + CORNER[c][2]];
            inside[c] = self.inside(self.value(corner[c]));
        }
        if inside.iter().all(|&b| b) || inside.iter().all(|&b| !b) {
            return;
        }
        // segments as (from, to) pairs of cell edges, each edge a sorted corner pair
        let mut segs: Vec<([usize; 2], [usize; 2], usize)> = Vec::with_capacity(12);
        for (fi, f) in FACES.iter().enumerate() {
            let b: [bool; 4] = std::array::from_fn(|i| inside[f[i]]);
            for s in 0..4 {
                // start of a maximal counter-clockwise run of inside corners
                if !b[s] || b[(s + 3) % 4] {
                    continue;
                }
                let mut e = s;
                while b[(e + 1) % 4] {
                    e = (e + 1) % 4;
                }
                let entering = sorted(f[(s + 3) % 4], f[s]);
                let leaving = sorted(f[e], f[(e + 1) % 4]);
                // inside stays on the left walking leaving -> entering, so loops
                // run clockwise seen from outside the solid
                segs.push((leaving, entering, fi));
            }
        }

        let mut used = vec![false; segs.len()];
        for start in 0..segs.len() {
            if used[start] {
                continue;
            }
            let mut lp: Vec<[usize; 2]> = Vec::new();
            let mut cur = start;
            loop {
                used[cur] = true;
                lp.push(segs[cur].0);
                let to = segs[cur].1;
                match (0..segs.len()).find(|&s| !used[s] && segs[s].0 == to) {
                    Some(n) => cur = n,
                    None => break,
                }
            }
            debug_assert_eq!(segs[cur].1, lp[0], "open contour in cell");
            let ids: Vec<usize> = lp.iter().map(|e| self.crossing(corner[e[0]], corner[e[1]])).collect();
            self.emit_loop(&lp, &ids);
        }
    }

    fn emit_loop(&mut self, edges: &[[usize; 2]], ids: &[usize]) {
        let n = ids.len();
        if n == 3 {
            self.faces.push([ids[0], ids[2], ids[1]]);
            return;
        }
        let fan_ok = n <= 6 && (2..n - 1).all(|i| !share_face(edges[0], edges[i]));
        if fan_ok {
            for i in 1..n - 1 {
                self.faces.push([ids[0], ids[i + 1], ids[i]]);
            }
        } else {
            let c = ids.iter().fold(Vec3::ZERO, |acc, &i| acc + self.vertices[i]) / n as f64;
            let cid = self.vertices.len();
            self.vertices.push(c);
            for i in 0..n {
                self.faces.push([cid, ids[(i + 1) % n], ids[i]]);
            }
        }
    }
}

fn sorted(a: usize, b: usize) -> [usize; 2] {
    if a < b {
        [a, b]
    } else {
        [b, a]
    }
}

fn share_face(a: [usize; 2], b: [usize; 2]) -> bool {
    FACES.iter().any(|f| {
        let on = |e: [usize; 2]| f.contains(&e[0]) && f.contains(&e[1]);
        on(a) && on(b)
    })
}

/// Isosurface in world coordinates (mm). Masks and intensities are solid
/// above `isovalue`, distance fields below it; faces wind outward from the
/// solid. An isovalue outside the data range yields an empty mesh.
pub fn marching_cubes(v: &Volume, isovalue: f64) -> Result<TriMesh> {
    let d = v.dims();
    if d.iter().any(|&n| n < 2) {
        return Err(Error::DegenerateGrid(d));
    }
    let pd = [d[0] + 2, d[1] + 2, d[2] + 2];
    let mut ex = Extractor {
        v,
        iso: isovalue,
        below: inside_is_below(v.kind()),
        pd,
        edge_vertex: vec![u32::MAX; 3 * pd[0] * pd[1] * pd[2]],
        vertices: Vec::new(),
        faces: Vec::new(),
    };
    for k in 0..=d[2] {
        for j in 0..=d[1] {
            for i in 0..=d[0] {
                ex.cell([i, j, k]);
            }
        }
    }
    Ok(TriMesh::build(ex.vertices, ex.faces)?.with_units(Units::Mm))
}

/// Maps a mesh in mm onto normalized coordinates of `grid` (box to `[-1,1]^3`).
pub fn normalize_coords(mesh: &TriMesh, grid: &Grid) -> Result<TriMesh> {
    match mesh.units() {
        Units::Normalized => Err(Error::Units("mesh is already in normalized coordinates".into())),
        Units::Mm => Ok(mesh.map_positions(|p| grid.to_normalized(p)).with_units(Units::Normalized)),
    }
}

/// Inverse of [`normalize_coords`].
pub fn denormalize_coords(mesh: &TriMesh, grid: &Grid) -> Result<TriMesh> {
    match mesh.units() {
        Units::Mm => Err(Error::Units("mesh is already in mm".into())),
        Units::Normalized => Ok(mesh.map_positions(|p| grid.from_normalized(p)).with_units(Units::Mm)),
    }
}

/// Cleanup, marching cubes and normalization, with no smoothing. Only the
/// largest surviving component is meshed so the output is a single surface.
pub fn pseudo_gold(mask: &Volume, cfg: &IsoConfig) -> Result<TriMesh> {
    cfg.validate()?;
    let bin = mask.threshold(|x| x >= cfg.isovalue);
    let out = morph_cleanup_with(
        &bin,
        CleanupOptions { min_component: cfg.min_component_voxels, largest_only: false, fill_holes: true },
    );
    if !out.removed_components.is_empty() {
        log::info!("pseudo_gold: removed {} small components", out.removed_components.len());
    }
    let cleaned = crate::voxel::largest_component(&out.mask);
    if cleaned.count_nonzero() == 0 {
        return Err(Error::NoForeground);
    }
    if cleaned.count_nonzero() != out.mask.count_nonzero() {
        log::info!("pseudo_gold: kept the largest of several components");
    }
    let mesh = marching_cubes(&cleaned, cfg.isovalue)?;
    if cfg.normalize_to_unit_cube {
        normalize_coords(&mesh, mask.grid())
    } else {
        Ok(mesh)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere_sdf(n: usize, spacing: f64, r: f64) -> Volume {
        let g = Grid::new([n; 3], [spacing; 3], [0.0; 3]).unwrap();
        let c = g.box_center();
        Volume::from_fn(g, VolumeKind::Sdf, |i, j, k| (g.center(i, j, k) - c).norm() - r).unwrap()
    }

    #[test]
    fn sphere_area_and_topology() {
        let m = marching_cubes(&sphere_sdf(64, 1.0, 10.0), 0.0).unwrap();
        assert!(m.is_watertight());
        assert!(m.is_manifold());
        assert_eq!(m.euler_characteristic(), 2);
        let want = 4.0 * std::f64::consts::PI * 100.0;
        assert!((m.surface_area() / want - 1.0).abs() < 0.02, "area {}", m.surface_area());
        assert!(m.signed_volume() > 0.0, "faces must wind outward");
    }

    #[test]
    fn area_error_shrinks_with_resolution() {
        let want = 4.0 * std::f64::consts::PI * 100.0;
        let errs: Vec<f64> = [(16, 4.0), (32, 2.0), (64, 1.0)]
            .iter()
            .map(|&(n, h)| (marching_cubes(&sphere_sdf(n, h, 10.0), 0.0).unwrap().surface_area() - want).abs())
            .collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    }

    #[test]
    fn empty_cases() {
        let m = Volume::filled(Grid::cube(8), 0.0, VolumeKind::Mask);
        assert!(marching_cubes(&m, 0.5).unwrap().is_empty());
        let s = sphere_sdf(8, 1.0, 2.0);
        assert!(marching_cubes(&s, -100.0).unwrap().is_empty());
    }

    #[test]
    fn single_voxel_is_closed_genus_zero() {
        let g = Grid::cube(5);
        let mut d = vec![0.0; g.len()];
        d[g.index(2, 2, 2)] = 1.0;
        let m = marching_cubes(&Volume::new(g, d, VolumeKind::Mask).unwrap(), 0.5).unwrap();
        // brute-force edge incidence count
        let mut inc = std::collections::HashMap::new();
        for f in m.faces() {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                *inc.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        assert!(inc.values().all(|&c| c == 2));
        assert_eq!(m.n_vertices() as i64 - inc.len() as i64 + m.n_faces() as i64, 2);
        let c = g.center(2, 2, 2);
        for p in m.vertices() {
            assert!((*p - c).max_abs() <= 0.5 + 1e-12);
        }
    }

    #[test]
    fn diagonal_voxels_stay_separate() {
        // two voxels touching along an edge: separated faces give two closed shells
        let g = Grid::cube(6);
        let mut d = vec![0.0; g.len()];
        d[g.index(2, 2, 2)] = 1.0;
        d[g.index(3, 3, 2)] = 1.0;
        let m = marching_cubes(&Volume::new(g, d, VolumeKind::Mask).unwrap(), 0.5).unwrap();
        assert!(m.is_watertight());
        assert_eq!(m.euler_characteristic(), 4);
        assert_eq!(m.component_count(), 2);
    }

    #[test]
    fn touching_grid_border_still_closes() {
        let m = Volume::filled(Grid::cube(4), 1.0, VolumeKind::Mask);
        let mesh = marching_cubes(&m, 0.5).unwrap();
        assert!(mesh.is_watertight());
        assert_eq!(mesh.euler_characteristic(), 2);
        // faces lie on the grid box; corner cells chamfer it
        let vol = mesh.signed_volume();
        assert!(vol > 27.0 && vol < 64.0, "volume {vol}");
        let (lo, hi) = (m.grid().box_min(), m.grid().box_max());
        assert!(mesh.vertices().iter().all(|p| (0..3).all(|a| p[a] >= lo[a] - 1e-12 && p[a] <= hi[a] + 1e-12)));
    }

    #[test]
    fn normalization_corners_and_inverse() {
        let g = Grid::new([10, 20, 30], [1.0, 0.5, 2.0], [0.5, 0.25, 1.0]).unwrap();
        let m = TriMesh::build(
            vec![Vec3::ZERO, g.box_center(), g.box_max(), Vec3::new(3.3, -1.0, 7.0)],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
        .with_units(Units::Mm);
        let n = normalize_coords(&m, &g).unwrap();
        assert!((n.vertices()[0] - Vec3::splat(-1.0)).max_abs() < 1e-12);
        assert!(n.vertices()[1].max_abs() < 1e-12);
        assert!((n.vertices()[2] - Vec3::splat(1.0)).max_abs() < 1e-12);
        assert_eq!(n.faces(), m.faces());
        let back = denormalize_coords(&n, &g).unwrap();
        for (a, b) in back.vertices().iter().zip(m.vertices()) {
            assert!((*a - *b).max_abs() < 1e-9);
        }
    }

    #[test]
    fn pseudo_gold_drops_satellite_and_is_deterministic() {
        let g = Grid::cube(24);
        let c = g.box_center();
        let mut d: Vec<f64> =
            (0..g.len()).map(|i| if (g.center(g.coords(i)[0], g.coords(i)[1], g.coords(i)[2]) - c).norm() < 7.0 { 1.0 } else { 0.0 }).collect();
        // 20-voxel satellite
        for k in 0..5 {
            for j in 0..2 {
                for i in 0..2 {
                    d[g.index(20 + i, 20 + j, 1 + k)] = 1.0;
                }
            }
        }
        let m = Volume::new(g, d, VolumeKind::Mask).unwrap();
        let a = pseudo_gold(&m, &IsoConfig::default()).unwrap();
        assert_eq!(a.component_count(), 1);
        assert!(a.is_watertight());
        assert_eq!(a.euler_characteristic(), 2);
        assert!(a.vertices().iter().all(|p| p.max_abs() < 0.7));
        let b = pseudo_gold(&m, &IsoConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pseudo_gold_rejects_empty() {
        let m = Volume::filled(Grid::cube(8), 0.0, VolumeKind::Mask);
        assert!(matches!(pseudo_gold(&m, &IsoConfig::default()), Err(Error::NoForeground)));
    }
}
