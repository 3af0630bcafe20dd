use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VolumeKind {
    Intensity,
    Mask,
    Sdf,
}

impl VolumeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            VolumeKind::Intensity => "intensity",
            VolumeKind::Mask => "mask",
            VolumeKind::Sdf => "sdf",
        }
    }

    pub fn parse(s: &str) -> Option<VolumeKind> {
        match s {
            "intensity" => Some(VolumeKind::Intensity),
            "mask" => Some(VolumeKind::Mask),
            "sdf" => Some(VolumeKind::Sdf),
            _ => None,
        }
    }
}

/// Sampling lattice: voxel `(i,j,k)` is centred at `origin + (i,j,k)·spacing`.
///
/// The grid box spans the voxel cells, i.e. half a voxel beyond the first and
/// last centres. Normalized coordinates map that box onto `[-1,1]^3`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl Grid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Grid> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidVolume(format!("dims must be positive, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidVolume(format!("spacing must be positive, got {spacing:?}")));
        }
        Ok(Grid { dims, spacing, origin })
    }

    /// Cubic grid of `n` voxels per axis with 1 mm spacing at the origin.
    pub fn cube(n: usize) -> Grid {
        Grid { dims: [n; 3], spacing: [1.0; 3], origin: [0.0; 3] }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_cubic(&self) -> bool {
        self.dims[0] == self.dims[1] && self.dims[1] == self.dims[2]
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let j = (idx / self.dims[0]) % self.dims[1];
        let k = idx / (self.dims[0] * self.dims[1]);
        [i, j, k]
    }

    /// World (mm) position of a voxel centre.
    #[inline]
    pub fn center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.point_at(Vec3::new(i as f64, j as f64, k as f64))
    }

    /// World position of a fractional voxel index.
    #[inline]
    pub fn point_at(&self, ijk: Vec3) -> Vec3 {
        Vec3::new(
            self.origin[0] + ijk.x * self.spacing[0],
            self.origin[1] + ijk.y * self.spacing[1],
            self.origin[2] + ijk.z * self.spacing[2],
        )
    }

    /// Fractional voxel index of a world position.
    #[inline]
    pub fn index_of(&self, p: Vec3) -> Vec3 {
        Vec3::new(
            (p.x - self.origin[0]) / self.spacing[0],
            (p.y - self.origin[1]) / self.spacing[1],
            (p.z - self.origin[2]) / self.spacing[2],
        )
    }

    pub fn box_min(&self) -> Vec3 {
        self.point_at(Vec3::splat(-0.5))
    }

    pub fn box_max(&self) -> Vec3 {
        self.point_at(Vec3::new(
            self.dims[0] as f64 - 0.5,
            self.dims[1] as f64 - 0.5,
            self.dims[2] as f64 - 0.5,
        ))
    }

    /// World position of the box centre.
    pub fn box_center(&self) -> Vec3 {
        (self.box_min() + self.box_max()) * 0.5
    }

    pub fn contains_world(&self, p: Vec3) -> bool {
        let (lo, hi) = (self.box_min(), self.box_max());
        (0..3).all(|a| p[a] >= lo[a] && p[a] <= hi[a])
    }

    /// Maps a world position to normalized coordinates (grid box to `[-1,1]^3`).
    pub fn to_normalized(&self, p: Vec3) -> Vec3 {
        let (lo, hi) = (self.box_min(), self.box_max());
        Vec3::new(
            2.0 * (p.x - lo.x) / (hi.x - lo.x) - 1.0,
            2.0 * (p.y - lo.y) / (hi.y - lo.y) - 1.0,
            2.0 * (p.z - lo.z) / (hi.z - lo.z) - 1.0,
        )
    }

    /// Inverse of [`Grid::to_normalized`].
    pub fn from_normalized(&self, u: Vec3) -> Vec3 {
        let (lo, hi) = (self.box_min(), self.box_max());
        Vec3::new(
            lo.x + (u.x + 1.0) * 0.5 * (hi.x - lo.x),
            lo.y + (u.y + 1.0) * 0.5 * (hi.y - lo.y),
            lo.z + (u.z + 1.0) * 0.5 * (hi.z - lo.z),
        )
    }

    /// Normalized coordinate in `[-1,1]` of every voxel centre along `axis`.
    pub fn normalized_center(&self, axis: usize, i: usize) -> f64 {
        (2.0 * i as f64 + 1.0) / self.dims[axis] as f64 - 1.0
    }
}

/// Dense scalar field on a [`Grid`], x fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    grid: Grid,
    data: Vec<f64>,
    kind: VolumeKind,
}

impl Volume {
    pub fn new(grid: Grid, data: Vec<f64>, kind: VolumeKind) -> Result<Volume> {
        let grid = Grid::new(grid.dims, grid.spacing, grid.origin)?;
        if data.len() != grid.len() {
            return Err(Error::InvalidVolume(format!(
                "data length {} does not match dims {:?}",
                data.len(),
                grid.dims
            )));
        }
        if kind == VolumeKind::Mask && data.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidVolume("mask values must be 0 or 1".into()));
        }
        Ok(Volume { grid, data, kind })
    }

    pub fn filled(grid: Grid, value: f64, kind: VolumeKind) -> Volume {
        Volume::new(grid, vec![value; grid.len()], kind).expect("filled volume is valid")
    }

    pub fn from_fn(grid: Grid, kind: VolumeKind, f: impl Fn(usize, usize, usize) -> f64) -> Result<Volume> {
        let mut data = Vec::with_capacity(grid.len());
        for k in 0..grid.dims[2] {
            for j in 0..grid.dims[1] {
                for i in 0..grid.dims[0] {
                    data.push(f(i, j, k));
                }
            }
        }
        Volume::new(grid, data, kind)
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    #[inline]
    pub fn kind(&self) -> VolumeKind {
        self.kind
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.grid.index(i, j, k)]
    }

    /// Value at a signed voxel index, clamped to the nearest edge voxel.
    #[inline]
    pub fn get_clamped(&self, i: isize, j: isize, k: isize) -> f64 {
        let c = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
        let d = self.grid.dims;
        self.get(c(i, d[0]), c(j, d[1]), c(k, d[2]))
    }

    /// Trilinear interpolation at a world position, edge-clamped.
    pub fn sample_trilinear(&self, p: Vec3) -> f64 {
        let idx = self.grid.index_of(p);
        let d = self.grid.dims;
        let mut base = [0isize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let x = idx[a].clamp(0.0, (d[a] - 1) as f64);
            let f = x.floor();
            base[a] = f as isize;
            frac[a] = x - f;
        }
        let mut acc = 0.0;
        for dz in 0..2 {
            let wz = if dz == 0 { 1.0 - frac[2] } else { frac[2] };
            for dy in 0..2 {
                let wy = if dy == 0 { 1.0 - frac[1] } else { frac[1] };
                for dx in 0..2 {
                    let wx = if dx == 0 { 1.0 - frac[0] } else { frac[0] };
                    let w = wx * wy * wz;
                    if w != 0.0 {
                        acc += w * self.get_clamped(base[0] + dx, base[1] + dy, base[2] + dz);
                    }
                }
            }
        }
        acc
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Binary mask of `pred(value)`.
    pub fn threshold(&self, pred: impl Fn(f64) -> bool) -> Volume {
        let data = self.data.iter().map(|&v| if pred(v) { 1.0 } else { 0.0 }).collect();
        Volume { grid: self.grid, data, kind: VolumeKind::Mask }
    }

    pub fn with_data(&self, data: Vec<f64>, kind: VolumeKind) -> Result<Volume> {
        Volume::new(self.grid, data, kind)
    }

    pub fn with_grid(&self, grid: Grid) -> Result<Volume> {
        Volume::new(grid, self.data.clone(), self.kind)
    }

    pub fn is_mask(&self) -> bool {
        self.kind == VolumeKind::Mask
    }

    /// Mask voxels with at least one 6-neighbor in the background (outside the
    /// grid counts as background).
    pub fn boundary_voxels(&self) -> Vec<[usize; 3]> {
        let d = self.grid.dims;
        let mut out = Vec::new();
        for k in 0..d[2] {
            for j in 0..d[1] {
                for i in 0..d[0] {
                    if self.get(i, j, k) == 0.0 {
                        continue;
                    }
                    let onb = |v: usize, n: usize| v == 0 || v + 1 == n;
                    let edge = onb(i, d[0]) || onb(j, d[1]) || onb(k, d[2]);
                    if edge
                        || self.get(i - 1, j, k) == 0.0
                        || self.get(i + 1, j, k) == 0.0
                        || self.get(i, j - 1, k) == 0.0
                        || self.get(i, j + 1, k) == 0.0
                        || self.get(i, j, k - 1) == 0.0
                        || self.get(i, j, k + 1) == 0.0
                    {
                        out.push([i, j, k]);
                    }
                }
            }
        }
        out
    }
}
