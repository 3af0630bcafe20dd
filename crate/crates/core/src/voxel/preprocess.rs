use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;

use super::{Grid, Volume, VolumeKind};

/// Z-score standardization (population moments).
pub fn zscore_normalize(v: &Volume) -> Result<Volume> {
    let n = v.data().len() as f64;
    let mean = v.data().iter().sum::<f64>() / n;
    let var = v.data().iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    if !(var > 0.0) {
        return Err(Error::ZeroVariance);
    }
    let inv = 1.0 / var.sqrt();
    let data = v.data().iter().map(|x| (x - mean) * inv).collect();
    v.with_data(data, VolumeKind::Intensity)
}

/// Output lattice of [`preprocess`]. The crop extent is `dims · spacing` mm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub dims: usize,
    pub spacing: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig { dims: 64, spacing: 1.0 }
    }
}

/// Resamples `v` (trilinear, edge-clamped) onto an isotropic cube centred on
/// `roi_center` (mm). Masks are re-binarized at 0.5.
pub fn preprocess(v: &Volume, roi_center: Vec3, cfg: &PreprocessConfig) -> Result<Volume> {
    if !v.grid().contains_world(roi_center) {
        return Err(Error::RoiOutOfBounds(roi_center.to_array()));
    }
    let n = cfg.dims;
    let half = (n as f64 - 1.0) * 0.5 * cfg.spacing;
    let origin = roi_center - Vec3::splat(half);
    let grid = Grid::new([n; 3], [cfg.spacing; 3], origin.to_array())?;
    let out = Volume::from_fn(grid, VolumeKind::Intensity, |i, j, k| v.sample_trilinear(grid.center(i, j, k)))?;
    match v.kind() {
        VolumeKind::Mask => Ok(out.threshold(|x| x >= 0.5)),
        kind => out.with_data(out.data().to_vec(), kind),
    }
}

/// World-space centroid of a mask's foreground voxels.
pub fn mask_centroid(m: &Volume) -> Option<Vec3> {
    let g = m.grid();
    let mut acc = Vec3::ZERO;
    let mut n = 0usize;
    for (idx, &val) in m.data().iter().enumerate() {
        if val != 0.0 {
            let [i, j, k] = g.coords(idx);
            acc += g.center(i, j, k);
            n += 1;
        }
    }
    (n > 0).then(|| acc / n as f64)
}
