//! Synthetic targets: smooth unions of spherical blobs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;

use super::morph::largest_component;
use super::{Grid, Volume, VolumeKind};

/// Generator parameters. Centres and radii are in normalized coordinates,
/// where the grid box is `[-1,1]^3`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthParams {
    pub seed: u64,
    pub dims: usize,
    pub n_blobs: usize,
    /// Range of each coordinate of the first blob centre.
    pub center_range: [f64; 2],
    pub radius_range: [f64; 2],
    /// Smooth-min blending width; larger values give fatter necks.
    pub neck_width: f64,
    /// Standard deviation of additive noise on the intensity image.
    pub noise_sigma: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            seed: 0,
            dims: 64,
            n_blobs: 3,
            center_range: [-0.15, 0.15],
            radius_range: [0.25, 0.42],
            neck_width: 0.2,
            noise_sigma: 0.1,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if self.dims < 8 {
            return Err(Error::DegenerateGrid([self.dims; 3]));
        }
        if self.n_blobs == 0 {
            return Err(Error::Config("n_blobs must be at least 1".into()));
        }
        let [lo, hi] = self.radius_range;
        if !(lo >= 0.0 && lo <= hi) {
            return Err(Error::Config(format!("radius range {lo}..{hi} is invalid")));
        }
        if self.center_range[0] > self.center_range[1] {
            return Err(Error::Config("center range is reversed".into()));
        }
        if !(self.noise_sigma >= 0.0) || !(self.neck_width >= 0.0) {
            return Err(Error::Config("noise_sigma and neck_width must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Blob {
    pub center: Vec3,
    pub radius: f64,
}

/// A generated case: distance field (mm), mask and a noisy intensity image.
#[derive(Clone, Debug)]
pub struct SynthCase {
    pub blobs: Vec<Blob>,
    pub sdf: Volume,
    pub mask: Volume,
    pub intensity: Volume,
}

/// Polynomial smooth minimum.
fn smooth_min(a: f64, b: f64, k: f64) -> f64 {
    if k <= 0.0 {
        return a.min(b);
    }
    let h = (0.5 + 0.5 * (b - a) / k).clamp(0.0, 1.0);
    b * (1.0 - h) + a * h - k * h * (1.0 - h)
}

fn sample_range(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn place_blobs(p: &SynthParams, rng: &mut ChaCha8Rng) -> Vec<Blob> {
    let mut blobs: Vec<Blob> = Vec::with_capacity(p.n_blobs);
    let first = Vec3::new(
        sample_range(rng, p.center_range),
        sample_range(rng, p.center_range),
        sample_range(rng, p.center_range),
    );
    blobs.push(Blob { center: first, radius: sample_range(rng, p.radius_range) });
    while blobs.len() < p.n_blobs {
        let anchor = blobs[rng.random_range(0..blobs.len())].clone();
        let radius = sample_range(rng, p.radius_range);
        let dir: [f64; 3] = UnitSphere.sample(rng);
        // overlap with the anchor keeps the union connected
        let reach = (anchor.radius + radius) * rng.random_range(0.45..0.75);
        let mut center = anchor.center + Vec3::from_array(dir) * reach;
        // keep the blob inside the box with a margin
        let limit = (0.85 - radius).max(0.0);
        for a in 0..3 {
            center[a] = center[a].clamp(-limit, limit);
        }
        blobs.push(Blob { center, radius });
    }
    blobs
}

/// Signed distance in normalized units to the smooth union of `blobs`.
pub fn blob_sdf(blobs: &[Blob], k: f64, u: Vec3) -> f64 {
    blobs
        .iter()
        .map(|b| (u - b.center).norm() - b.radius)
        .reduce(|a, b| smooth_min(a, b, k))
        .unwrap_or(f64::INFINITY)
}

pub fn synth_case(p: &SynthParams) -> Result<SynthCase> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let blobs = place_blobs(p, &mut rng);
    let grid = Grid::cube(p.dims);
    // normalized half-box in mm
    let half = p.dims as f64 * 0.5;
    let sdf = Volume::from_fn(grid, VolumeKind::Sdf, |i, j, k| {
        let u = Vec3::new(grid.normalized_center(0, i), grid.normalized_center(1, j), grid.normalized_center(2, k));
        blob_sdf(&blobs, p.neck_width, u) * half
    })?;
    let mask = largest_component(&sdf.threshold(|v| v < 0.0));
    let noise = Normal::new(0.0, p.noise_sigma.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let data = mask
        .data()
        .iter()
        .map(|&m| m + if p.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 })
        .collect();
    let intensity = Volume::new(grid, data, VolumeKind::Intensity)?;
    Ok(SynthCase { blobs, sdf, mask, intensity })
}

/// Distance field (mm) and mask of a synthetic target.
pub fn synth_shape(p: &SynthParams) -> Result<(Volume, Volume)> {
    let c = synth_case(p)?;
    Ok((c.sdf, c.mask))
}
