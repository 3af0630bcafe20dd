use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::voxel::{Grid, Volume, VolumeKind};

/// Probabilities are clamped to `[CE_CLAMP, 1 - CE_CLAMP]` inside the logarithms.
pub const CE_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtWeights {
    /// Per-scale weights, coarse to fine.
    pub gamma: [f64; 3],
    /// Dice and cross-entropy weights.
    pub rho: [f64; 2],
}

impl Default for ExtWeights {
    fn default() -> Self {
        ExtWeights { gamma: [0.2, 0.3, 0.5], rho: [0.5, 0.5] }
    }
}

impl ExtWeights {
    pub fn validate(&self) -> Result<()> {
        if self.gamma.iter().chain(&self.rho).any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Config("extraction weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

fn check_dims(pred: &Volume, gold: &Volume) -> Result<()> {
    if pred.dims() != gold.dims() {
        return Err(Error::ShapeMismatch(format!("prediction {:?} vs gold {:?}", pred.dims(), gold.dims())));
    }
    Ok(())
}

/// Soft Dice loss `1 - 2Σpm / (Σp + Σm)` and its gradient in `p`. Both sums
/// zero counts as perfect agreement.
pub fn dice_loss(pred: &Volume, gold: &Volume) -> Result<(f64, Vec<f64>)> {
    check_dims(pred, gold)?;
    let (p, m) = (pred.data(), gold.data());
    let inter: f64 = p.iter().zip(m).map(|(a, b)| a * b).sum();
    let sum = p.iter().sum::<f64>() + m.iter().sum::<f64>();
    if sum == 0.0 {
        return Ok((0.0, vec![0.0; p.len()]));
    }
    let s2 = sum * sum;
    let grad = m.iter().map(|&mk| -2.0 * (mk * sum - inter) / s2).collect();
    Ok((1.0 - 2.0 * inter / sum, grad))
}

/// Voxel-averaged binary cross-entropy and its gradient in `p`.
pub fn ce_loss(pred: &Volume, gold: &Volume) -> Result<(f64, Vec<f64>)> {
    check_dims(pred, gold)?;
    let n = pred.data().len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(pred.data().len());
    for (&p, &m) in pred.data().iter().zip(gold.data()) {
        let pc = p.clamp(CE_CLAMP, 1.0 - CE_CLAMP);
        value -= m * pc.ln() + (1.0 - m) * (1.0 - pc).ln();
        let clamped = pc != p;
        grad.push(if clamped { 0.0 } else { -(m / pc - (1.0 - m) / (1.0 - pc)) / n });
    }
    Ok((value / n, grad))
}

/// Nearest-neighbour resampling of a mask onto `dims` covering the same box.
pub fn resample_nearest(gold: &Volume, dims: [usize; 3]) -> Result<Volume> {
    let src = gold.dims();
    if src == dims {
        return Ok(gold.clone());
    }
    let g = gold.grid();
    let spacing: [f64; 3] = std::array::from_fn(|a| g.spacing[a] * src[a] as f64 / dims[a] as f64);
    let lo = g.box_min();
    let origin: [f64; 3] = std::array::from_fn(|a| lo[a] + 0.5 * spacing[a]);
    let grid = Grid::new(dims, spacing, origin)?;
    let pick = |i: usize, a: usize| (((i as f64 + 0.5) * src[a] as f64 / dims[a] as f64) as usize).min(src[a] - 1);
    Volume::from_fn(grid, gold.kind(), |i, j, k| gold.get(pick(i, 0), pick(j, 1), pick(k, 2)))
}

#[derive(Clone, Debug)]
pub struct ExtLoss {
    pub value: f64,
    /// `rho₁·Dice + rho₂·CE` at each scale, before `gamma`.
    pub per_scale: Vec<f64>,
    /// Gradient with respect to each scale's probabilities.
    pub grads: Vec<Vec<f64>>,
}

/// Multi-scale deep-supervision loss over up to three prediction scales,
/// coarse to fine.
pub fn ext_loss(preds: &[Volume], gold: &Volume, w: &ExtWeights) -> Result<ExtLoss> {
    w.validate()?;
    if preds.is_empty() || preds.len() > 3 {
        return Err(Error::ShapeMismatch(format!("expected 1 to 3 scales, got {}", preds.len())));
    }
    let gamma = &w.gamma[3 - preds.len()..];
    let mut out = ExtLoss { value: 0.0, per_scale: Vec::new(), grads: Vec::new() };
    for (p, &g) in preds.iter().zip(gamma) {
        let gs = resample_nearest(gold, p.dims())?;
        let gs = if gs.kind() == VolumeKind::Mask { gs } else { gs.threshold(|x| x >= 0.5) };
        let (d, dg) = dice_loss(p, &gs)?;
        let (c, cg) = ce_loss(p, &gs)?;
        let scale = w.rho[0] * d + w.rho[1] * c;
        out.value += g * scale;
        out.per_scale.push(scale);
        out.grads.push(dg.iter().zip(&cg).map(|(a, b)| g * (w.rho[0] * a + w.rho[1] * b)).collect());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_pair(n: usize, seed: u64) -> (Volume, Volume) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Grid::cube(n);
        let p: Vec<f64> = (0..g.len()).map(|_| rng.random_range(0.05..0.95)).collect();
        let m: Vec<f64> = (0..g.len()).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect();
        (Volume::new(g, p, VolumeKind::Intensity).unwrap(), Volume::new(g, m, VolumeKind::Mask).unwrap())
    }

    fn fd(f: impl Fn(&Volume) -> f64, p: &Volume, grad: &[f64]) -> f64 {
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for i in 0..p.data().len() {
            let mut a = p.data().to_vec();
            let mut b = a.clone();
            a[i] += h;
            b[i] -= h;
            let num = (f(&p.with_data(a, VolumeKind::Intensity).unwrap())
                - f(&p.with_data(b, VolumeKind::Intensity).unwrap()))
                / (2.0 * h);
            scale = scale.max(num.abs());
            worst = worst.max((num - grad[i]).abs());
        }
        worst / scale
    }

    #[test]
    fn perfect_prediction_has_zero_dice_loss() {
        let (_, m) = rand_pair(4, 1);
        let p = m.with_data(m.data().to_vec(), VolumeKind::Intensity).unwrap();
        assert_eq!(dice_loss(&p, &m).unwrap().0, 0.0);
    }

    #[test]
    fn uniform_half_ce() {
        let g = Grid::cube(3);
        let p = Volume::filled(g, 0.5, VolumeKind::Intensity);
        let m = Volume::filled(g, 1.0, VolumeKind::Mask);
        assert!((ce_loss(&p, &m).unwrap().0 - 0.5f64.ln().abs()).abs() < 1e-15);
    }

    #[test]
    fn random_values_and_gradients() {
        let (p, m) = rand_pair(8, 3);
        // scalar re-evaluation
        let (mut i, mut sp, mut sm, mut ce) = (0.0, 0.0, 0.0, 0.0);
        for (a, b) in p.data().iter().zip(m.data()) {
            i += a * b;
            sp += a;
            sm += b;
            ce += -(b * a.ln() + (1.0 - b) * (1.0 - a).ln());
        }
        let (d, dg) = dice_loss(&p, &m).unwrap();
        let (c, cg) = ce_loss(&p, &m).unwrap();
        assert!((d - (1.0 - 2.0 * i / (sp + sm))).abs() < 1e-12);
        assert!((c - ce / 512.0).abs() < 1e-12);
        assert!(fd(|x| dice_loss(x, &m).unwrap().0, &p, &dg) < 1e-4);
        assert!(fd(|x| ce_loss(x, &m).unwrap().0, &p, &cg) < 1e-4);
    }

    #[test]
    fn shape_mismatch_errors() {
        let (p, _) = rand_pair(4, 1);
        let m = Volume::filled(Grid::cube(5), 0.0, VolumeKind::Mask);
        assert!(matches!(dice_loss(&p, &m), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn multiscale_combines_scales() {
        let (p8, m8) = rand_pair(8, 4);
        let (p4, _) = rand_pair(4, 5);
        let (p2, _) = rand_pair(2, 6);
        let w = ExtWeights::default();
        let out = ext_loss(&[p2.clone(), p4.clone(), p8.clone()], &m8, &w).unwrap();
        let hand: f64 = [&p2, &p4, &p8]
            .iter()
            .zip(w.gamma)
            .map(|(p, g)| {
                let gs = resample_nearest(&m8, p.dims()).unwrap();
                g * (0.5 * dice_loss(p, &gs).unwrap().0 + 0.5 * ce_loss(p, &gs).unwrap().0)
            })
            .sum();
        assert!((out.value - hand).abs() < 1e-12);
        let coarse = resample_nearest(&m8, [4; 3]).unwrap();
        assert_eq!(coarse.get(1, 2, 3), m8.get(3, 5, 7));
    }
}
