//! Reconstruction energy over one or more deformation stages, and the
//! voxel-space extraction losses.

mod extraction;
mod gradcheck;
mod terms;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::mesh::TriMesh;

pub use gradcheck::{grad_check_term, random_instance, FD_STEP};
pub use extraction::{ce_loss, dice_loss, ext_loss, resample_nearest, ExtLoss, ExtWeights, CE_CLAMP};
pub use terms::{
    area_loss, chamfer, chamfer_to, edge_loss, laplacian_loss, normal_loss, normal_loss_with, seal_loss,
    surface_samples, NormalMode, Target, TermValue, SEAL_EPS_REL,
};

/// The six reconstruction terms, in weight order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Term {
    Chamfer,
    Laplacian,
    Normal,
    Edge,
    Area,
    Seal,
}

impl Term {
    pub const ALL: [Term; 6] = [Term::Chamfer, Term::Laplacian, Term::Normal, Term::Edge, Term::Area, Term::Seal];

    pub fn name(self) -> &'static str {
        match self {
            Term::Chamfer => "chamfer",
            Term::Laplacian => "laplacian",
            Term::Normal => "normal",
            Term::Edge => "edge",
            Term::Area => "area",
            Term::Seal => "seal",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecWeights {
    /// chamfer, laplacian, normal, edge, area, seal
    pub alpha: [f64; 6],
    pub lambda_seal: f64,
    pub normal_mode: NormalMode,
}

impl Default for RecWeights {
    fn default() -> Self {
        RecWeights { alpha: [1.0, 0.1, 0.1, 0.1, 1.0, 0.1], lambda_seal: 0.1, normal_mode: NormalMode::FaceCross }
    }
}

impl RecWeights {
    pub fn validate(&self) -> Result<()> {
        if self.alpha.iter().chain([&self.lambda_seal]).any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Config("reconstruction weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Values and gradients of every term for one mesh, plus the weighted total.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyReport {
    pub terms: [TermValue; 6],
    pub weights: RecWeights,
    pub total: f64,
    pub total_grad: Vec<Vec3>,
}

impl EnergyReport {
    pub fn term(&self, t: Term) -> &TermValue {
        &self.terms[t as usize]
    }

    /// First term whose value or gradient is not finite.
    pub fn non_finite_term(&self) -> Option<Term> {
        Term::ALL.into_iter().find(|&t| {
            let v = self.term(t);
            !v.value.is_finite() || v.grad.iter().any(|g| !g.is_finite())
        })
    }
}

/// Evaluates all six terms on `m` against `target`.
pub fn energy(m: &TriMesh, target: &Target, w: &RecWeights) -> Result<EnergyReport> {
    w.validate()?;
    let terms = [
        chamfer_to(m.vertices(), target)?,
        laplacian_loss(m)?,
        normal_loss(m, target, w.normal_mode),
        edge_loss(m),
        area_loss(m),
        seal_loss(m, w.lambda_seal),
    ];
    let mut total = 0.0;
    let mut total_grad = vec![Vec3::ZERO; m.n_vertices()];
    for (t, a) in terms.iter().zip(w.alpha) {
        total += a * t.value;
        if a != 0.0 {
            for (g, tg) in total_grad.iter_mut().zip(&t.grad) {
                *g += *tg * a;
            }
        }
    }
    Ok(EnergyReport { terms, weights: *w, total, total_grad })
}

/// One report per stage mesh, each against the full target.
pub fn rec_energy(stage_meshes: &[TriMesh], target: &Target, w: &RecWeights) -> Result<Vec<EnergyReport>> {
    stage_meshes.iter().map(|m| energy(m, target, w)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::icosphere;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stage() -> (TriMesh, Target) {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ico = icosphere(2);
        let m = ico.with_positions(ico.vertices().iter().map(|&p| p * rng.random_range(0.8..1.2)).collect());
        let q = icosphere(3).map_positions(|p| Vec3::new(p.x * 1.2, p.y, p.z * 0.9));
        (m, Target::from_vertices(&q).unwrap())
    }

    #[test]
    fn zero_weights_give_zero_total() {
        let (m, t) = stage();
        let r = energy(&m, &t, &RecWeights { alpha: [0.0; 6], ..Default::default() }).unwrap();
        assert_eq!(r.total, 0.0);
        assert!(r.total_grad.iter().all(|g| *g == Vec3::ZERO));
    }

    #[test]
    fn chamfer_only_equals_chamfer() {
        let (m, t) = stage();
        let r = energy(&m, &t, &RecWeights { alpha: [1.0, 0.0, 0.0, 0.0, 0.0, 0.0], ..Default::default() }).unwrap();
        let c = chamfer_to(m.vertices(), &t).unwrap();
        assert_eq!(r.total, c.value);
        assert_eq!(r.total_grad, c.grad);
    }

    #[test]
    fn default_weights_hand_sum() {
        let (m, t) = stage();
        let w = RecWeights::default();
        assert_eq!(w.alpha, [1.0, 0.1, 0.1, 0.1, 1.0, 0.1]);
        let r = energy(&m, &t, &w).unwrap();
        let hand = 1.0 * chamfer_to(m.vertices(), &t).unwrap().value
            + 0.1 * laplacian_loss(&m).unwrap().value
            + 0.1 * normal_loss(&m, &t, NormalMode::FaceCross).value
            + 0.1 * edge_loss(&m).value
            + 1.0 * area_loss(&m).value
            + 0.1 * seal_loss(&m, 0.1).value;
        assert!((r.total - hand).abs() < 1e-9);
    }

    #[test]
    fn total_is_linear_in_each_weight() {
        let (m, t) = stage();
        let base = energy(&m, &t, &RecWeights::default()).unwrap();
        for k in 0..6 {
            let mut w = RecWeights::default();
            w.alpha[k] *= 3.0;
            let r = energy(&m, &t, &w).unwrap();
            let expect = base.total + 2.0 * RecWeights::default().alpha[k] * base.terms[k].value;
            assert!((r.total - expect).abs() <= 1e-12 * expect.abs().max(1.0), "term {k}");
        }
    }

    #[test]
    fn stages_are_independent() {
        let (m, t) = stage();
        let m2 = m.map_positions(|p| p * 1.1);
        let rs = rec_energy(&[m.clone(), m2.clone()], &t, &RecWeights::default()).unwrap();
        assert_eq!(rs[1], energy(&m2, &t, &RecWeights::default()).unwrap());
        assert!(rs.iter().all(|r| r.terms.iter().all(|t| t.value >= 0.0)));
    }
}
