//! Finite-difference checks of the mesh losses. Nearest-neighbour
//! correspondences are frozen at the unperturbed mesh, so the differenced
//! function is the smooth one whose gradient the terms report.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::terms::{area_loss, edge_loss, laplacian_loss, normal_loss_with, seal_loss, Target};
use super::{RecWeights, Term};
use crate::error::Result;
use crate::geom::Vec3;
use crate::mesh::icosphere;
use crate::spatial::KdTree;
use crate::TriMesh;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

struct Frozen {
    forward: Vec<usize>,
    backward: Vec<usize>,
}

fn freeze(m: &TriMesh, target: &Target) -> Frozen {
    let forward = target.matches(m.vertices());
    let tree = KdTree::new(m.vertices());
    let backward = target.points().iter().map(|&q| tree.nearest(q).expect("nonempty mesh").0).collect();
    Frozen { forward, backward }
}

/// Value and gradient of one term with the given correspondences.
fn term_with(t: Term, m: &TriMesh, target: &Target, w: &RecWeights, fz: &Frozen) -> Result<(f64, Vec<Vec3>)> {
    Ok(match t {
        Term::Chamfer => {
            let (p, q) = (m.vertices(), target.points());
            let mut grad = vec![Vec3::ZERO; p.len()];
            let mut value = 0.0;
            for (i, &j) in fz.forward.iter().enumerate() {
                value += p[i].dist2(q[j]);
                grad[i] += (p[i] - q[j]) * 2.0;
            }
            for (j, &i) in fz.backward.iter().enumerate() {
                value += p[i].dist2(q[j]);
                grad[i] += (p[i] - q[j]) * 2.0;
            }
            (value, grad)
        }
        Term::Laplacian => {
            let v = laplacian_loss(m)?;
            (v.value, v.grad)
        }
        Term::Normal => {
            let v = normal_loss_with(m, target, &fz.forward, w.normal_mode);
            (v.value, v.grad)
        }
        Term::Edge => {
            let v = edge_loss(m);
            (v.value, v.grad)
        }
        Term::Area => {
            let v = area_loss(m);
            (v.value, v.grad)
        }
        Term::Seal => {
            let v = seal_loss(m, w.lambda_seal);
            (v.value, v.grad)
        }
    })
}

/// Norm-wise relative error `max |g - g_fd| / max |g_fd|` of term `t` over
/// every vertex coordinate of `m`.
pub fn grad_check_term(t: Term, m: &TriMesh, target: &Target, w: &RecWeights) -> Result<f64> {
    let fz = freeze(m, target);
    let (_, grad) = term_with(t, m, target, w, &fz)?;
    let (mut err, mut scale) = (0.0f64, 0.0f64);
    for i in 0..m.n_vertices() {
        for a in 0..3 {
            let mut vp = m.vertices().to_vec();
            let mut vm = vp.clone();
            vp[i][a] += FD_STEP;
            vm[i][a] -= FD_STEP;
            let fp = term_with(t, &m.with_positions(vp), target, w, &fz)?.0;
            let fm = term_with(t, &m.with_positions(vm), target, w, &fz)?.0;
            let num = (fp - fm) / (2.0 * FD_STEP);
            scale = scale.max(num.abs());
            err = err.max((grad[i][a] - num).abs());
        }
    }
    Ok(if scale > 1e-12 { err / scale } else { err })
}

/// A randomized small instance: a jittered 42-vertex sphere and a scaled,
/// offset 162-vertex target.
pub fn random_instance(seed: u64) -> Result<(TriMesh, Target)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jitter = |amp: f64| Vec3::new(rng.random_range(-amp..amp), rng.random_range(-amp..amp), rng.random_range(-amp..amp));
    let base = icosphere(1);
    let m = base.with_positions(base.vertices().iter().map(|&p| p * 0.5 + jitter(0.06)).collect());
    let scale = 0.4 + 0.3 * (seed % 7) as f64 / 7.0;
    let shift = jitter(0.1);
    let q = icosphere(2).map_positions(|p| p * scale + shift);
    Ok((m, Target::from_vertices(&q)?))
}
