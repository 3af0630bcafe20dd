//! Coarse-to-fine template fitting.
//!
//! Each stage runs first-order descent on the stage's weighted energy. The
//! step is Adam applied additively to vertex positions:
//!
//! ```text
//! m ← β₁m + (1-β₁)g        v ← β₂v + (1-β₂)g²
//! x ← x - η · (m / (1-β₁ᵗ)) / (sqrt(v / (1-β₂ᵗ)) + ε)
//! ```
//!
//! A proposal that raises the energy is rejected and `η` is multiplied by the
//! backtracking factor. Between stages the mesh may be unpooled; the next
//! stage then runs the vertex filter once, after a fixed fraction of its
//! iterations, on the displacement accumulated since the unpool.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::energy::{energy, EnergyReport, RecWeights, Target, Term};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::mesh::{uniform_unpool, validate_template, vertex_filter, ParentMap, TriMesh, VfThresholds};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageSpec {
    pub iterations: usize,
    pub step_size: f64,
    pub weights: RecWeights,
    /// Unpool the result of this stage before the next one.
    pub unpool_after: bool,
    /// Run the vertex filter in a stage that starts from an unpooled mesh.
    pub vertex_filter: bool,
    pub vf: VfThresholds,
}

impl Default for StageSpec {
    fn default() -> Self {
        StageSpec {
            iterations: 150,
            step_size: 1e-2,
            weights: RecWeights::default(),
            unpool_after: false,
            vertex_filter: true,
            vf: VfThresholds::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSchedule {
    pub stages: Vec<StageSpec>,
    pub rng_seed: u64,
    /// A stage stops after `patience` accepted steps in a row whose relative
    /// energy decrease is below this.
    pub convergence_tol: f64,
    pub patience: usize,
    pub backtrack: f64,
    /// Fraction of a stage's iterations after which the vertex filter runs.
    pub vf_trigger: f64,
    /// Surface samples per target face added to the target vertices (0 = vertices only).
    pub target_samples_per_face: usize,
    pub adam: AdamConfig,
}

impl Default for FitSchedule {
    fn default() -> Self {
        let stage = |iterations, unpool_after| StageSpec { iterations, unpool_after, ..Default::default() };
        FitSchedule {
            stages: vec![stage(200, true), stage(120, true), stage(100, false)],
            rng_seed: 0,
            convergence_tol: 1e-6,
            patience: 3,
            backtrack: 0.5,
            vf_trigger: 0.25,
            target_samples_per_face: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl FitSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Config("fit schedule needs at least one stage".into()));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if !(s.step_size > 0.0 && s.step_size.is_finite()) {
                return Err(Error::Config(format!("stage {i}: step_size must be positive")));
            }
            s.weights.validate()?;
            s.vf.validate()?;
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::Config("backtrack factor must lie in (0,1)".into()));
        }
        if !(0.0..=1.0).contains(&self.vf_trigger) {
            return Err(Error::Config("vf_trigger must lie in [0,1]".into()));
        }
        Ok(())
    }
}

/// Adam moments for every vertex coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub cfg: AdamConfig,
    pub m: Vec<Vec3>,
    pub v: Vec<Vec3>,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(n: usize, cfg: AdamConfig) -> OptimizerState {
        OptimizerState { cfg, m: vec![Vec3::ZERO; n], v: vec![Vec3::ZERO; n], t: 0 }
    }

    /// Keeps the moments of the surviving vertices.
    pub fn remap(&self, kept: &[usize]) -> OptimizerState {
        OptimizerState {
            cfg: self.cfg,
            m: kept.iter().map(|&i| self.m[i]).collect(),
            v: kept.iter().map(|&i| self.v[i]).collect(),
            t: self.t,
        }
    }
}

/// One additive Adam step on the vertex positions.
pub fn stage_step(mesh: &TriMesh, grad: &[Vec3], state: &OptimizerState, step_size: f64) -> Result<(TriMesh, OptimizerState)> {
    let n = mesh.n_vertices();
    if grad.len() != n || state.m.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{n} vertices, {} gradients, {} optimizer slots",
            grad.len(),
            state.m.len()
        )));
    }
    let c = state.cfg;
    let t = state.t + 1;
    let bc1 = 1.0 - c.beta1.powi(t as i32);
    let bc2 = 1.0 - c.beta2.powi(t as i32);
    let mut next = OptimizerState { cfg: c, m: Vec::with_capacity(n), v: Vec::with_capacity(n), t };
    let mut pos = Vec::with_capacity(n);
    for i in 0..n {
        let g = grad[i];
        let m = state.m[i] * c.beta1 + g * (1.0 - c.beta1);
        let v = state.v[i] * c.beta2 + g.mul_elem(g) * (1.0 - c.beta2);
        let mut p = mesh.vertices()[i];
        for a in 0..3 {
            p[a] -= step_size * (m[a] / bc1) / ((v[a] / bc2).sqrt() + c.eps);
        }
        next.m.push(m);
        next.v.push(v);
        pos.push(p);
    }
    Ok((mesh.with_positions(pos), next))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterRecord {
    pub terms: [f64; 6],
    pub total: f64,
    pub step_size: f64,
    pub accepted: bool,
}

#[derive(Clone, Debug)]
pub struct StageResult {
    pub mesh: TriMesh,
    /// Energy of the accepted iterate after each iteration.
    pub trace: Vec<IterRecord>,
    pub iterations: usize,
    pub converged: bool,
    pub initial_energy: f64,
    pub best_energy: f64,
    pub pruned: usize,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub stages: Vec<StageResult>,
    pub final_mesh: TriMesh,
    pub wall_time: Duration,
}

impl FitResult {
    pub fn stage_meshes(&self) -> Vec<&TriMesh> {
        self.stages.iter().map(|s| &s.mesh).collect()
    }

    pub fn iteration_counts(&self) -> Vec<usize> {
        self.stages.iter().map(|s| s.iterations).collect()
    }

    /// Comma-separated trace, one row per iteration.
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("stage,iteration");
        for t in Term::ALL {
            s.push(',');
            s.push_str(t.name());
        }
        s.push_str(",total,step_size,accepted\n");
        for (si, st) in self.stages.iter().enumerate() {
            for (it, r) in st.trace.iter().enumerate() {
                let _ = write!(s, "{si},{it}");
                for v in r.terms {
                    let _ = write!(s, ",{v:.17e}");
                }
                let _ = writeln!(s, ",{:.17e},{:.17e},{}", r.total, r.step_size, r.accepted as u8);
            }
        }
        s
    }
}

fn checked(report: EnergyReport, stage: usize, iteration: usize) -> Result<EnergyReport> {
    match report.non_finite_term() {
        Some(t) => Err(Error::NonFiniteEnergy { term: t.name(), stage, iteration }),
        None if !report.total.is_finite() => Err(Error::NonFiniteEnergy { term: "total", stage, iteration }),
        None => Ok(report),
    }
}

fn record(r: &EnergyReport, step: f64, accepted: bool) -> IterRecord {
    IterRecord { terms: std::array::from_fn(|k| r.terms[k].value), total: r.total, step_size: step, accepted }
}

fn check_topology(m: &TriMesh, stage: usize) -> Result<()> {
    if !m.is_watertight() || m.euler_characteristic() != 2 {
        return Err(Error::NotWatertight(format!(
            "stage {stage} produced a mesh with {} boundary edges and euler characteristic {}",
            m.boundary_edges().len(),
            m.euler_characteristic()
        )));
    }
    Ok(())
}

/// Fits `template` to `q`. Both must share a coordinate frame.
pub fn fit_template(q: &TriMesh, template: &TriMesh, sched: &FitSchedule) -> Result<FitResult> {
    sched.validate()?;
    validate_template(template)?;
    if q.n_vertices() == 0 {
        return Err(Error::Empty { what: "fit target" });
    }
    let target = if sched.target_samples_per_face > 0 {
        Target::from_surface(q, sched.target_samples_per_face, sched.rng_seed)?
    } else {
        Target::from_vertices(q)?
    };
    fit_to_target(&target, template.clone(), sched)
}

pub fn fit_to_target(target: &Target, template: TriMesh, sched: &FitSchedule) -> Result<FitResult> {
    let start = Instant::now();
    let mut mesh = template;
    let mut pending: Option<ParentMap> = None;
    let mut stages = Vec::with_capacity(sched.stages.len());
    for (si, spec) in sched.stages.iter().enumerate() {
        let res = run_stage(target, mesh, pending.take(), spec, sched, si)?;
        check_topology(&res.mesh, si)?;
        mesh = res.mesh.clone();
        stages.push(res);
        if spec.unpool_after && si + 1 < sched.stages.len() {
            let (fine, pm) = uniform_unpool(&mesh)?;
            mesh = fine;
            pending = Some(pm);
        }
    }
    Ok(FitResult { final_mesh: mesh, stages, wall_time: start.elapsed() })
}

fn run_stage(
    target: &Target,
    mut mesh: TriMesh,
    parents: Option<ParentMap>,
    spec: &StageSpec,
    sched: &FitSchedule,
    si: usize,
) -> Result<StageResult> {
    let w = &spec.weights;
    let mut rep = checked(energy(&mesh, target, w)?, si, 0)?;
    let initial_energy = rep.total;
    let mut state = OptimizerState::new(mesh.n_vertices(), sched.adam);
    let mut lr = spec.step_size;
    let mut trace = Vec::with_capacity(spec.iterations);
    let mut calm = 0;
    let mut converged = false;
    let mut pruned = 0;
    let start_positions = mesh.vertices().to_vec();
    let vf_at = if spec.vertex_filter && parents.is_some() {
        Some(((spec.iterations as f64) * sched.vf_trigger).ceil() as usize)
    } else {
        None
    };

    let mut it = 0;
    while it < spec.iterations {
        if vf_at == Some(it) {
            let pm = parents.as_ref().expect("vf requires a parent map");
            let disp: Vec<Vec3> = mesh.vertices().iter().zip(&start_positions).map(|(a, b)| *a - *b).collect();
            let out = vertex_filter(&mesh, &disp, pm, spec.vf)?;
            pruned = out.pruned.len();
            log::debug!("stage {si}: vertex filter pruned {pruned} midpoints");
            state = state.remap(&out.kept);
            mesh = out.mesh;
            rep = checked(energy(&mesh, target, w)?, si, it)?;
            calm = 0;
        }
        let (cand, cand_state) = stage_step(&mesh, &rep.total_grad, &state, lr)?;
        let cand_rep = checked(energy(&cand, target, w)?, si, it + 1)?;
        it += 1;
        if cand_rep.total > rep.total {
            lr *= sched.backtrack;
            trace.push(record(&rep, lr, false));
            if lr < spec.step_size * 1e-6 {
                converged = true;
                break;
            }
            continue;
        }
        let decrease = rep.total - cand_rep.total;
        mesh = cand;
        state = cand_state;
        rep = cand_rep;
        trace.push(record(&rep, lr, true));
        if rep.total == 0.0 || decrease <= sched.convergence_tol * rep.total.abs() {
            calm += 1;
            if calm >= sched.patience {
                converged = true;
                break;
            }
        } else {
            calm = 0;
        }
    }
    let best_energy = rep.total;
    Ok(StageResult { mesh, iterations: trace.len(), trace, converged, initial_energy, best_energy, pruned })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::chamfer;
    use crate::mesh::icosphere;

    fn chamfer_only() -> RecWeights {
        RecWeights { alpha: [1.0, 0.0, 0.0, 0.0, 0.0, 0.0], ..Default::default() }
    }

    #[test]
    fn zero_gradient_leaves_mesh() {
        let m = icosphere(1);
        let s = OptimizerState::new(m.n_vertices(), AdamConfig::default());
        let (out, _) = stage_step(&m, &vec![Vec3::ZERO; m.n_vertices()], &s, 0.1).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn constant_gradient_translates() {
        let m = icosphere(1);
        let g = Vec3::new(0.3, -2.0, 0.7);
        let s = OptimizerState::new(m.n_vertices(), AdamConfig::default());
        let (out, _) = stage_step(&m, &vec![g; m.n_vertices()], &s, 0.05).unwrap();
        let d0 = out.vertices()[0] - m.vertices()[0];
        assert!(d0.dot(g) < 0.0);
        for (a, b) in out.vertices().iter().zip(m.vertices()) {
            assert!((*a - *b - d0).max_abs() < 1e-15);
        }
    }

    #[test]
    fn fixed_point_converges_immediately() {
        let t = icosphere(2);
        let sched = FitSchedule {
            stages: vec![StageSpec { iterations: 50, weights: chamfer_only(), ..Default::default() }],
            ..Default::default()
        };
        let r = fit_template(&t, &t, &sched).unwrap();
        assert!(r.stages[0].iterations <= 5);
        let disp: f64 = r.final_mesh.vertices().iter().zip(t.vertices()).map(|(a, b)| (*a - *b).norm2()).sum();
        assert!(disp.sqrt() < 1e-6);
    }

    #[test]
    fn scaled_target_is_recovered() {
        let t = icosphere(2).map_positions(|p| p * 0.6);
        let q = t.map_positions(|p| p * 1.3);
        let init = chamfer(t.vertices(), q.vertices()).unwrap().value;
        let sched = FitSchedule {
            stages: vec![StageSpec { iterations: 300, weights: chamfer_only(), ..Default::default() }],
            ..Default::default()
        };
        let r = fit_template(&q, &t, &sched).unwrap();
        let fin = chamfer(r.final_mesh.vertices(), q.vertices()).unwrap().value;
        assert!(fin < 0.01 * init, "{fin} vs {init}");
        // accepted energies never increase
        let tr = &r.stages[0].trace;
        assert!(tr.windows(2).all(|w| w[1].total <= w[0].total));
    }

    #[test]
    fn deterministic_trace() {
        let t = icosphere(1).map_positions(|p| p * 0.5);
        let q = icosphere(2).map_positions(|p| Vec3::new(p.x * 0.7, p.y * 0.4, p.z * 0.5));
        let sched = FitSchedule {
            stages: vec![
                StageSpec { iterations: 30, unpool_after: true, ..Default::default() },
                StageSpec { iterations: 20, ..Default::default() },
            ],
            ..Default::default()
        };
        let a = fit_template(&q, &t, &sched).unwrap();
        let b = fit_template(&q, &t, &sched).unwrap();
        assert_eq!(a.trace_csv(), b.trace_csv());
        assert_eq!(a.final_mesh, b.final_mesh);
        assert!(a.final_mesh.is_watertight());
        assert_eq!(a.final_mesh.euler_characteristic(), 2);
        assert_eq!(a.iteration_counts().iter().sum::<usize>(), a.trace_csv().lines().count() - 1);
    }

    #[test]
    fn nan_target_names_term() {
        let t = icosphere(1).map_positions(|p| p * 0.5);
        let mut qv = icosphere(1).vertices().to_vec();
        qv[0] = Vec3::new(f64::NAN, 0.0, 0.0);
        let q = icosphere(1).with_positions(qv);
        let err = fit_template(&q, &t, &FitSchedule::default()).unwrap_err();
        assert!(matches!(err, Error::NonFiniteEnergy { .. }), "{err}");
    }

    #[test]
    fn rejects_torus_template() {
        let t = crate::mesh::torus(8, 8, 0.6, 0.2);
        assert!(matches!(fit_template(&t, &t, &FitSchedule::default()), Err(Error::TemplateTopology(_))));
    }
}
