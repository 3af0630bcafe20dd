//! End-to-end training on synthetic cases with pseudo-gold mesh targets.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{forward_vars, init_params, input_tensor, predict, tensor_positions, tensor_volume, Bound, NetConfig, StageTopology};
use super::params::ParamStore;
use super::tape::Tape;
use crate::energy::{energy, ext_loss, ExtWeights, RecWeights, Target};
use crate::error::{Error, Result};
use crate::fit::AdamConfig;
use crate::isosurface::{pseudo_gold, IsoConfig};
use crate::metrics::dice_jaccard;
use crate::mesh::TriMesh;
use crate::voxel::{rasterize, synth_case, zscore_normalize, SynthParams, Volume};

/// One training or evaluation case.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    /// Network input (z-scored intensity).
    pub input: Volume,
    pub mask: Volume,
    /// Pseudo-gold surface extracted from `mask`, normalized coordinates.
    pub gold: TriMesh,
}

impl Sample {
    pub fn new(id: impl Into<String>, intensity: &Volume, mask: &Volume, iso: &IsoConfig) -> Result<Sample> {
        Ok(Sample { id: id.into(), input: zscore_normalize(intensity)?, mask: mask.clone(), gold: pseudo_gold(mask, iso)? })
    }
}

/// `n` synthetic cases with consecutive seeds starting at `base.seed`.
pub fn synthetic_dataset(base: &SynthParams, n: usize, iso: &IsoConfig) -> Result<Vec<Sample>> {
    (0..n as u64)
        .map(|k| {
            let p = SynthParams { seed: base.seed + k, ..base.clone() };
            let c = synth_case(&p)?;
            Sample::new(format!("synth{:04}", p.seed), &c.intensity, &c.mask, iso)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub net: NetConfig,
    pub rec: RecWeights,
    pub ext: ExtWeights,
    pub adam: AdamConfig,
    /// Held-out Dice is recorded every this many epochs (and after the last).
    pub eval_every: usize,
    /// Where the last good parameters go if training diverges.
    pub checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            learning_rate: 2e-3,
            seed: 0,
            net: NetConfig::default(),
            rec: RecWeights::default(),
            ext: ExtWeights::default(),
            adam: AdamConfig::default(),
            eval_every: 25,
            checkpoint: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Mean total loss per epoch, measured before each update.
    pub loss_trace: Vec<f64>,
    pub rec_trace: Vec<f64>,
    pub ext_trace: Vec<f64>,
    /// `(epoch, mean held-out Dice)` at each evaluation.
    pub dice_history: Vec<(usize, f64)>,
    /// Final per-case held-out Dice.
    pub test_dice: Vec<(String, f64)>,
    pub mean_test_dice: f64,
    pub wall_time: Duration,
}

struct StepOutcome {
    rec: f64,
    ext: f64,
    grads: BTreeMap<String, Vec<f64>>,
}

fn loss_and_grads(p: &ParamStore, topo: &StageTopology, s: &Sample, cfg: &TrainConfig, target: &Target) -> Result<StepOutcome> {
    let mut tape = Tape::new();
    let b = Bound::bind(&mut tape, p, true);
    let x = tape.constant(input_tensor(&s.input));
    let f = forward_vars(&mut tape, &b, topo, x);

    let preds: Vec<Volume> = f.fem.seg.iter().map(|&v| tensor_volume(tape.value(v), 0)).collect();
    let ext = ext_loss(&preds, &s.mask, &cfg.ext)?;
    let mut seeds: Vec<(super::tape::Var, Vec<f64>)> = f.fem.seg.iter().copied().zip(ext.grads).collect();

    let mut rec = 0.0;
    for (&pv, m) in f.stage_positions.iter().zip(&topo.meshes) {
        let mesh = m.with_positions(tensor_positions(tape.value(pv)));
        let r = energy(&mesh, target, &cfg.rec)?;
        rec += r.total;
        seeds.push((pv, r.total_grad.iter().flat_map(|g| g.to_array()).collect()));
    }
    let seed_refs: Vec<(super::tape::Var, &[f64])> = seeds.iter().map(|(v, g)| (*v, g.as_slice())).collect();
    let g = tape.backward(&seed_refs);
    let grads = b.vars.iter().map(|(n, v)| (n.clone(), g.get_or_zero(*v))).collect();
    Ok(StepOutcome { rec, ext: ext.value, grads })
}

struct Adam {
    cfg: AdamConfig,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
    t: i32,
}

impl Adam {
    fn new(cfg: AdamConfig, p: &ParamStore) -> Adam {
        let zeros = || p.iter().map(|(n, t)| (n.to_string(), vec![0.0; t.len()])).collect();
        Adam { cfg, m: zeros(), v: zeros(), t: 0 }
    }

    fn step(&mut self, p: &mut ParamStore, grads: &BTreeMap<String, Vec<f64>>, lr: f64) {
        self.t += 1;
        let c = self.cfg;
        let (bc1, bc2) = (1.0 - c.beta1.powi(self.t), 1.0 - c.beta2.powi(self.t));
        for (name, g) in grads {
            let (m, v) = (self.m.get_mut(name).expect("moment"), self.v.get_mut(name).expect("moment"));
            let t = p.get_mut(name).expect("param");
            for (i, x) in t.data_mut().iter_mut().enumerate() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                *x -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + c.eps);
            }
        }
    }
}

/// Rasterized Dice of the final-stage mesh against each case's mask.
pub fn evaluate(p: &ParamStore, topo: &StageTopology, cases: &[Sample]) -> Result<Vec<(String, f64)>> {
    cases
        .iter()
        .map(|s| {
            let pred = predict(&s.input, p, topo)?;
            let last = pred.stage_meshes.last().expect("at least one stage");
            let vox = rasterize(last, s.mask.grid())?;
            Ok((s.id.clone(), dice_jaccard(&vox, &s.mask)?.0))
        })
        .collect()
}

fn mean(v: &[(String, f64)]) -> f64 {
    v.iter().map(|x| x.1).sum::<f64>() / v.len().max(1) as f64
}

fn diverged(p: &ParamStore, cfg: &TrainConfig, epoch: usize, what: &str) -> Error {
    let saved = match &cfg.checkpoint {
        Some(path) => match p.save(path) {
            Ok(()) => format!("; last good parameters written to {}", path.display()),
            Err(e) => format!("; saving the last good parameters failed: {e}"),
        },
        None => String::new(),
    };
    Error::Diverged { epoch, detail: format!("{what}{saved}") }
}

/// Trains the full model and reports held-out rasterized Dice.
pub fn train_toy(train: &[Sample], test: &[Sample], cfg: &TrainConfig) -> Result<(ParamStore, TrainReport)> {
    if train.len() < 10 {
        return Err(Error::Config(format!("training needs at least 10 volumes, got {}", train.len())));
    }
    if !(cfg.learning_rate >= 0.0 && cfg.learning_rate.is_finite()) {
        return Err(Error::Config("learning_rate must be finite and non-negative".into()));
    }
    cfg.rec.validate()?;
    cfg.ext.validate()?;
    let start = Instant::now();
    let n = super::model::check_input(&train[0].input)?;
    if let Some(bad) = train.iter().chain(test).find(|s| s.input.dims() != [n; 3]) {
        return Err(Error::ShapeMismatch(format!("case {} has dims {:?}, expected {n}^3", bad.id, bad.input.dims())));
    }
    let topo = StageTopology::new(&cfg.net)?;
    let mut params = init_params(&cfg.net, n, cfg.seed)?;
    let mut adam = Adam::new(cfg.adam, &params);
    let targets: Vec<Target> = train.iter().map(|s| Target::from_vertices(&s.gold)).collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut report = TrainReport {
        loss_trace: Vec::new(),
        rec_trace: Vec::new(),
        ext_trace: Vec::new(),
        dice_history: Vec::new(),
        test_dice: Vec::new(),
        mean_test_dice: 0.0,
        wall_time: Duration::ZERO,
    };
    for epoch in 0..cfg.epochs {
        let good = params.clone();
        order.shuffle(&mut rng);
        let (mut rec, mut ext) = (0.0, 0.0);
        for &i in &order {
            let out = loss_and_grads(&params, &topo, &train[i], cfg, &targets[i]);
            let out = match out {
                Ok(o) if o.rec.is_finite() && o.ext.is_finite() => o,
                Ok(_) | Err(Error::NonFiniteEnergy { .. }) => {
                    return Err(diverged(&good, cfg, epoch, &format!("non-finite loss on {}", train[i].id)))
                }
                Err(e) => return Err(e),
            };
            rec += out.rec;
            ext += out.ext;
            adam.step(&mut params, &out.grads, cfg.learning_rate);
        }
        if !params.is_finite() {
            return Err(diverged(&good, cfg, epoch, "non-finite parameters"));
        }
        let k = train.len() as f64;
        report.rec_trace.push(rec / k);
        report.ext_trace.push(ext / k);
        report.loss_trace.push((rec + ext) / k);
        log::debug!("epoch {epoch}: rec {:.5} ext {:.5}", rec / k, ext / k);
        let last = epoch + 1 == cfg.epochs;
        if !test.is_empty() && (last || (cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0)) {
            let d = evaluate(&params, &topo, test)?;
            log::info!("epoch {}: held-out dice {:.4}", epoch + 1, mean(&d));
            report.dice_history.push((epoch + 1, mean(&d)));
            if last {
                report.mean_test_dice = mean(&d);
                report.test_dice = d;
            }
        }
    }
    if cfg.epochs == 0 && !test.is_empty() {
        report.test_dice = evaluate(&params, &topo, test)?;
        report.mean_test_dice = mean(&report.test_dice);
    }
    report.wall_time = start.elapsed();
    Ok((params, report))
}
