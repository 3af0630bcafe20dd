//! Finite-difference checks for the differentiable ops.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{de_stage, graph_conv, neighbor_mean_rows, self_attention, GraphConvVars};
use super::model::{fem_vars, init_params, Bound, NetConfig};
use super::ops;
use super::sample::{grid_sample, lattice_offsets, offset_sample};
use super::tape::{Tape, Tensor, Var};
use crate::mesh::icosphere;

pub const FD_STEP: f64 = 1e-5;

/// Ops registered for gradient checking.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradOp {
    Linear,
    Conv3d,
    Conv1x1,
    InstanceNorm,
    RowNorm,
    Sigmoid,
    AvgPool,
    Upsample,
    GridSample,
    OffsetSample,
    SelfAttention,
    GraphConv,
    DeStage,
    Fem,
}

impl GradOp {
    pub const ALL: [GradOp; 14] = [
        GradOp::Linear,
        GradOp::Conv3d,
        GradOp::Conv1x1,
        GradOp::InstanceNorm,
        GradOp::RowNorm,
        GradOp::Sigmoid,
        GradOp::AvgPool,
        GradOp::Upsample,
        GradOp::GridSample,
        GradOp::OffsetSample,
        GradOp::SelfAttention,
        GradOp::GraphConv,
        GradOp::DeStage,
        GradOp::Fem,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GradOp::Linear => "linear",
            GradOp::Conv3d => "conv3d",
            GradOp::Conv1x1 => "conv1x1",
            GradOp::InstanceNorm => "instance_norm",
            GradOp::RowNorm => "row_norm",
            GradOp::Sigmoid => "sigmoid",
            GradOp::AvgPool => "avg_pool",
            GradOp::Upsample => "upsample",
            GradOp::GridSample => "grid_sample",
            GradOp::OffsetSample => "offset_sample",
            GradOp::SelfAttention => "self_attention",
            GradOp::GraphConv => "graph_conv",
            GradOp::DeStage => "de_stage",
            GradOp::Fem => "fem",
        }
    }

    /// Relative error the op must stay under.
    pub fn tolerance(self) -> f64 {
        match self {
            GradOp::Linear | GradOp::Conv1x1 | GradOp::AvgPool | GradOp::Upsample => 1e-9,
            GradOp::DeStage | GradOp::Fem => 1e-3,
            _ => 1e-4,
        }
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape")
}

/// A randomized instance: tape inputs and the builder that maps them to an output.
type Builder = Box<dyn Fn(&mut Tape, &[Var]) -> Var>;

fn instance(op: GradOp, rng: &mut ChaCha8Rng) -> (Vec<Tensor>, Builder) {
    match op {
        GradOp::Linear => (
            vec![rand_tensor(rng, vec![5, 4], -1.0, 1.0), rand_tensor(rng, vec![4, 3], -1.0, 1.0), rand_tensor(rng, vec![3], -1.0, 1.0)],
            Box::new(|t, v| ops::linear(t, v[0], v[1], Some(v[2]))),
        ),
        GradOp::Conv3d => (
            vec![
                rand_tensor(rng, vec![2, 4, 3, 5], -1.0, 1.0),
                rand_tensor(rng, vec![3, 2, 27], -1.0, 1.0),
                rand_tensor(rng, vec![3], -1.0, 1.0),
            ],
            Box::new(|t, v| ops::conv3d(t, v[0], v[1], v[2])),
        ),
        GradOp::Conv1x1 => (
            vec![rand_tensor(rng, vec![3, 2, 2, 2], -1.0, 1.0), rand_tensor(rng, vec![2, 3], -1.0, 1.0), rand_tensor(rng, vec![2], -1.0, 1.0)],
            Box::new(|t, v| ops::conv1x1(t, v[0], v[1], Some(v[2]))),
        ),
        GradOp::InstanceNorm => (
            vec![rand_tensor(rng, vec![2, 3, 3, 3], -2.0, 2.0), rand_tensor(rng, vec![2], 0.5, 1.5), rand_tensor(rng, vec![2], -1.0, 1.0)],
            Box::new(|t, v| ops::instance_norm(t, v[0], v[1], v[2])),
        ),
        GradOp::RowNorm => (
            vec![rand_tensor(rng, vec![7, 3], -2.0, 2.0), rand_tensor(rng, vec![3], 0.5, 1.5), rand_tensor(rng, vec![3], -1.0, 1.0)],
            Box::new(|t, v| ops::row_norm(t, v[0], v[1], v[2])),
        ),
        GradOp::Sigmoid => (vec![rand_tensor(rng, vec![10], -4.0, 4.0)], Box::new(|t, v| ops::sigmoid(t, v[0]))),
        GradOp::AvgPool => (vec![rand_tensor(rng, vec![2, 4, 2, 4], -1.0, 1.0)], Box::new(|t, v| ops::avg_pool2(t, v[0]))),
        GradOp::Upsample => (vec![rand_tensor(rng, vec![2, 2, 3, 2], -1.0, 1.0)], Box::new(|t, v| ops::upsample2(t, v[0]))),
        GradOp::GridSample => (
            vec![rand_tensor(rng, vec![3, 4, 5, 3], -1.0, 1.0), rand_tensor(rng, vec![6, 3], -0.95, 0.95)],
            Box::new(|t, v| grid_sample(t, v[0], v[1])),
        ),
        GradOp::OffsetSample => {
            let d = [6, 6, 6];
            let mut off = lattice_offsets(d);
            off.data_mut().iter_mut().for_each(|o| *o += rng.random_range(-0.05..0.05));
            (
                vec![rand_tensor(rng, vec![2, 6, 6, 6], -1.0, 1.0), rand_tensor(rng, vec![5, 3], -0.6, 0.6), off, rand_tensor(rng, vec![27], -1.0, 1.0)],
                Box::new(|t, v| offset_sample(t, v[0], v[1], v[2], v[3])),
            )
        }
        GradOp::SelfAttention => (vec![rand_tensor(rng, vec![12, 4], -1.0, 1.0)], Box::new(|t, v| self_attention(t, v[0]))),
        GradOp::GraphConv => {
            let adj = neighbor_mean_rows(&icosphere(0));
            (
                vec![
                    rand_tensor(rng, vec![12, 3], -1.0, 1.0),
                    rand_tensor(rng, vec![3, 4], -1.0, 1.0),
                    rand_tensor(rng, vec![3, 4], -1.0, 1.0),
                    rand_tensor(rng, vec![4], -1.0, 1.0),
                    rand_tensor(rng, vec![4], 0.5, 1.5),
                    rand_tensor(rng, vec![4], -0.5, 0.5),
                ],
                Box::new(move |t, v| {
                    graph_conv(t, v[0], &adj, GraphConvVars { w_self: v[1], w_nbr: v[2], bias: v[3], norm: Some((v[4], v[5])) })
                }),
            )
        }
        GradOp::DeStage => {
            let adj: Rc<_> = neighbor_mean_rows(&icosphere(0));
            let (cin, h) = (3, 4);
            let mut inputs = vec![rand_tensor(rng, vec![12, cin], -1.0, 1.0)];
            for k in 0..3 {
                let ci = if k == 0 { cin } else { h };
                inputs.push(rand_tensor(rng, vec![ci, h], -1.0, 1.0));
                inputs.push(rand_tensor(rng, vec![ci, h], -1.0, 1.0));
                inputs.push(rand_tensor(rng, vec![h], -1.0, 1.0));
                inputs.push(rand_tensor(rng, vec![h], 0.5, 1.5));
                inputs.push(rand_tensor(rng, vec![h], -0.5, 0.5));
            }
            inputs.push(rand_tensor(rng, vec![h, 3], -1.0, 1.0));
            inputs.push(rand_tensor(rng, vec![3], -1.0, 1.0));
            (
                inputs,
                Box::new(move |t, v| {
                    let layers: [GraphConvVars; 3] = std::array::from_fn(|k| {
                        let o = 1 + 5 * k;
                        GraphConvVars { w_self: v[o], w_nbr: v[o + 1], bias: v[o + 2], norm: Some((v[o + 3], v[o + 4])) }
                    });
                    de_stage(t, v[0], &adj, &layers, (v[16], v[17]))
                }),
            )
        }
        GradOp::Fem => {
            let cfg = NetConfig { channels: [2, 2, 2], hidden: 2, stages: 1, ..Default::default() };
            let mut p = init_params(&cfg, 8, rng.random()).expect("valid config");
            // nonzero heads so the segmentation output depends on everything
            for k in 0..3 {
                let w = p.get_mut(&format!("fem.head{k}.w")).expect("head");
                w.data_mut().iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
            }
            let names: Vec<String> = p.names().filter(|n| n.starts_with("fem.")).map(String::from).collect();
            let mut inputs = vec![rand_tensor(rng, vec![1, 8, 8, 8], -1.0, 1.0)];
            inputs.extend(names.iter().map(|n| p.get(n).expect("name").clone()));
            (
                inputs,
                Box::new(move |t, v| {
                    let b = Bound { vars: names.iter().cloned().zip(v[1..].iter().copied()).collect() };
                    let f = fem_vars(t, &b, v[0]);
                    let flat: Vec<Var> = f.seg.iter().chain(&f.levels).map(|&x| flatten(t, x)).collect();
                    ops::concat_first(t, &flat)
                }),
            )
        }
    }
}

fn flatten(tape: &mut Tape, x: Var) -> Var {
    let n = tape.value(x).len();
    ops::reshape(tape, x, vec![n])
}

/// Worst norm-wise relative error, `max|analytic - numeric| / max|numeric|`,
/// over the checked coordinates of every input, across `trials` instances.
pub fn grad_check(op: GradOp, trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let (inputs, build) = instance(op, &mut rng);
        let run = |vals: &[Tensor]| {
            let mut tape = Tape::new();
            let vars: Vec<Var> = vals.iter().map(|t| tape.leaf(t.clone())).collect();
            let out = build(&mut tape, &vars);
            (tape, vars, out)
        };
        let (tape, vars, out) = run(&inputs);
        let proj: Vec<f64> = (0..tape.value(out).len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let grads = tape.backward(&[(out, &proj)]);
        let loss = |vals: &[Tensor]| {
            let (t, _, o) = run(vals);
            t.value(o).data().iter().zip(&proj).map(|(a, b)| a * b).sum::<f64>()
        };
        // error and scale are pooled over every input, so an input whose
        // gradient is structurally zero is judged against the op's scale
        let (mut num_max, mut err_max) = (0.0f64, 0.0f64);
        for (k, &v) in vars.iter().enumerate() {
            let analytic = grads.get_or_zero(v);
            let n = inputs[k].len();
            // sample coordinates on large inputs
            let coords: Vec<usize> = if n <= 40 { (0..n).collect() } else { (0..40).map(|_| rng.random_range(0..n)).collect() };
            for &i in &coords {
                let mut plus = inputs.clone();
                plus[k].data_mut()[i] += FD_STEP;
                let mut minus = inputs.clone();
                minus[k].data_mut()[i] -= FD_STEP;
                let num = (loss(&plus) - loss(&minus)) / (2.0 * FD_STEP);
                num_max = num_max.max(num.abs());
                err_max = err_max.max((num - analytic[i]).abs());
            }
        }
        worst = worst.max(if num_max > 1e-12 { err_max / num_max } else { err_max });
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_passes() {
        for op in GradOp::ALL {
            let e = grad_check(op, 2, 11);
            assert!(e < op.tolerance(), "{}: {e}", op.name());
        }
    }
}
