//! The toy network: a small encoder-decoder for features and segmentation,
//! and a stack of deformation stages that move a template mesh.

use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::graph::{de_stage, neighbor_mean_rows, self_attention, GraphConvVars};
use super::ops::{avg_pool2, concat_cols, concat_first, conv1x1, conv3d, instance_norm, relu, scale, sigmoid, sparse_rows, upsample2};
use super::params::ParamStore;
use super::sample::{grid_sample, lattice_offsets, offset_sample, box_to_aligned};
use super::tape::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::mesh::{icosphere, uniform_unpool, TriMesh};
use crate::voxel::{Grid, Volume, VolumeKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    /// Channels at full, half and quarter resolution.
    pub channels: [usize; 3],
    /// Width of the graph-convolution layers.
    pub hidden: usize,
    /// Deformation stages; the mesh is unpooled between consecutive stages.
    pub stages: usize,
    /// Icosphere subdivision level of the template.
    pub template_level: u32,
    pub template_radius: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig { channels: [16, 32, 64], hidden: 32, stages: 2, template_level: 2, template_radius: 0.5 }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.contains(&0) || self.hidden == 0 || self.stages == 0 {
            return Err(Error::Config("channels, hidden width and stage count must be positive".into()));
        }
        if !(self.template_radius > 0.0 && self.template_radius < 1.0) {
            return Err(Error::Config("template_radius must lie in (0,1)".into()));
        }
        Ok(())
    }

    /// Width of the sampled feature rows: all pyramid levels, the
    /// segmentation probability and the vertex position.
    pub fn feature_width(&self) -> usize {
        self.channels.iter().sum::<usize>() + 1 + 3
    }
}

/// Encoder-decoder blocks as `(name, in, out)`.
fn blocks(c: [usize; 3]) -> [(&'static str, usize, usize); 5] {
    [("e0", 1, c[0]), ("e1", c[0], c[1]), ("bn", c[1], c[2]), ("d1", c[2] + c[1], c[1]), ("d0", c[1] + c[0], c[0])]
}

/// Volume dims of the four sampled levels, coarse to fine, for input side `n`.
pub fn level_dims(n: usize) -> [[usize; 3]; 4] {
    [[n / 4; 3], [n / 2; 3], [n; 3], [n; 3]]
}

/// Fresh parameters. Input side `n` fixes the offset lattices.
pub fn init_params(cfg: &NetConfig, n: usize, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = |shape: Vec<usize>, std: f64| {
        let dist = Normal::new(0.0, std).expect("positive std");
        let len = shape.iter().product();
        Tensor::new(shape, (0..len).map(|_| dist.sample(&mut rng)).collect()).expect("shape")
    };
    let mut p = ParamStore::new(seed);
    for (name, ci, co) in blocks(cfg.channels) {
        p.insert(format!("fem.{name}.conv.w"), normal(vec![co, ci, 27], (2.0 / (ci * 27) as f64).sqrt()));
        p.insert(format!("fem.{name}.conv.b"), Tensor::zeros(vec![co]));
        p.insert(format!("fem.{name}.norm.g"), Tensor::filled(vec![co], 1.0));
        p.insert(format!("fem.{name}.norm.b"), Tensor::zeros(vec![co]));
        p.insert(format!("fem.{name}.skip.w"), normal(vec![co, ci], (1.0 / ci as f64).sqrt()));
    }
    let c = cfg.channels;
    for (k, ch) in [c[2], c[1], c[0]].into_iter().enumerate() {
        p.insert(format!("fem.head{k}.w"), Tensor::zeros(vec![1, ch]));
        p.insert(format!("fem.head{k}.b"), Tensor::zeros(vec![1]));
    }
    let width = 2 * cfg.feature_width();
    let h = cfg.hidden;
    for s in 0..cfg.stages {
        for (l, d) in level_dims(n).into_iter().enumerate() {
            p.insert(format!("fsm.s{s}.l{l}.offsets"), lattice_offsets(d));
            p.insert(format!("fsm.s{s}.l{l}.kernel"), Tensor::filled(vec![27], 1.0 / 27.0));
        }
        for k in 0..3 {
            let cin = if k == 0 { width } else { h };
            let std = (1.0 / cin as f64).sqrt();
            p.insert(format!("de.s{s}.gc{k}.w_self"), normal(vec![cin, h], std));
            p.insert(format!("de.s{s}.gc{k}.w_nbr"), normal(vec![cin, h], std));
            p.insert(format!("de.s{s}.gc{k}.bias"), Tensor::zeros(vec![h]));
            p.insert(format!("de.s{s}.gc{k}.norm.g"), Tensor::filled(vec![h], 1.0));
            p.insert(format!("de.s{s}.gc{k}.norm.b"), Tensor::zeros(vec![h]));
        }
        p.insert(format!("de.s{s}.head.w"), Tensor::zeros(vec![h, 3]));
        p.insert(format!("de.s{s}.head.b"), Tensor::zeros(vec![3]));
    }
    Ok(p)
}

/// Parameters placed on a tape, looked up by name.
pub struct Bound {
    pub vars: Vec<(String, Var)>,
}

impl Bound {
    pub fn bind(tape: &mut Tape, p: &ParamStore, trainable: bool) -> Bound {
        let vars = p
            .iter()
            .map(|(n, t)| (n.to_string(), if trainable { tape.leaf(t.clone()) } else { tape.constant(t.clone()) }))
            .collect();
        Bound { vars }
    }

    pub fn var(&self, name: &str) -> Var {
        let i = self.vars.binary_search_by(|(n, _)| n.as_str().cmp(name)).unwrap_or_else(|_| panic!("parameter {name}"));
        self.vars[i].1
    }
}

/// Coarse-to-fine feature levels and segmentation probabilities on a tape.
pub struct FemVars {
    /// Decoder features at quarter, half and full resolution.
    pub levels: [Var; 3],
    /// Foreground probabilities at the same three scales.
    pub seg: [Var; 3],
}

fn block(tape: &mut Tape, b: &Bound, name: &str, x: Var) -> Var {
    let v = |s: &str| b.var(&format!("fem.{name}.{s}"));
    let y = conv3d(tape, x, v("conv.w"), v("conv.b"));
    let y = instance_norm(tape, y, v("norm.g"), v("norm.b"));
    let y = relu(tape, y);
    let skip = conv1x1(tape, x, v("skip.w"), None);
    super::ops::add(tape, y, skip)
}

pub fn check_input(v: &Volume) -> Result<usize> {
    let d = v.dims();
    if !v.grid().is_cubic() {
        return Err(Error::ShapeMismatch(format!("network input must be cubic, got {d:?}")));
    }
    if d[0] % 4 != 0 {
        return Err(Error::ShapeMismatch(format!("network input side {} must be a multiple of 4", d[0])));
    }
    Ok(d[0])
}

pub fn fem_vars(tape: &mut Tape, b: &Bound, input: Var) -> FemVars {
    let e0 = block(tape, b, "e0", input);
    let p0 = avg_pool2(tape, e0);
    let e1 = block(tape, b, "e1", p0);
    let p1 = avg_pool2(tape, e1);
    let bn = block(tape, b, "bn", p1);
    let u1 = upsample2(tape, bn);
    let c1 = concat_first(tape, &[u1, e1]);
    let d1 = block(tape, b, "d1", c1);
    let u0 = upsample2(tape, d1);
    let c0 = concat_first(tape, &[u0, e0]);
    let d0 = block(tape, b, "d0", c0);
    let levels = [bn, d1, d0];
    let seg = std::array::from_fn(|k| {
        let logit = conv1x1(tape, levels[k], b.var(&format!("fem.head{k}.w")), Some(b.var(&format!("fem.head{k}.b"))));
        sigmoid(tape, logit)
    });
    FemVars { levels, seg }
}

fn volume_tensor(v: &Volume) -> Tensor {
    let d = v.dims();
    Tensor::new(vec![1, d[0], d[1], d[2]], v.data().to_vec()).expect("shape")
}

pub(crate) fn tensor_volume(t: &Tensor, channel: usize) -> Volume {
    let s = t.shape();
    let v = s[1] * s[2] * s[3];
    let g = Grid::cube(s[1]);
    Volume::new(g, t.data()[channel * v..(channel + 1) * v].to_vec(), VolumeKind::Intensity).expect("shape")
}

/// Feature pyramid, coarse to fine, each `[C, n, n, n]`.
#[derive(Clone, Debug)]
pub struct FeaturePyramid {
    pub levels: Vec<Tensor>,
}

/// Features and per-scale foreground probabilities (coarse to fine; the last
/// is at input resolution).
pub fn fem_forward(v: &Volume, p: &ParamStore) -> Result<(FeaturePyramid, Vec<Volume>)> {
    check_input(v)?;
    let mut tape = Tape::new();
    let b = Bound::bind(&mut tape, p, false);
    let x = tape.constant(volume_tensor(v));
    let f = fem_vars(&mut tape, &b, x);
    let levels = f.levels.iter().map(|&l| tape.value(l).clone()).collect();
    let seg = f.seg.iter().map(|&s| tensor_volume(tape.value(s), 0)).collect();
    Ok((FeaturePyramid { levels }, seg))
}

/// Fixed connectivity of every stage.
pub struct StageTopology {
    /// Mesh of each stage; positions are those of the unpooled template.
    pub meshes: Vec<TriMesh>,
    pub adjacency: Vec<Rc<Vec<Vec<(usize, f64)>>>>,
    /// Midpoint operator from stage `s` to stage `s + 1`.
    pub unpool: Vec<Rc<Vec<Vec<(usize, f64)>>>>,
}

impl StageTopology {
    pub fn new(cfg: &NetConfig) -> Result<StageTopology> {
        let r = cfg.template_radius;
        let mut mesh = icosphere(cfg.template_level).map_positions(|p| p * r);
        let mut out = StageTopology { meshes: Vec::new(), adjacency: Vec::new(), unpool: Vec::new() };
        for s in 0..cfg.stages {
            out.adjacency.push(neighbor_mean_rows(&mesh));
            out.meshes.push(mesh.clone());
            if s + 1 < cfg.stages {
                let (fine, pm) = uniform_unpool(&mesh)?;
                let mut rows: Vec<Vec<(usize, f64)>> = (0..pm.base_vertices).map(|v| vec![(v, 1.0)]).collect();
                rows.extend(pm.parents.iter().map(|&[a, b]| vec![(a, 0.5), (b, 0.5)]));
                out.unpool.push(Rc::new(rows));
                mesh = fine;
            }
        }
        Ok(out)
    }
}

pub fn positions_tensor(m: &TriMesh) -> Tensor {
    Tensor::new(vec![m.n_vertices(), 3], m.vertices().iter().flat_map(|p| p.to_array()).collect()).expect("shape")
}

pub fn tensor_positions(t: &Tensor) -> Vec<Vec3> {
    (0..t.rows()).map(|r| Vec3::new(t.row(r)[0], t.row(r)[1], t.row(r)[2])).collect()
}

/// Samples every level around the current vertices and appends the positions.
fn stage_features(tape: &mut Tape, b: &Bound, s: usize, sources: &[Var; 4], pos: Var) -> Var {
    let mut cols: Vec<Var> = (0..4)
        .map(|l| {
            let off = b.var(&format!("fsm.s{s}.l{l}.offsets"));
            let ker = b.var(&format!("fsm.s{s}.l{l}.kernel"));
            offset_sample(tape, sources[l], pos, off, ker)
        })
        .collect();
    cols.push(pos);
    concat_cols(tape, &cols)
}

/// Everything a forward pass leaves on the tape.
pub struct ForwardVars {
    pub fem: FemVars,
    /// Vertex positions after each stage's displacement.
    pub stage_positions: Vec<Var>,
    pub displacements: Vec<Var>,
}

pub fn forward_vars(tape: &mut Tape, b: &Bound, topo: &StageTopology, input: Var) -> ForwardVars {
    let fem = fem_vars(tape, b, input);
    let sources = [fem.levels[0], fem.levels[1], fem.levels[2], fem.seg[2]];
    let mut pos = tape.constant(positions_tensor(&topo.meshes[0]));
    let mut stage_positions = Vec::new();
    let mut displacements = Vec::new();
    for s in 0..topo.meshes.len() {
        let g = stage_features(tape, b, s, &sources, pos);
        let n = tape.value(g).rows();
        let a = self_attention(tape, g);
        let a = scale(tape, a, 1.0 / n as f64);
        let h = concat_cols(tape, &[g, a]);
        let v = |k: usize, f: &str| b.var(&format!("de.s{s}.gc{k}.{f}"));
        let layers: [GraphConvVars; 3] = std::array::from_fn(|k| GraphConvVars {
            w_self: v(k, "w_self"),
            w_nbr: v(k, "w_nbr"),
            bias: v(k, "bias"),
            norm: Some((v(k, "norm.g"), v(k, "norm.b"))),
        });
        let head = (b.var(&format!("de.s{s}.head.w")), b.var(&format!("de.s{s}.head.b")));
        let delta = de_stage(tape, h, &topo.adjacency[s], &layers, head);
        pos = super::ops::add(tape, pos, delta);
        displacements.push(delta);
        stage_positions.push(pos);
        if s + 1 < topo.meshes.len() {
            pos = sparse_rows(tape, pos, topo.unpool[s].clone());
        }
    }
    ForwardVars { fem, stage_positions, displacements }
}

/// Result of running the whole network on one volume.
pub struct Prediction {
    pub stage_meshes: Vec<TriMesh>,
    pub seg: Vec<Volume>,
}

pub fn predict(v: &Volume, p: &ParamStore, topo: &StageTopology) -> Result<Prediction> {
    check_input(v)?;
    let mut tape = Tape::new();
    let b = Bound::bind(&mut tape, p, false);
    let x = tape.constant(volume_tensor(v));
    let f = forward_vars(&mut tape, &b, topo, x);
    Ok(Prediction {
        stage_meshes: f
            .stage_positions
            .iter()
            .zip(&topo.meshes)
            .map(|(&pv, m)| m.with_positions(tensor_positions(tape.value(pv))))
            .collect(),
        seg: f.fem.seg.iter().map(|&s| tensor_volume(tape.value(s), 0)).collect(),
    })
}

pub(crate) fn input_tensor(v: &Volume) -> Tensor {
    volume_tensor(v)
}

/// Plain trilinear sampling of one level at box-normalized points.
pub fn sample_level(feat: &Tensor, pts: &[Vec3]) -> Tensor {
    let mut tape = Tape::new();
    let f = tape.constant(feat.clone());
    let d = super::ops::vol_dims(feat);
    let s = box_to_aligned(d);
    let t = Tensor::new(vec![pts.len(), 3], pts.iter().flat_map(|p| [p.x * s[0], p.y * s[1], p.z * s[2]]).collect())
        .expect("shape");
    let p = tape.constant(t);
    let out = grid_sample(&mut tape, f, p);
    tape.value(out).clone()
}
