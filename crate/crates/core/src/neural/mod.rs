//! Toy-scale learned reconstruction: a feature-extraction encoder-decoder,
//! offset-neighbourhood feature sampling, parameter-free self-attention and
//! graph-convolution deformation stages, all with analytic gradients.

mod gradcheck;
mod graph;
mod model;
pub mod ops;
mod params;
mod sample;
mod tape;
mod train;

pub use gradcheck::{grad_check, GradOp, FD_STEP};
pub use graph::{
    de_stage, graph_conv, neighbor_mean_rows, self_attention, self_attention_blocked, self_attention_reference,
    GraphConvVars, ATTENTION_GUARD,
};
pub use model::{
    fem_forward, forward_vars, init_params, level_dims, positions_tensor, predict, sample_level, tensor_positions,
    Bound, FeaturePyramid, FemVars, ForwardVars, NetConfig, Prediction, StageTopology,
};
pub use params::ParamStore;
pub use sample::{box_to_aligned, grid_sample, lattice_offsets, offset_sample, offset_sample_composed};
pub use tape::{Grads, Tape, Tensor, Var};
pub use train::{synthetic_dataset, train_toy, Sample, TrainConfig, TrainReport};
