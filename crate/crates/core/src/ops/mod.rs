//! Differentiable primitive operators.
//!
//! Every function records onto a [`crate::tape::Tape`] and supplies its own
//! backward rule. Higher modules (dynconv, crnn, trainer) compose only these
//! primitives, so the gradient-check harness in [`crate::gradcheck`] covers
//! the whole model family.

mod conv;
mod elementwise;
mod gru;
mod matmul;
mod norm;
mod pool;
mod shape;

pub use conv::{conv1x1, conv2d, conv2d_reference, Conv2dCfg, Padding};
pub use elementwise::{
    add, add_scalar, bce_loss, dropout, mean_all, mse_to_const, mul, mul_const, one_minus, relu,
    scale, sigmoid, sub, sub_const, sum_all, tanh_op,
};
pub use gru::{bigru, gru_cell, BiGruParams, GruDirParams};
pub use matmul::{linear2d, linear3d, matmul2d};
pub use norm::{batch_norm, softmax_axis, BnMode, BnStats};
pub use pool::{mean_time, pool2d, sum_time, sum_time3, PoolMode};
pub use shape::{
    attention_mix, concat_channels, concat_last, reshape, shift_time, slice_channels, slice_cols,
    slice_outer, slice_time_step, stack_time, to_sequence, truncate_time,
};
