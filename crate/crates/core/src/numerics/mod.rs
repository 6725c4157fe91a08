//! Tensor kernels and the gradient tape.

pub mod kernels;
pub mod tape;

pub use kernels::{
    depthwise_conv3x3, gelu, global_avg_pool, layer_norm, linear, matmul, softmax_lastdim, zero_pad2d, LN_EPS,
};
pub use tape::{Grads, ParamGrads, Tape, Var};
