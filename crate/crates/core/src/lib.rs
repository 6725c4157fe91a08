//! Hierarchical vision transformer with multi-head central self-attention
//! over sliding windows.
//!
//! All math is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! fix the precision for common uses.

pub mod analysis;
pub mod attention;
pub mod audit;
pub mod blocks;
pub mod error;
pub mod init;
pub mod io;
pub mod model;
pub mod numerics;
pub mod scalar;
pub mod tensor;
pub mod training;
pub mod verify;

pub use analysis::{count_macs, count_params, describe, Breakdown, CostReport};
pub use attention::{csa, mcsa, msa, sa_global, unfold_windows, window_count, AttentionParams, WindowSpec};
pub use blocks::{conv_ffn, patch_embed, simvit_block, AttnKind, BlockParams, ConvFFNParams, PatchEmbedParams};
pub use error::{Error, Result};
pub use model::{
    build_model, forward_classify, forward_features, preset_config, FeaturePyramid, Model, ModelConfig, StageConfig,
    Variant,
};
pub use numerics::{Tape, Var};
pub use scalar::{DType, Scalar};
pub use tensor::{ParamId, ParamStore, Parameter, Tensor};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Model32 = Model<f32>;
pub type Model64 = Model<f64>;
pub type ParamStore32 = ParamStore<f32>;
pub type ParamStore64 = ParamStore<f64>;
