//! Dense tensors, reverse-mode differentiation and the Adam optimizer.

mod adam;
mod layers;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use layers::{dropout_mask, multi_head_attention, AttentionWeights};
pub use tape::{
    Gradients, RunningStats, Tape, Unary, Var, BATCH_NORM_EPS, BATCH_NORM_MOMENTUM,
    LAYER_NORM_EPS,
};
pub use tensor::{gemm, DType, Real, Tensor};
