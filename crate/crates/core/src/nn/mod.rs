//! Dense-tensor layers with hand-derived backward passes.
//!
//! Every layer's `forward` is a pure function of its parameters and input and
//! returns a cache; `backward` consumes that cache, accumulates parameter
//! gradients into [`Param::grad`] and returns the input gradient. Batch-norm
//! running statistics are only updated through [`Module::commit_stats`].

pub mod activation;
mod adam;
mod batchnorm;
mod conv;
pub mod gradcheck;
mod loss;
pub mod metrics;
mod module;
pub mod ops;
pub mod probes;
mod tensor;

pub use adam::{adam_step, Adam, AdamConfig};
pub use batchnorm::{batchnorm_backward, batchnorm_forward, BatchNorm2d, BatchNormCache, BN_EPS, BN_MOMENTUM};
pub use conv::{
    conv2d_backward, conv2d_forward, transposed_conv2x_backward, transposed_conv2x_forward, Conv2d, Conv2dGrads,
    TransposedConv2x,
};
pub use gradcheck::{gradcheck, GradReport, GradcheckOptions};
pub use loss::bce_loss;
pub use metrics::{iou, overall_accuracy, Confusion};
pub(crate) use module::join;
pub use module::{count_trainable, Mode, Module, Param};
pub use tensor::Tensor;
