//! Minimal reverse-mode differentiable compute core: dense layers, the 3-D
//! convolution block, the parameter store with Adam, and the plateau
//! scheduler. All math is 64-bit.

pub mod conv;
pub mod gradcheck;
pub mod linalg;
pub mod mlp;
pub mod optim;
pub mod tensor;

pub use conv::{conv_block_backward, conv_block_forward, register_conv_block, ConvBlockCache};
pub use mlp::{mlp_backward, mlp_forward, register_mlp, Activation, MlpSpec};
pub use optim::PlateauScheduler;
pub use tensor::{AdamState, ParamStore, Tensor};

/// Default Adam hyperparameters.
pub const ADAM_BETAS: (f64, f64) = (0.9, 0.999);
pub const ADAM_EPS: f64 = 1e-8;
