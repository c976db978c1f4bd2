//! Dense 1D tensor arithmetic, convolutions, reverse-mode differentiation and
//! the Adam update.

pub mod adam;
pub mod autodiff;
pub mod conv;
pub(crate) mod gemm;
pub mod ops;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use autodiff::{Backward, Gradients, Tape, Var};
pub use conv::{conv1d, conv_out_len, tconv_out_len, transposed_conv1d};
pub use ops::{elementwise_power, tanh_activation};
pub use tensor::{dot, FeatureMap, Tensor};
