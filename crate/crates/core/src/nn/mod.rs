//! Tensor engine with reverse-mode differentiation and the U-Net decoder.

mod kernels;
pub mod tape;
pub mod tensor;
pub mod unet;

pub use tape::{Gradients, Tape, Var};
pub use tensor::{Real, Tensor};
pub use unet::{build_unet, conv_param_count, count_params, LayerSummary, Param, UNet, UNetConfig};
