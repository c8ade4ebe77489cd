//! Dense tensors with reverse-mode automatic differentiation.

mod adam;
mod conv;
mod gradcheck;
mod params;
mod ssim;
mod suite;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use gradcheck::grad_check;
pub use params::ParamSet;
pub use ssim::{ms_ssim, ssim, MS_SSIM_WEIGHTS, SSIM_C1, SSIM_C2, SSIM_WINDOW};
pub use suite::{op_suite, OpCheck, SUITE_STEP};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

/// Negative slope used by every leaky ReLU in the models.
pub const LEAKY_SLOPE: f64 = 0.1;
