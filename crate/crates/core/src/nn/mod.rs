//! From-scratch UNet with analytic backward, Focal Tversky loss, model file
//! format and finite-difference gradient verification.

pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod model_file;
pub mod tensor;
pub mod unet;

pub use gradcheck::{grad_check, grad_check_with, GradCheckReport};
pub use loss::{
    focal_tversky_from_index, focal_tversky_loss, soft_dice, LossOutput, LossParams,
    LossReduction, SoftCounts,
};
pub use model_file::{deserialize_params, serialize_params, ModelHeader};
pub use tensor::{Real, Tensor};
pub use unet::{
    unet_backward, unet_forward, unet_init, ForwardCache, ForwardOutput, Gradients, Mode,
    ParamLayout, UNetConfig, UNetParams,
};
