//! Minimal layer set with hand-written backward passes, enough for the
//! compressed-learning U-Net and the shot-gather autoencoder.

mod adam;
mod checkpoint;
mod layers;
mod loss;
mod sensing;
mod tensor;

pub use adam::Adam;
pub use checkpoint::{assign, load_checkpoint, save_checkpoint, CheckpointManifest, ParamEntry};
pub use layers::{
    ConvTranspose2d, Conv2d, Dropout, InstanceNorm2d, Layer, MaxPool2d, Mode, Padding, Param, Relu, Sequential, Tanh,
    Upsample2d, INSTANCE_NORM_EPS,
};
pub use loss::{mixed_loss, mse_loss, MixedLoss};
pub use sensing::{hard_sigmoid, hard_sigmoid_slope, target_count, SensingLayer, INIT_WEIGHT};
pub use tensor::{concat_channels, split_channels, Tensor};

/// Zero every gradient buffer.
pub fn zero_grads(params: &mut [&mut Param]) {
    params.iter_mut().for_each(|p| p.zero_grad());
}
