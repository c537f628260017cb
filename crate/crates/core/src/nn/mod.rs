//! From-scratch feed-forward networks: dense, valid 1-D convolution, dropout,
//! max-pooling and flatten layers with exact backpropagation, Adam, and a
//! staged training loop.
//!
//! Tensors are row-major `batch × length × channels` (channels fastest). A
//! dense layer sees a length-1 tensor.

mod adam;
mod checkpoint;
mod layers;
mod model;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{read_checkpoint, read_checkpoint_from, write_checkpoint, write_checkpoint_to, CheckpointMeta};
pub use layers::{Activation, LayerSpec, Shape};
pub use model::{
    build_conv_net, build_dense_net, forward, loss_and_gradients, ForwardMode, LayerInfo, LossReport, SurrogateModel,
    CONV_DROPOUT_RATE,
};
pub use train::{evaluate_rmse, predict, train, write_history_csv, EpochRecord, History, TensorView, TrainingSchedule};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of a network (`f32` for training, `f64` for
/// gradient checks).
pub trait Real: Float + FromPrimitive + ToPrimitive + Default + Send + Sync + std::fmt::Debug + 'static {}

impl Real for f32 {}
impl Real for f64 {}

#[inline]
pub(crate) fn cast<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("f64 converts to every Real")
}
