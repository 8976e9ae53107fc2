//! Self-contained tensor and CNN engine: layer graph with skip
//! connections, forward pass, reverse-mode gradients, Adam, a 32-bit
//! inference snapshot, and the portable weight container.

mod inference;
mod network;
mod optimizer;
mod tensor;
mod weights;

pub mod gradcheck;

pub use inference::{InferenceNet, Prediction32};
pub use network::{
    build_reduced_resnet, build_toy_resnet, build_toy_resnet_seeded, Gradients, LayerSpec,
    Network, NetworkBuilder, NetworkError, Node, Padding, Prediction, KERNEL,
};
pub use optimizer::{sgd_adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
pub use tensor::{Tensor, TensorShape};
pub use weights::{expected_blob_size, load_weights, save_weights, WeightsError, WEIGHTS_MAGIC, WEIGHTS_VERSION};
