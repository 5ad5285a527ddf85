//! From-scratch 1D CNN: layers with forward/backward passes, Adam, the fixed
//! architecture, its file format, and finite-difference gradient checks.

pub mod adam;
pub mod format;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod model;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use format::{load_model, save_model};
pub use layers::{conv1d_forward, Layer, LayerSpec};
pub use loss::{argmax, cross_entropy_loss, softmax};
pub use model::{Model, ModelSpec, TrainedModel};
pub use tensor::Tensor;
