pub mod adam;
pub mod embed;
pub mod layers;
pub mod loss;
pub mod param;
pub mod real;
pub mod train;
pub mod xresnet;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use embed::{extract_embeddings, Embedding, WindowConfig};
pub use loss::{oc_softmax_loss, OcSoftmaxConfig};
pub use param::{Grads, Module, Param, Tensor};
pub use real::Real;
pub use train::{train, Example, TrainConfig, TrainingLog};
pub use xresnet::{XResNet, XResNetConfig};
