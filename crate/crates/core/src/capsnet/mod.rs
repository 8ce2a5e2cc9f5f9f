//! Capsule network: convolutional front end, primary capsules, dynamic
//! routing to digit capsules, and a reconstruction decoder.

mod config;
mod gradcheck;
mod loss;
mod model;
mod routing;
mod squash;
mod train;

pub use config::CapsNetConfig;
pub use gradcheck::network_grad_check;
pub use loss::{margin_loss, margin_loss_graph};
pub use model::{CapsNet, DenseLayer, LossGraph};
pub use routing::{argmax_first, route, routing, DigitCapsOutput, Routed};
pub use squash::{squash, squash_vector};
pub use train::{accuracy, train, EpochReport, StepLoss, TrainConfig, Trainer};
