//! Convolutional front end + transformer encoder landmark regressor and its loss.

mod config;
mod loss;
mod network;

pub use config::ModelConfig;
pub use loss::{wing_loss, wing_value, WingParams};
pub use network::{count_parameters, is_linear_layer, BnMode, ForwardOptions, Network, Outputs, ParamKind};
