//! Earbud motion sensing to facial landmarks: signal conditioning, a
//! convolutional/transformer regressor, evaluation and blendshape fitting.

pub mod container;
pub mod error;
pub mod face3d;
pub mod landmarks;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod seeds;
pub mod signal;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
