//! 51-point facial landmarks: file ingestion, canonical normalization and
//! error metrics.

mod metrics;
mod normalize;
mod set;

pub use metrics::{mae, nme, per_landmark_errors, LandmarkErrors, MetricConfig};
pub use normalize::{denormalize, normalize, NormalizationRecord};
pub use set::{read_landmark_csv, write_landmark_csv, FrameTag, LandmarkIndices, LandmarkSet, N_LANDMARKS};
