//! Motion-stream conditioning: calibration, resampling, high-pass filtering,
//! short-time spectra and per-frame feature vectors.

mod calibrate;
mod features;
mod filter;
mod preprocess;
mod resample;
mod stft;
mod stream;

pub use calibrate::{apply_calibration, compute_offset, CalibrationOffset, GYRO_CHANNELS};
pub use features::{build_frame_features, feature_dim, segment_windows, FeatureMatrix, Window};
pub use filter::{highpass_filter, Butterworth2, FilterInit};
pub use preprocess::{preprocess, SignalConfig};
pub use resample::synchronize_and_resample;
pub use stft::{hann_periodic, stft_channel, StftParams};
pub use stream::{read_imu_csv, write_imu_csv, ImuStream, CHANNELS, CSV_HEADER};
