use crate::error::Result;

use super::calibrate::{apply_calibration, compute_offset, CalibrationOffset};
use super::features::{build_frame_features, FeatureMatrix};
use super::filter::{highpass_filter, FilterInit};
use super::resample::synchronize_and_resample;
use super::stft::StftParams;
use super::stream::ImuStream;

/// Settings of the conditioning chain.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SignalConfig {
    pub calibration_s: f64,
    pub rate_hz: f64,
    pub cutoff_hz: f64,
    pub filter_init: FilterInit,
    pub window_len: usize,
    pub nfft: usize,
}

impl Default for SignalConfig {
    fn default() -> Self {
        SignalConfig {
            calibration_s: 4.0,
            rate_hz: 30.0,
            cutoff_hz: 0.1,
            filter_init: FilterInit::SteadyState,
            window_len: 30,
            nfft: 32,
        }
    }
}

impl SignalConfig {
    pub fn stft(&self) -> StftParams {
        StftParams {
            window_len: self.window_len,
            nfft: self.nfft,
        }
    }
}

/// Calibrate, align to `video_start`, resample, high-pass and featurize.
pub fn preprocess(raw: &ImuStream, video_start: f64, cfg: &SignalConfig) -> Result<(FeatureMatrix, CalibrationOffset)> {
    let offset = compute_offset(raw, cfg.calibration_s)?;
    let calibrated = apply_calibration(raw, &offset);
    let uniform = synchronize_and_resample(&calibrated, video_start, cfg.rate_hz)?;
    let filtered = highpass_filter(&uniform, cfg.cutoff_hz, cfg.rate_hz, cfg.filter_init)?;
    Ok((build_frame_features(&filtered, &cfg.stft())?, offset))
}
