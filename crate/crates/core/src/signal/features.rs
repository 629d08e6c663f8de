use crate::error::{Error, Result};

use super::stft::{stft_channel, StftParams};
use super::stream::{ImuStream, CHANNELS};

/// Length of one frame feature: raw channel values followed by every
/// channel's spectrum (channel-major, bin-minor).
pub fn feature_dim(params: &StftParams) -> usize {
    CHANNELS + CHANNELS * params.bins()
}

/// Frame-major matrix of per-frame feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub frames: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(frames: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if frames * dim != data.len() || dim == 0 {
            return Err(Error::shape(
                "feature_matrix",
                format!("{frames} x {dim} from {} values", data.len()),
            ));
        }
        Ok(FeatureMatrix { frames, dim, data })
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }
}

/// Consecutive frames `start .. start + len` as one contiguous slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window<'a> {
    pub start: usize,
    pub len: usize,
    pub data: &'a [f64],
}

impl Window<'_> {
    /// Index of the frame whose landmarks the window predicts.
    pub fn last_frame(&self) -> usize {
        self.start + self.len - 1
    }
}

pub fn build_frame_features(stream: &ImuStream, params: &StftParams) -> Result<FeatureMatrix> {
    let n = stream.len();
    let bins = params.bins();
    let dim = feature_dim(params);
    let spectra = (0..CHANNELS)
        .map(|c| stft_channel(&stream.channel(c), params))
        .collect::<Result<Vec<_>>>()?;
    let mut data = Vec::with_capacity(n * dim);
    for (t, s) in stream.samples().iter().enumerate() {
        data.extend_from_slice(s);
        for spec in &spectra {
            data.extend_from_slice(&spec[t * bins..(t + 1) * bins]);
        }
    }
    FeatureMatrix::new(n, dim, data)
}

/// Sliding windows of `window` frames; window `i` covers frames `i*stride .. i*stride + window`.
pub fn segment_windows(features: &FeatureMatrix, window: usize, stride: usize) -> Result<Vec<Window<'_>>> {
    if window == 0 || stride == 0 {
        return Err(Error::Config("window and stride must be positive".into()));
    }
    if features.frames < window {
        return Err(Error::Insufficient(format!(
            "{} frames cannot fill a {window}-frame window",
            features.frames
        )));
    }
    Ok((0..=features.frames - window)
        .step_by(stride)
        .map(|start| Window {
            start,
            len: window,
            data: &features.data[start * features.dim..(start + window) * features.dim],
        })
        .collect())
}
