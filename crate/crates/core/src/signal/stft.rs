use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StftParams {
    pub window_len: usize,
    pub nfft: usize,
}

impl Default for StftParams {
    fn default() -> Self {
        StftParams {
            window_len: 30,
            nfft: 32,
        }
    }
}

impl StftParams {
    pub fn bins(&self) -> usize {
        self.nfft / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_len == 0 || self.window_len > self.nfft {
            return Err(Error::Config(format!(
                "window length {} must be in 1..={}",
                self.window_len, self.nfft
            )));
        }
        Ok(())
    }
}

/// Periodic Hann window: `0.5 - 0.5 cos(2 pi n / len)`.
pub fn hann_periodic(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

/// Index into a signal of length `len` with mirror reflection at both ends
/// (edge samples are not repeated).
fn reflect(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    (if m >= len as isize { period - m } else { m }) as usize
}

/// Magnitude spectrogram with hop 1: one frame per input sample.
///
/// Frame `t` covers samples `t - window_len/2 .. t - window_len/2 + window_len`,
/// reflected at the edges, weighted by a periodic Hann window and zero-padded
/// to `nfft`. Returns `len x (nfft/2 + 1)` magnitudes, frame-major.
pub fn stft_channel(signal: &[f64], params: &StftParams) -> Result<Vec<f64>> {
    params.validate()?;
    if signal.is_empty() {
        return Err(Error::Insufficient("empty signal".into()));
    }
    let win = hann_periodic(params.window_len);
    let half = (params.window_len / 2) as isize;
    let bins = params.bins();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(params.nfft);
    let mut buf = vec![Complex::new(0.0, 0.0); params.nfft];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut out = Vec::with_capacity(signal.len() * bins);
    for t in 0..signal.len() as isize {
        for (n, slot) in buf.iter_mut().enumerate() {
            *slot = if n < params.window_len {
                Complex::new(signal[reflect(t - half + n as isize, signal.len())] * win[n], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        out.extend(buf[..bins].iter().map(|c| c.norm()));
    }
    Ok(out)
}
