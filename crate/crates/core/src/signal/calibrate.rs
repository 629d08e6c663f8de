use crate::error::{Error, Result};

use super::stream::{ImuStream, CHANNELS};

/// Gyroscope channels of both earbuds.
pub const GYRO_CHANNELS: [usize; 6] = [3, 4, 5, 9, 10, 11];

/// Per-channel mean over the resting period at the start of a recording.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationOffset(pub [f64; CHANNELS]);

/// Mean of every channel over samples with `t - t0 < duration`.
///
/// A stream of `n` samples is taken to cover `n` sample periods, so a 4 s
/// recording at 30 Hz (120 samples) is enough for a 4 s calibration.
pub fn compute_offset(stream: &ImuStream, duration: f64) -> Result<CalibrationOffset> {
    let t = stream.timestamps();
    if t.len() < 2 {
        return Err(Error::Insufficient(format!(
            "calibration needs at least 2 samples, stream has {}",
            t.len()
        )));
    }
    let last_dt = t[t.len() - 1] - t[t.len() - 2];
    let covered = stream.span() + last_dt;
    if covered < duration - 1e-9 {
        return Err(Error::Insufficient(format!(
            "calibration needs {duration} s, stream covers {covered:.3} s"
        )));
    }
    let t0 = t[0];
    let n = t.iter().take_while(|&&v| v - t0 < duration - 1e-9).count();
    let mut mean = [0.0; CHANNELS];
    for s in &stream.samples()[..n] {
        for c in 0..CHANNELS {
            mean[c] += s[c];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    Ok(CalibrationOffset(mean))
}

/// Subtracts the offset from the gyroscope channels only.
pub fn apply_calibration(stream: &ImuStream, offset: &CalibrationOffset) -> ImuStream {
    let x = stream
        .samples()
        .iter()
        .map(|s| {
            let mut s = *s;
            for &c in &GYRO_CHANNELS {
                s[c] -= offset.0[c];
            }
            s
        })
        .collect();
    stream.with_samples(x)
}
