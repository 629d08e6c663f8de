use crate::error::{Error, Result};

use super::stream::{ImuStream, CHANNELS};

/// Aligns the stream to a reference start time and interpolates it onto a
/// uniform grid.
///
/// The grid starts at the stream timestamp nearest `video_start` and runs at
/// `rate` until the last sample. Grid points that coincide with a sample (to
/// within 1e-9 s) copy it exactly.
pub fn synchronize_and_resample(stream: &ImuStream, video_start: f64, rate: f64) -> Result<ImuStream> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::Config(format!("resampling rate {rate} must be positive")));
    }
    let t = stream.timestamps();
    let x = stream.samples();
    let (first, last) = (t[0], t[t.len() - 1]);
    if !(video_start >= first && video_start <= last) {
        return Err(Error::Insufficient(format!(
            "reference start {video_start} lies outside the stream span [{first}, {last}]"
        )));
    }
    let nearest = match t.partition_point(|&v| v < video_start) {
        0 => 0,
        i if i == t.len() => i - 1,
        i if video_start - t[i - 1] <= t[i] - video_start => i - 1,
        i => i,
    };
    let start = t[nearest];
    let tol = 1e-9;
    let mut out_t = Vec::new();
    let mut out_x = Vec::new();
    let mut j = nearest;
    for k in 0.. {
        let g = start + k as f64 / rate;
        if g > last + tol {
            break;
        }
        while j + 1 < t.len() && t[j + 1] <= g + tol {
            j += 1;
        }
        let v = if (g - t[j]).abs() <= tol || j + 1 == t.len() {
            x[j]
        } else {
            let a = (g - t[j]) / (t[j + 1] - t[j]);
            let mut s = [0.0; CHANNELS];
            for c in 0..CHANNELS {
                s[c] = x[j][c] + a * (x[j + 1][c] - x[j][c]);
            }
            s
        };
        out_t.push(g);
        out_x.push(v);
    }
    ImuStream::new(out_t, out_x)
}
