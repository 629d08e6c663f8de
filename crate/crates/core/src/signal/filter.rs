use std::f64::consts::{PI, SQRT_2};

use crate::error::{Error, Result};

use super::stream::{ImuStream, CHANNELS};

/// Initial delay-line state of the filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterInit {
    /// Start from rest; a constant input produces a decaying transient.
    Zero,
    /// Start as if the first sample had been held forever (no start-up transient).
    #[default]
    SteadyState,
}

/// Second-order Butterworth high-pass section from the bilinear transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Butterworth2 {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Butterworth2 {
    pub fn highpass(cutoff: f64, rate: f64) -> Result<Self> {
        if !(cutoff > 0.0 && cutoff < rate / 2.0) {
            return Err(Error::Config(format!(
                "cutoff {cutoff} Hz must lie in (0, {}) for {rate} Hz sampling",
                rate / 2.0
            )));
        }
        let k = (PI * cutoff / rate).tan();
        let norm = 1.0 + SQRT_2 * k + k * k;
        let b0 = 1.0 / norm;
        Ok(Butterworth2 {
            b: [b0, -2.0 * b0, b0],
            a: [1.0, 2.0 * (k * k - 1.0) / norm, (1.0 - SQRT_2 * k + k * k) / norm],
        })
    }

    /// Magnitude of the frequency response at `f` Hz.
    pub fn gain(&self, f: f64, rate: f64) -> f64 {
        let w = 2.0 * PI * f / rate;
        let eval = |c: &[f64; 3]| {
            let re = c[0] + c[1] * w.cos() + c[2] * (2.0 * w).cos();
            let im = -(c[1] * w.sin() + c[2] * (2.0 * w).sin());
            (re * re + im * im).sqrt()
        };
        eval(&self.b) / eval(&self.a)
    }

    /// Runs the filter over `x` (transposed direct form II).
    pub fn apply(&self, x: &[f64], init: FilterInit) -> Vec<f64> {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        let x0 = x.first().copied().unwrap_or(0.0);
        // Steady state for a held constant input x0: output 0 (no DC gain),
        // z1 = -b0*x0 and z2 = b2*x0.
        let (mut z1, mut z2) = match init {
            FilterInit::Zero => (0.0, 0.0),
            FilterInit::SteadyState => (-b0 * x0, b2 * x0),
        };
        x.iter()
            .map(|&v| {
                let y = b0 * v + z1;
                z1 = b1 * v - a1 * y + z2;
                z2 = b2 * v - a2 * y;
                y
            })
            .collect()
    }
}

/// Causal high-pass of every channel of a uniformly sampled stream.
pub fn highpass_filter(stream: &ImuStream, cutoff: f64, rate: f64, init: FilterInit) -> Result<ImuStream> {
    let t = stream.timestamps();
    let dt = 1.0 / rate;
    if let Some(i) = t.windows(2).position(|w| ((w[1] - w[0]) - dt).abs() > 1e-6 * dt.max(1.0)) {
        return Err(Error::Config(format!(
            "high-pass needs a uniform {rate} Hz stream; interval {} at sample {} is {}",
            i,
            i + 1,
            t[i + 1] - t[i]
        )));
    }
    let f = Butterworth2::highpass(cutoff, rate)?;
    let mut out = vec![[0.0; CHANNELS]; stream.len()];
    for c in 0..CHANNELS {
        for (o, y) in out.iter_mut().zip(f.apply(&stream.channel(c), init)) {
            o[c] = y;
        }
    }
    Ok(stream.with_samples(out))
}
