use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::face::neutral_face;
use crate::error::{Error, Result};
use crate::landmarks::{normalize, FrameTag, LandmarkIndices, LandmarkSet, N_LANDMARKS};
use crate::seeds::derive_seed;
use crate::signal::{preprocess, ImuStream, SignalConfig, CHANNELS, GYRO_CHANNELS};
use crate::training::Session;

const ACCEL_CHANNELS: [usize; 6] = [0, 1, 2, 6, 7, 8];

/// How one wearer's face and ear canal respond to the latent expression state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserModel {
    pub latent_dim: usize,
    /// Landmark mixing `A`, `102 x latent_dim` row-major, acting on
    /// interleaved normalized coordinates.
    pub mixing: Vec<f64>,
    /// Sensor map `B`, `12 x (2 latent_dim)` row-major, acting on `[e; de/dt]`.
    pub sensor: Vec<f64>,
    /// Constant accelerometer reading at rest (gravity), per channel.
    pub rest: [f64; CHANNELS],
}

impl UserModel {
    pub fn generate(seed: u64, latent_dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "user"));
        let mut normal = |scale: f64| scale * rng.sample::<f64, _>(StandardNormal);
        let mixing = (0..2 * N_LANDMARKS * latent_dim).map(|_| normal(0.03)).collect();
        // accelerometers mostly see the state, gyroscopes mostly its rate
        let sensor = (0..CHANNELS * 2 * latent_dim)
            .map(|i| {
                let (c, k) = (i / (2 * latent_dim), i % (2 * latent_dim));
                let on_rate = k >= latent_dim;
                let gyro = GYRO_CHANNELS.contains(&c);
                normal(if gyro == on_rate { 0.1 } else { 0.03 })
            })
            .collect();
        let mut rest = [0.0; CHANNELS];
        for (k, &c) in ACCEL_CHANNELS.iter().enumerate() {
            rest[c] = if k % 3 == 2 { 9.7 } else { 0.0 } + normal(0.3);
        }
        UserModel {
            latent_dim,
            mixing,
            sensor,
            rest,
        }
    }

    /// A different wearer: every entry of `A` and `B` moved by `strength`
    /// times its own magnitude scale.
    pub fn perturbed(&self, seed: u64, strength: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "perturb"));
        let mut jitter = |v: &[f64]| -> Vec<f64> {
            let rms = (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
            v.iter()
                .map(|x| x + strength * rms * rng.sample::<f64, _>(StandardNormal))
                .collect()
        };
        UserModel {
            latent_dim: self.latent_dim,
            mixing: jitter(&self.mixing),
            sensor: jitter(&self.sensor),
            rest: self.rest,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.latent_dim;
        if l == 0 || self.mixing.len() != 2 * N_LANDMARKS * l || self.sensor.len() != CHANNELS * 2 * l {
            return Err(Error::Config(format!("user model matrices do not match latent_dim {l}")));
        }
        if self.mixing.iter().chain(&self.sensor).chain(&self.rest).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("user model".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub seed: u64,
    pub duration_s: f64,
    pub rate_hz: f64,
    /// Still period recorded before the video starts, for calibration.
    pub rest_s: f64,
    /// Sinusoids summed per latent dimension.
    pub n_sines: usize,
    pub band_hz: [f64; 2],
    /// Seconds over which the motion fades in after the rest period.
    pub onset_s: f64,
    pub noise_sigma: f64,
    /// Constant bias on the six gyroscope channels.
    pub gyro_drift: [f64; 6],
    pub user_tag: String,
    pub user: UserModel,
}

impl GeneratorSpec {
    pub fn new(seed: u64, user_tag: &str, user: UserModel) -> Self {
        GeneratorSpec {
            seed,
            duration_s: 60.0,
            rate_hz: 30.0,
            rest_s: 4.0,
            n_sines: 3,
            band_hz: [0.2, 2.0],
            onset_s: 1.0,
            noise_sigma: 0.0,
            gyro_drift: [0.0; 6],
            user_tag: user_tag.to_string(),
            user,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.user.validate()?;
        let bad = |m: &str| Err(Error::Config(format!("generator: {m}")));
        if !(self.duration_s > 0.0 && self.rate_hz > 0.0 && self.rest_s >= 0.0 && self.onset_s >= 0.0) {
            return bad("durations and rate must be positive");
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise sigma must be >= 0");
        }
        if !(self.band_hz[0] > 0.0 && self.band_hz[0] <= self.band_hz[1]) {
            return bad("band must satisfy 0 < low <= high");
        }
        if self.n_sines == 0 {
            return bad("n_sines must be positive");
        }
        if self.gyro_drift.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gyro drift".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSession {
    pub id: String,
    pub imu: ImuStream,
    /// Time of the first landmark frame on the IMU clock.
    pub video_start: f64,
    pub raw: Vec<LandmarkSet>,
    pub targets: Vec<LandmarkSet>,
    /// Latent state and its derivative at every landmark frame.
    pub latent: Vec<Vec<f64>>,
    pub latent_rate: Vec<Vec<f64>>,
}

impl SyntheticSession {
    /// Runs the conditioning chain on the IMU stream and pairs it with the targets.
    pub fn to_session(&self, cfg: &SignalConfig) -> Result<Session> {
        let (features, _) = preprocess(&self.imu, self.video_start, cfg)?;
        Session::new(self.id.clone(), features, self.targets.clone())
    }
}

struct Sine {
    amp: f64,
    omega: f64,
    phase: f64,
}

/// Smooth fade-in `r(t)` and its derivative.
fn onset(t: f64, len: f64) -> (f64, f64) {
    if t >= len && t >= 0.0 {
        (1.0, 0.0)
    } else if t <= 0.0 {
        (0.0, 0.0)
    } else {
        let a = PI * t / len;
        ((1.0 - a.cos()) / 2.0, PI * a.sin() / (2.0 * len))
    }
}

/// Latent state and derivative at time `t` (zero during the rest period).
fn latent_at(sines: &[Vec<Sine>], t: f64, onset_s: f64) -> (Vec<f64>, Vec<f64>) {
    let (r, dr) = onset(t, onset_s);
    sines
        .iter()
        .map(|dim| {
            let (mut s, mut ds) = (0.0, 0.0);
            for w in dim {
                let a = w.omega * t + w.phase;
                s += w.amp * a.sin();
                ds += w.amp * w.omega * a.cos();
            }
            (r * s, dr * s + r * ds)
        })
        .unzip()
}

/// Builds one recording; a pure function of `spec`.
pub fn generate_session(spec: &GeneratorSpec) -> Result<SyntheticSession> {
    spec.validate()?;
    let user = &spec.user;
    let l = user.latent_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "session"));

    let sines: Vec<Vec<Sine>> = (0..l)
        .map(|_| {
            (0..spec.n_sines)
                .map(|_| Sine {
                    amp: rng.gen_range(0.5..1.0) / (spec.n_sines as f64).sqrt(),
                    omega: 2.0 * PI * rng.gen_range(spec.band_hz[0]..=spec.band_hz[1]),
                    phase: rng.gen_range(0.0..2.0 * PI),
                })
                .collect()
        })
        .collect();
    // per-session placement of the face in the camera image
    let angle = rng.gen_range(-0.3..0.3);
    let scale = rng.gen_range(150.0..250.0);
    let offset = [rng.gen_range(270.0..370.0), rng.gen_range(190.0..290.0)];

    let dt = 1.0 / spec.rate_hz;
    let n_rest = (spec.rest_s * spec.rate_hz).round() as usize;
    let n_frames = (spec.duration_s * spec.rate_hz).round() as usize;
    let mut stamps = Vec::with_capacity(n_rest + n_frames);
    let mut samples = Vec::with_capacity(n_rest + n_frames);
    let mut latent = Vec::with_capacity(n_frames);
    let mut latent_rate = Vec::with_capacity(n_frames);
    for k in 0..n_rest + n_frames {
        let t = (k as f64 - n_rest as f64) * dt;
        let (e, de) = latent_at(&sines, t, spec.onset_s);
        let mut x = user.rest;
        for (c, xc) in x.iter_mut().enumerate() {
            let row = &user.sensor[c * 2 * l..(c + 1) * 2 * l];
            *xc += row[..l].iter().zip(&e).map(|(b, v)| b * v).sum::<f64>()
                + row[l..].iter().zip(&de).map(|(b, v)| b * v).sum::<f64>();
        }
        for (g, &c) in GYRO_CHANNELS.iter().enumerate() {
            x[c] += spec.gyro_drift[g];
        }
        if spec.noise_sigma > 0.0 {
            for xc in x.iter_mut() {
                *xc += spec.noise_sigma * rng.sample::<f64, _>(StandardNormal);
            }
        }
        stamps.push(t);
        samples.push(x);
        if k >= n_rest {
            latent.push(e);
            latent_rate.push(de);
        }
    }
    let imu = ImuStream::new(stamps, samples)?;

    let neutral = neutral_face();
    let idx = LandmarkIndices::default();
    let (sin, cos) = f64::sin_cos(angle);
    let mut raw = Vec::with_capacity(n_frames);
    let mut targets = Vec::with_capacity(n_frames);
    for e in &latent {
        let points: Vec<[f64; 2]> = neutral
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let d: [f64; 2] = std::array::from_fn(|a| {
                    let row = &user.mixing[(2 * i + a) * l..(2 * i + a + 1) * l];
                    row.iter().zip(e).map(|(m, v)| m * v).sum::<f64>()
                });
                let (x, y) = (p[0] + d[0], p[1] + d[1]);
                [
                    offset[0] + scale * (cos * x - sin * y),
                    offset[1] + scale * (sin * x + cos * y),
                ]
            })
            .collect();
        let set = LandmarkSet::new(points, FrameTag::RawPixels)?;
        targets.push(normalize(&set, &idx)?.0);
        raw.push(set);
    }
    Ok(SyntheticSession {
        id: format!("{}_{:016x}", spec.user_tag, spec.seed),
        imu,
        video_start: 0.0,
        raw,
        targets,
        latent,
        latent_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> GeneratorSpec {
        let mut s = GeneratorSpec::new(3, "a", UserModel::generate(1, 4));
        s.duration_s = 10.0;
        s
    }

    #[test]
    fn frame_counts() {
        let s = generate_session(&spec()).unwrap();
        assert_eq!(s.targets.len(), 300);
        assert_eq!(s.imu.len(), 420);
        assert_eq!(s.imu.timestamps()[120], 0.0);
    }

    #[test]
    fn zero_mixing_gives_neutral_face() {
        let mut sp = spec();
        sp.user.mixing.iter_mut().for_each(|v| *v = 0.0);
        let s = generate_session(&sp).unwrap();
        let first = &s.targets[0];
        for t in &s.targets {
            assert_eq!(t, first);
        }
        for (a, b) in first.points.iter().zip(neutral_face()) {
            assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn onset_edges() {
        assert_eq!(onset(0.0, 0.0), (1.0, 0.0));
        assert_eq!(onset(-1e-9, 0.0), (0.0, 0.0));
        assert_eq!(onset(0.0, 1.0), (0.0, 0.0));
        assert_eq!(onset(1.0, 1.0), (1.0, 0.0));
        let (r, dr) = onset(0.5, 1.0);
        assert!((r - 0.5).abs() < 1e-15 && (dr - PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn rest_period_is_still() {
        let mut sp = spec();
        sp.gyro_drift = [0.01, -0.02, 0.0, 0.0, 0.03, 0.0];
        let s = generate_session(&sp).unwrap();
        for x in &s.imu.samples()[..120] {
            assert_eq!(x[3], sp.user.rest[3] + 0.01);
            assert_eq!(x[4], sp.user.rest[4] - 0.02);
        }
    }

    #[test]
    fn perturbed_user_differs_but_keeps_shape() {
        let a = UserModel::generate(1, 4);
        let b = a.perturbed(2, 0.3);
        assert_ne!(a, b);
        b.validate().unwrap();
        assert_eq!(a.perturbed(2, 0.0), a);
    }
}
