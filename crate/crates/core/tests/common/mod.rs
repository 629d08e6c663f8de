//! Reference implementations and checkers shared by the integration tests.
//! Everything here is written directly from the defining formulas and does
//! not call into the library's numerical kernels.
#![allow(dead_code)]

pub mod cases;

use std::f64::consts::PI;

use earsense::numerics::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const FD_STEP: f64 = 1e-5;
/// Gradient norms below this are compared in absolute terms.
pub const GRAD_FLOOR: f64 = 1e-5;
/// Allowed gap between central differences at `h` and `h/2`, relative to
/// `max(|derivative| + |f|, 1)`.
pub const KINK_TOL: f64 = 1e-7;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, normals(rng, n)).unwrap()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `|a - b| / max(|a|, |b|, GRAD_FLOOR)` with Euclidean norms over the whole tensor.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&d) / norm(a).max(norm(b)).max(GRAD_FLOOR)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Outcome of a finite-difference comparison for one leaf.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub rel_err: f64,
    pub checked: usize,
    /// Coordinates whose step crossed a kink (see [`gradient_check`]).
    pub kinks: usize,
}

/// Gradient check of `build` at `leaves`.
///
/// The output of `build` is contracted with fixed random weights to get a
/// scalar; its tape gradient is compared with central differences on the
/// chosen coordinates of every leaf (`None` = all coordinates).
///
/// A central difference is meaningless when the step crosses a point where
/// the function is not differentiable (a ReLU or Wing kink). On smooth
/// stretches the central differences at `h` and `h/2` agree up to
/// `h^2 |f'''| / 8`; across a kink they differ by an amount of order
/// `|slope jump|`. Coordinates where the two disagree by more than
/// [`KINK_TOL`] are counted in `kinks` and left out of the comparison. The
/// screen never looks at the tape gradient, so a wrong backward pass is still
/// caught on every other coordinate.
pub fn gradient_check(
    leaves: &[Tensor<f64>],
    coords: Option<&[Vec<usize>]>,
    seed: u64,
    build: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var,
) -> Vec<GradCheck> {
    let forward = |vals: &[Tensor<f64>]| -> Vec<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.constant(t.clone())).collect();
        let out = build(&mut tape, &vars);
        tape.value(out).data().to_vec()
    };
    let out0 = forward(leaves);
    let weights = normals(&mut rng(seed ^ 0x5eed), out0.len());
    let contract = |o: &[f64]| o.iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>();
    let f0 = contract(&out0);

    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&mut tape, &vars);
    let shape = tape.shape(out).to_vec();
    let w = tape.constant(Tensor::new(&shape, weights.clone()).unwrap());
    let loss = tape.dot(out, w).unwrap();
    let grads = tape.backward(loss).unwrap();

    let mut result = Vec::with_capacity(leaves.len());
    for (i, leaf) in leaves.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[i], leaf);
        let all: Vec<usize>;
        let picked: &[usize] = match coords {
            Some(c) => &c[i],
            None => {
                all = (0..leaf.len()).collect();
                &all
            }
        };
        let mut a = Vec::with_capacity(picked.len());
        let mut fd = Vec::with_capacity(picked.len());
        let mut kinks = 0;
        for &j in picked {
            let mut vals = leaves.to_vec();
            let x = leaf.data()[j];
            let mut at = |dx: f64| {
                vals[i].data_mut()[j] = x + dx;
                contract(&forward(&vals))
            };
            let d = (at(FD_STEP) - at(-FD_STEP)) / (2.0 * FD_STEP);
            let d_half = (at(FD_STEP / 2.0) - at(-FD_STEP / 2.0)) / FD_STEP;
            if (d - d_half).abs() > KINK_TOL * (d.abs() + f0.abs()).max(1.0) {
                kinks += 1;
                continue;
            }
            fd.push(d);
            a.push(analytic.data()[j]);
        }
        result.push(GradCheck {
            rel_err: rel_err(&a, &fd),
            checked: a.len(),
            kinks,
        });
    }
    result
}

/// Same-padded stride-1 convolution by direct summation.
/// `x: [B, C_in, L]`, `w: [C_out, C_in, K]`.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv1d(x: &[f64], b: usize, cin: usize, l: usize, w: &[f64], cout: usize, k: usize, bias: Option<&[f64]>) -> Vec<f64> {
    let pad = (k / 2) as isize;
    let mut out = vec![0.0; b * cout * l];
    for n in 0..b {
        for o in 0..cout {
            for t in 0..l {
                let mut s = bias.map_or(0.0, |v| v[o]);
                for c in 0..cin {
                    for j in 0..k {
                        let src = t as isize + j as isize - pad;
                        if src >= 0 && (src as usize) < l {
                            s += w[(o * cin + c) * k + j] * x[(n * cin + c) * l + src as usize];
                        }
                    }
                }
                out[(n * cout + o) * l + t] = s;
            }
        }
    }
    out
}

/// Softmax attention of one sequence, each head handled separately.
/// `q, k, v: [T, D]` row-major.
pub fn naive_attention(q: &[f64], k: &[f64], v: &[f64], t: usize, d: usize, heads: usize) -> Vec<f64> {
    let dh = d / heads;
    let mut out = vec![0.0; t * d];
    for h in 0..heads {
        for i in 0..t {
            let scores: Vec<f64> = (0..t)
                .map(|j| (0..dh).map(|c| q[i * d + h * dh + c] * k[j * d + h * dh + c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in 0..dh {
                out[i * d + h * dh + c] = (0..t).map(|j| e[j] / z * v[j * d + h * dh + c]).sum();
            }
        }
    }
    out
}

/// `x · w + b` for row-major `x: [m, k]`, `w: [k, n]`.
pub fn naive_linear(x: &[f64], m: usize, k: usize, w: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = b[j] + (0..k).map(|c| x[i * k + c] * w[c * n + j]).sum::<f64>();
        }
    }
    out
}

/// Magnitudes of the first `nfft/2 + 1` bins of the O(n^2) DFT of `frame`
/// zero-padded to `nfft`.
pub fn naive_dft_magnitudes(frame: &[f64], nfft: usize) -> Vec<f64> {
    (0..=nfft / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (n, &x) in frame.iter().enumerate() {
                let a = -2.0 * PI * (k * n) as f64 / nfft as f64;
                re += x * a.cos();
                im += x * a.sin();
            }
            re.hypot(im)
        })
        .collect()
}

/// Frame `t` of a hop-1 spectrogram: `window_len` samples centred on `t`
/// (start `t - window_len/2`), mirrored at the signal ends without repeating
/// the edge sample, times a periodic Hann window.
pub fn naive_stft_frame(signal: &[f64], t: usize, window_len: usize, nfft: usize) -> Vec<f64> {
    let n = signal.len() as isize;
    if n == 1 {
        let hann: Vec<f64> = (0..window_len).map(|j| 0.5 * (1.0 - (2.0 * PI * j as f64 / window_len as f64).cos())).collect();
        return naive_dft_magnitudes(&hann.iter().map(|h| h * signal[0]).collect::<Vec<_>>(), nfft);
    }
    let frame: Vec<f64> = (0..window_len)
        .map(|j| {
            let mut i = t as isize - (window_len / 2) as isize + j as isize;
            // bounce between the ends until inside
            while i < 0 || i >= n {
                if i < 0 {
                    i = -i;
                }
                if i >= n {
                    i = 2 * (n - 1) - i;
                }
            }
            let hann = 0.5 * (1.0 - (2.0 * PI * j as f64 / window_len as f64).cos());
            signal[i as usize] * hann
        })
        .collect();
    naive_dft_magnitudes(&frame, nfft)
}

/// Wing penalty evaluated from its two branches.
pub fn wing_reference(x: f64, w: f64, eps: f64) -> f64 {
    let x = x.abs();
    if x < w {
        w * (1.0 + x / eps).ln()
    } else {
        x - (w - w * (1.0 + w / eps).ln())
    }
}

/// Trainable scalar count of a network, summed layer by layer from the
/// architecture description.
pub fn expected_parameter_count(c: &earsense::model::ModelConfig) -> usize {
    let (k, ch, d) = (c.kernel, &c.cnn_channels, c.d_model);
    let mut n = ch[0] * c.input_dim * k + 2 * ch[0];
    for w in ch.windows(2) {
        let (cin, cout) = (w[0], w[1]);
        n += cout * cin * k + 2 * cout + cout * cout * k + 2 * cout;
        if cin != cout {
            n += cout * cin + cout;
        }
    }
    n += ch[ch.len() - 1] * d + d;
    let layer = 2 * d + 4 * (d * d + d) + 2 * d + (d * c.d_ff + c.d_ff) + (c.d_ff * d + d);
    n += c.encoder_layers * layer;
    n + 2 * d + d * 2 * c.output_landmarks + 2 * c.output_landmarks
}
