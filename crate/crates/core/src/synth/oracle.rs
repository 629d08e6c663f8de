use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numerics::gemm;
use crate::training::{Predictor, Session, WindowIndex};

const CHUNK: usize = 256;

/// Ridge regression from a flattened, standardized window to the landmarks
/// of its last frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearOracle {
    pub seq_len: usize,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// `d x outputs` row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

fn window<'a>(sessions: &'a [Session], w: &WindowIndex, seq_len: usize) -> &'a [f64] {
    let f = &sessions[w.session].features;
    &f.data[(w.last + 1 - seq_len) * f.dim..(w.last + 1) * f.dim]
}

impl LinearOracle {
    /// Minimizes `mean ||x W + b - y||^2 + lambda ||W||^2` over standardized
    /// inputs via the normal equations.
    ///
    /// With `lambda = 0` a rank-deficient design is reported as
    /// [`Error::Degenerate`] rather than solved.
    pub fn fit(sessions: &[Session], idx: &[WindowIndex], seq_len: usize, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) {
            return Err(Error::Config(format!("ridge term must be >= 0, got {lambda}")));
        }
        let Some(first) = idx.first() else {
            return Err(Error::Insufficient("no windows to fit".into()));
        };
        let d = seq_len * sessions[first.session].features.dim;
        let out = 2 * sessions[first.session].targets[0].points.len();
        let n = idx.len() as f64;

        let mut mean = vec![0.0; d];
        let mut y_mean = vec![0.0; out];
        for w in idx {
            for (m, v) in mean.iter_mut().zip(window(sessions, w, seq_len)) {
                *m += v / n;
            }
            for (m, v) in y_mean.iter_mut().zip(sessions[w.session].targets[w.last].to_interleaved()) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for w in idx {
            for ((s, v), m) in var.iter_mut().zip(window(sessions, w, seq_len)).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let scale: Vec<f64> = var.iter().map(|&v| if v > 0.0 { v.sqrt() } else { 1.0 }).collect();

        let mut gram = vec![0.0; d * d];
        let mut cross = vec![0.0; d * out];
        for chunk in idx.chunks(CHUNK) {
            let x = standardize(sessions, chunk, seq_len, &mean, &scale);
            let mut y = Vec::with_capacity(chunk.len() * out);
            for w in chunk {
                y.extend(sessions[w.session].targets[w.last].to_interleaved().iter().zip(&y_mean).map(|(v, m)| v - m));
            }
            gemm(true, false, d, d, chunk.len(), 1.0, &x, &x, 1.0, &mut gram);
            gemm(true, false, d, out, chunk.len(), 1.0, &x, &y, 1.0, &mut cross);
        }
        let max_diag = (0..d).map(|i| gram[i * d + i]).fold(0.0, f64::max);
        for i in 0..d {
            gram[i * d + i] += n * lambda;
        }
        let g = DMatrix::from_row_slice(d, d, &gram);
        let chol = g.cholesky().ok_or_else(|| Error::Degenerate("normal equations are not positive definite".into()))?;
        let min_pivot = chol.l_dirty().diagonal().iter().map(|v| v * v).fold(f64::INFINITY, f64::min);
        if lambda == 0.0 && min_pivot <= 1e-10 * max_diag {
            return Err(Error::Degenerate(format!(
                "design is rank deficient (pivot ratio {:.3e}); add a ridge term",
                min_pivot / max_diag
            )));
        }
        let rhs = DMatrix::from_row_slice(d, out, &cross);
        let sol = chol.solve(&rhs);
        let weights = (0..d * out).map(|i| sol[(i / out, i % out)]).collect();
        Ok(LinearOracle {
            seq_len,
            mean,
            scale,
            weights,
            bias: y_mean,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.bias.len()
    }

    /// Prediction for one raw flattened window.
    pub fn predict_one(&self, x: &[f64]) -> Vec<f64> {
        let z: Vec<f64> = x.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect();
        let x = DVector::from_vec(z);
        let w = DMatrix::from_row_slice(self.input_dim(), self.output_dim(), &self.weights);
        (w.transpose() * x).iter().zip(&self.bias).map(|(a, b)| a + b).collect()
    }
}

fn standardize(sessions: &[Session], chunk: &[WindowIndex], seq_len: usize, mean: &[f64], scale: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(chunk.len() * mean.len());
    for w in chunk {
        x.extend(window(sessions, w, seq_len).iter().zip(mean).zip(scale).map(|((v, m), s)| (v - m) / s));
    }
    x
}

impl Predictor for LinearOracle {
    fn predict(&self, sessions: &[Session], idx: &[WindowIndex]) -> Result<Vec<Vec<f64>>> {
        let (d, out) = (self.input_dim(), self.output_dim());
        let mut res = Vec::with_capacity(idx.len());
        for chunk in idx.chunks(CHUNK) {
            if let Some(w) = chunk.iter().find(|w| sessions[w.session].features.dim * self.seq_len != d) {
                return Err(Error::shape(
                    "linear oracle",
                    format!("session {} does not match input size {d}", sessions[w.session].id),
                ));
            }
            let x = standardize(sessions, chunk, self.seq_len, &self.mean, &self.scale);
            let mut y: Vec<f64> = self.bias.iter().copied().cycle().take(chunk.len() * out).collect();
            gemm(false, false, chunk.len(), out, d, 1.0, &x, &self.weights, 1.0, &mut y);
            res.extend(y.chunks(out).map(<[f64]>::to_vec));
        }
        Ok(res)
    }
}
