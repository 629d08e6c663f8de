use serde::{Deserialize, Serialize};

use super::camera::{fit_camera, reprojection_sse, CameraParams};
use super::rig::{landmark_vertices, BlendshapeRig, FaceParams};
use crate::error::{Error, Result};
use crate::landmarks::N_LANDMARKS;
use crate::numerics::{Tape, Tensor, Unary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub lambda_beta: f64,
    pub lambda_psi: f64,
    pub max_iters: usize,
    /// Stop once this many consecutive accepted steps improve the
    /// objective by less than `rel_tol` relative.
    pub rel_tol: f64,
    pub patience: usize,
    /// Re-solve the camera in closed form every this many iterations; 0 keeps
    /// the initial camera.
    pub camera_every: usize,
    /// Centered moving average over input frames before fitting; 1 disables.
    pub smoothing_window: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            lambda_beta: 1e-4,
            lambda_psi: 1e-4,
            max_iters: 2000,
            rel_tol: 1e-8,
            patience: 3,
            camera_every: 25,
            smoothing_window: 1,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_beta >= 0.0 && self.lambda_psi >= 0.0) {
            return Err(Error::Config("fit regularizers must be non-negative".into()));
        }
        if !(self.rel_tol >= 0.0) || self.patience == 0 {
            return Err(Error::Config("fit rel_tol must be >= 0 and patience >= 1".into()));
        }
        if self.smoothing_window == 0 || self.smoothing_window % 2 == 0 {
            return Err(Error::Config(format!(
                "smoothing_window must be odd, got {}",
                self.smoothing_window
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Converged,
    /// Iteration budget exhausted; the result is the best point found.
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub frames: Vec<FaceParams>,
    pub camera: CameraParams,
    /// Objective after every accepted step, starting with the initial value.
    pub trace: Vec<f64>,
    pub status: FitStatus,
    pub iterations: usize,
    /// Root-mean-square landmark reprojection distance.
    pub rms_residual: f64,
}

/// Centered moving average over frames, shrinking at the sequence ends.
pub fn moving_average(frames: &[Vec<[f64; 2]>], window: usize) -> Vec<Vec<[f64; 2]>> {
    let half = window / 2;
    (0..frames.len())
        .map(|f| {
            let lo = f.saturating_sub(half);
            let hi = (f + half + 1).min(frames.len());
            let n = (hi - lo) as f64;
            (0..frames[f].len())
                .map(|l| {
                    let mut acc = [0.0; 2];
                    for fr in &frames[lo..hi] {
                        acc[0] += fr[l][0];
                        acc[1] += fr[l][1];
                    }
                    [acc[0] / n, acc[1] / n]
                })
                .collect()
        })
        .collect()
}

/// Constants of the landmark-only forward model.
struct Problem<'a> {
    rig: &'a BlendshapeRig,
    frames: usize,
    /// `[nb, 153]` and `[ne, 153]` landmark rows of the bases, transposed.
    shape_rows: Tensor<f64>,
    expr_rows: Tensor<f64>,
    template: Tensor<f64>,
    neg_pivot: Tensor<f64>,
    /// Row-vector forms of `u -> k x u` and `u -> k (k . u)`.
    cross_t: Tensor<f64>,
    outer: Tensor<f64>,
    weights: Tensor<f64>,
    target: Tensor<f64>,
    cfg: &'a FitConfig,
}

const LM3: usize = 3 * N_LANDMARKS;

impl<'a> Problem<'a> {
    fn new(rig: &'a BlendshapeRig, targets: &[Vec<[f64; 2]>], cfg: &'a FitConfig) -> Self {
        let emb = &rig.landmark_embedding;
        let rows = |basis: &[f64], dims: usize| {
            Tensor::from_fn(&[dims, LM3], |i| {
                let (k, c) = (i / LM3, i % LM3);
                basis[(3 * emb[c / 3] + c % 3) * dims + k]
            })
        };
        let k = rig.jaw_axis;
        // (u M)_j = sum_i u_i M_ij, so M is the transpose of the cross matrix
        let skew = [[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]];
        let frames = targets.len();
        Problem {
            rig,
            frames,
            shape_rows: rows(&rig.shape_basis, rig.n_shape),
            expr_rows: rows(&rig.expression_basis, rig.n_expression),
            template: Tensor::from_fn(&[LM3], |c| rig.template[emb[c / 3]][c % 3]),
            neg_pivot: Tensor::from_fn(&[3], |a| -rig.jaw_pivot[a]),
            cross_t: Tensor::from_fn(&[3, 3], |i| skew[i % 3][i / 3]),
            outer: Tensor::from_fn(&[3, 3], |i| k[i / 3] * k[i % 3]),
            weights: Tensor::from_fn(&[frames * N_LANDMARKS, 3], |i| rig.jaw_weights[emb[(i / 3) % N_LANDMARKS]]),
            target: Tensor::from_fn(&[frames * N_LANDMARKS, 2], |i| targets[i / (2 * N_LANDMARKS)][(i / 2) % N_LANDMARKS][i % 2]),
            cfg,
        }
    }

    fn n_vars(&self) -> usize {
        self.rig.n_shape + self.frames * (self.rig.n_expression + 1)
    }

    fn unpack(&self, x: &[f64]) -> Vec<FaceParams> {
        let (nb, ne) = (self.rig.n_shape, self.rig.n_expression);
        let beta = &x[..nb];
        let psi = &x[nb..nb + self.frames * ne];
        let theta = &x[nb + self.frames * ne..];
        (0..self.frames)
            .map(|f| FaceParams {
                beta: beta.to_vec(),
                psi: psi[f * ne..(f + 1) * ne].to_vec(),
                theta_jaw: theta[f],
            })
            .collect()
    }

    /// Objective and, if requested, its gradient with respect to `x`.
    fn evaluate(&self, x: &[f64], camera: &CameraParams, with_grad: bool) -> Result<(f64, Vec<f64>)> {
        let (nb, ne, nf) = (self.rig.n_shape, self.rig.n_expression, self.frames);
        let rows = nf * N_LANDMARKS;
        let mut tape = Tape::<f64>::new();
        let beta = tape.leaf(Tensor::new(&[1, nb], x[..nb].to_vec())?, true);
        let psi = tape.leaf(Tensor::new(&[nf, ne], x[nb..nb + nf * ne].to_vec())?, true);
        let theta = tape.leaf(Tensor::new(&[nf, 1], x[nb + nf * ne..].to_vec())?, true);

        let mut v = if ne > 0 {
            let e = tape.constant(self.expr_rows.clone());
            tape.matmul(psi, e)?
        } else {
            tape.constant(Tensor::zeros(&[nf, LM3]))
        };
        if nb > 0 {
            let s = tape.constant(self.shape_rows.clone());
            let off = tape.matmul(beta, s)?;
            v = tape.add_tiled(v, off)?;
        }
        let tmpl = tape.constant(self.template.clone());
        v = tape.add_tiled(v, tmpl)?;
        let v = tape.reshape(v, &[rows, 3])?;

        // blended jaw rotation: v + w ((cos - 1)(u - k k.u) + sin (k x u))
        let np = tape.constant(self.neg_pivot.clone());
        let u = tape.add_tiled(v, np)?;
        let outer = tape.constant(self.outer.clone());
        let cross_t = tape.constant(self.cross_t.clone());
        let uk = tape.matmul(u, outer)?;
        let ux = tape.matmul(u, cross_t)?;
        let d = tape.sub(u, uk)?;
        let ones = tape.constant(Tensor::ones(&[1, LM3]));
        let minus_one = tape.constant(Tensor::scalar(-1.0));
        let cos = tape.unary(theta, Unary::Cos);
        let cm1 = tape.add_tiled(cos, minus_one)?;
        let sin = tape.unary(theta, Unary::Sin);
        let c = tape.matmul(cm1, ones)?;
        let c = tape.reshape(c, &[rows, 3])?;
        let s = tape.matmul(sin, ones)?;
        let s = tape.reshape(s, &[rows, 3])?;
        let a = tape.mul(c, d)?;
        let b = tape.mul(s, ux)?;
        let term = tape.add(a, b)?;
        let w = tape.constant(self.weights.clone());
        let term = tape.mul(term, w)?;
        let v = tape.add(v, term)?;

        let r = &camera.rotation;
        let cam = tape.constant(Tensor::from_fn(&[3, 2], |i| camera.scale * r[i % 2][i / 2]));
        let t = tape.constant(Tensor::new(&[2], camera.translation.to_vec())?);
        let proj = tape.matmul(v, cam)?;
        let proj = tape.add_tiled(proj, t)?;
        let target = tape.constant(self.target.clone());
        let res = tape.sub(proj, target)?;
        let sq = tape.unary(res, Unary::Square);
        let mut loss = tape.sum(sq);
        for (var, lambda) in [(beta, self.cfg.lambda_beta), (psi, self.cfg.lambda_psi)] {
            if lambda > 0.0 && tape.value(var).len() > 0 {
                let sq = tape.unary(var, Unary::Square);
                let reg = tape.sum(sq);
                let reg = tape.scale(reg, lambda);
                loss = tape.add(loss, reg)?;
            }
        }
        let f = tape.value(loss).data()[0];
        if !f.is_finite() {
            return Err(Error::NonFinite("fit objective".into()));
        }
        if !with_grad {
            return Ok((f, Vec::new()));
        }
        let grads = tape.backward(loss)?;
        let mut g = Vec::with_capacity(x.len());
        for var in [beta, psi, theta] {
            g.extend_from_slice(grads.get_or_zeros(var, tape.value(var)).data());
        }
        Ok((f, g))
    }

    fn refit_camera(&self, x: &[f64]) -> Result<CameraParams> {
        let params = self.unpack(x);
        let pts3: Vec<[f64; 3]> = params.iter().flat_map(|p| landmark_vertices(self.rig, p)).collect();
        let t = self.target.data();
        let pts2: Vec<[f64; 2]> = t.chunks(2).map(|c| [c[0], c[1]]).collect();
        fit_camera(&pts3, &pts2)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fits shared identity, per-frame expression and jaw angle to 2D landmark
/// frames by gradient descent with Armijo backtracking, periodically
/// re-solving the camera in closed form.
///
/// Trial steps use the Barzilai-Borwein length; every accepted step (and
/// every accepted camera update) decreases the objective.
pub fn fit_parameters(
    rig: &BlendshapeRig,
    targets: &[Vec<[f64; 2]>],
    init_camera: &CameraParams,
    cfg: &FitConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    rig.validate()?;
    init_camera.validate()?;
    if targets.is_empty() {
        return Err(Error::Insufficient("no landmark frames to fit".into()));
    }
    if let Some(f) = targets.iter().position(|t| t.len() != N_LANDMARKS) {
        return Err(Error::shape(
            "fit_parameters",
            format!("frame {f} has {} landmarks, expected {N_LANDMARKS}", targets[f].len()),
        ));
    }
    let smoothed;
    let targets = if cfg.smoothing_window > 1 {
        smoothed = moving_average(targets, cfg.smoothing_window);
        &smoothed
    } else {
        targets
    };
    let problem = Problem::new(rig, targets, cfg);
    let mut camera = *init_camera;
    let mut x = vec![0.0; problem.n_vars()];
    let (mut f, mut g) = problem.evaluate(&x, &camera, true)?;
    let mut trace = vec![f];
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut alpha = 1.0 / dot(&g, &g).sqrt().max(1.0);
    let mut status = FitStatus::MaxIterations;
    let mut stalled = 0;
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        iterations += 1;
        let gg = dot(&g, &g);
        if gg == 0.0 || f == 0.0 {
            status = FitStatus::Converged;
            break;
        }
        if let Some((xp, gp)) = &prev {
            let s: Vec<f64> = x.iter().zip(xp).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = g.iter().zip(gp).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            alpha = if sy > 0.0 { dot(&s, &s) / sy } else { alpha * 2.0 };
        }
        let mut accepted = None;
        for _ in 0..60 {
            let xn: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - alpha * b).collect();
            let (fn_, _) = problem.evaluate(&xn, &camera, false)?;
            if fn_ <= f - 1e-4 * alpha * gg {
                accepted = Some((xn, fn_));
                break;
            }
            alpha *= 0.5;
        }
        let Some((xn, fn_)) = accepted else {
            status = FitStatus::Converged;
            break;
        };
        let rel = (f - fn_) / f.abs().max(f64::MIN_POSITIVE);
        let (_, gn) = problem.evaluate(&xn, &camera, true)?;
        prev = Some((std::mem::replace(&mut x, xn), std::mem::replace(&mut g, gn)));
        f = fn_;
        trace.push(f);

        if cfg.camera_every > 0 && iterations % cfg.camera_every == 0 {
            if let Ok(cam) = problem.refit_camera(&x) {
                let (fc, gc) = problem.evaluate(&x, &cam, true)?;
                if fc < f {
                    camera = cam;
                    f = fc;
                    g = gc;
                    trace.push(f);
                    prev = None;
                    stalled = 0;
                    continue;
                }
            }
        }
        if rel < cfg.rel_tol {
            stalled += 1;
            if stalled >= cfg.patience {
                status = FitStatus::Converged;
                break;
            }
        } else {
            stalled = 0;
        }
    }

    let frames = problem.unpack(&x);
    let sse: f64 = frames
        .iter()
        .zip(targets)
        .map(|(p, t)| reprojection_sse(&landmark_vertices(rig, p), t, &camera))
        .sum();
    let rms_residual = (sse / (targets.len() * N_LANDMARKS) as f64).sqrt();
    Ok(FitResult {
        frames,
        camera,
        trace,
        status,
        iterations,
        rms_residual,
    })
}
