use crate::error::{Error, Result};

use super::set::{FrameTag, LandmarkSet, N_LANDMARKS};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricConfig {
    /// Measured outer eye-corner distance of the wearer, millimetres.
    pub d_real_mm: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig { d_real_mm: 95.0 }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_real_mm > 0.0 && self.d_real_mm.is_finite()) {
            return Err(Error::Config(format!("d_real_mm = {} must be positive", self.d_real_mm)));
        }
        Ok(())
    }
}

fn distances(g: &LandmarkSet, r: &LandmarkSet) -> Result<Vec<f64>> {
    if g.tag != FrameTag::Normalized || r.tag != FrameTag::Normalized {
        return Err(Error::Config("metrics need normalized landmark sets".into()));
    }
    Ok(g.points
        .iter()
        .zip(&r.points)
        .map(|(a, b)| (a[0] - b[0]).hypot(a[1] - b[1]))
        .collect())
}

/// Mean landmark distance in millimetres (normalized distance 1 = `d_real_mm`).
pub fn mae(g: &LandmarkSet, r: &LandmarkSet, cfg: &MetricConfig) -> Result<f64> {
    let d = distances(g, r)?;
    Ok(d.iter().sum::<f64>() / d.len() as f64 * cfg.d_real_mm)
}

/// Mean normalized landmark distance in percent.
pub fn nme(g: &LandmarkSet, r: &LandmarkSet) -> Result<f64> {
    let d = distances(g, r)?;
    Ok(d.iter().sum::<f64>() / d.len() as f64 * 100.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkErrors {
    /// Mean error of each landmark over all frames, millimetres.
    pub per_landmark_mm: Vec<f64>,
    /// Per-frame MAE in ascending order (empirical CDF samples), millimetres.
    pub frame_mae_sorted: Vec<f64>,
}

pub fn per_landmark_errors(g: &[LandmarkSet], r: &[LandmarkSet], cfg: &MetricConfig) -> Result<LandmarkErrors> {
    if g.len() != r.len() {
        return Err(Error::shape(
            "per_landmark_errors",
            format!("{} ground-truth frames vs {} predictions", g.len(), r.len()),
        ));
    }
    if g.is_empty() {
        return Err(Error::Insufficient("no frames to score".into()));
    }
    let mut per = vec![0.0; N_LANDMARKS];
    let mut frames = Vec::with_capacity(g.len());
    for (a, b) in g.iter().zip(r) {
        let d = distances(a, b)?;
        for (p, v) in per.iter_mut().zip(&d) {
            *p += v * cfg.d_real_mm;
        }
        frames.push(d.iter().sum::<f64>() / d.len() as f64 * cfg.d_real_mm);
    }
    per.iter_mut().for_each(|p| *p /= g.len() as f64);
    frames.sort_by(f64::total_cmp);
    Ok(LandmarkErrors {
        per_landmark_mm: per,
        frame_mae_sorted: frames,
    })
}
