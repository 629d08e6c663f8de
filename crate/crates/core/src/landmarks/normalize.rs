use crate::error::{Error, Result};

use super::set::{FrameTag, LandmarkIndices, LandmarkSet};

/// Parameters of the similarity transform applied by [`normalize`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationRecord {
    pub nose: [f64; 2],
    /// Angle of the left-to-right outer eye vector, radians.
    pub theta: f64,
    /// Outer eye-corner distance before scaling.
    pub d: f64,
}

impl NormalizationRecord {
    pub fn identity() -> Self {
        NormalizationRecord {
            nose: [0.0, 0.0],
            theta: 0.0,
            d: 1.0,
        }
    }
}

/// Moves the nose tip to the origin, rotates the outer eye-corner vector onto
/// +x and scales the eye distance to 1.
pub fn normalize(set: &LandmarkSet, idx: &LandmarkIndices) -> Result<(LandmarkSet, NormalizationRecord)> {
    let nose = set.points[idx.nose_tip];
    let l = set.points[idx.left_outer_eye];
    let r = set.points[idx.right_outer_eye];
    let (dx, dy) = (r[0] - l[0], r[1] - l[1]);
    let d = dx.hypot(dy);
    let scale = set.points.iter().flatten().fold(1.0f64, |m, v| m.max(v.abs()));
    if !(d > 1e-12 * scale) {
        return Err(Error::Degenerate(format!(
            "outer eye corners coincide at ({}, {})",
            l[0], l[1]
        )));
    }
    let theta = dy.atan2(dx);
    let (c, s) = (dx / d, dy / d);
    let points = set
        .points
        .iter()
        .map(|p| {
            let (x, y) = (p[0] - nose[0], p[1] - nose[1]);
            [(c * x + s * y) / d, (c * y - s * x) / d]
        })
        .collect();
    Ok((
        LandmarkSet {
            points,
            tag: FrameTag::Normalized,
        },
        NormalizationRecord { nose, theta, d },
    ))
}

pub fn denormalize(set: &LandmarkSet, rec: &NormalizationRecord) -> LandmarkSet {
    let (s, c) = rec.theta.sin_cos();
    let points = set
        .points
        .iter()
        .map(|p| {
            let (x, y) = (p[0] * rec.d, p[1] * rec.d);
            [c * x - s * y + rec.nose[0], s * x + c * y + rec.nose[1]]
        })
        .collect();
    LandmarkSet {
        points,
        tag: FrameTag::RawPixels,
    }
}
