use crate::landmarks::N_LANDMARKS;

fn ellipse(cx: f64, cy: f64, rx: f64, ry: f64, n: usize) -> impl Iterator<Item = [f64; 2]> {
    // starts at the left corner and runs over the upper lip first
    (0..n).map(move |k| {
        let a = std::f64::consts::PI * (1.0 + 2.0 * k as f64 / n as f64);
        [cx + rx * a.cos(), cy + ry * a.sin()]
    })
}

/// A neutral 51-point face already in canonical normalized coordinates
/// (nose tip at the origin, outer eye corners at `(-0.5, -0.35)` and
/// `(0.5, -0.35)`, image `y` pointing down).
pub fn neutral_face() -> Vec<[f64; 2]> {
    let mut p = Vec::with_capacity(N_LANDMARKS);
    // brows
    for k in 0..5 {
        let x = -0.62 + 0.12 * k as f64;
        p.push([x, -0.55 - 0.06 * (1.0 - ((x + 0.37) / 0.25).powi(2)).max(0.0)]);
    }
    for k in 0..5 {
        let x = 0.14 + 0.12 * k as f64;
        p.push([x, -0.55 - 0.06 * (1.0 - ((x - 0.37) / 0.25).powi(2)).max(0.0)]);
    }
    // nose bridge down to the tip
    p.extend([[0.0, -0.36], [0.0, -0.24], [0.0, -0.12], [0.0, 0.0]]);
    // nostrils
    p.extend([[-0.16, 0.08], [-0.08, 0.1], [0.0, 0.11], [0.08, 0.1], [0.16, 0.08]]);
    // eyes: outer, upper, upper, inner, lower, lower (mirrored on the right)
    p.extend([
        [-0.5, -0.35],
        [-0.41, -0.4],
        [-0.27, -0.4],
        [-0.17, -0.35],
        [-0.27, -0.31],
        [-0.41, -0.31],
    ]);
    p.extend([[0.17, -0.35], [0.27, -0.4], [0.41, -0.4], [0.5, -0.35], [0.41, -0.31], [0.27, -0.31]]);
    p.extend(ellipse(0.0, 0.4, 0.3, 0.12, 12));
    p.extend(ellipse(0.0, 0.4, 0.2, 0.05, 8));
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landmarks::{normalize, FrameTag, LandmarkIndices, LandmarkSet};

    #[test]
    fn neutral_face_is_canonical() {
        let f = neutral_face();
        assert_eq!(f.len(), N_LANDMARKS);
        let set = LandmarkSet::new(f.clone(), FrameTag::RawPixels).unwrap();
        let (n, _) = normalize(&set, &LandmarkIndices::default()).unwrap();
        for (a, b) in n.points.iter().zip(&f) {
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn points_are_distinct() {
        let f = neutral_face();
        for i in 0..f.len() {
            for j in i + 1..f.len() {
                assert!((f[i][0] - f[j][0]).hypot(f[i][1] - f[j][1]) > 1e-3, "{i} {j}");
            }
        }
    }
}
