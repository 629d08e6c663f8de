use nalgebra::{DMatrix, Matrix2x3, Matrix3};

use crate::error::{Error, Result};

/// Weak-perspective camera: `p = s * R[0..2] * v + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraParams {
    pub scale: f64,
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 2],
}

impl CameraParams {
    pub fn identity() -> Self {
        CameraParams {
            scale: 1.0,
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0, 0.0],
        }
    }

    pub fn project_point(&self, v: [f64; 3]) -> [f64; 2] {
        let r = &self.rotation;
        std::array::from_fn(|i| {
            self.scale * (r[i][0] * v[0] + r[i][1] * v[1] + r[i][2] * v[2]) + self.translation[i]
        })
    }

    /// `||R^T R - I||_F`.
    pub fn orthonormality_error(&self) -> f64 {
        let r = Matrix3::from_fn(|i, j| self.rotation[i][j]);
        (r.transpose() * r - Matrix3::identity()).norm()
    }

    pub fn determinant(&self) -> f64 {
        Matrix3::from_fn(|i, j| self.rotation[i][j]).determinant()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(Error::Config(format!("camera scale must be positive, got {}", self.scale)));
        }
        if self.orthonormality_error() > 1e-9 || self.determinant() <= 0.0 {
            return Err(Error::Config("camera rotation is not a proper rotation".into()));
        }
        Ok(())
    }
}

/// Projects each 3D point with the camera.
pub fn project(points: &[[f64; 3]], camera: &CameraParams) -> Vec<[f64; 2]> {
    points.iter().map(|&v| camera.project_point(v)).collect()
}

pub fn reprojection_sse(points: &[[f64; 3]], target: &[[f64; 2]], camera: &CameraParams) -> f64 {
    points
        .iter()
        .zip(target)
        .map(|(&v, p)| {
            let q = camera.project_point(v);
            (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)
        })
        .sum()
}

const RANK_TOL: f64 = 1e-9;

/// Closed-form scaled-orthographic alignment of 3D points to 2D points.
///
/// Solves the unconstrained affine map by least squares, projects it onto
/// the nearest pair of orthonormal rows via SVD and refits the scale. For
/// coplanar points the out-of-plane component is recovered from the
/// orthonormality constraints, choosing the solution with positive third
/// coordinate in the plane frame (the mirrored pose fits equally well).
pub fn fit_camera(points3d: &[[f64; 3]], points2d: &[[f64; 2]]) -> Result<CameraParams> {
    if points3d.len() != points2d.len() {
        return Err(Error::shape(
            "fit_camera",
            format!("{} 3D points vs {} 2D points", points3d.len(), points2d.len()),
        ));
    }
    let n = points3d.len();
    if n < 3 {
        return Err(Error::Degenerate(format!("camera fit needs at least 3 correspondences, got {n}")));
    }
    if points3d.iter().flatten().chain(points2d.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("camera fit input".into()));
    }
    let mean3: [f64; 3] = std::array::from_fn(|a| points3d.iter().map(|p| p[a]).sum::<f64>() / n as f64);
    let mean2: [f64; 2] = std::array::from_fn(|a| points2d.iter().map(|p| p[a]).sum::<f64>() / n as f64);
    let x = DMatrix::from_fn(n, 3, |i, a| points3d[i][a] - mean3[a]);
    let p = DMatrix::from_fn(n, 2, |i, a| points2d[i][a] - mean2[a]);

    let svd = x.clone().svd(false, true);
    let v_t = svd.v_t.as_ref().expect("requested V");
    // nalgebra does not promise sorted singular values
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sv: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    if sv[0] <= 0.0 || sv[1] / sv[0] < RANK_TOL {
        return Err(Error::Degenerate("3D points are collinear or coincident".into()));
    }
    let dir = |k: usize| -> [f64; 3] { std::array::from_fn(|a| v_t[(order[k], a)]) };

    let rows: [[f64; 3]; 2] = if sv[2] / sv[0] >= RANK_TOL {
        // full rank: M = P^T X (X^T X)^-1, then nearest orthonormal rows
        let xtx = x.transpose() * &x;
        let m = p.transpose() * &x * xtx.try_inverse().ok_or_else(|| Error::Degenerate("singular 3D scatter".into()))?;
        let m = Matrix2x3::from_fn(|i, j| m[(i, j)]);
        let s = m.svd(true, true);
        let q = s.u.expect("requested U") * s.v_t.expect("requested V");
        [[q[(0, 0)], q[(0, 1)], q[(0, 2)]], [q[(1, 0)], q[(1, 1)], q[(1, 2)]]]
    } else {
        planar_rows(&x, &p, [dir(0), dir(1), dir(2)])?
    };

    let r3 = cross(rows[0], rows[1]);
    let rotation = [rows[0], rows[1], r3];
    // optimal scale for fixed rotation rows
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..n {
        for (r, row) in rows.iter().enumerate() {
            let q = row[0] * x[(i, 0)] + row[1] * x[(i, 1)] + row[2] * x[(i, 2)];
            num += q * p[(i, r)];
            den += q * q;
        }
    }
    let scale = num / den;
    if !(scale > 0.0) {
        return Err(Error::Degenerate(format!("fitted camera scale {scale} is not positive")));
    }
    let translation = std::array::from_fn(|r| {
        mean2[r] - scale * (rotation[r][0] * mean3[0] + rotation[r][1] * mean3[1] + rotation[r][2] * mean3[2])
    });
    Ok(CameraParams { scale, rotation, translation })
}

/// Orthonormal projection rows for points spanning only the plane `e0, e1`.
fn planar_rows(x: &DMatrix<f64>, p: &DMatrix<f64>, e: [[f64; 3]; 3]) -> Result<[[f64; 3]; 2]> {
    let n = x.nrows();
    let y = DMatrix::from_fn(n, 2, |i, k| (0..3).map(|a| x[(i, a)] * e[k][a]).sum());
    let yty = y.transpose() * &y;
    let a = p.transpose() * &y * yty.try_inverse().ok_or_else(|| Error::Degenerate("singular planar scatter".into()))?;
    // the in-plane block of s * R has largest singular value s
    let s = a.clone().svd(false, false).singular_values.max();
    if !(s > 0.0) {
        return Err(Error::Degenerate("2D points are coincident".into()));
    }
    let b = a / s;
    let b1 = [b[(0, 0)], b[(0, 1)]];
    let b2 = [b[(1, 0)], b[(1, 1)]];
    let c1 = (1.0 - b1[0] * b1[0] - b1[1] * b1[1]).max(0.0).sqrt();
    let dot = b1[0] * b2[0] + b1[1] * b2[1];
    let c2 = if c1 > 1e-12 {
        -dot / c1
    } else {
        (1.0 - b2[0] * b2[0] - b2[1] * b2[1]).max(0.0).sqrt()
    };
    let to_world = |r: [f64; 3]| -> [f64; 3] { std::array::from_fn(|a| r[0] * e[0][a] + r[1] * e[1][a] + r[2] * e[2][a]) };
    let r1 = normalize(to_world([b1[0], b1[1], c1]));
    let r2 = to_world([b2[0], b2[1], c2]);
    // re-orthogonalize against rounding
    let d = r1.iter().zip(&r2).map(|(a, b)| a * b).sum::<f64>();
    let r2 = normalize(std::array::from_fn(|k| r2[k] - d * r1[k]));
    Ok([r1, r2])
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}
