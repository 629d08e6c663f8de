use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::face::neutral_face;
use crate::face3d::{evaluate_rig, project, BlendshapeRig, CameraParams, FaceParams};
use crate::landmarks::N_LANDMARKS;
use crate::seeds::derive_seed;

/// Typical size of a single basis entry, in normalized face units.
const BASIS_ENTRY_SCALE: f64 = 0.03;

/// A curved grid patch covering the neutral face, with orthogonal random
/// bases, a jaw hinged behind the mouth and landmarks snapped to distinct
/// vertices.
///
/// # Panics
///
/// If `n_vertices < 51` or no draw yields a landmark basis with condition
/// number below 1e3.
pub fn generate_rig(seed: u64, n_vertices: usize, n_shape: usize, n_expression: usize) -> BlendshapeRig {
    assert!(n_vertices >= N_LANDMARKS, "a rig needs at least {N_LANDMARKS} vertices");
    let rows = (n_vertices as f64).sqrt().floor() as usize;
    let cols = n_vertices.div_ceil(rows);
    let span = 0.9;
    let template: Vec<[f64; 3]> = (0..n_vertices)
        .map(|i| {
            let (r, c) = (i / cols, i % cols);
            let x = -span + 2.0 * span * c as f64 / (cols - 1).max(1) as f64;
            let y = -span + 2.0 * span * r as f64 / (rows - 1).max(1) as f64;
            [x, y, 0.4 - 0.3 * (x * x + y * y)]
        })
        .collect();
    let mut faces = Vec::new();
    for r in 0..rows.saturating_sub(1) {
        for c in 0..cols - 1 {
            let a = r * cols + c;
            let (b, d, e) = (a + 1, a + cols, a + cols + 1);
            if e < n_vertices {
                faces.push([a, d, b]);
                faces.push([b, d, e]);
            }
        }
    }

    // greedy nearest free vertex for each landmark
    let mut used = vec![false; n_vertices];
    let landmark_embedding: Vec<usize> = neutral_face()
        .iter()
        .map(|p| {
            let best = (0..n_vertices)
                .filter(|&i| !used[i])
                .min_by(|&a, &b| {
                    let d = |i: usize| (template[i][0] - p[0]).powi(2) + (template[i][1] - p[1]).powi(2);
                    d(a).total_cmp(&d(b))
                })
                .expect("enough vertices");
            used[best] = true;
            best
        })
        .collect();

    let dims = n_shape + n_expression;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "rig"));
    let mut basis = Vec::new();
    for _attempt in 0..16 {
        basis = orthogonal_columns(&mut rng, 3 * n_vertices, dims);
        if dims == 0 || landmark_basis_condition(&basis, dims, &landmark_embedding) < 1e3 {
            break;
        }
        basis.clear();
    }
    assert!(dims == 0 || !basis.is_empty(), "no well-conditioned landmark basis found");
    let scale = BASIS_ENTRY_SCALE * (3.0 * n_vertices as f64).sqrt();
    let mut shape_basis = Vec::with_capacity(3 * n_vertices * n_shape);
    let mut expression_basis = Vec::with_capacity(3 * n_vertices * n_expression);
    for row in basis.chunks(dims.max(1)).take(3 * n_vertices) {
        if dims == 0 {
            break;
        }
        shape_basis.extend(row[..n_shape].iter().map(|v| v * scale));
        expression_basis.extend(row[n_shape..].iter().map(|v| v * scale));
    }

    let jaw_weights = template
        .iter()
        .map(|v| ((v[1] - 0.15) / 0.3).clamp(0.0, 1.0))
        .collect();
    let rig = BlendshapeRig {
        template,
        shape_basis,
        n_shape,
        expression_basis,
        n_expression,
        jaw_pivot: [0.0, 0.1, -0.8],
        jaw_axis: [1.0, 0.0, 0.0],
        jaw_weights,
        landmark_embedding,
        faces,
    };
    rig.validate().expect("generated rig is valid");
    rig
}

/// `rows x dims` row-major matrix with orthonormal columns.
fn orthogonal_columns(rng: &mut ChaCha8Rng, rows: usize, dims: usize) -> Vec<f64> {
    if dims == 0 {
        return Vec::new();
    }
    let g = DMatrix::from_fn(rows, dims, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = g.qr().q();
    (0..rows * dims).map(|i| q[(i / dims, i % dims)]).collect()
}

/// Ratio of extreme singular values of the landmark rows of a
/// `3N x dims` row-major basis.
pub fn landmark_basis_condition(basis: &[f64], dims: usize, embedding: &[usize]) -> f64 {
    let m = DMatrix::from_fn(3 * embedding.len(), dims, |r, k| basis[(3 * embedding[r / 3] + r % 3) * dims + k]);
    let sv = m.singular_values();
    sv.max() / sv.min()
}

/// Known parameters, camera and the landmark frames they produce.
#[derive(Debug, Clone, PartialEq)]
pub struct RigSequence {
    pub params: Vec<FaceParams>,
    pub camera: CameraParams,
    pub landmarks: Vec<Vec<[f64; 2]>>,
}

/// Smoothly varying expressions and jaw angle with one shared identity,
/// seen through a mildly rotated unit-scale camera.
pub fn rig_sequence(rig: &BlendshapeRig, seed: u64, frames: usize) -> RigSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "rig-sequence"));
    let beta: Vec<f64> = (0..rig.n_shape).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let waves: Vec<(f64, f64)> = (0..=rig.n_expression)
        .map(|_| (rng.gen_range(0.05..0.3), rng.gen_range(0.0..std::f64::consts::TAU)))
        .collect();
    let params: Vec<FaceParams> = (0..frames)
        .map(|f| {
            let wave = |k: usize| (waves[k].0 * f as f64 + waves[k].1).sin();
            FaceParams {
                beta: beta.clone(),
                psi: (0..rig.n_expression).map(wave).collect(),
                theta_jaw: 0.125 * (1.0 + wave(rig.n_expression)),
            }
        })
        .collect();
    let (ax, ay) = (rng.gen_range(-0.15..0.15), rng.gen_range(-0.15..0.15));
    let (sx, cx) = f64::sin_cos(ax);
    let (sy, cy) = f64::sin_cos(ay);
    // rotation about y, then x
    let camera = CameraParams {
        scale: 1.0,
        rotation: [[cy, 0.0, sy], [sx * sy, cx, -sx * cy], [-cx * sy, sx, cx * cy]],
        translation: [0.0, 0.0],
    };
    let landmarks = params
        .iter()
        .map(|p| {
            let v = evaluate_rig(rig, p).expect("parameters sized for the rig");
            let pts: Vec<[f64; 3]> = rig.landmark_embedding.iter().map(|&i| v[i]).collect();
            project(&pts, &camera)
        })
        .collect();
    RigSequence {
        params,
        camera,
        landmarks,
    }
}
