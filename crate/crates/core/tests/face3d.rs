use earsense::face3d::{
    evaluate_rig, export_mesh_sequence, fit_camera, fit_parameters, project, read_obj_vertices, reprojection_sse,
    BlendshapeRig, CameraParams, FaceParams, FitConfig, FitStatus,
};
use earsense::synth::{generate_rig, landmark_basis_condition};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rotation(ax: f64, ay: f64, az: f64) -> [[f64; 3]; 3] {
    let (sx, cx) = ax.sin_cos();
    let (sy, cy) = ay.sin_cos();
    let (sz, cz) = az.sin_cos();
    let rx = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
    let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let rz = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
    let mul = |a: [[f64; 3]; 3], b: [[f64; 3]; 3]| -> [[f64; 3]; 3] {
        std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| a[i][k] * b[k][j]).sum()))
    };
    mul(rz, mul(ry, rx))
}

fn random_params(rng: &mut ChaCha8Rng, rig: &BlendshapeRig, beta: &[f64]) -> FaceParams {
    FaceParams {
        beta: beta.to_vec(),
        psi: (0..rig.n_expression).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        theta_jaw: rng.gen_range(0.0..0.25),
    }
}

/// Straightforward per-vertex evaluation written independently of the library.
fn naive_vertices(rig: &BlendshapeRig, p: &FaceParams) -> Vec<[f64; 3]> {
    let n = rig.n_vertices();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut v = rig.template[i];
        for a in 0..3 {
            for k in 0..rig.n_shape {
                v[a] += rig.shape_basis[(3 * i + a) * rig.n_shape + k] * p.beta[k];
            }
            for k in 0..rig.n_expression {
                v[a] += rig.expression_basis[(3 * i + a) * rig.n_expression + k] * p.psi[k];
            }
        }
        // rotation matrix about the axis, built from the axis-angle formula
        let [x, y, z] = rig.jaw_axis;
        let (s, c) = p.theta_jaw.sin_cos();
        let t = 1.0 - c;
        let r = [
            [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
            [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
            [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
        ];
        let u: Vec<f64> = (0..3).map(|a| v[a] - rig.jaw_pivot[a]).collect();
        let w = rig.jaw_weights[i];
        let mut blended = [0.0; 3];
        for a in 0..3 {
            let rot = r[a][0] * u[0] + r[a][1] * u[1] + r[a][2] * u[2] + rig.jaw_pivot[a];
            blended[a] = (1.0 - w) * v[a] + w * rot;
        }
        out.push(blended);
    }
    out
}

fn landmarks3d(rig: &BlendshapeRig, p: &FaceParams) -> Vec<[f64; 3]> {
    let v = evaluate_rig(rig, p).unwrap();
    rig.landmark_embedding.iter().map(|&i| v[i]).collect()
}

#[test]
fn evaluate_matches_naive_oracle() {
    let rig = generate_rig(3, 400, 10, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..5 {
        let beta: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p = random_params(&mut rng, &rig, &beta);
        let a = evaluate_rig(&rig, &p).unwrap();
        let b = naive_vertices(&rig, &p);
        for (x, y) in a.iter().zip(&b) {
            for k in 0..3 {
                assert!((x[k] - y[k]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn generated_bases_are_orthogonal_and_conditioned() {
    let rig = generate_rig(11, 500, 10, 10);
    let n = 3 * rig.n_vertices();
    let col = |b: &[f64], dims: usize, k: usize| -> Vec<f64> { (0..n).map(|r| b[r * dims + k]).collect() };
    let mut cols: Vec<Vec<f64>> = (0..10).map(|k| col(&rig.shape_basis, 10, k)).collect();
    cols.extend((0..10).map(|k| col(&rig.expression_basis, 10, k)));
    let norm2 = cols[0].iter().map(|v| v * v).sum::<f64>();
    for i in 0..cols.len() {
        for j in i + 1..cols.len() {
            let d: f64 = cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).sum();
            assert!(d.abs() / norm2 < 1e-10, "columns {i} and {j}");
        }
    }
    let mut stacked = Vec::with_capacity(n * 20);
    for r in 0..n {
        stacked.extend_from_slice(&rig.shape_basis[r * 10..(r + 1) * 10]);
        stacked.extend_from_slice(&rig.expression_basis[r * 10..(r + 1) * 10]);
    }
    assert!(landmark_basis_condition(&stacked, 20, &rig.landmark_embedding) < 1e3);
}

#[test]
fn rig_file_round_trip_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let rig = generate_rig(2, 200, 4, 6);
    let path = dir.path().join("rig.bin");
    rig.save(&path).unwrap();
    let back = BlendshapeRig::load(&path).unwrap();
    assert_eq!(back, rig);
    let again = dir.path().join("rig2.bin");
    back.save(&again).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn camera_recovery_is_exact() {
    let rig = generate_rig(4, 400, 10, 10);
    let pts = landmarks3d(&rig, &FaceParams::neutral(&rig));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let truth = CameraParams {
            scale: rng.gen_range(0.2..5.0),
            rotation: rotation(rng.gen_range(-0.6..0.6), rng.gen_range(-0.6..0.6), rng.gen_range(-3.0..3.0)),
            translation: [rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)],
        };
        let cam = fit_camera(&pts, &project(&pts, &truth)).unwrap();
        assert!((cam.scale - truth.scale).abs() < 1e-9);
        let frob: f64 = (0..3)
            .flat_map(|i| (0..3).map(move |j| (i, j)))
            .map(|(i, j)| (cam.rotation[i][j] - truth.rotation[i][j]).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(frob < 1e-9, "rotation error {frob}");
        assert!((cam.translation[0] - truth.translation[0]).abs() < 1e-9);
        assert!((cam.translation[1] - truth.translation[1]).abs() < 1e-9);
    }
}

#[test]
fn fitted_camera_beats_random_cameras() {
    let rig = generate_rig(8, 300, 10, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pts = landmarks3d(&rig, &FaceParams::neutral(&rig));
    let truth = CameraParams {
        scale: 1.3,
        rotation: rotation(0.2, -0.3, 0.1),
        translation: [0.5, -0.2],
    };
    let noisy: Vec<[f64; 2]> = project(&pts, &truth)
        .iter()
        .map(|p| [p[0] + rng.gen_range(-0.05..0.05), p[1] + rng.gen_range(-0.05..0.05)])
        .collect();
    let cam = fit_camera(&pts, &noisy).unwrap();
    let best = reprojection_sse(&pts, &noisy, &cam);
    for _ in 0..1000 {
        let random = CameraParams {
            scale: truth.scale * rng.gen_range(0.9..1.1),
            rotation: rotation(0.2 + rng.gen_range(-0.1..0.1), -0.3 + rng.gen_range(-0.1..0.1), 0.1 + rng.gen_range(-0.1..0.1)),
            translation: [0.5 + rng.gen_range(-0.05..0.05), -0.2 + rng.gen_range(-0.05..0.05)],
        };
        assert!(best <= reprojection_sse(&pts, &noisy, &random) + 1e-12);
    }
}

#[test]
fn projection_laws() {
    let pts = vec![[1.0, 2.0, 3.0], [-1.0, 0.5, 2.0]];
    let id = CameraParams::identity();
    assert_eq!(project(&pts, &id), vec![[1.0, 2.0], [-1.0, 0.5]]);
    let cam = CameraParams {
        scale: 2.0,
        translation: [1.0, -1.0],
        ..CameraParams::identity()
    };
    let p = project(&pts, &cam);
    assert_eq!(p[0], [3.0, 3.0]);
    assert_eq!(p[1], [-1.0, 0.0]);
}

#[test]
fn parameter_fit_recovers_expressions() {
    let rig = generate_rig(21, 400, 10, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let beta: Vec<f64> = (0..10).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let truth: Vec<FaceParams> = (0..4).map(|_| random_params(&mut rng, &rig, &beta)).collect();
    let camera = CameraParams {
        scale: 1.0,
        rotation: rotation(0.1, -0.2, 0.05),
        translation: [0.0, 0.0],
    };
    let targets: Vec<Vec<[f64; 2]>> = truth.iter().map(|p| project(&landmarks3d(&rig, p), &camera)).collect();
    let cfg = FitConfig {
        lambda_beta: 0.0,
        lambda_psi: 0.0,
        max_iters: 20000,
        camera_every: 0,
        ..FitConfig::default()
    };
    let fit = fit_parameters(&rig, &targets, &camera, &cfg).unwrap();
    assert!(fit.trace.windows(2).all(|w| w[1] <= w[0]));
    assert!(fit.rms_residual < 1e-6, "residual {} after {} iterations ({:?})", fit.rms_residual, fit.iterations, fit.status);
    for (got, want) in fit.frames.iter().zip(&truth) {
        let err: f64 = got.psi.iter().zip(&want.psi).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = want.psi.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(err / norm < 1e-2, "psi relative error {}", err / norm);
    }
    assert_eq!(fit.status, FitStatus::Converged);
}

#[test]
fn template_target_is_a_fixed_point() {
    let rig = generate_rig(1, 300, 10, 10);
    let camera = CameraParams::identity();
    let target = vec![project(&landmarks3d(&rig, &FaceParams::neutral(&rig)), &camera); 3];
    let fit = fit_parameters(&rig, &target, &camera, &FitConfig::default()).unwrap();
    for p in &fit.frames {
        let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(n(&p.beta) < 1e-3 && n(&p.psi) < 1e-3);
    }
    assert!(fit.camera.orthonormality_error() < 1e-9 && fit.camera.determinant() > 0.0);
}

#[test]
fn mesh_export_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let rig = generate_rig(6, 200, 4, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let beta = vec![0.2, -0.1, 0.0, 0.3];
    let mut seq = vec![FaceParams::neutral(&rig)];
    seq.extend((0..2).map(|_| random_params(&mut rng, &rig, &beta)));
    let paths = export_mesh_sequence(&rig, &seq, dir.path()).unwrap();
    assert_eq!(paths.len(), 3);
    let faces = |p: &std::path::Path| -> Vec<String> {
        std::fs::read_to_string(p).unwrap().lines().filter(|l| l.starts_with("f ")).map(String::from).collect()
    };
    let f0 = faces(&paths[0]);
    assert_eq!(f0.len(), rig.faces.len());
    for (path, p) in paths.iter().zip(&seq) {
        assert_eq!(faces(path), f0);
        let read = read_obj_vertices(path).unwrap();
        for (a, b) in read.iter().zip(evaluate_rig(&rig, p).unwrap()) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-6);
            }
        }
    }
    let read = read_obj_vertices(&paths[0]).unwrap();
    for (a, b) in read.iter().zip(&rig.template) {
        for k in 0..3 {
            assert!((a[k] - b[k]).abs() <= 5e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rig_is_affine_at_fixed_jaw(a in -2.0f64..2.0, b in -2.0f64..2.0, seed in 0u64..1000, theta in 0.0f64..0.3) {
        let rig = generate_rig(7, 120, 3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draw = |rng: &mut ChaCha8Rng| FaceParams {
            beta: (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            psi: (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            theta_jaw: theta,
        };
        let (p1, p2) = (draw(&mut rng), draw(&mut rng));
        let zero = FaceParams { theta_jaw: theta, ..FaceParams::neutral(&rig) };
        let mix = FaceParams {
            beta: p1.beta.iter().zip(&p2.beta).map(|(x, y)| a * x + b * y).collect(),
            psi: p1.psi.iter().zip(&p2.psi).map(|(x, y)| a * x + b * y).collect(),
            theta_jaw: theta,
        };
        let (v0, v1, v2, vm) = (
            evaluate_rig(&rig, &zero).unwrap(),
            evaluate_rig(&rig, &p1).unwrap(),
            evaluate_rig(&rig, &p2).unwrap(),
            evaluate_rig(&rig, &mix).unwrap(),
        );
        for i in 0..v0.len() {
            for k in 0..3 {
                let expect = v0[i][k] + a * (v1[i][k] - v0[i][k]) + b * (v2[i][k] - v0[i][k]);
                prop_assert!((vm[i][k] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fitted_rotation_is_proper(ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in -3.1f64..3.1, s in 0.1f64..10.0) {
        let rig = generate_rig(5, 150, 2, 2);
        let pts = landmarks3d(&rig, &FaceParams::neutral(&rig));
        let truth = CameraParams { scale: s, rotation: rotation(ax, ay, az), translation: [1.0, 2.0] };
        let cam = fit_camera(&pts, &project(&pts, &truth)).unwrap();
        prop_assert!(cam.orthonormality_error() < 1e-9);
        prop_assert!(cam.determinant() > 0.0);
    }
}
