use std::path::Path;
use std::time::Instant;

use serde_json::{json, Value};

use super::config::{PredictorKind, RunConfig};
use super::store::{read_features, read_manifest, write_features, write_manifest, Manifest, ManifestEntry, SessionFeatures};
use crate::error::{Error, Result};
use crate::face3d::{export_mesh_sequence, fit_camera, fit_parameters, write_params_csv, BlendshapeRig, FaceParams};
use crate::landmarks::{denormalize, normalize, read_landmark_csv, write_landmark_csv, FrameTag, LandmarkSet};
use crate::model::Network;
use crate::numerics::Tensor;
use crate::seeds::derive_seed;
use crate::signal::{feature_dim, preprocess, read_imu_csv, write_imu_csv, CHANNELS};
use crate::synth::{generate_rig, generate_session, rig_sequence, GeneratorSpec, LinearOracle, UserModel};
use crate::training::{
    collect_windows, evaluate, fine_tune, split_sessions, train, write_report, GroundTruthPredictor, NetworkPredictor,
    Predictor, Session,
};

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p)?;
    Ok(())
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(v).expect("json serializes") + "\n")?;
    Ok(())
}

/// Writes the synthetic sessions, their manifest, a rig and a rig-driven
/// landmark sequence with its true parameters.
pub fn cmd_synth(cfg: &RunConfig) -> Result<Value> {
    let s = &cfg.synth;
    let dir = &cfg.paths.data_dir;
    create_dir(dir)?;
    let user_a = UserModel::generate(derive_seed(cfg.seed, "user-a"), s.latent_dim);
    let user_b = user_a.perturbed(derive_seed(cfg.seed, "user-b"), s.adapt_strength);
    let mut entries = Vec::new();
    let plan = (0..s.sessions)
        .map(|i| ("a", i, &user_a))
        .chain((0..s.adapt_sessions).map(|i| ("b", i, &user_b)));
    for (tag, i, user) in plan {
        let mut spec = GeneratorSpec::new(derive_seed(cfg.seed, &format!("session-{tag}{i}")), tag, user.clone());
        spec.duration_s = s.duration_s;
        spec.rate_hz = cfg.signal.rate_hz;
        spec.rest_s = s.rest_s;
        spec.n_sines = s.n_sines;
        spec.noise_sigma = s.noise_sigma;
        spec.gyro_drift = s.gyro_drift;
        let sess = generate_session(&spec)?;
        let id = format!("{tag}{i:02}");
        let (imu, lm) = (format!("{id}_imu.csv"), format!("{id}_landmarks.csv"));
        write_imu_csv(&dir.join(&imu), &sess.imu)?;
        write_landmark_csv(&dir.join(&lm), &sess.raw)?;
        entries.push(ManifestEntry {
            id,
            user: tag.to_string(),
            imu,
            landmarks: lm,
            video_start: sess.video_start,
            frames: sess.raw.len(),
        });
    }
    let rig = generate_rig(derive_seed(cfg.seed, "rig"), s.rig_vertices, s.rig_shape, s.rig_expression);
    if let Some(parent) = cfg.paths.rig.parent() {
        create_dir(parent)?;
    }
    rig.save(&cfg.paths.rig)?;
    let seq = rig_sequence(&rig, derive_seed(cfg.seed, "rig-sequence"), s.rig_frames);
    let sets = seq
        .landmarks
        .iter()
        .map(|p| LandmarkSet::new(p.clone(), FrameTag::RawPixels))
        .collect::<Result<Vec<_>>>()?;
    write_landmark_csv(&dir.join("rig_landmarks.csv"), &sets)?;
    write_params_csv(&dir.join("rig_params.csv"), &seq.params)?;
    let manifest = Manifest {
        generator_seed: Some(cfg.seed),
        rate_hz: cfg.signal.rate_hz,
        sessions: entries,
    };
    write_manifest(dir, &manifest)?;
    Ok(json!({
        "data_dir": dir,
        "sessions": manifest.sessions.len(),
        "frames": manifest.sessions.iter().map(|e| e.frames).collect::<Vec<_>>(),
        "rig": cfg.paths.rig,
    }))
}

/// Conditions every manifest session into a feature file.
pub fn cmd_preprocess(cfg: &RunConfig) -> Result<Value> {
    let manifest = read_manifest(&cfg.paths.data_dir)?;
    create_dir(&cfg.paths.features_dir)?;
    let mut rows = Vec::new();
    for e in &manifest.sessions {
        let imu = read_imu_csv(&cfg.paths.data_dir.join(&e.imu))?;
        let raw = read_landmark_csv(&cfg.paths.data_dir.join(&e.landmarks))?;
        let (features, offset) = preprocess(&imu, e.video_start, &cfg.signal)?;
        let frames = features.frames.min(raw.len());
        let mut targets = Vec::with_capacity(frames);
        let mut records = Vec::with_capacity(frames);
        for set in &raw[..frames] {
            let (t, r) = normalize(set, &cfg.landmarks)?;
            targets.push(t);
            records.push(r);
        }
        let dim = features.dim;
        let features = crate::signal::FeatureMatrix::new(frames, dim, features.data[..frames * dim].to_vec())?;
        write_features(
            &cfg.paths.features_dir,
            &SessionFeatures {
                id: e.id.clone(),
                user: e.user.clone(),
                features,
                targets,
                records,
                offset,
            },
        )?;
        rows.push(json!({"id": e.id, "frames": frames, "channels": CHANNELS, "feature_dim": dim}));
    }
    Ok(json!({"feature_dim": feature_dim(&cfg.signal.stft()), "sessions": rows}))
}

/// Sessions grouped for the run: the primary wearer's train/test split and
/// the remaining wearers' adaptation/held-out split.
struct Groups {
    all: Vec<SessionFeatures>,
    train: Vec<usize>,
    test: Vec<usize>,
    adapt: Vec<usize>,
    adapt_test: Vec<usize>,
}

fn by_ids(all: &[SessionFeatures], ids: &[String]) -> Result<Vec<usize>> {
    ids.iter()
        .map(|id| {
            all.iter()
                .position(|s| &s.id == id)
                .ok_or_else(|| Error::Config(format!("unknown session `{id}`")))
        })
        .collect()
}

fn load_groups(cfg: &RunConfig) -> Result<Groups> {
    let manifest = read_manifest(&cfg.paths.data_dir)?;
    let all = manifest
        .sessions
        .iter()
        .map(|e| read_features(&cfg.paths.features_dir, &e.id))
        .collect::<Result<Vec<_>>>()?;
    let Some(primary) = all.first().map(|s| s.user.clone()) else {
        return Err(Error::Insufficient("manifest lists no sessions".into()));
    };
    let pool: Vec<usize> = (0..all.len()).filter(|&i| all[i].user == primary).collect();
    let others: Vec<usize> = (0..all.len()).filter(|&i| all[i].user != primary).collect();
    let (train, test) = if !cfg.train.train_sessions.is_empty() && !cfg.train.test_sessions.is_empty() {
        (by_ids(&all, &cfg.train.train_sessions)?, by_ids(&all, &cfg.train.test_sessions)?)
    } else {
        let (a, b) = split_sessions(pool.len(), cfg.train.n_train, derive_seed(cfg.seed, "split"))?;
        (a.iter().map(|&i| pool[i]).collect(), b.iter().map(|&i| pool[i]).collect())
    };
    let (adapt, adapt_test) = if !cfg.finetune.train_sessions.is_empty() {
        let a = by_ids(&all, &cfg.finetune.train_sessions)?;
        let t = if cfg.finetune.test_sessions.is_empty() {
            others.iter().copied().filter(|i| !a.contains(i)).collect()
        } else {
            by_ids(&all, &cfg.finetune.test_sessions)?
        };
        (a, t)
    } else {
        let n = cfg.finetune.n_train.min(others.len());
        (others[..n].to_vec(), others[n..].to_vec())
    };
    Ok(Groups {
        all,
        train,
        test,
        adapt,
        adapt_test,
    })
}

fn sessions(g: &Groups, idx: &[usize]) -> Result<Vec<Session>> {
    idx.iter().map(|&i| g.all[i].to_session()).collect()
}

fn ids(g: &Groups, idx: &[usize]) -> Vec<String> {
    idx.iter().map(|&i| g.all[i].id.clone()).collect()
}

fn load_network(path: &Path) -> Result<Network<f32>> {
    Network::<f32>::load(path)
}

/// Trains on the primary wearer's training split and saves the weights.
pub fn cmd_train(cfg: &RunConfig) -> Result<Value> {
    let g = load_groups(cfg)?;
    let train_s = sessions(&g, &g.train)?;
    let t0 = Instant::now();
    let (net, history) = train::<f32>(&train_s, &[], &cfg.model, &cfg.train, &cfg.metric)?;
    let secs = t0.elapsed().as_secs_f64();
    if let Some(parent) = cfg.paths.weights.parent() {
        create_dir(parent)?;
    }
    net.save(&cfg.paths.weights)?;
    let dir = cfg.paths.out_dir.join("train");
    create_dir(&dir)?;
    std::fs::write(dir.join("history.csv"), history.epoch_csv())?;
    std::fs::write(dir.join("steps.csv"), history.step_csv())?;
    write_json(&dir.join("split.json"), &json!({"train": ids(&g, &g.train), "test": ids(&g, &g.test)}))?;
    Ok(json!({
        "weights": cfg.paths.weights,
        "epochs": history.epoch_loss.len(),
        "final_loss": history.epoch_loss.last(),
        "train_sessions": ids(&g, &g.train),
        "seconds": secs,
    }))
}

/// Adapts the trained weights' linear layers to the adaptation sessions.
pub fn cmd_finetune(cfg: &RunConfig) -> Result<Value> {
    let net = load_network(&cfg.paths.weights)?;
    let g = load_groups(cfg)?;
    if g.adapt.is_empty() {
        return Err(Error::Insufficient("no adaptation sessions (set finetune.train_sessions or synthesize adapt_sessions)".into()));
    }
    let adapt = sessions(&g, &g.adapt)?;
    let (tuned, history) = fine_tune(&net, &adapt, &cfg.finetune)?;
    tuned.save(&cfg.paths.adapted_weights)?;
    let dir = cfg.paths.out_dir.join("finetune");
    create_dir(&dir)?;
    std::fs::write(dir.join("history.csv"), history.epoch_csv())?;
    Ok(json!({
        "weights": cfg.paths.adapted_weights,
        "adapt_sessions": ids(&g, &g.adapt),
        "final_loss": history.epoch_loss.last(),
    }))
}

fn kind_name(k: PredictorKind) -> &'static str {
    match k {
        PredictorKind::Network => "network",
        PredictorKind::Adapted => "adapted",
        PredictorKind::Linear => "linear",
        PredictorKind::GroundTruth => "ground_truth",
    }
}

/// Scores the configured predictor on its held-out sessions.
pub fn cmd_eval(cfg: &RunConfig) -> Result<Value> {
    let kind = cfg.eval.predictor;
    let g = load_groups(cfg)?;
    let seq = cfg.model.seq_len;
    let (test_idx, net) = match kind {
        PredictorKind::Network => (&g.test, Some(load_network(&cfg.paths.weights)?)),
        PredictorKind::Adapted => (&g.adapt_test, Some(load_network(&cfg.paths.adapted_weights)?)),
        _ => (&g.test, None),
    };
    let test = sessions(&g, test_idx)?;
    let windows = collect_windows(&test, seq, 1);
    let oracle;
    let predictor: Box<dyn Predictor + '_> = match (kind, &net) {
        (PredictorKind::Network | PredictorKind::Adapted, Some(n)) => Box::new(NetworkPredictor::new(n)),
        (PredictorKind::Linear, _) => {
            let train_s = sessions(&g, &g.train)?;
            oracle = LinearOracle::fit(&train_s, &collect_windows(&train_s, seq, 1), seq, cfg.eval.ridge_lambda)?;
            Box::new(oracle.clone())
        }
        _ => Box::new(GroundTruthPredictor),
    };
    let report = evaluate(predictor.as_ref(), &test, &windows, &cfg.metric, cfg.eval.latency_samples)?;
    let dir = cfg.paths.out_dir.join("eval").join(kind_name(kind));
    write_report(&dir, &report)?;
    Ok(json!({"predictor": kind_name(kind), "report": report, "dir": dir, "sessions": ids(&g, test_idx)}))
}

fn percentile_ms(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

/// Streams one prediction per frame once a full window is available and
/// times each; writes normalized and pixel-space landmark CSVs per session.
pub fn cmd_infer(cfg: &RunConfig) -> Result<Value> {
    let adapted = cfg.eval.predictor == PredictorKind::Adapted;
    let net = load_network(if adapted { &cfg.paths.adapted_weights } else { &cfg.paths.weights })?;
    let g = load_groups(cfg)?;
    let idx = if adapted { &g.adapt_test } else { &g.test };
    let dir = cfg.paths.out_dir.join("infer");
    create_dir(&dir)?;
    let seq = net.config().seq_len;
    let mut times = Vec::new();
    for &i in idx {
        let s = &g.all[i];
        let dim = s.features.dim;
        let mut normalized = Vec::new();
        let mut pixels = Vec::new();
        for last in seq - 1..s.features.frames {
            let x = Tensor::<f32>::from_fn(&[1, seq, dim], |k| s.features.data[(last + 1 - seq) * dim + k] as f32);
            let t0 = Instant::now();
            let y = net.predict(x)?;
            times.push(t0.elapsed().as_secs_f64() * 1e3);
            let v: Vec<f64> = y.data().iter().map(|&v| v as f64).collect();
            let set = LandmarkSet::from_interleaved(&v, FrameTag::Normalized)?;
            pixels.push(denormalize(&set, &s.records[last]));
            normalized.push(set);
        }
        write_landmark_csv(&dir.join(format!("{}_normalized.csv", s.id)), &normalized)?;
        write_landmark_csv(&dir.join(format!("{}_pixels.csv", s.id)), &pixels)?;
    }
    if times.is_empty() {
        return Err(Error::Insufficient("no frames to infer".into()));
    }
    times.sort_by(f64::total_cmp);
    let summary = json!({
        "sessions": ids(&g, idx),
        "frames": times.len(),
        "first_frame": seq - 1,
        "p50_latency_ms": percentile_ms(&times, 50.0),
        "p95_latency_ms": percentile_ms(&times, 95.0),
    });
    write_json(&dir.join("latency.json"), &summary)?;
    Ok(summary)
}

/// Fits the rig to a landmark sequence and exports one mesh per frame.
pub fn cmd_fit(cfg: &RunConfig) -> Result<Value> {
    let rig = BlendshapeRig::load(&cfg.paths.rig)?;
    let frames: Vec<Vec<[f64; 2]>> = read_landmark_csv(&cfg.paths.fit_landmarks)?
        .into_iter()
        .map(|s| s.points)
        .collect();
    if frames.is_empty() {
        return Err(Error::Insufficient(format!("{} has no frames", cfg.paths.fit_landmarks.display())));
    }
    let neutral = crate::face3d::evaluate_rig(&rig, &FaceParams::neutral(&rig))?;
    let neutral_lm: Vec<[f64; 3]> = rig.landmark_embedding.iter().map(|&i| neutral[i]).collect();
    let camera = fit_camera(&neutral_lm, &frames[0])?;
    let fit = fit_parameters(&rig, &frames, &camera, &cfg.fit)?;
    let dir = cfg.paths.out_dir.join("fit");
    create_dir(&dir)?;
    let meshes = export_mesh_sequence(&rig, &fit.frames, &dir.join("meshes"))?;
    write_params_csv(&dir.join("params.csv"), &fit.frames)?;
    let summary = json!({
        "frames": fit.frames.len(),
        "meshes": meshes.len(),
        "status": fit.status,
        "iterations": fit.iterations,
        "rms_residual": fit.rms_residual,
        "objective": fit.trace.last(),
        "camera": {
            "scale": fit.camera.scale,
            "rotation": fit.camera.rotation,
            "translation": fit.camera.translation,
        },
    });
    write_json(&dir.join("fit.json"), &summary)?;
    Ok(summary)
}

