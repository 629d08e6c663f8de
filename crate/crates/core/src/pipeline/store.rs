use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::error::{Error, Result};
use crate::landmarks::{FrameTag, LandmarkSet, NormalizationRecord, N_LANDMARKS};
use crate::numerics::Tensor;
use crate::signal::{CalibrationOffset, FeatureMatrix, CHANNELS};
use crate::training::Session;

pub const MANIFEST_FILE: &str = "manifest.json";
const FEATURES_KIND: &str = "earsense-features";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Wearer label; sessions of one wearer share a mapping.
    pub user: String,
    /// File names relative to the data directory.
    pub imu: String,
    pub landmarks: String,
    /// First landmark frame on the IMU clock, seconds.
    pub video_start: f64,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub generator_seed: Option<u64>,
    pub rate_hz: f64,
    pub sessions: Vec<ManifestEntry>,
}

pub fn read_manifest(data_dir: &Path) -> Result<Manifest> {
    let path = data_dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(Error::Missing(path));
    }
    let text = std::fs::read_to_string(&path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        row: e.line(),
        detail: e.to_string(),
    })
}

pub(crate) fn write_manifest(data_dir: &Path, m: &Manifest) -> Result<()> {
    let text = serde_json::to_string_pretty(m).expect("manifest serializes");
    std::fs::write(data_dir.join(MANIFEST_FILE), text + "\n")?;
    Ok(())
}

/// Conditioned features of one session with its normalized targets.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionFeatures {
    pub id: String,
    pub user: String,
    pub features: FeatureMatrix,
    pub targets: Vec<LandmarkSet>,
    pub records: Vec<NormalizationRecord>,
    pub offset: CalibrationOffset,
}

impl SessionFeatures {
    pub fn to_session(&self) -> Result<Session> {
        Session::new(self.id.clone(), self.features.clone(), self.targets.clone())
    }
}

pub fn features_path(dir: &Path, id: &str) -> std::path::PathBuf {
    dir.join(format!("{id}.features"))
}

pub fn write_features(dir: &Path, s: &SessionFeatures) -> Result<()> {
    let mut c = Container::new(FEATURES_KIND);
    c.set("id", &s.id);
    c.set("user", &s.user);
    let f = &s.features;
    c.push_real("features", &Tensor::new(&[f.frames, f.dim], f.data.clone())?);
    let targets: Vec<f64> = s.targets.iter().flat_map(|t| t.to_interleaved()).collect();
    c.push_real("targets", &Tensor::new(&[s.targets.len(), 2 * N_LANDMARKS], targets)?);
    let rec: Vec<f64> = s.records.iter().flat_map(|r| [r.nose[0], r.nose[1], r.theta, r.d]).collect();
    c.push_real("normalization", &Tensor::new(&[s.records.len(), 4], rec)?);
    c.push_real("calibration_offset", &Tensor::new(&[CHANNELS], s.offset.0.to_vec())?);
    c.save(&features_path(dir, &s.id))
}

pub fn read_features(dir: &Path, id: &str) -> Result<SessionFeatures> {
    let c = Container::load(&features_path(dir, id))?;
    if c.kind != FEATURES_KIND {
        return Err(Error::Config(format!("{id}: container holds `{}`, not features", c.kind)));
    }
    let f = c.real::<f64>("features")?;
    let (frames, dim) = f.dims2("features")?;
    let t = c.real::<f64>("targets")?;
    let targets = t
        .data()
        .chunks(2 * N_LANDMARKS)
        .map(|r| LandmarkSet::from_interleaved(r, FrameTag::Normalized))
        .collect::<Result<Vec<_>>>()?;
    let records = c
        .real::<f64>("normalization")?
        .data()
        .chunks(4)
        .map(|r| NormalizationRecord {
            nose: [r[0], r[1]],
            theta: r[2],
            d: r[3],
        })
        .collect();
    let off = c.real::<f64>("calibration_offset")?.into_vec();
    let offset = CalibrationOffset(off.try_into().map_err(|_| Error::Config("calibration offset must have 12 values".into()))?);
    Ok(SessionFeatures {
        id: c.require("id")?.to_string(),
        user: c.require("user")?.to_string(),
        features: FeatureMatrix::new(frames, dim, f.into_vec())?,
        targets,
        records,
        offset,
    })
}
