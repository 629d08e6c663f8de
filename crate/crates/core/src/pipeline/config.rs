use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::face3d::FitConfig;
use crate::landmarks::{LandmarkIndices, MetricConfig};
use crate::model::ModelConfig;
use crate::signal::SignalConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Session CSVs and their manifest.
    pub data_dir: PathBuf,
    pub features_dir: PathBuf,
    pub weights: PathBuf,
    pub adapted_weights: PathBuf,
    pub rig: PathBuf,
    /// Landmark CSV fitted by `fit`.
    pub fit_landmarks: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            data_dir: "data".into(),
            features_dir: "features".into(),
            weights: "weights.bin".into(),
            adapted_weights: "weights_adapted.bin".into(),
            rig: "data/rig.bin".into(),
            fit_landmarks: "data/rig_landmarks.csv".into(),
            out_dir: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub sessions: usize,
    pub duration_s: f64,
    pub noise_sigma: f64,
    pub latent_dim: usize,
    pub n_sines: usize,
    pub rest_s: f64,
    pub gyro_drift: [f64; 6],
    /// Extra sessions from a second wearer with perturbed mappings.
    pub adapt_sessions: usize,
    pub adapt_strength: f64,
    pub rig_vertices: usize,
    pub rig_shape: usize,
    pub rig_expression: usize,
    /// Frames of the rig-driven landmark sequence written next to the rig.
    pub rig_frames: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            sessions: 12,
            duration_s: 60.0,
            noise_sigma: 0.01,
            latent_dim: 4,
            n_sines: 3,
            rest_s: 4.0,
            gyro_drift: [0.0; 6],
            adapt_sessions: 0,
            adapt_strength: 0.3,
            rig_vertices: 400,
            rig_shape: 10,
            rig_expression: 10,
            rig_frames: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    Network,
    /// Trained network after adaptation.
    Adapted,
    Linear,
    GroundTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub predictor: PredictorKind,
    pub ridge_lambda: f64,
    /// Single-window predictions timed for the latency percentiles.
    pub latency_samples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            predictor: PredictorKind::Network,
            ridge_lambda: 1e-4,
            latency_samples: 100,
        }
    }
}

/// Everything a command needs; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Root of every random stream; overrides `train.seed` and `finetune.seed`.
    pub seed: u64,
    pub paths: PathsConfig,
    pub synth: SynthConfig,
    pub signal: SignalConfig,
    pub landmarks: LandmarkIndices,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub finetune: TrainConfig,
    pub metric: MetricConfig,
    pub eval: EvalConfig,
    pub fit: FitConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            paths: PathsConfig::default(),
            synth: SynthConfig::default(),
            signal: SignalConfig::default(),
            landmarks: LandmarkIndices::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            finetune: TrainConfig {
                epochs: 20,
                n_train: 2,
                ..TrainConfig::default()
            },
            metric: MetricConfig::default(),
            eval: EvalConfig::default(),
            fit: FitConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses TOML text after applying `key=value` overrides (dotted keys).
    /// Keys missing from a section keep their [`RunConfig::default`] value,
    /// so a partial `[finetune]` still inherits the fine-tuning defaults.
    pub fn from_toml(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        for (k, v) in overrides {
            apply_override(&mut table, k, v)?;
        }
        let mut merged = toml::Table::try_from(RunConfig::default()).expect("defaults serialize");
        merge_into(&mut merged, table);
        let mut cfg: RunConfig = merged.try_into().map_err(|e| Error::Config(format!("{e}")))?;
        cfg.train.seed = cfg.seed;
        cfg.finetune.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let text = match path {
            Some(p) if !p.exists() => return Err(Error::Config(format!("config file {} does not exist", p.display()))),
            Some(p) => std::fs::read_to_string(p)?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.finetune.validate()?;
        self.metric.validate()?;
        self.fit.validate()?;
        self.landmarks.validate()?;
        self.signal.stft().validate()?;
        if self.model.input_dim != crate::signal::feature_dim(&self.signal.stft()) {
            return Err(Error::Config(format!(
                "model.input_dim = {} but the signal settings produce {} features",
                self.model.input_dim,
                crate::signal::feature_dim(&self.signal.stft())
            )));
        }
        if !(self.synth.noise_sigma >= 0.0) || self.synth.duration_s <= 0.0 || self.synth.latent_dim == 0 {
            return Err(Error::Config("synth needs sigma >= 0, positive duration and latent_dim".into()));
        }
        if !(self.eval.ridge_lambda >= 0.0) {
            return Err(Error::Config("eval.ridge_lambda must be >= 0".into()));
        }
        Ok(())
    }
}

fn merge_into(base: &mut toml::Table, overlay: toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_into(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Sets a dotted key (`train.epochs`) in a TOML table. The value is read as a
/// TOML literal when it parses as one and as a plain string otherwise.
pub fn apply_override(table: &mut toml::Table, key: &str, value: &str) -> Result<()> {
    let parsed: toml::Value = match format!("v = {value}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key just parsed"),
        Err(_) => toml::Value::String(value.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed key `{key}`")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{p}` in `{key}` is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        let cfg = RunConfig::from_toml("", &[]).unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn partial_sections_keep_their_defaults() {
        let cfg = RunConfig::from_toml("[finetune]\nepochs = 3\n[paths]\nweights = \"w.bin\"", &[]).unwrap();
        let d = RunConfig::default();
        assert_eq!(cfg.finetune.epochs, 3);
        assert_eq!(cfg.finetune.n_train, d.finetune.n_train);
        assert_eq!(cfg.paths.weights, std::path::PathBuf::from("w.bin"));
        assert_eq!(cfg.paths.rig, d.paths.rig);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(RunConfig::from_toml("[train]\nepochz = 3", &[]), Err(Error::Config(_))));
        assert!(RunConfig::from_toml("", &[("model.width".into(), "3".into())]).is_err());
    }

    #[test]
    fn overrides_win_over_file() {
        let cfg = RunConfig::from_toml(
            "seed = 3\n[train]\nepochs = 7",
            &[("train.epochs".into(), "2".into()), ("paths.out_dir".into(), "x/y".into())],
        )
        .unwrap();
        assert_eq!(cfg.train.epochs, 2);
        assert_eq!(cfg.train.seed, 3);
        assert_eq!(cfg.paths.out_dir, PathBuf::from("x/y"));
    }

    #[test]
    fn inconsistent_input_dim_is_a_config_error() {
        assert!(RunConfig::from_toml("[model]\ninput_dim = 100", &[]).is_err());
    }
}
