//! File-level commands: each reads its inputs from disk, runs one stage and
//! writes its artifacts, driven by a single [`RunConfig`].

mod commands;
mod config;
mod store;

pub use commands::{cmd_eval, cmd_finetune, cmd_fit, cmd_infer, cmd_preprocess, cmd_synth, cmd_train};
pub use config::{apply_override, EvalConfig, PathsConfig, PredictorKind, RunConfig, SynthConfig};
pub use store::{read_features, read_manifest, write_features, Manifest, ManifestEntry, SessionFeatures};
