//! Dataset assembly, the optimization loop, adaptation to a new wearer and
//! evaluation reports.

mod config;
mod data;
mod evaluate;
mod schedule;
mod trainer;

pub use config::TrainConfig;
pub use data::{collect_windows, gather_batch, split_sessions, Session, WindowIndex};
pub use evaluate::{
    evaluate, measure_latency, write_report, ConstantPredictor, GroundTruthPredictor, NetworkPredictor, Predictor,
    Report,
};
pub use schedule::{lr_at_step, warmup_steps};
pub use trainer::{fine_tune, train, TrainHistory};
