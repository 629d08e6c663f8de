use crate::error::{Error, Result};
use crate::model::WingParams;

/// Optimization settings. Epoch count, batch size and warmup length are
/// defaults of this implementation, not measured values.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_fraction: f64,
    pub seed: u64,
    pub wing_w: f64,
    pub wing_epsilon: f64,
    /// Sessions drawn for training; the rest are held out.
    pub n_train: usize,
    /// Explicit split; overrides `n_train` when both lists are non-empty.
    pub train_sessions: Vec<String>,
    pub test_sessions: Vec<String>,
    /// Every `val_stride`-th window is scored during per-epoch validation.
    pub val_stride: usize,
    /// Start the output bias at the mean training target.
    pub init_head_bias: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 64,
            epochs: 50,
            warmup_fraction: 0.05,
            seed: 0,
            wing_w: 20.0,
            wing_epsilon: 2.0,
            n_train: 5,
            train_sessions: Vec::new(),
            test_sessions: Vec::new(),
            val_stride: 1,
            init_head_bias: true,
        }
    }
}

impl TrainConfig {
    pub fn wing(&self) -> WingParams {
        WingParams {
            w: self.wing_w,
            epsilon: self.wing_epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr = {} must be positive", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config(format!(
                "warmup_fraction = {} must lie in [0, 1)",
                self.warmup_fraction
            )));
        }
        if self.val_stride == 0 {
            return Err(Error::Config("val_stride must be positive".into()));
        }
        self.wing().validate()
    }
}
