use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub seq_len: usize,
    pub cnn_channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub cnn_dropout: f64,
    pub d_model: usize,
    pub n_head: usize,
    pub d_ff: usize,
    pub encoder_layers: usize,
    pub encoder_dropout: f64,
    pub output_landmarks: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim: 216,
            seq_len: 10,
            cnn_channels: vec![64, 128, 256, 512],
            kernel: 3,
            stride: 1,
            cnn_dropout: 0.15,
            d_model: 512,
            n_head: 4,
            d_ff: 1024,
            encoder_layers: 2,
            encoder_dropout: 0.1,
            output_landmarks: 51,
        }
    }
}

impl ModelConfig {
    pub fn output_dim(&self) -> usize {
        2 * self.output_landmarks
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.input_dim == 0 || self.seq_len == 0 || self.output_landmarks == 0 {
            return bad("input_dim, seq_len and output_landmarks must be positive".into());
        }
        if self.cnn_channels.is_empty() || self.cnn_channels.contains(&0) {
            return bad(format!("cnn_channels {:?} must be non-empty and positive", self.cnn_channels));
        }
        if self.kernel % 2 == 0 {
            return bad(format!("kernel {} must be odd", self.kernel));
        }
        if self.stride != 1 {
            return bad(format!("stride {} is unsupported; sequence length must be preserved", self.stride));
        }
        if self.n_head == 0 || self.d_model % self.n_head != 0 {
            return bad(format!("d_model {} is not divisible by n_head {}", self.d_model, self.n_head));
        }
        if *self.cnn_channels.last().unwrap() != self.d_model {
            return bad(format!(
                "last CNN width {} must equal d_model {}",
                self.cnn_channels.last().unwrap(),
                self.d_model
            ));
        }
        if self.d_ff == 0 {
            return bad("d_ff must be positive".into());
        }
        for (name, p) in [("cnn_dropout", self.cnn_dropout), ("encoder_dropout", self.encoder_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("{name} = {p} must lie in [0, 1)"));
            }
        }
        Ok(())
    }
}
