use crate::error::{Error, Result};
use crate::numerics::{Real, Tape, Unary, Var};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WingParams {
    pub w: f64,
    pub epsilon: f64,
}

impl Default for WingParams {
    fn default() -> Self {
        WingParams { w: 20.0, epsilon: 2.0 }
    }
}

impl WingParams {
    pub fn c(&self) -> f64 {
        self.w - self.w * (1.0 + self.w / self.epsilon).ln()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w > 0.0 && self.epsilon > 0.0) {
            return Err(Error::Config(format!(
                "wing w = {} and epsilon = {} must be positive",
                self.w, self.epsilon
            )));
        }
        Ok(())
    }

    fn unary(&self) -> Unary {
        Unary::Wing {
            w: self.w,
            eps: self.epsilon,
        }
    }
}

/// Wing penalty of a single landmark distance.
pub fn wing_value(x: f64, p: &WingParams) -> f64 {
    p.unary().apply(x)
}

/// Mean Wing penalty of per-landmark Euclidean errors.
///
/// `pred` and `target` are `[B, 2 * landmarks]` with coordinates interleaved
/// per landmark.
pub fn wing_loss<T: Real>(tape: &mut Tape<T>, pred: Var, target: Var, p: &WingParams) -> Result<Var> {
    let diff = tape.sub(pred, target)?;
    let dist = tape.point_norm(diff, 2)?;
    let w = tape.unary(dist, p.unary());
    Ok(tape.mean(w))
}
