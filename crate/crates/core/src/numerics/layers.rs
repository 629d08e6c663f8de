use rand::Rng;

use crate::error::Result;

use super::tape::{Tape, Var};
use super::tensor::Real;

/// Inverted-dropout mask: each entry is `0` with probability `p`, else `1/(1-p)`.
pub fn dropout_mask<T: Real, R: Rng>(rng: &mut R, n: usize, p: f64) -> Vec<T> {
    let keep = T::of(1.0 / (1.0 - p));
    (0..n)
        .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
        .collect()
}

/// Projection weights of one attention layer; matrices are `[D, D]` stored input-major.
#[derive(Debug, Clone, Copy)]
pub struct AttentionWeights {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

/// Multi-head self-attention over `batch` sequences stacked in `x: [batch * T, D]`.
///
/// Returns the projected output and the attention node, whose saved weights
/// are available through [`Tape::attention_probs`].
pub fn multi_head_attention<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    w: &AttentionWeights,
    batch: usize,
    n_head: usize,
) -> Result<(Var, Var)> {
    let q = tape.linear(x, w.wq, Some(w.bq))?;
    let k = tape.linear(x, w.wk, Some(w.bk))?;
    let v = tape.linear(x, w.wv, Some(w.bv))?;
    let a = tape.attention(q, k, v, batch, n_head)?;
    Ok((tape.linear(a, w.wo, Some(w.bo))?, a))
}
