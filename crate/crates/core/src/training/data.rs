use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::landmarks::{FrameTag, LandmarkSet};
use crate::numerics::{Real, Tensor};
use crate::signal::FeatureMatrix;

/// One recording: per-frame features and normalized landmark targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub id: String,
    pub features: FeatureMatrix,
    pub targets: Vec<LandmarkSet>,
}

impl Session {
    pub fn new(id: impl Into<String>, features: FeatureMatrix, targets: Vec<LandmarkSet>) -> Result<Self> {
        let id = id.into();
        if features.frames != targets.len() {
            return Err(Error::shape(
                "session",
                format!("{id}: {} feature frames vs {} landmark frames", features.frames, targets.len()),
            ));
        }
        if targets.iter().any(|t| t.tag != FrameTag::Normalized) {
            return Err(Error::Config(format!("{id}: targets must be normalized")));
        }
        Ok(Session { id, features, targets })
    }

    pub fn frames(&self) -> usize {
        self.features.frames
    }

    pub fn duration_s(&self, rate: f64) -> f64 {
        self.frames() as f64 / rate
    }
}

/// A window identified by its session and the frame it ends on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WindowIndex {
    pub session: usize,
    pub last: usize,
}

/// All windows of `seq_len` frames inside each session (never across sessions),
/// keeping every `stride`-th one.
pub fn collect_windows(sessions: &[Session], seq_len: usize, stride: usize) -> Vec<WindowIndex> {
    let mut out = Vec::new();
    for (s, sess) in sessions.iter().enumerate() {
        if sess.frames() < seq_len {
            continue;
        }
        out.extend(
            (seq_len - 1..sess.frames())
                .step_by(stride.max(1))
                .map(|last| WindowIndex { session: s, last }),
        );
    }
    out
}

/// Stacks windows into `[B, seq_len, dim]` inputs and `[B, 2 * landmarks]` targets.
pub fn gather_batch<T: Real>(sessions: &[Session], idx: &[WindowIndex], seq_len: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    if idx.is_empty() {
        return Err(Error::Insufficient("empty batch".into()));
    }
    let dim = sessions[idx[0].session].features.dim;
    let out_dim = 2 * sessions[idx[0].session].targets[0].points.len();
    let mut x = Vec::with_capacity(idx.len() * seq_len * dim);
    let mut y = Vec::with_capacity(idx.len() * out_dim);
    for w in idx {
        let s = &sessions[w.session];
        if s.features.dim != dim {
            return Err(Error::shape("gather_batch", format!("session {} has feature dim {}", s.id, s.features.dim)));
        }
        let start = w.last + 1 - seq_len;
        x.extend(s.features.data[start * dim..(w.last + 1) * dim].iter().map(|&v| T::of(v)));
        y.extend(s.targets[w.last].points.iter().flatten().map(|&v| T::of(v)));
    }
    Ok((
        Tensor::new(&[idx.len(), seq_len, dim], x)?,
        Tensor::new(&[idx.len(), out_dim], y)?,
    ))
}

/// Random disjoint split of session positions `0..count` into `n_train` and the rest.
pub fn split_sessions(count: usize, n_train: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n_train == 0 || n_train >= count {
        return Err(Error::Config(format!(
            "cannot take {n_train} training sessions out of {count} and keep a test split"
        )));
    }
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = order[..n_train].to_vec();
    let mut test = order[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes_and_laws() {
        let (tr, te) = split_sessions(12, 5, 9).unwrap();
        assert_eq!((tr.len(), te.len()), (5, 7));
        let mut all: Vec<usize> = tr.iter().chain(&te).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..12).collect::<Vec<_>>());
        assert_eq!(split_sessions(12, 5, 9).unwrap(), (tr, te));
        assert!(split_sessions(12, 12, 0).is_err());
    }
}
