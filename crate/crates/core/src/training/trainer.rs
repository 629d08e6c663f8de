use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::landmarks::MetricConfig;
use crate::model::{is_linear_layer, wing_loss, BnMode, ForwardOptions, ModelConfig, Network};
use crate::numerics::{AdamConfig, AdamState, Real, Tape, Tensor};
use crate::seeds::derive_seed;

use super::config::TrainConfig;
use super::data::{collect_windows, gather_batch, Session, WindowIndex};
use super::evaluate::{evaluate, NetworkPredictor};
use super::schedule::lr_at_step;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub step_loss: Vec<f64>,
    pub lr: Vec<f64>,
    pub epoch_loss: Vec<f64>,
    pub val_mae_mm: Vec<f64>,
    pub val_nme_pct: Vec<f64>,
    /// Epoch whose weights were returned (0-based).
    pub best_epoch: Option<usize>,
}

impl TrainHistory {
    /// One row per epoch: `epoch,train_loss,val_mae_mm,val_nme_pct`.
    pub fn epoch_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_mae_mm,val_nme_pct\n");
        for (e, l) in self.epoch_loss.iter().enumerate() {
            let mae = self.val_mae_mm.get(e).map_or(String::new(), |v| v.to_string());
            let nme = self.val_nme_pct.get(e).map_or(String::new(), |v| v.to_string());
            out.push_str(&format!("{e},{l},{mae},{nme}\n"));
        }
        out
    }

    /// One row per optimizer update: `step,lr,loss`.
    pub fn step_csv(&self) -> String {
        let mut out = String::from("step,lr,loss\n");
        for (s, (lr, l)) in self.lr.iter().zip(&self.step_loss).enumerate() {
            out.push_str(&format!("{s},{lr},{l}\n"));
        }
        out
    }
}

/// Shuffled mini-batch Adam on the mean Wing loss.
///
/// Update `u` (0-based) uses `lr_at_step(u + 1, total)`. After each epoch
/// `on_epoch` may inspect the weights.
#[allow(clippy::too_many_arguments)]
fn optimize<T: Real>(
    net: &mut Network<T>,
    sessions: &[Session],
    windows: &[WindowIndex],
    cfg: &TrainConfig,
    trainable: &dyn Fn(&str) -> bool,
    bn: BnMode,
    history: &mut TrainHistory,
    mut on_epoch: impl FnMut(usize, &Network<T>, &mut TrainHistory) -> Result<()>,
) -> Result<()> {
    let seq = net.config().seq_len;
    let wing = cfg.wing();
    let selected: Vec<usize> = (0..net.names().len()).filter(|&i| trainable(&net.names()[i])).collect();
    let mut adam = AdamState::<T>::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        &selected
            .iter()
            .map(|&i| (net.names()[i].clone(), net.params()[i].shape().to_vec()))
            .collect::<Vec<_>>(),
    );
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "shuffle"));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "dropout"));
    let per_epoch = windows.len().div_ceil(cfg.batch_size);
    let total = per_epoch * cfg.epochs;
    let mut order = windows.to_vec();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (x, y) = gather_batch::<T>(sessions, batch, seq)?;
            let mut tape = Tape::new();
            let vars = net.bind(&mut tape, trainable);
            let input = tape.constant(x);
            let out = net.forward(
                &mut tape,
                &vars,
                input,
                ForwardOptions {
                    bn,
                    dropout: Some(&mut dropout_rng),
                },
            )?;
            let target = tape.constant(y);
            let loss = wing_loss(&mut tape, out.pred, target, &wing)?;
            let lv = tape.value(loss).data()[0].f64();
            if !lv.is_finite() {
                return Err(Error::Divergence { step, loss: lv });
            }
            let grads = tape.backward(loss)?;
            let g: Vec<Tensor<T>> = selected
                .iter()
                .map(|&i| grads.get_or_zeros(vars[i], &net.params()[i]))
                .collect();
            let mut p: Vec<Tensor<T>> = selected.iter().map(|&i| net.params()[i].clone()).collect();
            let lr = lr_at_step(cfg, step + 1, total);
            adam.step_with_lr(&mut p, &g, lr).map_err(|e| match e {
                Error::NonFinite(_) => Error::Divergence { step, loss: f64::NAN },
                e => e,
            })?;
            for (&i, t) in selected.iter().zip(p) {
                net.params_mut()[i] = t;
            }
            if let Some(stats) = out.new_stats {
                net.set_bn_stats(stats);
            }
            history.step_loss.push(lv);
            history.lr.push(lr);
            epoch_loss += lv * batch.len() as f64;
            step += 1;
        }
        history.epoch_loss.push(epoch_loss / windows.len() as f64);
        on_epoch(epoch, net, history)?;
    }
    Ok(())
}

/// Trains a freshly initialized network on `train` sessions.
///
/// When `val` is non-empty the weights of the epoch with the lowest
/// validation NME are returned, otherwise the final weights.
pub fn train<T: Real>(
    train: &[Session],
    val: &[Session],
    model: &ModelConfig,
    cfg: &TrainConfig,
    metric: &MetricConfig,
) -> Result<(Network<T>, TrainHistory)> {
    cfg.validate()?;
    let mut net = Network::<T>::init(model, derive_seed(cfg.seed, "init"))?;
    let windows = collect_windows(train, model.seq_len, 1);
    if windows.is_empty() {
        return Err(Error::Insufficient(format!(
            "training needs a session with at least {} frames",
            model.seq_len
        )));
    }
    if cfg.init_head_bias {
        let dim = model.output_dim();
        let mut mean = vec![0.0; dim];
        for w in &windows {
            for (m, v) in mean.iter_mut().zip(train[w.session].targets[w.last].to_interleaved()) {
                *m += v;
            }
        }
        if mean.len() != dim {
            return Err(Error::shape("train", "target size does not match the network output"));
        }
        let bias = Tensor::from_fn(&[dim], |i| T::of(mean[i] / windows.len() as f64));
        *net.param_mut("head.bias").expect("head bias exists") = bias;
    }
    let val_windows = collect_windows(val, model.seq_len, cfg.val_stride);
    let mut best: Option<(f64, Network<T>)> = None;
    let mut history = TrainHistory::default();
    optimize(&mut net, train, &windows, cfg, &|_| true, BnMode::Batch, &mut history, |epoch, net, h| {
        if val_windows.is_empty() {
            return Ok(());
        }
        let r = evaluate(&NetworkPredictor::new(net), val, &val_windows, metric, 0)?;
        h.val_mae_mm.push(r.mae_mm);
        h.val_nme_pct.push(r.nme_pct);
        if best.as_ref().map_or(true, |(b, _)| r.nme_pct < *b) {
            best = Some((r.nme_pct, net.clone()));
            h.best_epoch = Some(epoch);
        }
        Ok(())
    })?;
    match best {
        Some((_, b)) => Ok((b, history)),
        None => {
            history.best_epoch = cfg.epochs.checked_sub(1);
            Ok((net, history))
        }
    }
}

/// Adapts a trained network to new sessions by updating only its linear layers.
///
/// Batch normalization keeps its stored statistics, so every other tensor and
/// buffer is left bit-identical.
pub fn fine_tune<T: Real>(net: &Network<T>, sessions: &[Session], cfg: &TrainConfig) -> Result<(Network<T>, TrainHistory)> {
    cfg.validate()?;
    let windows = collect_windows(sessions, net.config().seq_len, 1);
    if windows.is_empty() {
        return Err(Error::Insufficient("no adaptation windows".into()));
    }
    let mut out = net.clone();
    let mut history = TrainHistory::default();
    optimize(&mut out, sessions, &windows, cfg, &is_linear_layer, BnMode::Running, &mut history, |_, _, _| Ok(()))?;
    Ok((out, history))
}
