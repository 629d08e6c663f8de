use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::container::Container;
use crate::error::{Error, Result};
use crate::numerics::{dropout_mask, multi_head_attention, AttentionWeights, Real, RunningStats, Tape, Tensor, Var};

use super::config::ModelConfig;

const CONTAINER_KIND: &str = "earsense-network";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Conv,
    Linear,
    NormWeight,
    Bias,
}

#[derive(Debug, Clone)]
struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    kind: ParamKind,
    fan_in: usize,
}

fn param_specs(c: &ModelConfig) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, kind: ParamKind, fan_in: usize| {
        out.push(ParamSpec {
            name,
            shape,
            kind,
            fan_in,
        })
    };
    let k = c.kernel;
    let ch = &c.cnn_channels;
    let norm = |push: &mut dyn FnMut(String, Vec<usize>, ParamKind, usize), prefix: &str, n: usize| {
        push(format!("{prefix}.weight"), vec![n], ParamKind::NormWeight, 0);
        push(format!("{prefix}.bias"), vec![n], ParamKind::Bias, 0);
    };
    push("cnn.stem.conv.weight".into(), vec![ch[0], c.input_dim, k], ParamKind::Conv, c.input_dim * k);
    norm(&mut push, "cnn.stem.bn", ch[0]);
    for i in 0..ch.len() - 1 {
        let (cin, cout) = (ch[i], ch[i + 1]);
        let pre = format!("cnn.block{i}");
        push(format!("{pre}.conv1.weight"), vec![cout, cin, k], ParamKind::Conv, cin * k);
        norm(&mut push, &format!("{pre}.bn1"), cout);
        push(format!("{pre}.conv2.weight"), vec![cout, cout, k], ParamKind::Conv, cout * k);
        norm(&mut push, &format!("{pre}.bn2"), cout);
        if cin != cout {
            push(format!("{pre}.shortcut.weight"), vec![cout, cin, 1], ParamKind::Conv, cin);
            push(format!("{pre}.shortcut.bias"), vec![cout], ParamKind::Bias, 0);
        }
    }
    let d = c.d_model;
    let linear = |push: &mut dyn FnMut(String, Vec<usize>, ParamKind, usize), w: String, b: String, i: usize, o: usize| {
        push(w, vec![i, o], ParamKind::Linear, i);
        push(b, vec![o], ParamKind::Bias, 0);
    };
    linear(&mut push, "embed.weight".into(), "embed.bias".into(), *ch.last().unwrap(), d);
    for l in 0..c.encoder_layers {
        let pre = format!("encoder.{l}");
        norm(&mut push, &format!("{pre}.ln1"), d);
        for m in ["q", "k", "v", "o"] {
            linear(&mut push, format!("{pre}.attn.w{m}"), format!("{pre}.attn.b{m}"), d, d);
        }
        norm(&mut push, &format!("{pre}.ln2"), d);
        linear(&mut push, format!("{pre}.ff1.weight"), format!("{pre}.ff1.bias"), d, c.d_ff);
        linear(&mut push, format!("{pre}.ff2.weight"), format!("{pre}.ff2.bias"), c.d_ff, d);
    }
    norm(&mut push, "final_ln", d);
    linear(&mut push, "head.weight".into(), "head.bias".into(), d, c.output_dim());
    out
}

fn bn_names(c: &ModelConfig) -> Vec<String> {
    let mut v = vec!["cnn.stem.bn".to_string()];
    for i in 0..c.cnn_channels.len() - 1 {
        v.push(format!("cnn.block{i}.bn1"));
        v.push(format!("cnn.block{i}.bn2"));
    }
    v
}

/// Parameters updated when adapting a trained network to a new wearer:
/// value embedding, encoder feed-forward layers and the output head.
pub fn is_linear_layer(name: &str) -> bool {
    name.starts_with("embed.") || name.starts_with("head.") || name.contains(".ff1.") || name.contains(".ff2.")
}

fn positional_table<T: Real>(len: usize, d: usize) -> Tensor<T> {
    Tensor::from_fn(&[len, d], |i| {
        let (pos, j) = ((i / d) as f64, i % d);
        let angle = pos / 10000f64.powf((2 * (j / 2)) as f64 / d as f64);
        T::of(if j % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

/// How batch normalization behaves during a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with batch statistics and report updated running statistics.
    Batch,
    /// Normalize with the stored running statistics.
    Running,
}

pub struct ForwardOptions<'a> {
    pub bn: BnMode,
    /// Source of dropout masks; `None` disables dropout.
    pub dropout: Option<&'a mut ChaCha8Rng>,
}

impl ForwardOptions<'_> {
    pub fn eval() -> Self {
        ForwardOptions {
            bn: BnMode::Running,
            dropout: None,
        }
    }
}

pub struct Outputs<T> {
    /// `[B, 2 * landmarks]`, interleaved coordinates.
    pub pred: Var,
    /// CNN output, `[B, seq_len, d_model]`.
    pub cnn_features: Var,
    /// One attention node per encoder layer.
    pub attention: Vec<Var>,
    /// Running statistics after this batch (only in [`BnMode::Batch`]).
    pub new_stats: Option<Vec<RunningStats<T>>>,
}

/// Network parameters and buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    config: ModelConfig,
    names: Vec<String>,
    kinds: Vec<ParamKind>,
    params: Vec<Tensor<T>>,
    bn_names: Vec<String>,
    bn: Vec<RunningStats<T>>,
    pe: Tensor<T>,
    index: HashMap<String, usize>,
}

pub fn count_parameters<T: Real>(net: &Network<T>) -> usize {
    net.params.iter().map(Tensor::len).sum()
}

impl<T: Real> Network<T> {
    /// Fan-in scaled uniform weights, zero biases, unit norm scales.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let specs = param_specs(config);
        let params = specs
            .iter()
            .map(|s| match s.kind {
                ParamKind::Conv | ParamKind::Linear => {
                    let bound = 1.0 / (s.fan_in as f64).sqrt();
                    Tensor::from_fn(&s.shape, |_| T::of(rng.gen_range(-bound..bound)))
                }
                ParamKind::NormWeight => Tensor::ones(&s.shape),
                ParamKind::Bias => Tensor::zeros(&s.shape),
            })
            .collect();
        Ok(Self::assemble(config.clone(), &specs, params, None))
    }

    fn assemble(config: ModelConfig, specs: &[ParamSpec], params: Vec<Tensor<T>>, bn: Option<Vec<RunningStats<T>>>) -> Self {
        let bn_names = bn_names(&config);
        let bn = bn.unwrap_or_else(|| {
            let mut widths = vec![config.cnn_channels[0]];
            for &c in &config.cnn_channels[1..] {
                widths.extend([c, c]);
            }
            widths.into_iter().map(RunningStats::new).collect()
        });
        Network {
            pe: positional_table(config.seq_len, config.d_model),
            index: specs.iter().enumerate().map(|(i, s)| (s.name.clone(), i)).collect(),
            names: specs.iter().map(|s| s.name.clone()).collect(),
            kinds: specs.iter().map(|s| s.kind).collect(),
            config,
            params,
            bn_names,
            bn,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn kinds(&self) -> &[ParamKind] {
        &self.kinds
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|&i| &mut self.params[i])
    }

    pub fn bn_stats(&self) -> &[RunningStats<T>] {
        &self.bn
    }

    pub fn set_bn_stats(&mut self, stats: Vec<RunningStats<T>>) {
        assert_eq!(stats.len(), self.bn.len());
        self.bn = stats;
    }

    pub fn positional_encoding(&self) -> &Tensor<T> {
        &self.pe
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            config: self.config.clone(),
            names: self.names.clone(),
            kinds: self.kinds.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
            bn_names: self.bn_names.clone(),
            bn: self
                .bn
                .iter()
                .map(|s| RunningStats {
                    mean: s.mean.cast(),
                    var: s.var.cast(),
                })
                .collect(),
            pe: self.pe.cast(),
            index: self.index.clone(),
        }
    }

    /// Records every parameter on `tape`; those selected by `trainable` receive gradients.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: &dyn Fn(&str) -> bool) -> Vec<Var> {
        self.names
            .iter()
            .zip(&self.params)
            .map(|(n, p)| tape.leaf(p.clone(), trainable(n)))
            .collect()
    }

    /// Forward pass over `input: [B, seq_len, input_dim]`.
    pub fn forward(&self, tape: &mut Tape<T>, vars: &[Var], input: Var, opts: ForwardOptions<'_>) -> Result<Outputs<T>> {
        let c = &self.config;
        let (batch, len, feat) = tape.value(input).dims3("forward")?;
        if len != c.seq_len || feat != c.input_dim {
            return Err(Error::shape(
                "forward",
                format!("window is {len} x {feat}, network expects {} x {}", c.seq_len, c.input_dim),
            ));
        }
        if vars.len() != self.params.len() {
            return Err(Error::shape("forward", "parameter bindings do not match the network"));
        }
        let p = |name: &str| vars[self.index[name]];
        let ForwardOptions { bn: bn_mode, mut dropout } = opts;
        let train_bn = bn_mode == BnMode::Batch;
        let mut stats = self.bn.clone();
        let mut bn_slot = 0;
        let mut drop = |tape: &mut Tape<T>, x: Var, rate: f64| -> Result<Var> {
            match dropout.as_deref_mut() {
                Some(rng) if rate > 0.0 => {
                    let mask = dropout_mask(rng, tape.value(x).len(), rate);
                    tape.dropout(x, mask)
                }
                _ => Ok(x),
            }
        };
        let mut bnorm = |tape: &mut Tape<T>, x: Var, prefix: &str| -> Result<Var> {
            let st = &mut stats[bn_slot];
            debug_assert_eq!(self.bn_names[bn_slot], prefix);
            bn_slot += 1;
            tape.batch_norm(x, p(&format!("{prefix}.weight")), p(&format!("{prefix}.bias")), st, train_bn)
        };

        let mut x = tape.swap_last2(input)?;
        x = tape.conv1d(x, p("cnn.stem.conv.weight"), None)?;
        x = bnorm(tape, x, "cnn.stem.bn")?;
        x = tape.relu(x);
        x = drop(tape, x, c.cnn_dropout)?;
        for i in 0..c.cnn_channels.len() - 1 {
            let pre = format!("cnn.block{i}");
            let mut h = tape.conv1d(x, p(&format!("{pre}.conv1.weight")), None)?;
            h = bnorm(tape, h, &format!("{pre}.bn1"))?;
            h = tape.relu(h);
            h = drop(tape, h, c.cnn_dropout)?;
            h = tape.conv1d(h, p(&format!("{pre}.conv2.weight")), None)?;
            h = bnorm(tape, h, &format!("{pre}.bn2"))?;
            let shortcut = if c.cnn_channels[i] != c.cnn_channels[i + 1] {
                tape.conv1d(x, p(&format!("{pre}.shortcut.weight")), Some(p(&format!("{pre}.shortcut.bias"))))?
            } else {
                x
            };
            x = tape.add(h, shortcut)?;
            x = tape.relu(x);
            x = drop(tape, x, c.cnn_dropout)?;
        }
        let cnn_features = tape.swap_last2(x)?;

        let d = c.d_model;
        let tokens = tape.reshape(cnn_features, &[batch * len, d])?;
        let mut h = tape.linear(tokens, p("embed.weight"), Some(p("embed.bias")))?;
        let pe = tape.constant(self.pe.clone());
        h = tape.add_tiled(h, pe)?;
        let mut attention = Vec::with_capacity(c.encoder_layers);
        for l in 0..c.encoder_layers {
            let pre = format!("encoder.{l}");
            let a = tape.layer_norm(h, p(&format!("{pre}.ln1.weight")), p(&format!("{pre}.ln1.bias")))?;
            let w = AttentionWeights {
                wq: p(&format!("{pre}.attn.wq")),
                bq: p(&format!("{pre}.attn.bq")),
                wk: p(&format!("{pre}.attn.wk")),
                bk: p(&format!("{pre}.attn.bk")),
                wv: p(&format!("{pre}.attn.wv")),
                bv: p(&format!("{pre}.attn.bv")),
                wo: p(&format!("{pre}.attn.wo")),
                bo: p(&format!("{pre}.attn.bo")),
            };
            let (a, probs) = multi_head_attention(tape, a, &w, batch, c.n_head)?;
            attention.push(probs);
            let a = drop(tape, a, c.encoder_dropout)?;
            h = tape.add(h, a)?;

            let f = tape.layer_norm(h, p(&format!("{pre}.ln2.weight")), p(&format!("{pre}.ln2.bias")))?;
            let f = tape.linear(f, p(&format!("{pre}.ff1.weight")), Some(p(&format!("{pre}.ff1.bias"))))?;
            let f = tape.relu(f);
            let f = drop(tape, f, c.encoder_dropout)?;
            let f = tape.linear(f, p(&format!("{pre}.ff2.weight")), Some(p(&format!("{pre}.ff2.bias"))))?;
            let f = drop(tape, f, c.encoder_dropout)?;
            h = tape.add(h, f)?;
        }
        h = tape.layer_norm(h, p("final_ln.weight"), p("final_ln.bias"))?;
        let last = tape.select_rows(h, (0..batch).map(|b| b * len + len - 1).collect())?;
        let pred = tape.linear(last, p("head.weight"), Some(p("head.bias")))?;
        Ok(Outputs {
            pred,
            cnn_features,
            attention,
            new_stats: train_bn.then_some(stats),
        })
    }

    /// Eval-mode predictions for `windows: [B, seq_len, input_dim]`, returned as `[B, 2 * landmarks]`.
    pub fn predict(&self, windows: Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, &|_| false);
        let input = tape.constant(windows);
        let out = self.forward(&mut tape, &vars, input, ForwardOptions::eval())?;
        let pred = tape.value(out.pred).clone();
        if !pred.all_finite() {
            return Err(Error::NonFinite("network output".into()));
        }
        Ok(pred)
    }

    pub fn to_container(&self) -> Container {
        let c = &self.config;
        let mut out = Container::new(CONTAINER_KIND);
        out.set("input_dim", c.input_dim);
        out.set("seq_len", c.seq_len);
        out.set(
            "cnn_channels",
            c.cnn_channels.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","),
        );
        out.set("kernel", c.kernel);
        out.set("stride", c.stride);
        out.set("cnn_dropout", c.cnn_dropout);
        out.set("d_model", c.d_model);
        out.set("n_head", c.n_head);
        out.set("d_ff", c.d_ff);
        out.set("encoder_layers", c.encoder_layers);
        out.set("encoder_dropout", c.encoder_dropout);
        out.set("output_landmarks", c.output_landmarks);
        for (n, t) in self.names.iter().zip(&self.params) {
            out.push_real(n, t);
        }
        for (n, s) in self.bn_names.iter().zip(&self.bn) {
            out.push_real(&format!("{n}.running_mean"), &s.mean);
            out.push_real(&format!("{n}.running_var"), &s.var);
        }
        out.push_real("positional_encoding", &self.pe);
        out
    }

    pub fn from_container(src: &Container) -> Result<Self> {
        if src.kind != CONTAINER_KIND {
            return Err(Error::Config(format!("container holds `{}`, not network weights", src.kind)));
        }
        let channels = src
            .require("cnn_channels")?
            .split(',')
            .map(|v| v.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Config("malformed cnn_channels entry".into()))?;
        let config = ModelConfig {
            input_dim: src.parse("input_dim")?,
            seq_len: src.parse("seq_len")?,
            cnn_channels: channels,
            kernel: src.parse("kernel")?,
            stride: src.parse("stride")?,
            cnn_dropout: src.parse("cnn_dropout")?,
            d_model: src.parse("d_model")?,
            n_head: src.parse("n_head")?,
            d_ff: src.parse("d_ff")?,
            encoder_layers: src.parse("encoder_layers")?,
            encoder_dropout: src.parse("encoder_dropout")?,
            output_landmarks: src.parse("output_landmarks")?,
        };
        config.validate()?;
        let fetch = |name: &str, shape: &[usize]| -> Result<Tensor<T>> {
            let t = src.real::<T>(name)?;
            if t.shape() != shape {
                return Err(Error::Config(format!(
                    "tensor `{name}` has shape {:?}, config implies {shape:?}",
                    t.shape()
                )));
            }
            if !t.all_finite() {
                return Err(Error::NonFinite(format!("stored tensor `{name}`")));
            }
            Ok(t)
        };
        let specs = param_specs(&config);
        let params = specs.iter().map(|s| fetch(&s.name, &s.shape)).collect::<Result<Vec<_>>>()?;
        let mut net = Self::assemble(config, &specs, params, None);
        let mut stats = Vec::with_capacity(net.bn.len());
        for (n, s) in net.bn_names.iter().zip(&net.bn) {
            stats.push(RunningStats {
                mean: fetch(&format!("{n}.running_mean"), s.mean.shape())?,
                var: fetch(&format!("{n}.running_var"), s.var.shape())?,
            });
        }
        net.bn = stats;
        net.pe = fetch("positional_encoding", net.pe.shape())?;
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}
