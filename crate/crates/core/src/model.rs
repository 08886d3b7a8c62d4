//! Multi-channel CNN with attention fusion and three heads.
//!
//! Each used wavelength gets its own encoder made of two CNN branches: one
//! over `[x, x′, x″]`, one over the three envelopes. A branch is a stack of
//! Conv → BN → ReLU → MaxPool blocks followed by global average pooling; the
//! two branch outputs are concatenated and projected to `feature_dim`,
//! giving the channel feature `Z_i`.
//!
//! Fusion scores every `Z_i` with a shared additive attention
//! `vᵀ·tanh(W·Z_i + b)`, softmaxes the scores across channels and returns the
//! weighted sum. The fused feature feeds a regressor (SBP, DBP), a
//! hypertension classifier and, behind a gradient reversal layer, a subject
//! discriminator.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{BnMode, Graph, HasParams, NodeId, ParamId, ParamStore, Tensor};
use crate::dsp::StreamSet;
use crate::ingest::WAVELENGTHS_NM;
use crate::rng::{component_rng, Prng};
use crate::train::TargetScaler;
use crate::{Error, Real, Result};

// Supplies float math when std is not linked.
#[allow(unused_imports)]
use num_traits::Float;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSpec {
    pub kernel: usize,
    pub channels: usize,
    pub pool: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Wavelengths (nm) fed to the model, in input order.
    pub channels_used: Vec<u32>,
    pub feature_dim: usize,
    /// Conv blocks shared by both branches of every encoder.
    pub blocks: Vec<BlockSpec>,
    pub attention_dim: usize,
    pub reg_hidden: usize,
    pub cls_hidden: usize,
    pub disc_hidden: usize,
    pub num_subjects: usize,
    pub enable_cls: bool,
    pub enable_adv: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let blocks = [(7, 16), (5, 32), (5, 64), (3, 64)]
            .into_iter()
            .map(|(kernel, channels)| BlockSpec {
                kernel,
                channels,
                pool: 2,
            })
            .collect();
        Self {
            channels_used: WAVELENGTHS_NM.to_vec(),
            feature_dim: 64,
            blocks,
            attention_dim: 32,
            reg_hidden: 32,
            cls_hidden: 32,
            disc_hidden: 64,
            num_subjects: 2,
            enable_cls: true,
            enable_adv: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels_used.is_empty() {
            return Err(Error::invalid("at least one channel must be used"));
        }
        for (i, nm) in self.channels_used.iter().enumerate() {
            if !WAVELENGTHS_NM.contains(nm) {
                return Err(Error::invalid(format!("unknown wavelength {nm} nm")));
            }
            if self.channels_used[..i].contains(nm) {
                return Err(Error::invalid(format!("wavelength {nm} nm listed twice")));
            }
        }
        if self.feature_dim == 0 || self.attention_dim == 0 {
            return Err(Error::invalid("feature and attention sizes must be positive"));
        }
        if self.reg_hidden == 0 || self.cls_hidden == 0 || self.disc_hidden == 0 {
            return Err(Error::invalid("head widths must be positive"));
        }
        if self.blocks.is_empty() {
            return Err(Error::invalid("at least one conv block is required"));
        }
        for b in &self.blocks {
            if b.kernel % 2 == 0 || b.channels == 0 || b.pool == 0 {
                return Err(Error::invalid(format!(
                    "conv block needs odd kernel and positive sizes, got {b:?}"
                )));
            }
        }
        if self.enable_adv && self.num_subjects < 2 {
            return Err(Error::invalid(format!(
                "adversarial head needs at least 2 subjects, got {}",
                self.num_subjects
            )));
        }
        Ok(())
    }

    /// Shortest input window the pooling cascade accepts.
    pub fn min_input_len(&self) -> usize {
        self.blocks.iter().map(|b| b.pool).product::<usize>().max(1)
    }

    /// Storage indices (into [`WAVELENGTHS_NM`]) of the used channels.
    pub fn channel_indices(&self) -> Vec<usize> {
        self.channels_used
            .iter()
            .map(|nm| WAVELENGTHS_NM.iter().position(|w| w == nm).expect("validated"))
            .collect()
    }

    /// Short human label, e.g. `660+730 cls adv`.
    pub fn descriptor(&self) -> String {
        let mut s = self
            .channels_used
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join("+");
        if self.enable_cls {
            s.push_str(" cls");
        }
        if self.enable_adv {
            s.push_str(" adv");
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl From<Mode> for BnMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Train => BnMode::Train,
            Mode::Eval => BnMode::Eval,
        }
    }
}

/// What sits between the fused feature and the discriminator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DiscriminatorInput<T> {
    /// Gradient reversal with the given λ₂.
    Reversed(T),
    /// Plain identity; used to compare against the reversed path.
    Identity,
}

/// Which part of the network a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Encoder,
    Fusion,
    Regressor,
    Classifier,
    Discriminator,
}

impl ParamGroup {
    /// Encoder and fusion parameters feed every head.
    pub fn is_shared(self) -> bool {
        matches!(self, ParamGroup::Encoder | ParamGroup::Fusion)
    }

    fn of(name: &str) -> Self {
        match name.split('.').next().unwrap_or("") {
            "fusion" => ParamGroup::Fusion,
            "reg" => ParamGroup::Regressor,
            "cls" => ParamGroup::Classifier,
            "disc" => ParamGroup::Discriminator,
            _ => ParamGroup::Encoder,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Linear {
    w: ParamId,
    b: Option<ParamId>,
}

#[derive(Debug, Clone, PartialEq)]
struct ConvBlock<T> {
    name: String,
    conv_w: ParamId,
    conv_b: ParamId,
    gamma: ParamId,
    beta: ParamId,
    running_mean: Vec<T>,
    running_var: Vec<T>,
    kernel: usize,
    pool: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct ChannelEncoder<T> {
    branches: [Vec<ConvBlock<T>>; 2],
    fc: Linear,
}

#[derive(Debug, Clone, PartialEq)]
struct Head {
    hidden: Linear,
    out: Linear,
}

/// Model input for one batch: per used channel, the morphology and envelope
/// branches as `[B, 3, L]` arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchInput<T> {
    pub channels: Vec<(Tensor<T>, Tensor<T>)>,
}

impl<T: Real> BatchInput<T> {
    /// Stacks the used channels of several subjects. Each subject supplies all
    /// four channels' streams in storage order.
    pub fn from_streams(subjects: &[&[StreamSet]], config: &ModelConfig) -> Result<Self> {
        let first = subjects.first().ok_or_else(|| Error::invalid("empty batch"))?;
        let len = first.first().map(StreamSet::len).ok_or_else(|| Error::invalid("subject without channels"))?;
        let b = subjects.len();
        let mut channels = Vec::new();
        for ch in config.channel_indices() {
            let mut morph = Vec::with_capacity(b * 3 * len);
            let mut env = Vec::with_capacity(b * 3 * len);
            for s in subjects {
                let set = s.get(ch).ok_or_else(|| Error::invalid(format!("missing channel index {ch}")))?;
                if set.len() != len {
                    return Err(Error::shape("batch input", &[len], &[set.len()]));
                }
                for stream in set.morphology() {
                    morph.extend(stream.iter().map(|&v| T::of(v)));
                }
                for stream in set.envelopes() {
                    env.extend(stream.iter().map(|&v| T::of(v)));
                }
            }
            channels.push((Tensor::new(&[b, 3, len], morph)?, Tensor::new(&[b, 3, len], env)?));
        }
        Ok(Self { channels })
    }

    pub fn batch_size(&self) -> usize {
        self.channels.first().map_or(0, |c| c.0.shape()[0])
    }

    pub fn window_len(&self) -> usize {
        self.channels.first().map_or(0, |c| c.0.shape()[2])
    }
}

/// Encoder output plus the train-mode batch-norm nodes whose statistics
/// feed the running averages.
#[derive(Debug, Clone)]
pub struct ChannelEncoding {
    pub z: NodeId,
    bn_nodes: Vec<NodeId>,
}

#[derive(Debug, Clone, Copy)]
pub struct FusionNodes {
    /// `[B, n_channels]` softmax weights.
    pub weights: NodeId,
    /// `[B, feature_dim]`.
    pub fused: NodeId,
}

#[derive(Debug, Clone, Copy)]
pub struct HeadNodes {
    /// `[B, 2]`: scaled SBP, DBP.
    pub reg: NodeId,
    /// `[B, 1]` hypertension probability.
    pub cls: Option<NodeId>,
    /// `[B, num_subjects]` subject logits.
    pub disc: Option<NodeId>,
}

#[derive(Debug, Clone)]
pub struct ForwardNodes {
    pub features: Vec<NodeId>,
    pub fusion: FusionNodes,
    pub heads: HeadNodes,
}

/// Per-channel feature vectors `Z_i` for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelFeature {
    pub wavelength_nm: u32,
    /// `[B][feature_dim]`.
    pub z: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutput {
    /// `[B][n_channels]`.
    pub weights: Vec<Vec<f64>>,
    /// `[B][feature_dim]`.
    pub fused: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    /// Scaled (z-space) regression outputs.
    pub sbp: Vec<f64>,
    pub dbp: Vec<f64>,
    pub c_hat: Option<Vec<f64>>,
    pub subject_logits: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub features: Vec<ChannelFeature>,
    pub fusion: FusionOutput,
    pub heads: HeadOutputs,
}

fn rows<T: Real>(t: &Tensor<T>) -> Vec<Vec<f64>> {
    let width = t.shape().last().copied().unwrap_or(1).max(1);
    t.data().chunks(width).map(|r| r.iter().map(|v| v.as_f64()).collect()).collect()
}

/// The full network. Parameters live in one [`ParamStore`]; batch-norm
/// running statistics are kept beside them.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    config: ModelConfig,
    store: ParamStore<T>,
    encoders: Vec<ChannelEncoder<T>>,
    attn_w: Linear,
    attn_v: Linear,
    regressor: Head,
    classifier: Option<Head>,
    discriminator: Option<Head>,
    /// Regression-target scaling fitted on the training subjects.
    pub scaler: Option<TargetScaler>,
    seed: u64,
}

struct Init<'a, T> {
    store: &'a mut ParamStore<T>,
    rng: Prng,
}

impl<T: Real> Init<'_, T> {
    fn uniform(&mut self, name: String, shape: &[usize], fan_in: usize) -> ParamId {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::of(self.rng.random_range(-bound..bound))).collect();
        self.store.add(name, Tensor::new(shape, data).expect("sized"))
    }

    fn constant(&mut self, name: String, shape: &[usize], value: f64) -> ParamId {
        self.store.add(name, Tensor::filled(shape, T::of(value)))
    }

    fn linear(&mut self, name: &str, inp: usize, out: usize, bias: bool) -> Linear {
        let w = self.uniform(format!("{name}.weight"), &[out, inp], inp);
        let b = bias.then(|| self.constant(format!("{name}.bias"), &[out], 0.0));
        Linear { w, b }
    }

    fn head(&mut self, name: &str, inp: usize, hidden: usize, out: usize) -> Head {
        Head {
            hidden: self.linear(&format!("{name}.hidden"), inp, hidden, true),
            out: self.linear(&format!("{name}.out"), hidden, out, true),
        }
    }
}

const BRANCH_NAMES: [&str; 2] = ["morph", "env"];

impl<T: Real> Model<T> {
    /// Fresh model with fan-in-scaled uniform weights, zero biases and unit
    /// batch-norm scales, all drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init {
            store: &mut store,
            rng: component_rng(seed, "init"),
        };
        let mut encoders = Vec::new();
        for &nm in &config.channels_used {
            let branches = BRANCH_NAMES.map(|branch| {
                let mut cin = 3;
                config
                    .blocks
                    .iter()
                    .enumerate()
                    .map(|(i, b)| {
                        let name = format!("enc{nm}.{branch}.block{i}");
                        let conv_w = init.uniform(format!("{name}.conv.weight"), &[b.channels, cin, b.kernel], cin * b.kernel);
                        let conv_b = init.constant(format!("{name}.conv.bias"), &[b.channels], 0.0);
                        let gamma = init.constant(format!("{name}.bn.gamma"), &[b.channels], 1.0);
                        let beta = init.constant(format!("{name}.bn.beta"), &[b.channels], 0.0);
                        cin = b.channels;
                        ConvBlock {
                            name,
                            conv_w,
                            conv_b,
                            gamma,
                            beta,
                            running_mean: vec![T::zero(); b.channels],
                            running_var: vec![T::one(); b.channels],
                            kernel: b.kernel,
                            pool: b.pool,
                        }
                    })
                    .collect::<Vec<_>>()
            });
            let last = config.blocks.last().expect("validated").channels;
            let fc = init.linear(&format!("enc{nm}.fc"), 2 * last, config.feature_dim, true);
            encoders.push(ChannelEncoder { branches, fc });
        }
        let attn_w = init.linear("fusion.attn", config.feature_dim, config.attention_dim, true);
        let attn_v = init.linear("fusion.score", config.attention_dim, 1, false);
        let regressor = init.head("reg", config.feature_dim, config.reg_hidden, 2);
        let classifier = config
            .enable_cls
            .then(|| init.head("cls", config.feature_dim, config.cls_hidden, 1));
        let discriminator = config
            .enable_adv
            .then(|| init.head("disc", config.feature_dim, config.disc_hidden, config.num_subjects));
        Ok(Self {
            config,
            store,
            encoders,
            attn_w,
            attn_v,
            regressor,
            classifier,
            discriminator,
            scaler: None,
            seed,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn param_group(&self, id: ParamId) -> ParamGroup {
        ParamGroup::of(&self.store.get(id).name)
    }

    fn linear(&self, g: &mut Graph<T>, x: NodeId, l: &Linear) -> Result<NodeId> {
        let w = g.param(&self.store, l.w);
        let b = l.b.map(|b| g.param(&self.store, b));
        g.affine(x, w, b)
    }

    fn check_window(&self, len: usize) -> Result<()> {
        let min = self.config.min_input_len();
        if len < min {
            return Err(Error::TooShort(format!(
                "window of {len} samples is shorter than the {min} samples the pooling cascade needs"
            )));
        }
        Ok(())
    }

    /// Runs encoder `i` on `[B, 3, L]` morphology and envelope inputs, producing `Z_i: [B, feature_dim]`.
    pub fn encode_channel(
        &self,
        g: &mut Graph<T>,
        i: usize,
        morph: &Tensor<T>,
        env: &Tensor<T>,
        mode: Mode,
    ) -> Result<ChannelEncoding> {
        let enc = self
            .encoders
            .get(i)
            .ok_or_else(|| Error::invalid(format!("no encoder for channel slot {i}")))?;
        let (_, cin, len) = morph.dims3("encode_channel")?;
        if cin != 3 || env.shape() != morph.shape() {
            return Err(Error::shape("encode_channel", morph.shape(), env.shape()));
        }
        self.check_window(len)?;
        let mut bn_nodes = Vec::new();
        let mut pooled = Vec::with_capacity(2);
        for (blocks, input) in enc.branches.iter().zip([morph, env]) {
            let mut h = g.input(input.clone());
            for block in blocks {
                let w = g.param(&self.store, block.conv_w);
                let b = g.param(&self.store, block.conv_b);
                let conv = g.conv1d(h, w, Some(b), 1, block.kernel / 2)?;
                let gamma = g.param(&self.store, block.gamma);
                let beta = g.param(&self.store, block.beta);
                let running = (mode == Mode::Eval).then_some((block.running_mean.as_slice(), block.running_var.as_slice()));
                let bn = g.batch_norm1d(conv, gamma, beta, BN_EPS, mode.into(), running)?;
                bn_nodes.push(bn);
                let act = g.relu(bn);
                h = g.max_pool1d(act, block.pool, block.pool)?;
            }
            pooled.push(g.global_avg_pool(h)?);
        }
        let cat = g.concat(&pooled)?;
        let z = self.linear(g, cat, &enc.fc)?;
        Ok(ChannelEncoding { z, bn_nodes })
    }

    /// Folds the batch statistics of a train-mode pass into the running averages.
    pub fn update_running_stats(&mut self, g: &Graph<T>, encodings: &[ChannelEncoding]) {
        let m = T::of(BN_MOMENTUM);
        for (enc, encoding) in self.encoders.iter_mut().zip(encodings) {
            let blocks = enc.branches.iter_mut().flatten();
            for (block, &node) in blocks.zip(&encoding.bn_nodes) {
                let Some((mean, var)) = g.batch_stats(node) else {
                    continue;
                };
                let shape = g.value(node).shape();
                let n = (shape[0] * shape[2]) as f64;
                let unbias = T::of(if n > 1.0 { n / (n - 1.0) } else { 1.0 });
                for c in 0..mean.len() {
                    block.running_mean[c] = (T::one() - m) * block.running_mean[c] + m * mean[c];
                    block.running_var[c] = (T::one() - m) * block.running_var[c] + m * var[c] * unbias;
                }
            }
        }
    }

    /// Attention fusion of `[B, feature_dim]` channel features.
    pub fn fuse(&self, g: &mut Graph<T>, features: &[NodeId]) -> Result<FusionNodes> {
        if features.is_empty() {
            return Err(Error::invalid("fusion needs at least one channel feature"));
        }
        let expect = [g.value(features[0]).shape()[0], self.config.feature_dim];
        let mut scores = Vec::with_capacity(features.len());
        for &z in features {
            if g.value(z).shape() != expect {
                return Err(Error::shape("fuse", &expect, g.value(z).shape()));
            }
            let pre = self.linear(g, z, &self.attn_w)?;
            let act = g.tanh(pre);
            scores.push(self.linear(g, act, &self.attn_v)?);
        }
        let stacked = g.concat(&scores)?;
        let weights = g.softmax(stacked)?;
        let fused = g.weighted_sum(weights, features)?;
        Ok(FusionNodes { weights, fused })
    }

    fn head(&self, g: &mut Graph<T>, x: NodeId, head: &Head) -> Result<NodeId> {
        let h = self.linear(g, x, &head.hidden)?;
        let h = g.relu(h);
        self.linear(g, h, &head.out)
    }

    /// The three heads. In eval mode only the regressor runs.
    pub fn forward_heads(&self, g: &mut Graph<T>, fused: NodeId, lambda2: T, mode: Mode) -> Result<HeadNodes> {
        self.forward_heads_with(g, fused, DiscriminatorInput::Reversed(lambda2), mode)
    }

    pub fn forward_heads_with(
        &self,
        g: &mut Graph<T>,
        fused: NodeId,
        disc_input: DiscriminatorInput<T>,
        mode: Mode,
    ) -> Result<HeadNodes> {
        let reg = self.head(g, fused, &self.regressor)?;
        if mode == Mode::Eval {
            return Ok(HeadNodes {
                reg,
                cls: None,
                disc: None,
            });
        }
        let cls = match &self.classifier {
            Some(h) => {
                let logit = self.head(g, fused, h)?;
                Some(g.sigmoid(logit))
            }
            None => None,
        };
        let disc = match &self.discriminator {
            Some(h) => {
                let input = match disc_input {
                    DiscriminatorInput::Reversed(lambda2) => {
                        if lambda2 < T::zero() {
                            return Err(Error::invalid("lambda2 must be non-negative"));
                        }
                        g.grl(fused, lambda2)
                    }
                    DiscriminatorInput::Identity => fused,
                };
                Some(self.head(g, input, h)?)
            }
            None => None,
        };
        Ok(HeadNodes { reg, cls, disc })
    }

    /// Encoders, fusion and heads on one batch. Does not touch running statistics.
    pub fn forward_with(
        &self,
        g: &mut Graph<T>,
        input: &BatchInput<T>,
        disc_input: DiscriminatorInput<T>,
        mode: Mode,
    ) -> Result<(ForwardNodes, Vec<ChannelEncoding>)> {
        if input.channels.len() != self.encoders.len() {
            return Err(Error::invalid(format!(
                "model expects {} channels ({}), input has {}",
                self.encoders.len(),
                self.config.descriptor(),
                input.channels.len()
            )));
        }
        let mut encodings = Vec::with_capacity(self.encoders.len());
        for (i, (morph, env)) in input.channels.iter().enumerate() {
            encodings.push(self.encode_channel(g, i, morph, env, mode)?);
        }
        let features: Vec<NodeId> = encodings.iter().map(|e| e.z).collect();
        let fusion = self.fuse(g, &features)?;
        let heads = self.forward_heads_with(g, fusion.fused, disc_input, mode)?;
        Ok((
            ForwardNodes {
                features,
                fusion,
                heads,
            },
            encodings,
        ))
    }

    /// Train-mode forward pass; updates the batch-norm running statistics.
    pub fn forward_train(&mut self, g: &mut Graph<T>, input: &BatchInput<T>, lambda2: T) -> Result<ForwardNodes> {
        let (nodes, encodings) = self.forward_with(g, input, DiscriminatorInput::Reversed(lambda2), Mode::Train)?;
        self.update_running_stats(g, &encodings);
        Ok(nodes)
    }

    /// Eval-mode pass returning every intermediate value.
    pub fn infer(&self, input: &BatchInput<T>) -> Result<Inference> {
        let mut g = Graph::new();
        let (nodes, _) = self.forward_with(&mut g, input, DiscriminatorInput::Reversed(T::zero()), Mode::Eval)?;
        let features = nodes
            .features
            .iter()
            .zip(&self.config.channels_used)
            .map(|(&z, &nm)| ChannelFeature {
                wavelength_nm: nm,
                z: rows(g.value(z)),
            })
            .collect();
        let fusion = FusionOutput {
            weights: rows(g.value(nodes.fusion.weights)),
            fused: rows(g.value(nodes.fusion.fused)),
        };
        let reg = rows(g.value(nodes.heads.reg));
        let heads = HeadOutputs {
            sbp: reg.iter().map(|r| r[0]).collect(),
            dbp: reg.iter().map(|r| r[1]).collect(),
            c_hat: None,
            subject_logits: None,
        };
        Ok(Inference {
            features,
            fusion,
            heads,
        })
    }

    /// Scaled-space `(sbp, dbp)` predictions in eval mode.
    pub fn predict_scaled(&self, input: &BatchInput<T>) -> Result<Vec<(f64, f64)>> {
        let mut g = Graph::new();
        let (nodes, _) = self.forward_with(&mut g, input, DiscriminatorInput::Reversed(T::zero()), Mode::Eval)?;
        Ok(rows(g.value(nodes.heads.reg)).into_iter().map(|r| (r[0], r[1])).collect())
    }

    /// Eval-mode predictions in mmHg through the attached scaler.
    pub fn predict_mmhg(&self, input: &BatchInput<T>) -> Result<Vec<(f64, f64)>> {
        let scaler = self
            .scaler
            .as_ref()
            .ok_or_else(|| Error::invalid("model has no target scaler; train it first"))?;
        Ok(self
            .predict_scaled(input)?
            .into_iter()
            .map(|(s, d)| scaler.invert(s, d))
            .collect())
    }

    /// Every stored array: parameters first, then batch-norm running statistics.
    pub fn named_arrays(&self) -> Vec<(String, Tensor<T>)> {
        let mut out: Vec<(String, Tensor<T>)> = self.store.iter().map(|p| (p.name.clone(), p.value.clone())).collect();
        for block in self.encoders.iter().flat_map(|e| e.branches.iter().flatten()) {
            let n = block.running_mean.len();
            out.push((
                format!("{}.bn.running_mean", block.name),
                Tensor::new(&[n], block.running_mean.clone()).expect("sized"),
            ));
            out.push((
                format!("{}.bn.running_var", block.name),
                Tensor::new(&[n], block.running_var.clone()).expect("sized"),
            ));
        }
        out
    }

    /// Rebuilds a model from `config` and a full set of named arrays.
    ///
    /// Unknown names, missing names and shape mismatches are errors.
    pub fn from_named_arrays(config: ModelConfig, seed: u64, arrays: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let mut model = Self::new(config, seed)?;
        let expected = model.named_arrays();
        if arrays.len() != expected.len() {
            return Err(Error::invalid(format!(
                "expected {} arrays, found {}",
                expected.len(),
                arrays.len()
            )));
        }
        let mut seen = vec![false; expected.len()];
        for (name, tensor) in arrays {
            let slot = expected
                .iter()
                .position(|(n, _)| *n == name)
                .ok_or_else(|| Error::invalid(format!("unknown array name {name}")))?;
            if expected[slot].1.shape() != tensor.shape() {
                return Err(Error::shape("checkpoint array", expected[slot].1.shape(), tensor.shape()));
            }
            if core::mem::replace(&mut seen[slot], true) {
                return Err(Error::invalid(format!("array {name} given twice")));
            }
            model.set_array(&name, tensor);
        }
        Ok(model)
    }

    fn set_array(&mut self, name: &str, tensor: Tensor<T>) {
        if let Some(id) = self.store.find(name) {
            self.store.get_mut(id).value = tensor;
            return;
        }
        for block in self.encoders.iter_mut().flat_map(|e| e.branches.iter_mut().flatten()) {
            if let Some(rest) = name.strip_prefix(block.name.as_str()) {
                match rest {
                    ".bn.running_mean" => block.running_mean = tensor.into_data(),
                    ".bn.running_var" => block.running_var = tensor.into_data(),
                    _ => continue,
                }
                return;
            }
        }
    }

    /// Same architecture and weights in another precision.
    pub fn cast<U: Real>(&self) -> Model<U> {
        let arrays = self
            .named_arrays()
            .into_iter()
            .map(|(n, t)| {
                let data = t.data().iter().map(|v| U::of(v.as_f64())).collect();
                (n, Tensor::new(t.shape(), data).expect("same shape"))
            })
            .collect();
        let mut m = Model::from_named_arrays(self.config.clone(), self.seed, arrays).expect("same layout");
        m.scaler = self.scaler;
        m
    }
}

impl<T> HasParams<T> for Model<T> {
    fn params(&self) -> &ParamStore<T> {
        &self.store
    }
    fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }
}
