//! Curriculum-adversarial training.
//!
//! The composite objective is
//! `L = λ₁·L_reg + (1 − λ₁)·L_cls − λ₂·L_adv`, with λ₁ ramping linearly
//! from 0 to 1 over the run. The minus sign on the adversarial term is
//! realized by the gradient reversal layer: the backward pass starts from
//! `λ₁·L_reg + (1 − λ₁)·L_cls + L_adv`, so the discriminator descends on
//! `L_adv` while everything upstream of the reversal receives `−λ₂` times
//! that gradient. The reported `L_total` is the literal signed value.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::autodiff::{Adam, Graph, HasParams, NodeId};
use crate::dsp::{build_streams, FilterSpec, StreamSet};
use crate::eval::{evaluate, MetricsReport};
use crate::ingest::{extract_middle_window, label_hypertension, FoldPlan, SubjectRecord};
use crate::model::{BatchInput, ChannelEncoding, DiscriminatorInput, ForwardNodes, Mode, Model, ModelConfig};
use crate::rng::{derive_indexed, indexed_rng};
use crate::{Error, Real, Result};

// Supplies float math when std is not linked.
#[allow(unused_imports)]
use num_traits::Float;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lambda2: f64,
    pub seed: u64,
    pub enable_cls: bool,
    pub enable_adv: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 32,
            epochs: 100,
            lambda2: 1.0,
            seed: 0,
            enable_cls: true,
            enable_adv: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be at least 1"));
        }
        if !(self.lambda2 >= 0.0 && self.lambda2.is_finite()) {
            return Err(Error::invalid(format!("lambda2 must be >= 0, got {}", self.lambda2)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

/// `epoch / total_epochs`.
pub fn lambda1_schedule(epoch: usize, total_epochs: usize) -> Result<f64> {
    if total_epochs == 0 || epoch > total_epochs {
        return Err(Error::invalid(format!(
            "epoch {epoch} outside 0..={total_epochs}"
        )));
    }
    Ok(epoch as f64 / total_epochs as f64)
}

/// λ₁ for the zero-based epoch `epoch` of an `epochs`-long run.
///
/// The ratio is taken over `epochs − 1` so the first epoch trains at exactly
/// 0 and the last at exactly 1. A single-epoch run trains at 1.
pub fn curriculum_lambda1(epoch: usize, epochs: usize) -> Result<f64> {
    if epoch >= epochs {
        return Err(Error::invalid(format!("epoch {epoch} outside 0..{epochs}")));
    }
    if epochs == 1 {
        return Ok(1.0);
    }
    lambda1_schedule(epoch, epochs - 1)
}

/// Which auxiliary heads are part of the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadFlags {
    pub cls: bool,
    pub adv: bool,
}

impl HeadFlags {
    /// Weights of `(L_reg, L_cls, L_adv)` in the signed composite.
    pub fn weights(self, lambda1: f64, lambda2: f64) -> (f64, f64, f64) {
        let reg = if self.cls { lambda1 } else { 1.0 };
        let cls = if self.cls { 1.0 - lambda1 } else { 0.0 };
        let adv = if self.adv { -lambda2 } else { 0.0 };
        (reg, cls, adv)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l_reg: f64,
    pub l_cls: Option<f64>,
    pub l_adv: Option<f64>,
    pub lambda1: f64,
    pub lambda2: f64,
    pub l_total: f64,
}

/// Combines the head losses per the composite objective, reduced to the enabled heads.
pub fn total_loss(
    l_reg: f64,
    l_cls: Option<f64>,
    l_adv: Option<f64>,
    lambda1: f64,
    lambda2: f64,
    flags: HeadFlags,
) -> Result<LossBreakdown> {
    if !(0.0..=1.0).contains(&lambda1) || !(lambda2 >= 0.0) {
        return Err(Error::invalid(format!(
            "lambda1 must lie in [0, 1] and lambda2 be >= 0, got {lambda1}, {lambda2}"
        )));
    }
    for (name, enabled, present) in [("L_cls", flags.cls, l_cls.is_some()), ("L_adv", flags.adv, l_adv.is_some())] {
        if enabled != present {
            let state = if enabled { "missing" } else { "given for a disabled head" };
            return Err(Error::invalid(format!("{name} {state}")));
        }
    }
    let (wr, wc, wa) = flags.weights(lambda1, lambda2);
    let l_total = wr * l_reg + wc * l_cls.unwrap_or(0.0) + wa * l_adv.unwrap_or(0.0);
    Ok(LossBreakdown {
        l_reg,
        l_cls,
        l_adv,
        lambda1,
        lambda2,
        l_total,
    })
}

/// Z-scaling of SBP and DBP fitted on training targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetScaler {
    pub mean_sbp: f64,
    pub std_sbp: f64,
    pub mean_dbp: f64,
    pub std_dbp: f64,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl TargetScaler {
    /// Population mean and standard deviation of `(sbp, dbp)` pairs.
    pub fn fit(targets: &[(f64, f64)]) -> Result<Self> {
        if targets.len() < 2 {
            return Err(Error::invalid("target scaler needs at least 2 subjects"));
        }
        let (mean_sbp, std_sbp) = mean_std(targets.iter().map(|t| t.0));
        let (mean_dbp, std_dbp) = mean_std(targets.iter().map(|t| t.1));
        if !(std_sbp > 0.0 && std_dbp > 0.0) {
            return Err(Error::invalid("training targets have zero variance"));
        }
        Ok(Self {
            mean_sbp,
            std_sbp,
            mean_dbp,
            std_dbp,
        })
    }

    pub fn apply(&self, sbp: f64, dbp: f64) -> (f64, f64) {
        ((sbp - self.mean_sbp) / self.std_sbp, (dbp - self.mean_dbp) / self.std_dbp)
    }

    pub fn invert(&self, sbp: f64, dbp: f64) -> (f64, f64) {
        (sbp * self.std_sbp + self.mean_sbp, dbp * self.std_dbp + self.mean_dbp)
    }
}

/// A subject's preprocessed window, ready for batching.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSubject {
    pub subject_id: String,
    /// All four channels, storage order.
    pub streams: Vec<StreamSet>,
    pub sbp: f64,
    pub dbp: f64,
}

impl PreparedSubject {
    pub fn hypertensive(&self) -> bool {
        label_hypertension(self.sbp, self.dbp)
    }
}

/// Middle window extraction followed by stream construction on every channel.
pub fn prepare_subject(record: &SubjectRecord, window_s: f64, filter: &FilterSpec) -> Result<PreparedSubject> {
    let window = extract_middle_window(record, window_s)?;
    let streams = window
        .channels
        .iter()
        .map(|ch| build_streams(ch, window.fs, filter).map_err(|e| Error::subject(&record.subject_id, format!("{e}"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(PreparedSubject {
        subject_id: record.subject_id.clone(),
        streams,
        sbp: record.sbp,
        dbp: record.dbp,
    })
}

pub fn batch_input<T: Real>(subjects: &[&PreparedSubject], config: &ModelConfig) -> Result<BatchInput<T>> {
    let sets: Vec<&[StreamSet]> = subjects.iter().map(|s| s.streams.as_slice()).collect();
    BatchInput::from_streams(&sets, config)
}

/// Targets of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchTargets<T> {
    /// Scaled `[sbp, dbp]` pairs, row-major `[B, 2]`.
    pub bp: Vec<T>,
    /// Hypertension labels, 0 or 1.
    pub hypertensive: Vec<T>,
    /// Discriminator class of each subject.
    pub subject: Vec<usize>,
}

impl<T: Real> BatchTargets<T> {
    pub fn new(subjects: &[&PreparedSubject], classes: &[usize], scaler: &TargetScaler) -> Result<Self> {
        if subjects.len() != classes.len() {
            return Err(Error::shape("batch targets", &[subjects.len()], &[classes.len()]));
        }
        let mut bp = Vec::with_capacity(2 * subjects.len());
        for s in subjects {
            let (a, b) = scaler.apply(s.sbp, s.dbp);
            bp.push(T::of(a));
            bp.push(T::of(b));
        }
        let hypertensive = subjects
            .iter()
            .map(|s| if s.hypertensive() { T::one() } else { T::zero() })
            .collect();
        Ok(Self {
            bp,
            hypertensive,
            subject: classes.to_vec(),
        })
    }
}

/// Which loss terms feed the backward pass. Excluding a term leaves the
/// weights of the others unchanged; used to isolate per-head contributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Terms {
    pub reg: bool,
    pub cls: bool,
    pub adv: bool,
}

impl Terms {
    pub const ALL: Terms = Terms {
        reg: true,
        cls: true,
        adv: true,
    };
}

/// How to assemble the objective for one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective<T> {
    pub lambda1: f64,
    pub lambda2: f64,
    pub terms: Terms,
    pub disc_input: DiscriminatorInput<T>,
    pub mode: Mode,
}

impl<T: Real> Objective<T> {
    pub fn new(lambda1: f64, lambda2: f64) -> Self {
        Self {
            lambda1,
            lambda2,
            terms: Terms::ALL,
            disc_input: DiscriminatorInput::Reversed(T::of(lambda2)),
            mode: Mode::Train,
        }
    }

    pub fn only(mut self, terms: Terms) -> Self {
        self.terms = terms;
        self
    }

    /// Feeds the discriminator through an identity instead of the reversal.
    pub fn identity_discriminator(mut self) -> Self {
        self.disc_input = DiscriminatorInput::Identity;
        self
    }
}

#[derive(Debug, Clone)]
pub struct ObjectiveNodes {
    pub forward: ForwardNodes,
    pub l_reg: NodeId,
    pub l_cls: Option<NodeId>,
    pub l_adv: Option<NodeId>,
    /// Where the backward pass starts.
    pub backward: NodeId,
    /// Literal signed composite.
    pub total: NodeId,
}

/// Forward pass plus every loss node for one batch. Running statistics are left untouched.
pub fn build_objective<T: Real>(
    model: &Model<T>,
    g: &mut Graph<T>,
    input: &BatchInput<T>,
    targets: &BatchTargets<T>,
    objective: &Objective<T>,
) -> Result<(ObjectiveNodes, Vec<ChannelEncoding>)> {
    let (forward, encodings) = model.forward_with(g, input, objective.disc_input, objective.mode)?;
    let flags = HeadFlags {
        cls: model.config().enable_cls,
        adv: model.config().enable_adv,
    };
    let l_reg = g.mse_loss(forward.heads.reg, &targets.bp)?;
    let l_cls = match forward.heads.cls {
        Some(p) => Some(g.bce_loss(p, &targets.hypertensive)?),
        None => None,
    };
    let l_adv = match forward.heads.disc {
        Some(logits) => Some(g.ce_loss(logits, &targets.subject)?),
        None => None,
    };
    if objective.mode == Mode::Eval && (flags.cls || flags.adv) {
        return Err(Error::invalid("the composite objective needs train mode"));
    }
    let (wr, wc, wa) = flags.weights(objective.lambda1, objective.lambda2);
    let mut signed = alloc::vec![(l_reg, T::of(wr))];
    let mut descent = Vec::new();
    if objective.terms.reg {
        descent.push((l_reg, T::of(wr)));
    }
    if let Some(c) = l_cls {
        signed.push((c, T::of(wc)));
        if objective.terms.cls {
            descent.push((c, T::of(wc)));
        }
    }
    if let Some(a) = l_adv {
        signed.push((a, T::of(wa)));
        if objective.terms.adv {
            descent.push((a, T::one()));
        }
    }
    if descent.is_empty() {
        return Err(Error::invalid("objective selects no loss term"));
    }
    let backward = g.combine(&descent);
    let total = g.combine(&signed);
    Ok((
        ObjectiveNodes {
            forward,
            l_reg,
            l_cls,
            l_adv,
            backward,
            total,
        },
        encodings,
    ))
}

/// Per-epoch means over training samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lambda1: f64,
    pub l_reg: f64,
    pub l_cls: Option<f64>,
    pub l_adv: Option<f64>,
    pub l_total: f64,
    /// Fraction of training samples the discriminator identified.
    pub disc_acc: Option<f64>,
    pub val_mae_sbp: Option<f64>,
    pub val_mae_dbp: Option<f64>,
}

fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Trains `model` in place on `train` and returns the epoch log. Each
/// subject's discriminator class is its position in `train`.
///
/// The target scaler is fitted on `train` only and attached to the model.
/// `validation`, when given, is scored after every epoch with the
/// regression head alone.
pub fn fit<T: Real>(
    model: &mut Model<T>,
    train: &[PreparedSubject],
    config: &TrainConfig,
    validation: Option<&[PreparedSubject]>,
) -> Result<Vec<EpochLog>> {
    config.validate()?;
    if train.len() < 2 {
        return Err(Error::invalid("training needs at least 2 subjects"));
    }
    let mc = model.config().clone();
    if mc.enable_cls != config.enable_cls || mc.enable_adv != config.enable_adv {
        return Err(Error::invalid("model head flags disagree with the training config"));
    }
    if mc.enable_adv && mc.num_subjects != train.len() {
        return Err(Error::invalid(format!(
            "discriminator has {} classes but there are {} training subjects",
            mc.num_subjects,
            train.len()
        )));
    }
    let targets: Vec<(f64, f64)> = train.iter().map(|s| (s.sbp, s.dbp)).collect();
    let scaler = TargetScaler::fit(&targets)?;
    model.scaler = Some(scaler);
    let adam = Adam::with_lr(config.lr);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let lambda1 = curriculum_lambda1(epoch, config.epochs)?;
        let objective = Objective::new(lambda1, config.lambda2);
        order.sort_unstable();
        order.shuffle(&mut indexed_rng(config.seed, "shuffle", epoch as u64));

        let (mut reg, mut cls, mut adv, mut total) = (0.0, 0.0, 0.0, 0.0);
        let mut correct = 0usize;
        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            let subjects: Vec<&PreparedSubject> = idx.iter().map(|&i| &train[i]).collect();
            let input = batch_input::<T>(&subjects, &mc)?;
            let targets = BatchTargets::new(&subjects, idx, &scaler)?;
            let mut g = Graph::new();
            let (nodes, encodings) = build_objective(model, &mut g, &input, &targets, &objective)?;
            let value = |n: NodeId| g.scalar(n).as_f64();
            let parts = [Some(nodes.backward), Some(nodes.total), Some(nodes.l_reg), nodes.l_cls, nodes.l_adv];
            if parts.iter().flatten().any(|&n| !value(n).is_finite()) {
                return Err(Error::NonFinite { epoch, batch });
            }
            let b = idx.len() as f64;
            reg += b * value(nodes.l_reg);
            cls += nodes.l_cls.map_or(0.0, |n| b * value(n));
            adv += nodes.l_adv.map_or(0.0, |n| b * value(n));
            total += b * value(nodes.total);
            if let Some(d) = nodes.forward.heads.disc {
                let logits = g.value(d);
                let width = logits.shape()[1];
                correct += logits
                    .data()
                    .chunks(width)
                    .zip(idx)
                    .filter(|(row, &class)| argmax(row) == class)
                    .count();
            }
            model.update_running_stats(&g, &encodings);
            g.backward(nodes.backward, model.params_mut());
            adam.step(model.params_mut());
        }

        let n = train.len() as f64;
        let (val_mae_sbp, val_mae_dbp) = match validation {
            Some(v) if !v.is_empty() => {
                let r = evaluate(model, v)?;
                (Some(r.sbp.mae), Some(r.dbp.mae))
            }
            _ => (None, None),
        };
        log.push(EpochLog {
            epoch,
            lambda1,
            l_reg: reg / n,
            l_cls: mc.enable_cls.then_some(cls / n),
            l_adv: mc.enable_adv.then_some(adv / n),
            l_total: total / n,
            disc_acc: mc.enable_adv.then_some(correct as f64 / n),
            val_mae_sbp,
            val_mae_dbp,
        });
    }
    Ok(log)
}

/// Outcome of training and validating on one fold.
#[derive(Debug, Clone)]
pub struct FoldRun<T> {
    pub fold: usize,
    pub model: Model<T>,
    pub log: Vec<EpochLog>,
    pub validation: MetricsReport,
}

/// Mean and population standard deviation of one metric over folds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spread {
    pub mean: f64,
    pub std: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Self {
        let (mean, std) = mean_std(values.iter().copied());
        Self { mean, std }
    }
}

#[derive(Debug, Clone)]
pub struct CvOutcome<T> {
    pub folds: Vec<FoldRun<T>>,
    pub mae_sbp: Spread,
    pub mae_dbp: Spread,
}

/// K-fold cross-validation inside the training split.
///
/// Fold `k` trains on every other fold and validates on fold `k` with the
/// regression head only. Its discriminator has one class per training
/// subject of that fold; validation subjects get no class. Model weights
/// are seeded per fold from `train_config.seed`.
pub fn run_cv<T: Real>(
    subjects: &[PreparedSubject],
    folds: &FoldPlan,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<CvOutcome<T>> {
    let train_ids = folds.folds.iter().flatten().cloned().collect();
    folds.check(&train_ids)?;
    let mut runs = Vec::with_capacity(folds.k);
    for k in 0..folds.k {
        let fold_train_ids = folds.train_ids(k);
        let train: Vec<PreparedSubject> = subjects
            .iter()
            .filter(|s| fold_train_ids.contains(&s.subject_id))
            .cloned()
            .collect();
        let val: Vec<PreparedSubject> = subjects
            .iter()
            .filter(|s| folds.folds[k].contains(&s.subject_id))
            .cloned()
            .collect();
        if train.len() != fold_train_ids.len() || val.len() != folds.folds[k].len() {
            return Err(Error::invalid(format!("fold {k} references subjects that were not supplied")));
        }
        let mut mc = model_config.clone();
        mc.num_subjects = train.len();
        let mut tc = train_config.clone();
        tc.seed = derive_indexed(train_config.seed, "fold", k as u64);
        let mut model = Model::new(mc, derive_indexed(tc.seed, "init", 0))?;
        let log = fit(&mut model, &train, &tc, Some(&val))?;
        let validation = evaluate(&model, &val)?;
        runs.push(FoldRun {
            fold: k,
            model,
            log,
            validation,
        });
    }
    let sbp: Vec<f64> = runs.iter().map(|r| r.validation.sbp.mae).collect();
    let dbp: Vec<f64> = runs.iter().map(|r| r.validation.dbp.mae).collect();
    Ok(CvOutcome {
        folds: runs,
        mae_sbp: Spread::of(&sbp),
        mae_dbp: Spread::of(&dbp),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_examples() {
        assert_eq!(lambda1_schedule(0, 100).unwrap(), 0.0);
        assert_eq!(lambda1_schedule(50, 100).unwrap(), 0.5);
        assert_eq!(lambda1_schedule(100, 100).unwrap(), 1.0);
        assert!(lambda1_schedule(101, 100).is_err());
        assert!(lambda1_schedule(0, 0).is_err());
    }

    #[test]
    fn curriculum_hits_both_endpoints() {
        let seq: Vec<f64> = (0..100).map(|e| curriculum_lambda1(e, 100).unwrap()).collect();
        assert_eq!(seq[0], 0.0);
        assert_eq!(seq[99], 1.0);
        assert!(seq.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(curriculum_lambda1(0, 1).unwrap(), 1.0);
        assert!(curriculum_lambda1(100, 100).is_err());
    }

    #[test]
    fn total_loss_examples() {
        let all = HeadFlags { cls: true, adv: true };
        let b = total_loss(4.0, Some(0.6), Some(2.0), 0.5, 1.0, all).unwrap();
        assert!((b.l_total - 0.3).abs() < 1e-12);
        let b = total_loss(4.0, Some(0.6), Some(2.0), 1.0, 1.0, all).unwrap();
        assert_eq!(b.l_total, 4.0 - 2.0);
        let cls_only = HeadFlags { cls: true, adv: false };
        assert_eq!(total_loss(4.0, Some(0.6), None, 0.0, 0.0, cls_only).unwrap().l_total, 0.6);
        let adv_only = HeadFlags { cls: false, adv: true };
        assert_eq!(total_loss(4.0, None, Some(2.0), 0.3, 0.5, adv_only).unwrap().l_total, 3.0);
        let none = HeadFlags { cls: false, adv: false };
        assert_eq!(total_loss(4.0, None, None, 0.3, 1.0, none).unwrap().l_total, 4.0);
        assert!(total_loss(4.0, None, Some(2.0), 0.5, 1.0, all).is_err());
        assert!(total_loss(4.0, Some(1.0), None, 0.5, 1.0, none).is_err());
    }

    #[test]
    fn scaler_example_and_round_trip() {
        let s = TargetScaler::fit(&[(120.0, 80.0), (140.0, 90.0)]).unwrap();
        assert_eq!((s.mean_sbp, s.mean_dbp, s.std_sbp, s.std_dbp), (130.0, 85.0, 10.0, 5.0));
        assert_eq!(s.apply(120.0, 80.0), (-1.0, -1.0));
        for (a, b) in [(97.3, 61.2), (151.0, 99.9), (0.0, -3.0)] {
            let (x, y) = s.apply(a, b);
            let (ra, rb) = s.invert(x, y);
            assert!((ra - a).abs() < 1e-9 && (rb - b).abs() < 1e-9);
        }
        assert!(TargetScaler::fit(&[(120.0, 80.0), (120.0, 80.0)]).is_err());
        assert!(TargetScaler::fit(&[(120.0, 80.0)]).is_err());
    }

    #[test]
    fn config_validation() {
        TrainConfig::default().validate().unwrap();
        for bad in [
            TrainConfig { epochs: 0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { lambda2: -1.0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
