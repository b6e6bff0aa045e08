//! Mini-batch training with Adam/AdamW, validation-driven model selection
//! and patience-based early stopping.
//!
//! Each mini-batch gradient is the mean of per-example gradients. Examples
//! are differentiated on separate graphs in parallel and then summed in
//! example order, so results do not depend on the thread count.

mod optim;
mod stopping;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::metrics::{MetricsReport, ScoredSample, DEFAULT_THRESHOLD};
use crate::models::{Architecture, Checkpoint, Example, LossContext, ModelError, Network};
use crate::num::Scalar;
use crate::tensorkit::{Graph, ParamStore, Tensor};

pub use optim::{adam_step, adamw_step, AdamHyper, Moments, Optimizer, OptimizerKind};
pub use stopping::{Decision, EarlyStopping};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("training diverged: non-finite {what} at epoch {epoch}, batch {batch}")]
    Divergence {
        epoch: usize,
        batch: usize,
        what: &'static str,
    },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("empty {0} split")]
    EmptySplit(&'static str),
    #[error("checkpoint state: {0}")]
    State(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    F1,
    Accuracy,
    RocAuc,
}

impl SelectionMetric {
    /// Value on a validation report; larger is better. A missing ROC-AUC is NaN.
    pub fn value(self, r: &MetricsReport) -> f64 {
        match self {
            SelectionMetric::F1 => r.binary.f1,
            SelectionMetric::Accuracy => r.binary.accuracy,
            SelectionMetric::RocAuc => r.roc_auc.unwrap_or(f64::NAN),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Used by AdamW only.
    pub weight_decay: f64,
    pub seed: u64,
    pub selection_metric: SelectionMetric,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            max_epochs: 200,
            patience: 10,
            learning_rate: 1e-4,
            optimizer: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.1,
            seed: 0,
            selection_metric: SelectionMetric::F1,
        }
    }
}

impl TrainConfig {
    /// Defaults for the segmentation model: 10 epochs with AdamW.
    pub fn segmentation() -> Self {
        Self {
            max_epochs: 10,
            optimizer: OptimizerKind::Adamw,
            ..Self::default()
        }
    }

    pub fn for_arch(arch: Architecture) -> Self {
        if arch.is_segmentation() {
            Self::segmentation()
        } else {
            Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive");
        }
        if self.patience > self.max_epochs {
            return bad("patience must not exceed max_epochs");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be > 0");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if !(self.eps > 0.0) || self.weight_decay < 0.0 {
            return bad("eps must be > 0 and weight_decay >= 0");
        }
        Ok(())
    }

    pub fn hyper(&self) -> AdamHyper {
        AdamHyper {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: match self.optimizer {
                OptimizerKind::Adam => 0.0,
                OptimizerKind::Adamw => self.weight_decay,
            },
        }
    }
}

/// Mini-batch index lists for one epoch. A short trailing batch of a single
/// example is dropped unless it is the only batch.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    order.shuffle(&mut rng);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batch_size > 1 && n % batch_size == 1 {
        batches.pop();
    }
    batches
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub validation: MetricsReport,
    /// `None` when the metric is undefined (e.g. ROC-AUC on one class).
    pub selection_value: Option<f64>,
    pub improved: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_value: Option<f64>,
    pub stopped_early: bool,
    /// Excluded from serialized reports so reruns stay byte-identical.
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}

impl TrainReport {
    pub fn train_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }
}

/// Class-1 scores of every example, in input order.
pub fn score_all<T: Scalar>(net: &Network<T>, examples: &[Example<T>]) -> Result<Vec<ScoredSample<T>>, ModelError> {
    examples
        .par_iter()
        .map(|ex| Ok(ScoredSample::new(net.score(ex)?, ex.label as u8)))
        .collect()
}

pub fn evaluate<T: Scalar>(net: &Network<T>, examples: &[Example<T>], split: &str) -> Result<MetricsReport, ModelError> {
    Ok(MetricsReport::from_scores(split, &score_all(net, examples)?, DEFAULT_THRESHOLD))
}

/// Mean loss and mean gradient (one per trainable parameter) over a batch.
pub fn batch_gradient<T: Scalar>(
    net: &Network<T>,
    batch: &[&Example<T>],
    ctx: LossContext,
) -> Result<(f64, Vec<Tensor<T>>), ModelError> {
    let trainable: Vec<usize> = net
        .params
        .iter()
        .enumerate()
        .filter(|(_, p)| p.trainable)
        .map(|(i, _)| i)
        .collect();
    let per_example: Vec<(f64, Vec<Option<Tensor<T>>>)> = batch
        .par_iter()
        .map(|ex| {
            let mut g = Graph::new();
            let p = net.params.bind(&mut g);
            let loss = net.example_loss(&mut g, &p, ex, ctx)?;
            let value = g.value(loss).item().as_f64();
            let mut grads = g.backward(loss);
            let vars = p.vars();
            Ok((value, trainable.iter().map(|&i| grads.take(vars[i])).collect()))
        })
        .collect::<Result<_, ModelError>>()?;

    let mut sums: Vec<Tensor<T>> = trainable
        .iter()
        .map(|&i| Tensor::zeros(net.params.iter().nth(i).unwrap().value.shape()))
        .collect();
    let mut loss = 0.0;
    for (value, grads) in &per_example {
        loss += value;
        for (s, g) in sums.iter_mut().zip(grads) {
            if let Some(g) = g {
                s.add_assign(g);
            }
        }
    }
    let inv = T::one() / T::of(batch.len() as f64);
    for s in &mut sums {
        s.scale_assign(inv);
    }
    Ok((loss / batch.len() as f64, sums))
}

/// Resumable training loop state.
#[derive(Clone, Debug)]
pub struct Trainer<T> {
    pub net: Network<T>,
    pub config: TrainConfig,
    pub optimizer: Optimizer<T>,
    pub stopper: EarlyStopping,
    pub best: Option<ParamStore<T>>,
    pub report: TrainReport,
    /// Completed epochs.
    pub epoch: usize,
    pub finished: bool,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(net: Network<T>, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let optimizer = Optimizer::new(config.optimizer, config.hyper(), &net.params);
        Ok(Self {
            stopper: EarlyStopping::new(config.patience),
            net,
            config,
            optimizer,
            best: None,
            report: TrainReport::default(),
            epoch: 0,
            finished: false,
        })
    }

    /// One pass over `train`; returns the mean batch loss.
    pub fn train_epoch(&mut self, train: &[Example<T>]) -> Result<f64, TrainError> {
        if train.is_empty() {
            return Err(TrainError::EmptySplit("train"));
        }
        let epoch = self.epoch + 1;
        let ctx = LossContext { n_train: train.len() };
        let batches = epoch_batches(train.len(), self.config.batch_size, self.config.seed, epoch);
        let mut total = 0.0;
        for (b, idx) in batches.iter().enumerate() {
            let batch: Vec<&Example<T>> = idx.iter().map(|&i| &train[i]).collect();
            let (loss, grads) = batch_gradient(&self.net, &batch, ctx)?;
            let diverged = |what| TrainError::Divergence { epoch, batch: b + 1, what };
            if !loss.is_finite() {
                return Err(diverged("loss"));
            }
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(diverged("gradient"));
            }
            self.optimizer.apply(&mut self.net.params, &grads);
            total += loss;
        }
        Ok(total / batches.len() as f64)
    }

    /// Trains one epoch, validates, and updates the best checkpoint.
    pub fn step_epoch(&mut self, train: &[Example<T>], validation: &[Example<T>]) -> Result<&EpochRecord, TrainError> {
        if validation.is_empty() {
            return Err(TrainError::EmptySplit("validation"));
        }
        let train_loss = self.train_epoch(train)?;
        self.epoch += 1;
        let report = evaluate(&self.net, validation, "validation")?;
        let value = self.config.selection_metric.value(&report);
        let decision = self.stopper.observe(self.epoch, value);
        if decision.improved {
            self.best = Some(self.net.params.clone());
            self.report.best_epoch = Some(self.epoch);
            self.report.best_value = value.is_finite().then_some(value);
        }
        self.report.epochs.push(EpochRecord {
            epoch: self.epoch,
            train_loss,
            validation: report,
            selection_value: value.is_finite().then_some(value),
            improved: decision.improved,
        });
        if decision.stop {
            self.report.stopped_early = self.epoch < self.config.max_epochs;
            self.finished = true;
        } else if self.epoch >= self.config.max_epochs {
            self.finished = true;
        }
        Ok(self.report.epochs.last().unwrap())
    }

    /// Runs epochs until stopping, `max_epochs`, or `until` completed epochs.
    pub fn run_until(
        &mut self,
        train: &[Example<T>],
        validation: &[Example<T>],
        until: usize,
        on_epoch: &mut dyn FnMut(&EpochRecord),
    ) -> Result<(), TrainError> {
        let start = Instant::now();
        while !self.finished && self.epoch < until {
            let rec = self.step_epoch(train, validation)?;
            on_epoch(rec);
        }
        self.report.wall_clock_seconds += start.elapsed().as_secs_f64();
        Ok(())
    }

    pub fn run(
        &mut self,
        train: &[Example<T>],
        validation: &[Example<T>],
        on_epoch: &mut dyn FnMut(&EpochRecord),
    ) -> Result<(), TrainError> {
        self.run_until(train, validation, usize::MAX, on_epoch)
    }

    /// The selected network. SVMs are Platt-calibrated on `validation`.
    pub fn best_network(&self, validation: &[Example<T>]) -> Result<Network<T>, TrainError> {
        let mut net = self.net.clone();
        if let Some(best) = &self.best {
            net.load_params(best)?;
        }
        if net.config.arch == Architecture::Svm {
            net.calibrate_svm(validation)?;
        }
        Ok(net)
    }

    /// Full resumable state: current parameters, optimizer moments, best parameters,
    /// stopping state and report.
    pub fn checkpoint(&self) -> Checkpoint<T> {
        let mut ck = Checkpoint::from_network(&self.net);
        for (name, mom) in &self.optimizer.moments {
            ck.extra.push((format!("opt.m.{name}"), mom.m.clone()));
            ck.extra.push((format!("opt.v.{name}"), mom.v.clone()));
        }
        if let Some(best) = &self.best {
            for p in best.iter() {
                ck.extra.push((format!("best.{}", p.name), p.value.clone()));
            }
        }
        ck.state = serde_json::json!({
            "train_config": self.config,
            "epoch": self.epoch,
            "finished": self.finished,
            "optimizer_step": self.optimizer.step,
            "stopper": self.stopper,
            "report": self.report,
        });
        ck
    }

    /// Restores a trainer from [`checkpoint`](Self::checkpoint) output.
    pub fn resume(ck: &Checkpoint<T>) -> Result<Self, TrainError> {
        let state = |key: &str| {
            ck.state
                .get(key)
                .cloned()
                .ok_or_else(|| TrainError::State(format!("missing '{key}'")))
        };
        let parse = |e: serde_json::Error| TrainError::State(e.to_string());
        let config: TrainConfig = serde_json::from_value(state("train_config")?).map_err(parse)?;
        let net = ck.to_network()?;
        let mut tr = Trainer::new(net, config)?;
        tr.epoch = serde_json::from_value(state("epoch")?).map_err(parse)?;
        tr.finished = serde_json::from_value(state("finished")?).map_err(parse)?;
        tr.optimizer.step = serde_json::from_value(state("optimizer_step")?).map_err(parse)?;
        tr.stopper = serde_json::from_value(state("stopper")?).map_err(parse)?;
        tr.report = serde_json::from_value(state("report")?).map_err(parse)?;
        for (name, mom) in &mut tr.optimizer.moments {
            for (prefix, slot) in [("opt.m.", &mut mom.m), ("opt.v.", &mut mom.v)] {
                let key = format!("{prefix}{name}");
                let t = ck
                    .extra(&key)
                    .ok_or_else(|| TrainError::State(format!("missing tensor '{key}'")))?;
                if t.shape() != slot.shape() {
                    return Err(ModelError::ShapeMismatch {
                        name: key,
                        expected: slot.shape().to_vec(),
                        found: t.shape().to_vec(),
                    }
                    .into());
                }
                *slot = t.clone();
            }
        }
        if tr.stopper.best_epoch.is_some() {
            let mut best = tr.net.params.clone();
            for p in best.iter_mut() {
                let key = format!("best.{}", p.name);
                let t = ck
                    .extra(&key)
                    .ok_or_else(|| TrainError::State(format!("missing tensor '{key}'")))?;
                if t.shape() != p.value.shape() {
                    return Err(ModelError::ShapeMismatch {
                        name: key,
                        expected: p.value.shape().to_vec(),
                        found: t.shape().to_vec(),
                    }
                    .into());
                }
                p.value = t.clone();
            }
            tr.best = Some(best);
        }
        Ok(tr)
    }
}
