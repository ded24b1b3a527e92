use serde::Serialize;

use super::labels::{aux_labels, AttributeVector, ATTRIBUTE_COUNT, ATTRIBUTE_NAMES};
use super::loss::{loss_on_tape, total_loss, LossWeights, Targets};
use super::model::{Predictions, SignNet};
use super::SignNetError;
use crate::metrics::MetricReport;
use crate::tensorad::{AdamW, AdamWConfig, Rng, Tape, Tensor};
use crate::Scalar;

/// One network input triple with its labels. Each image is `[3, side, side]`.
#[derive(Debug, Clone)]
pub struct Sample<T> {
    pub whole: Tensor<T>,
    pub body: Tensor<T>,
    pub edge: Tensor<T>,
    pub labels: AttributeVector,
}

/// Samples stacked along a leading batch axis.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub whole: Tensor<T>,
    pub body: Tensor<T>,
    pub edge: Tensor<T>,
    pub labels: Vec<AttributeVector>,
}

pub fn stack_batch<T: Scalar>(samples: &[&Sample<T>]) -> Result<Batch<T>, SignNetError> {
    let first = samples.first().ok_or(SignNetError::EmptySplit("batch"))?;
    let stack = |get: fn(&Sample<T>) -> &Tensor<T>| -> Result<Tensor<T>, SignNetError> {
        let shape = get(first).shape().to_vec();
        let mut data = Vec::with_capacity(samples.len() * get(first).numel());
        for s in samples {
            if get(s).shape() != shape.as_slice() {
                return Err(SignNetError::Input(format!(
                    "sample shape {:?} differs from {shape:?}",
                    get(s).shape()
                )));
            }
            data.extend_from_slice(get(s).data());
        }
        let mut full = vec![samples.len()];
        full.extend(shape);
        Ok(Tensor::new(&full, data)?)
    };
    Ok(Batch {
        whole: stack(|s| &s.whole)?,
        body: stack(|s| &s.body)?,
        edge: stack(|s| &s.edge)?,
        labels: samples.iter().map(|s| s.labels).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Drives the per-epoch shuffle.
    pub seed: u64,
    pub weight_decay: f64,
    /// Stop after this many optimizer steps; the learning-rate schedule
    /// decays over `min(max_steps, epochs * batches)`.
    pub max_steps: Option<usize>,
    /// Stop once the selection split reaches this average F1.
    pub stop_at_f1: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            batch_size: 32,
            epochs: 30,
            seed: 0,
            weight_decay: 0.01,
            max_steps: None,
            stop_at_f1: None,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub split: &'static str,
    /// In label order.
    pub f1: [f64; ATTRIBUTE_COUNT],
    pub average_f1: f64,
    pub loss: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub best_epoch: usize,
    pub best_f1: f64,
    pub steps: usize,
    pub epochs_run: usize,
    pub logs: Vec<EpochLog>,
}

/// Predictions, metric report and mean loss over `samples`.
pub fn evaluate<T: Scalar>(
    net: &SignNet<T>,
    samples: &[Sample<T>],
    weights: &LossWeights<T>,
    batch_size: usize,
) -> Result<(Vec<Predictions<T>>, MetricReport, f64), SignNetError> {
    if samples.is_empty() {
        return Err(SignNetError::EmptySplit("evaluation"));
    }
    let mut preds = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample<T>> = chunk.iter().collect();
        let b = stack_batch(&refs)?;
        preds.extend(net.predict(&b.whole, &b.body, &b.edge)?);
    }
    let rule = net.config().fur;
    let mut loss = 0.0;
    for (p, s) in preds.iter().zip(samples) {
        loss += total_loss(p, &s.labels, &aux_labels(&s.labels, rule), weights)?.as_f64();
    }
    let pred_bits: Vec<[bool; ATTRIBUTE_COUNT]> = preds.iter().map(Predictions::attr_bits).collect();
    let truth: Vec<[bool; ATTRIBUTE_COUNT]> = samples.iter().map(|s| s.labels.0).collect();
    let scores: Vec<Vec<f64>> = preds
        .iter()
        .map(|p| p.attr_probs().iter().map(|v| v.as_f64()).collect())
        .collect();
    let report = MetricReport::build(&ATTRIBUTE_NAMES, &pred_bits, &truth, Some(&scores))?;
    Ok((preds, report, loss / samples.len() as f64))
}

fn epoch_log(epoch: usize, split: &'static str, r: &MetricReport, loss: f64, steps: usize) -> EpochLog {
    EpochLog {
        epoch,
        split,
        f1: std::array::from_fn(|j| r.attributes[j].f1),
        average_f1: r.average_f1,
        loss,
        steps,
    }
}

/// AdamW with linear learning-rate decay to zero; keeps the parameters of
/// the epoch with the best average F1 at threshold 0.5 on `val` (or on
/// `train` when no validation split is given).
pub fn train<T: Scalar>(
    net: &mut SignNet<T>,
    train: &[Sample<T>],
    val: Option<&[Sample<T>]>,
    weights: &LossWeights<T>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainReport, SignNetError> {
    if train.is_empty() {
        return Err(SignNetError::EmptySplit("training"));
    }
    if val.is_some_and(|v| v.is_empty()) {
        return Err(SignNetError::EmptySplit("validation"));
    }
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(SignNetError::Config("batch size and learning rate must be positive".into()));
    }
    weights.validate()?;
    let per_epoch = train.len().div_ceil(cfg.batch_size);
    let mut planned = cfg.epochs * per_epoch;
    if let Some(m) = cfg.max_steps {
        planned = planned.min(m);
    }
    let mut opt = AdamW::new(
        net.params(),
        AdamWConfig {
            weight_decay: cfg.weight_decay,
            ..Default::default()
        },
    );
    let rule = net.config().fur;
    let shuffler = Rng::new(cfg.seed);
    let mut report = TrainReport {
        best_epoch: 0,
        best_f1: f64::NEG_INFINITY,
        steps: 0,
        epochs_run: 0,
        logs: Vec::new(),
    };
    let mut best = net.params().clone();
    let eval_batch = cfg.batch_size.max(32);

    for epoch in 1..=cfg.epochs {
        if report.steps >= planned {
            break;
        }
        let mut order: Vec<usize> = (0..train.len()).collect();
        shuffler.derive(epoch as u64).shuffle(&mut order);
        for idx in order.chunks(cfg.batch_size) {
            if report.steps >= planned {
                break;
            }
            let refs: Vec<&Sample<T>> = idx.iter().map(|&i| &train[i]).collect();
            let batch = stack_batch(&refs)?;
            let mut tape = Tape::new();
            let bound = net.params().bind(&mut tape);
            let (w, b, e) = (
                tape.constant(batch.whole),
                tape.constant(batch.body),
                tape.constant(batch.edge),
            );
            let out = net.forward(&mut tape, &bound, w, b, e)?;
            let loss = loss_on_tape(&mut tape, &out, &Targets::new(&batch.labels, rule), weights)?;
            let grads = tape.backward(loss)?;
            let g: Vec<Tensor<T>> = bound.vars().iter().map(|&v| grads.wrt(v)).collect();
            let lr = cfg.lr * (1.0 - report.steps as f64 / planned as f64);
            opt.step(net.params_mut(), &g, lr)?;
            report.steps += 1;
        }
        report.epochs_run = epoch;

        let (_, tr, tr_loss) = evaluate(net, train, weights, eval_batch)?;
        let log = epoch_log(epoch, "train", &tr, tr_loss, report.steps);
        on_epoch(&log);
        report.logs.push(log);
        let mut score = tr.average_f1;
        if let Some(v) = val {
            let (_, vr, v_loss) = evaluate(net, v, weights, eval_batch)?;
            let log = epoch_log(epoch, "val", &vr, v_loss, report.steps);
            on_epoch(&log);
            report.logs.push(log);
            score = vr.average_f1;
        }
        if score > report.best_f1 {
            report.best_f1 = score;
            report.best_epoch = epoch;
            best = net.params().clone();
        }
        if cfg.stop_at_f1.is_some_and(|t| score >= t) {
            break;
        }
    }
    net.set_params(best)?;
    Ok(report)
}
