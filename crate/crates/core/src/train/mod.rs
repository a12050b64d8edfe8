//! Optimization: Adam, losses and L2 decay, bucketed batching, the epoch
//! loop, flat-text configuration and the per-epoch metrics log.

mod adam;
mod batch;
mod config;
mod loss;
mod metrics;

pub use adam::{adam_update, Adam};
pub use batch::{bucket_batches, epoch_seed, mix_seed};
pub use config::{KeyValues, Precision, TrainConfig};
pub use loss::{l2_penalty, loss_xent_sigmoid, loss_xent_softmax};
pub use metrics::{EpochRecord, MetricsLog};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{Gradients, ParameterSet};
use crate::tensor::Real;

/// Result of running a model on one example.
#[derive(Clone, Copy, Debug)]
pub struct Outcome {
    /// Scalar task loss.
    pub loss: Var,
    /// Number of correct predictions among `total` (tokens, or 1 per example).
    pub correct: usize,
    pub total: usize,
}

/// A model together with its per-example loss.
pub trait Objective<T: Real> {
    type Example;

    fn forward(&self, g: &mut Graph<'_, T>, example: &Self::Example) -> Result<Outcome>;

    /// Examples with equal keys are batched together.
    fn bucket(&self, _example: &Self::Example) -> usize {
        0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EpochMetrics {
    pub loss: f64,
    pub accuracy: f64,
    pub steps: usize,
}

struct Tally {
    loss: f64,
    examples: usize,
    correct: usize,
    total: usize,
}

impl Tally {
    fn new() -> Self {
        Self {
            loss: 0.0,
            examples: 0,
            correct: 0,
            total: 0,
        }
    }

    fn finish(&self, steps: usize) -> EpochMetrics {
        EpochMetrics {
            loss: self.loss / self.examples.max(1) as f64,
            accuracy: self.correct as f64 / self.total.max(1) as f64,
            steps,
        }
    }
}

/// One pass over `data`: per batch, forward and backward every example with
/// dropout on, average the gradients, add the L2 gradient and take one Adam
/// step. Returns the mean task loss and the running accuracy.
///
/// Examples are processed sequentially and gradients summed in batch order,
/// so results are reproducible bit-for-bit for a given seed.
pub fn train_epoch<T: Real, O: Objective<T>>(
    model: &O,
    params: &mut ParameterSet<T>,
    data: &[O::Example],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<EpochMetrics> {
    let keys: Vec<usize> = data.iter().map(|e| model.bucket(e)).collect();
    let batches = bucket_batches(&keys, cfg.batch_size, epoch_seed(cfg.seed, epoch))?;
    let adam = cfg.adam();
    let mut tally = Tally::new();
    for (b, batch) in batches.iter().enumerate() {
        let tag = format!("batch {b}");
        let mut grads = Gradients::zeros_like(params);
        for &i in batch {
            let seed = mix_seed(epoch_seed(cfg.seed, epoch), i as u64);
            let mut g = Graph::with_params(&*params).training(seed);
            let out = model.forward(&mut g, &data[i]).map_err(|e| e.in_stage(&tag))?;
            let loss = g.value(out.loss).item().to_f64c();
            if !loss.is_finite() {
                return Err(Error::numeric(tag, format!("loss is {loss}")));
            }
            tally.loss += loss;
            tally.examples += 1;
            tally.correct += out.correct;
            tally.total += out.total;
            let gs = g.backward(out.loss).map_err(|e| e.in_stage(&tag))?;
            grads.accumulate(&gs.params(params));
        }
        grads.scale(T::from_f64c(1.0 / batch.len() as f64));
        if cfg.l2 > 0.0 {
            let mut g = Graph::with_params(&*params);
            let pen = l2_penalty(&mut g, cfg.l2)?;
            grads.accumulate(&g.backward(pen)?.params(params));
        }
        adam_update(params, &grads, &adam)?;
    }
    Ok(tally.finish(batches.len()))
}

/// Mean loss and accuracy with dropout off.
pub fn evaluate<T: Real, O: Objective<T>>(
    model: &O,
    params: &ParameterSet<T>,
    data: &[O::Example],
) -> Result<EpochMetrics> {
    let mut tally = Tally::new();
    for (i, ex) in data.iter().enumerate() {
        let mut g = Graph::with_params(params);
        let out = model.forward(&mut g, ex).map_err(|e| e.in_stage(&format!("example {i}")))?;
        tally.loss += g.value(out.loss).item().to_f64c();
        tally.examples += 1;
        tally.correct += out.correct;
        tally.total += out.total;
    }
    Ok(tally.finish(0))
}

/// Runs `cfg.epochs` epochs, logging one [`EpochRecord`] per epoch.
/// `on_epoch` sees each record and may stop training early by returning false.
pub fn fit<T: Real, O: Objective<T>>(
    model: &O,
    params: &mut ParameterSet<T>,
    train: &[O::Example],
    dev: Option<&[O::Example]>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord) -> bool,
) -> Result<Vec<EpochRecord>> {
    let mut records = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let m = train_epoch(model, params, train, cfg, epoch)?;
        let dev_m = dev.map(|d| evaluate(model, params, d)).transpose()?;
        let eval_m = if cfg.eval_train {
            Some(evaluate(model, params, train)?)
        } else {
            None
        };
        let rec = EpochRecord {
            epoch: epoch + 1,
            train_loss: m.loss,
            train_acc: m.accuracy,
            dev_loss: dev_m.map(|d| d.loss),
            dev_acc: dev_m.map(|d| d.accuracy),
            train_acc_eval: eval_m.map(|d| d.accuracy),
        };
        let go_on = on_epoch(&rec);
        records.push(rec);
        if !go_on {
            break;
        }
    }
    Ok(records)
}
