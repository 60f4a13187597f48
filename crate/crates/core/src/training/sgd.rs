//! Mini-batch SGD with heavy-ball momentum and coupled L2 weight decay.
//!
//! Per step: `v <- momentum * v + g`, `theta <- theta - lr(t) * v`, where `g` already
//! contains the L2 term and `t = step / steps_per_epoch` is fractional epoch time.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::checkpoint::{chain_digest, Checkpoint, Provenance};
use super::schedule::Schedule;
use crate::datasets::LabeledData;
use crate::error::{Divergence, Error, Result};
use crate::nn::{data_loss, loss_grad_correct, ParamVector};
use crate::rng::{derive_seed, rng_from, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: Schedule,
    pub epochs: usize,
    /// Seeds the data order.
    pub seed: u64,
    pub shuffle_each_epoch: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be > 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("weight_decay must be finite and >= 0"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be > 0"));
        }
        self.schedule.validate()?;
        match self.schedule {
            Schedule::Cosine { epochs, .. } if epochs != self.epochs as f64 => {
                Err(Error::config(format!(
                    "cosine schedule spans {epochs} epochs but the run has {}",
                    self.epochs
                )))
            }
            Schedule::CyclicCosine { cycle_epochs, .. }
            | Schedule::CyclicTriangular { cycle_epochs, .. }
                if cycle_epochs.fract() != 0.0 || !self.epochs.is_multiple_of((cycle_epochs as usize).max(1)) =>
            {
                Err(Error::config(format!(
                    "cycle length {cycle_epochs} must divide the run length {}",
                    self.epochs
                )))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean mini-batch objective (cross-entropy plus penalty) over the epoch.
    pub loss: f64,
    /// Fraction of training samples classified correctly during the epoch.
    pub accuracy: f64,
    /// Full-data objective at the parameters reached after the epoch's last step.
    pub end_loss: f64,
}

/// Parameters and momentum buffer after a run.
#[derive(Debug, Clone)]
pub struct SgdRun {
    pub params: ParamVector,
    pub velocity: Vec<f64>,
    pub history: Vec<EpochStats>,
}

fn check_data(params: &ParamVector, data: &LabeledData) -> Result<()> {
    let arch = params.arch();
    if data.input_dim() != arch.input_dim {
        return Err(Error::dims(format!(
            "data has {} features, network expects {}",
            data.input_dim(),
            arch.input_dim
        )));
    }
    if data.num_classes > arch.num_classes {
        return Err(Error::dims(format!(
            "data has {} classes, network head has {}",
            data.num_classes, arch.num_classes
        )));
    }
    Ok(())
}

/// Runs SGD from `params`, optionally continuing a momentum buffer.
pub fn sgd_run(
    params: ParamVector,
    velocity: Option<Vec<f64>>,
    data: &LabeledData,
    cfg: &TrainConfig,
) -> Result<SgdRun> {
    cfg.validate()?;
    check_data(&params, data)?;
    let arch = params.arch().clone();
    let mut theta = params.into_values();
    let mut velocity = velocity.unwrap_or_else(|| vec![0.0; theta.len()]);
    if velocity.len() != theta.len() {
        return Err(Error::dims("velocity length differs from parameter count"));
    }

    let n = data.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng_from(derive_seed(cfg.seed, &[tag("shuffle")]));
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut current = ParamVector::new(arch.clone(), theta.clone())?;

    for epoch in 0..cfg.epochs {
        if cfg.shuffle_each_epoch {
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let step = epoch * steps_per_epoch + b;
            let diverged = |history: &Vec<EpochStats>| {
                Error::Diverged(Box::new(Divergence {
                    step,
                    history: history.clone(),
                }))
            };
            let batch = data.select(chunk);
            let (loss, grad, hits) =
                match loss_grad_correct(&current, batch.inputs(), &batch.labels, cfg.weight_decay) {
                    Ok(out) => out,
                    Err(Error::NonFinite(_)) => return Err(diverged(&history)),
                    Err(e) => return Err(e),
                };
            loss_sum += loss * chunk.len() as f64;
            correct += hits;

            let lr = cfg.schedule.lr_at(step as f64 / steps_per_epoch as f64);
            for ((w, v), g) in theta.iter_mut().zip(&mut velocity).zip(&grad.values) {
                *v = cfg.momentum * *v + g;
                *w -= lr * *v;
            }
            current = match ParamVector::new(arch.clone(), theta.clone()) {
                Ok(p) => p,
                Err(Error::NonFinite(_)) => return Err(diverged(&history)),
                Err(e) => return Err(e),
            };
        }
        let end_loss = data_loss(&current, data.inputs(), &data.labels)?
            + 0.5 * cfg.weight_decay * current.weight_norm_sq();
        history.push(EpochStats {
            epoch,
            loss: loss_sum / n as f64,
            accuracy: correct as f64 / n as f64,
            end_loss,
        });
    }

    Ok(SgdRun {
        params: current,
        velocity,
        history,
    })
}

/// Trains `start` on `data` with a fresh (zero) momentum buffer.
///
/// The returned checkpoint keeps the phase and seeds of `start`, records `start` as
/// its parent and extends the configuration digest chain with `cfg`.
pub fn sgd_train(
    start: &Checkpoint,
    data: &LabeledData,
    cfg: &TrainConfig,
) -> Result<(Checkpoint, Vec<EpochStats>)> {
    let run = sgd_run(start.params.clone(), None, data, cfg)?;
    let provenance = Provenance {
        config_digest: chain_digest(&start.provenance.config_digest, cfg),
        parent: Some(start.params_digest()),
        ..start.provenance.clone()
    };
    Ok((
        Checkpoint {
            params: run.params,
            provenance,
        },
        run.history,
    ))
}
