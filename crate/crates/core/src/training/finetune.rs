//! Source pre-training, head replacement, fine-tuning and hyperparameter search.

use serde::{Deserialize, Serialize};

use super::checkpoint::{chain_digest, Checkpoint, Phase, Provenance};
use super::schedule::Schedule;
use super::sgd::{sgd_train, EpochStats, TrainConfig};
use crate::datasets::{split_validation, LabeledData};
use crate::error::{Error, Result};
use crate::metrics::accuracy;
use crate::nn::{forward, init_params, reinit_layer, Activation, ArchDescriptor, ParamVector};
use crate::rng::{derive_seed, tag};

/// Number of whole epochs covering `target_steps` mini-batches, rounded down.
pub fn epochs_from_steps(n_samples: usize, batch_size: usize, target_steps: usize) -> Result<usize> {
    if n_samples == 0 || batch_size == 0 || target_steps == 0 {
        return Err(Error::config("epochs_from_steps arguments must be positive"));
    }
    let epochs = (target_steps as u128 * batch_size as u128 / n_samples as u128) as usize;
    if epochs < 1 {
        return Err(Error::config(format!(
            "{target_steps} steps of {batch_size} cover less than one epoch of {n_samples} samples"
        )));
    }
    Ok(epochs)
}

/// Optimizer settings of a cosine-scheduled run (the "x1" fine-tuning recipe).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
}

impl FinetuneConfig {
    pub fn train_config(&self, order_seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            schedule: Schedule::Cosine {
                lr: self.lr,
                epochs: self.epochs as f64,
            },
            epochs: self.epochs,
            seed: order_seed,
            shuffle_each_epoch: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub hidden_widths: Vec<usize>,
    pub activation: Activation,
    #[serde(flatten)]
    pub optimizer: FinetuneConfig,
}

fn head_seed(seed: u64) -> u64 {
    derive_seed(seed, &[tag("head")])
}

fn order_seed(seed: u64) -> u64 {
    derive_seed(seed, &[tag("order")])
}

/// Trains a fresh network on the source task.
pub fn pretrain(source: &LabeledData, cfg: &PretrainConfig, seed: u64) -> Result<Checkpoint> {
    let arch = ArchDescriptor::new(
        source.input_dim(),
        cfg.hidden_widths.clone(),
        source.num_classes,
        cfg.activation,
    )?;
    let init = Checkpoint {
        params: init_params(&arch, derive_seed(seed, &[tag("init")]))?,
        provenance: Provenance {
            phase: Phase::Pretrain,
            source_seed: seed,
            finetune_seed: None,
            config_digest: chain_digest("init", &(&arch, seed)),
            parent: None,
        },
    };
    let (ck, _) = sgd_train(&init, source, &cfg.optimizer.train_config(order_seed(seed)))?;
    Ok(ck)
}

/// Copies every layer but the last and puts a freshly initialized head with
/// `num_target_classes` outputs on top. The head depends only on `(seed, shape)`.
pub fn replace_head(pretrained: &Checkpoint, num_target_classes: usize, seed: u64) -> Result<Checkpoint> {
    let source_arch = pretrained.params.arch();
    let arch = source_arch.with_num_classes(num_target_classes);
    arch.validate()?;
    let shapes = arch.layers();
    let head = *shapes.last().expect("at least one layer");

    let mut values = vec![0.0; arch.param_count()];
    values[..head.weight_offset].copy_from_slice(&pretrained.params.values()[..head.weight_offset]);
    reinit_layer(&mut values, &arch, shapes.len() - 1, head_seed(seed));

    Ok(Checkpoint {
        params: ParamVector::new(arch, values)?,
        provenance: Provenance {
            phase: Phase::FinetuneStart,
            source_seed: pretrained.provenance.source_seed,
            finetune_seed: Some(seed),
            config_digest: chain_digest(&pretrained.provenance.config_digest, &("head", num_target_classes, seed)),
            parent: Some(pretrained.params_digest()),
        },
    })
}

/// Head replacement followed by a cosine-scheduled run; `seed` drives both the
/// head initialization and the data order.
pub fn fine_tune(pretrained: &Checkpoint, train: &LabeledData, cfg: &FinetuneConfig, seed: u64) -> Result<Checkpoint> {
    fine_tune_with_history(pretrained, train, cfg, seed).map(|(ck, _)| ck)
}

pub fn fine_tune_with_history(
    pretrained: &Checkpoint,
    train: &LabeledData,
    cfg: &FinetuneConfig,
    seed: u64,
) -> Result<(Checkpoint, Vec<EpochStats>)> {
    let start = replace_head(pretrained, train.num_classes, seed)?;
    let (mut ck, history) = sgd_train(&start, train, &cfg.train_config(order_seed(seed)))?;
    ck.provenance.phase = Phase::Finetune;
    Ok((ck, history))
}

/// Same budget as [`fine_tune`] but from a random initialization of `arch`.
pub fn train_from_scratch(
    arch: &ArchDescriptor,
    train: &LabeledData,
    cfg: &FinetuneConfig,
    seed: u64,
) -> Result<Checkpoint> {
    let start = Checkpoint {
        params: init_params(arch, derive_seed(seed, &[tag("scratch")]))?,
        provenance: Provenance {
            phase: Phase::FinetuneStart,
            source_seed: seed,
            finetune_seed: Some(seed),
            config_digest: chain_digest("scratch", &(arch, seed)),
            parent: None,
        },
    };
    let (mut ck, _) = sgd_train(&start, train, &cfg.train_config(order_seed(seed)))?;
    ck.provenance.phase = Phase::Finetune;
    Ok(ck)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub weight_decay: f64,
    pub lr: f64,
    /// `None` when the run diverged.
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub best_weight_decay: f64,
    pub best_lr: f64,
    pub table: Vec<GridCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub weight_decays: Vec<f64>,
    pub lrs: Vec<f64>,
    /// Validation : training ratio is `1 : val_ratio`.
    pub val_ratio: usize,
    /// Seed of the train/validation split.
    pub split_seed: u64,
    /// Fine-tuning seed shared by every cell.
    pub seed: u64,
}

pub const WEIGHT_DECAY_GRID: [f64; 3] = [2e-5, 1e-4, 5e-4];
pub const LR_GRID: [f64; 8] = [0.0005, 0.001, 0.0025, 0.005, 0.01, 0.025, 0.05, 0.1];

/// Picks the validation-best `(weight_decay, lr)` by fine-tuning one model per cell
/// on a training subset. Ties go to the smaller learning rate, then the smaller decay.
pub fn grid_search(
    pretrained: &Checkpoint,
    train: &LabeledData,
    grid: &GridSpec,
    template: &FinetuneConfig,
) -> Result<GridSearchResult> {
    if grid.weight_decays.is_empty() || grid.lrs.is_empty() {
        return Err(Error::config("grid-search grids must be non-empty"));
    }
    let (sub_train, val) = split_validation(train, grid.val_ratio, grid.split_seed)?;
    let mut table = Vec::with_capacity(grid.weight_decays.len() * grid.lrs.len());
    for &weight_decay in &grid.weight_decays {
        for &lr in &grid.lrs {
            let cfg = FinetuneConfig {
                lr,
                weight_decay,
                ..template.clone()
            };
            let val_accuracy = match fine_tune(pretrained, &sub_train, &cfg, grid.seed) {
                Ok(ck) => {
                    let pred = forward(&ck.params, val.inputs())?;
                    Some(accuracy(&pred.probs, &val.labels))
                }
                Err(Error::Diverged(_)) => None,
                Err(e) => return Err(e),
            };
            table.push(GridCell {
                weight_decay,
                lr,
                val_accuracy,
            });
        }
    }
    select_best(table)
}

fn select_best(table: Vec<GridCell>) -> Result<GridSearchResult> {
    let best = table
        .iter()
        .filter_map(|c| c.val_accuracy.map(|a| (a, c)))
        .min_by(|(a1, c1), (a2, c2)| {
            a2.total_cmp(a1)
                .then(c1.lr.total_cmp(&c2.lr))
                .then(c1.weight_decay.total_cmp(&c2.weight_decay))
        })
        .map(|(_, c)| (c.weight_decay, c.lr))
        .ok_or(Error::AllDiverged)?;
    Ok(GridSearchResult {
        best_weight_decay: best.0,
        best_lr: best.1,
        table,
    })
}
