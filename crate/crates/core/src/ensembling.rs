//! Ensemble construction and evaluation.
//!
//! Four constructors:
//! - Local DE: `n` fine-tunings of one pre-trained checkpoint, differing only in the
//!   fine-tuning seed.
//! - Global DE: one fine-tuning per independently pre-trained checkpoint.
//! - SSE / FGE: start from one fine-tuned network and keep training with a cyclic
//!   cosine (SSE) or triangular (FGE) schedule, snapshotting at every cycle end.
//!
//! Predictions are combined by averaging class probabilities.

use std::collections::HashSet;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::datasets::{ood_suite_with_strength, LabeledData};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, ece, nll, ECE_BINS};
use crate::nn::{forward, PredictionBatch};
use crate::rng::{derive_seed, tag};
use crate::training::{
    chain_digest, fine_tune, sgd_run, Checkpoint, FinetuneConfig, Phase, Provenance, Schedule,
    TrainConfig,
};

pub const DEFAULT_MAX_ENSEMBLE_SIZE: usize = 5;
pub const LR_MULTIPLIERS: [f64; 10] = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 24.0, 32.0, 64.0];
pub const EPOCH_MULTIPLIERS: [f64; 5] = [0.125, 0.25, 0.5, 0.75, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleMethod {
    LocalDe,
    GlobalDe,
    Sse,
    Fge,
}

impl EnsembleMethod {
    pub fn name(self) -> &'static str {
        match self {
            EnsembleMethod::LocalDe => "local_de",
            EnsembleMethod::GlobalDe => "global_de",
            EnsembleMethod::Sse => "sse",
            EnsembleMethod::Fge => "fge",
        }
    }

    pub fn is_cyclic(self) -> bool {
        matches!(self, EnsembleMethod::Sse | EnsembleMethod::Fge)
    }
}

impl std::fmt::Display for EnsembleMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnsembleMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "local_de" => Ok(EnsembleMethod::LocalDe),
            "global_de" => Ok(EnsembleMethod::GlobalDe),
            "sse" => Ok(EnsembleMethod::Sse),
            "fge" => Ok(EnsembleMethod::Fge),
            other => Err(Error::config(format!("unknown ensemble method {other:?}"))),
        }
    }
}

/// Cycle length and peak learning rate as multiples of the x1 fine-tuning recipe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleConfig {
    pub lr_multiplier: f64,
    pub epoch_multiplier: f64,
    pub base_lr: f64,
    pub base_epochs: usize,
}

impl CycleConfig {
    pub fn new(lr_multiplier: f64, epoch_multiplier: f64, base_lr: f64, base_epochs: usize) -> Result<Self> {
        let cfg = Self {
            lr_multiplier,
            epoch_multiplier,
            base_lr,
            base_epochs,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cycle_peak_lr() > 0.0 && self.cycle_peak_lr().is_finite()) {
            return Err(Error::config(format!(
                "cycle peak lr must be > 0 (x{} of {})",
                self.lr_multiplier, self.base_lr
            )));
        }
        if !(self.epoch_multiplier > 0.0) || self.cycle_epochs() < 1 {
            return Err(Error::config(format!(
                "x{} of {} epochs rounds down to an empty cycle",
                self.epoch_multiplier, self.base_epochs
            )));
        }
        Ok(())
    }

    pub fn cycle_epochs(&self) -> usize {
        (self.epoch_multiplier * self.base_epochs as f64).floor() as usize
    }

    pub fn cycle_peak_lr(&self) -> f64 {
        self.lr_multiplier * self.base_lr
    }

    pub fn schedule(&self, method: EnsembleMethod) -> Result<Schedule> {
        let peak_lr = self.cycle_peak_lr();
        let cycle_epochs = self.cycle_epochs() as f64;
        match method {
            EnsembleMethod::Sse => Ok(Schedule::CyclicCosine { peak_lr, cycle_epochs }),
            EnsembleMethod::Fge => Ok(Schedule::CyclicTriangular { peak_lr, cycle_epochs }),
            other => Err(Error::config(format!("{other} has no cycle schedule"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleRun {
    pub method: EnsembleMethod,
    /// Training order; `members[0]` is the first fine-tuned network.
    pub members: Vec<Checkpoint>,
    pub cycle_cfg: Option<CycleConfig>,
    pub run_seed: u64,
    /// Cycle (1-based) that diverged; the run holds the snapshots taken before it.
    pub diverged_at_cycle: Option<usize>,
}

impl EnsembleRun {
    /// Assembles a deep ensemble from already fine-tuned members and checks the
    /// provenance structure of its method.
    pub fn from_members(method: EnsembleMethod, members: Vec<Checkpoint>, run_seed: u64) -> Result<Self> {
        let run = Self {
            method,
            members,
            cycle_cfg: None,
            run_seed,
            diverged_at_cycle: None,
        };
        run.validate(usize::MAX)?;
        Ok(run)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn validate(&self, max_size: usize) -> Result<()> {
        if self.members.is_empty() {
            return Err(Error::Empty("ensemble has no members".into()));
        }
        if self.members.len() > max_size {
            return Err(Error::config(format!(
                "{} members exceed the maximum ensemble size {max_size}",
                self.members.len()
            )));
        }
        let arch = self.members[0].params.arch();
        if self.members.iter().any(|m| m.params.arch() != arch) {
            return Err(Error::ArchMismatch("ensemble members differ in architecture".into()));
        }
        match self.method {
            EnsembleMethod::LocalDe => {
                let s = self.members[0].provenance.source_seed;
                if self.members.iter().any(|m| m.provenance.source_seed != s) {
                    return Err(Error::config("local DE members must share one source checkpoint"));
                }
            }
            EnsembleMethod::GlobalDe => {
                let seeds: HashSet<u64> = self.members.iter().map(|m| m.provenance.source_seed).collect();
                if seeds.len() != self.members.len() {
                    return Err(Error::config("global DE members need distinct source checkpoints"));
                }
            }
            EnsembleMethod::Sse | EnsembleMethod::Fge => {
                for (k, pair) in self.members.windows(2).enumerate() {
                    let parent = pair[0].params_digest();
                    if pair[1].provenance.parent.as_deref() != Some(parent.as_str())
                        || pair[1].provenance.phase != Phase::Cycle(k + 1)
                    {
                        return Err(Error::config(format!(
                            "snapshot {} was not trained from snapshot {}",
                            k + 2,
                            k + 1
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

fn member_seed(run_seed: u64, index: usize) -> u64 {
    run_seed.wrapping_add(index as u64)
}

/// `n` fine-tunings of `pretrained`; member `i` uses seed `run_seed + i`.
pub fn build_local_de(
    pretrained: &Checkpoint,
    n: usize,
    train: &LabeledData,
    base: &FinetuneConfig,
    run_seed: u64,
) -> Result<EnsembleRun> {
    if n == 0 {
        return Err(Error::config("ensemble size must be >= 1"));
    }
    let members = (0..n)
        .map(|i| fine_tune(pretrained, train, base, member_seed(run_seed, i)))
        .collect::<Result<Vec<_>>>()?;
    EnsembleRun::from_members(EnsembleMethod::LocalDe, members, run_seed)
}

/// One fine-tuning per checkpoint in `pretrained`; member `i` uses seed `run_seed + i`.
pub fn build_global_de(
    pretrained: &[Checkpoint],
    train: &LabeledData,
    base: &FinetuneConfig,
    run_seed: u64,
) -> Result<EnsembleRun> {
    if pretrained.is_empty() {
        return Err(Error::config("global DE needs at least one pre-trained checkpoint"));
    }
    let sources: HashSet<u64> = pretrained.iter().map(|p| p.provenance.source_seed).collect();
    if sources.len() != pretrained.len() {
        return Err(Error::config("duplicate source seeds in global DE"));
    }
    let members = pretrained
        .iter()
        .enumerate()
        .map(|(i, p)| fine_tune(p, train, base, member_seed(run_seed, i)))
        .collect::<Result<Vec<_>>>()?;
    EnsembleRun::from_members(EnsembleMethod::GlobalDe, members, run_seed)
}

/// Runs `n - 1` cycles starting from the fine-tuned network `first`.
///
/// The momentum buffer starts at zero and carries over between cycles. If a cycle
/// diverges the run stops there and `diverged_at_cycle` is set.
pub fn build_cyclic(
    first: &Checkpoint,
    method: EnsembleMethod,
    cycle_cfg: &CycleConfig,
    n: usize,
    train: &LabeledData,
    base: &FinetuneConfig,
    run_seed: u64,
) -> Result<EnsembleRun> {
    if n == 0 {
        return Err(Error::config("ensemble size must be >= 1"));
    }
    cycle_cfg.validate()?;
    let schedule = cycle_cfg.schedule(method)?;
    let mut members = vec![first.clone()];
    let mut velocity = None;
    let mut diverged_at_cycle = None;

    for k in 1..n {
        let prev = members.last().expect("non-empty");
        let cfg = TrainConfig {
            batch_size: base.batch_size,
            momentum: base.momentum,
            weight_decay: base.weight_decay,
            schedule,
            epochs: cycle_cfg.cycle_epochs(),
            seed: derive_seed(run_seed, &[tag("cycle"), k as u64]),
            shuffle_each_epoch: true,
        };
        match sgd_run(prev.params.clone(), velocity.take(), train, &cfg) {
            Ok(run) => {
                let provenance = Provenance {
                    phase: Phase::Cycle(k),
                    config_digest: chain_digest(&prev.provenance.config_digest, &cfg),
                    parent: Some(prev.params_digest()),
                    ..prev.provenance.clone()
                };
                velocity = Some(run.velocity);
                members.push(Checkpoint {
                    params: run.params,
                    provenance,
                });
            }
            Err(Error::Diverged(_)) => {
                diverged_at_cycle = Some(k);
                break;
            }
            Err(e) => return Err(e),
        }
    }

    Ok(EnsembleRun {
        method,
        members,
        cycle_cfg: Some(*cycle_cfg),
        run_seed,
        diverged_at_cycle,
    })
}

fn member_probs(members: &[Checkpoint], inputs: ArrayView2<'_, f64>) -> Result<Vec<Array2<f64>>> {
    if members.is_empty() {
        return Err(Error::Empty("no ensemble members".into()));
    }
    let arch = members[0].params.arch();
    if members.iter().any(|m| m.params.arch() != arch) {
        return Err(Error::ArchMismatch("ensemble members differ in architecture".into()));
    }
    members
        .iter()
        .map(|m| forward(&m.params, inputs).map(|p| p.probs))
        .collect()
}

/// Running means `mean(probs[..k])` for `k = 1..=n`, accumulated in member order.
fn prefix_means(probs: &[Array2<f64>]) -> Vec<Array2<f64>> {
    let mut sum = Array2::<f64>::zeros(probs[0].raw_dim());
    probs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            sum += p;
            &sum / (i + 1) as f64
        })
        .collect()
}

/// Arithmetic mean of the members' softmax outputs.
pub fn ensemble_predict(members: &[Checkpoint], inputs: ArrayView2<'_, f64>) -> Result<PredictionBatch> {
    let probs = member_probs(members, inputs)?;
    Ok(PredictionBatch {
        probs: prefix_means(&probs).pop().expect("non-empty"),
        labels: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrefixMetrics {
    pub size: usize,
    pub accuracy: f64,
    pub nll: f64,
    pub ece: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMetrics {
    /// Entry `k - 1` is the ensemble of the first `k` members.
    pub prefixes: Vec<PrefixMetrics>,
    pub member_accuracy: Vec<f64>,
    pub member_nll: Vec<f64>,
}

fn check_test(run: &EnsembleRun, test: &LabeledData) -> Result<()> {
    let arch = run
        .members
        .first()
        .ok_or_else(|| Error::Empty("ensemble has no members".into()))?
        .params
        .arch();
    if arch.input_dim != test.input_dim() || arch.num_classes < test.num_classes {
        return Err(Error::dims(format!(
            "test data ({} features, {} classes) does not fit the members ({} inputs, {} classes)",
            test.input_dim(),
            test.num_classes,
            arch.input_dim,
            arch.num_classes
        )));
    }
    Ok(())
}

pub fn evaluate_ensemble(run: &EnsembleRun, test: &LabeledData) -> Result<EnsembleMetrics> {
    check_test(run, test)?;
    let probs = member_probs(&run.members, test.inputs())?;
    let prefixes = prefix_means(&probs)
        .iter()
        .enumerate()
        .map(|(i, p)| PrefixMetrics {
            size: i + 1,
            accuracy: accuracy(p, &test.labels),
            nll: nll(p, &test.labels),
            ece: ece(p, &test.labels, ECE_BINS),
        })
        .collect();
    Ok(EnsembleMetrics {
        prefixes,
        member_accuracy: probs.iter().map(|p| accuracy(p, &test.labels)).collect(),
        member_nll: probs.iter().map(|p| nll(p, &test.labels)).collect(),
    })
}

/// Per-prefix accuracy averaged uniformly over the 30 corrupted copies of `clean_test`.
pub fn evaluate_ood(run: &EnsembleRun, clean_test: &LabeledData, seed: u64) -> Result<Vec<f64>> {
    evaluate_ood_with_strength(run, clean_test, seed, 1.0)
}

/// [`evaluate_ood`] with every corruption magnitude scaled by `strength`.
pub fn evaluate_ood_with_strength(
    run: &EnsembleRun,
    clean_test: &LabeledData,
    seed: u64,
    strength: f64,
) -> Result<Vec<f64>> {
    check_test(run, clean_test)?;
    let suite = ood_suite_with_strength(clean_test, seed, strength)?;
    let mut totals = vec![0.0; run.members.len()];
    for (_, data) in &suite {
        let probs = member_probs(&run.members, data.inputs())?;
        for (t, p) in totals.iter_mut().zip(prefix_means(&probs)) {
            *t += accuracy(&p, &data.labels);
        }
    }
    Ok(totals.into_iter().map(|t| t / suite.len() as f64).collect())
}
