//! TOML-backed setup, experiment plans and regime presets.

use std::path::Path;

use basinwalk::datasets::{generate_task, TaskSplits, TaskSpec};
use basinwalk::ensembling::{
    CycleConfig, EnsembleMethod, DEFAULT_MAX_ENSEMBLE_SIZE, EPOCH_MULTIPLIERS, LR_MULTIPLIERS,
};
use basinwalk::landscape::DEFAULT_GRID_SIZE;
use basinwalk::training::{
    epochs_from_steps, FinetuneConfig, GridSpec, PretrainConfig, LR_GRID, WEIGHT_DECAY_GRID,
};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// The x1 fine-tuning recipe. The epoch count follows from a step budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneBudget {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub steps: usize,
}

impl FinetuneBudget {
    pub fn config(&self, n_train: usize) -> Result<FinetuneConfig> {
        Ok(FinetuneConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            epochs: epochs_from_steps(n_train, self.batch_size, self.steps)?,
            batch_size: self.batch_size,
            momentum: self.momentum,
        })
    }
}

fn default_weight_decays() -> Vec<f64> {
    WEIGHT_DECAY_GRID.to_vec()
}

fn default_lrs() -> Vec<f64> {
    LR_GRID.to_vec()
}

fn default_val_ratio() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneConfig {
    #[serde(default = "default_weight_decays")]
    pub weight_decays: Vec<f64>,
    #[serde(default = "default_lrs")]
    pub lrs: Vec<f64>,
    #[serde(default = "default_val_ratio")]
    pub val_ratio: usize,
    #[serde(default)]
    pub split_seed: u64,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            weight_decays: default_weight_decays(),
            lrs: default_lrs(),
            val_ratio: default_val_ratio(),
            split_seed: 0,
        }
    }
}

impl TuneConfig {
    pub fn grid(&self, seed: u64) -> GridSpec {
        GridSpec {
            weight_decays: self.weight_decays.clone(),
            lrs: self.lrs.clone(),
            val_ratio: self.val_ratio,
            split_seed: self.split_seed,
            seed,
        }
    }
}

/// Tasks and training recipes shared by every command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Setup {
    pub source: TaskSpec,
    pub target: TaskSpec,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneBudget,
    #[serde(default)]
    pub tune: TuneConfig,
}

impl Setup {
    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        self.target.validate()?;
        if self.source.input_dim != self.target.input_dim {
            return Err(HarnessError::Plan(
                "source and target tasks must share the input dimension".into(),
            ));
        }
        self.finetune.config(self.target.n_train)?;
        Ok(())
    }

    pub fn source_data(&self) -> Result<TaskSplits> {
        Ok(generate_task(&self.source)?)
    }

    pub fn target_data(&self) -> Result<TaskSplits> {
        Ok(generate_task(&self.target)?)
    }

    /// The x1 fine-tuning config for the full target training set.
    pub fn base_config(&self) -> Result<FinetuneConfig> {
        self.finetune.config(self.target.n_train)
    }
}

fn default_size() -> usize {
    5
}

fn default_max_size() -> usize {
    DEFAULT_MAX_ENSEMBLE_SIZE
}

fn default_repeats() -> usize {
    1
}

fn default_grid_size() -> usize {
    DEFAULT_GRID_SIZE
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    #[serde(flatten)]
    pub setup: Setup,
    pub method: EnsembleMethod,
    /// Ignored by deep-ensemble methods, which always run the x1 recipe.
    #[serde(default)]
    pub lr_multipliers: Vec<f64>,
    #[serde(default)]
    pub epoch_multipliers: Vec<f64>,
    #[serde(default = "default_size")]
    pub size: usize,
    #[serde(default = "default_max_size")]
    pub max_size: usize,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    pub seed: u64,
    /// Source seeds of the pre-trained checkpoints. Repeat `r` of a single-source
    /// method uses entry `r % len`; Global DE uses the first `size` entries.
    pub pretrain_seeds: Vec<u64>,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    #[serde(default = "default_true")]
    pub ood: bool,
}

/// One point of a sweep. Deep-ensemble cells carry multipliers 1 and 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub lr_multiplier: f64,
    pub epoch_multiplier: f64,
}

fn in_grid(value: f64, grid: &[f64]) -> bool {
    grid.contains(&value)
}

impl ExperimentPlan {
    pub fn from_toml(text: &str) -> Result<Self> {
        let plan: Self = toml::from_str(text)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Plan(m));
        self.setup.validate()?;
        if self.size == 0 || self.size > self.max_size {
            return bad(format!("size {} must be in 1..={}", self.size, self.max_size));
        }
        if self.repeats == 0 {
            return bad("repeats must be >= 1".into());
        }
        if self.pretrain_seeds.is_empty() {
            return bad("pretrain_seeds must not be empty".into());
        }
        let mut seen = self.pretrain_seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.pretrain_seeds.len() {
            return bad("pretrain_seeds must be distinct".into());
        }
        if self.method == EnsembleMethod::GlobalDe && self.pretrain_seeds.len() < self.size {
            return bad(format!(
                "global_de of size {} needs at least {} pretrain seeds",
                self.size, self.size
            ));
        }
        if self.grid_size < 3 {
            return bad("grid_size must be >= 3".into());
        }
        if self.method.is_cyclic() {
            if self.lr_multipliers.is_empty() || self.epoch_multipliers.is_empty() {
                return bad("cyclic methods need lr_multipliers and epoch_multipliers".into());
            }
            if let Some(m) = self.lr_multipliers.iter().find(|&&m| !in_grid(m, &LR_MULTIPLIERS)) {
                return bad(format!("lr multiplier {m} is not in {LR_MULTIPLIERS:?}"));
            }
            if let Some(m) = self.epoch_multipliers.iter().find(|&&m| !in_grid(m, &EPOCH_MULTIPLIERS)) {
                return bad(format!("epoch multiplier {m} is not in {EPOCH_MULTIPLIERS:?}"));
            }
            let base = self.setup.base_config()?;
            for cell in self.cells() {
                CycleConfig::new(cell.lr_multiplier, cell.epoch_multiplier, base.lr, base.epochs)?;
            }
        }
        Ok(())
    }

    /// Sweep cells in row-major order over (lr multiplier, epoch multiplier).
    pub fn cells(&self) -> Vec<Cell> {
        if !self.method.is_cyclic() {
            return vec![Cell {
                lr_multiplier: 1.0,
                epoch_multiplier: 1.0,
            }];
        }
        self.lr_multipliers
            .iter()
            .flat_map(|&lr_multiplier| {
                self.epoch_multipliers.iter().map(move |&epoch_multiplier| Cell {
                    lr_multiplier,
                    epoch_multiplier,
                })
            })
            .collect()
    }
}

/// Loads only the setup tables from any plan or setup file.
pub fn load_setup(path: &Path) -> Result<Setup> {
    let setup: Setup = toml::from_str(&std::fs::read_to_string(path)?)?;
    setup.validate()?;
    Ok(setup)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeName {
    MoreLocal,
    Optimal,
    MoreSemiLocal,
}

impl RegimeName {
    pub fn name(self) -> &'static str {
        match self {
            RegimeName::MoreLocal => "more_local",
            RegimeName::Optimal => "optimal",
            RegimeName::MoreSemiLocal => "more_semi_local",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimePreset {
    pub dataset: String,
    pub pretraining: String,
    pub name: RegimeName,
    pub lr_multiplier: f64,
    pub epoch_multiplier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetFile {
    pub preset: Vec<RegimePreset>,
}

impl PresetFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        let file: Self = toml::from_str(text)?;
        for p in &file.preset {
            if !in_grid(p.lr_multiplier, &LR_MULTIPLIERS) || !in_grid(p.epoch_multiplier, &EPOCH_MULTIPLIERS) {
                return Err(HarnessError::Plan(format!(
                    "preset {}/{}/{} has multipliers outside the sweep grids",
                    p.dataset,
                    p.pretraining,
                    p.name.name()
                )));
            }
        }
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Presets of one (dataset, pre-training) row in file order.
    pub fn select(&self, dataset: &str, pretraining: &str) -> Vec<&RegimePreset> {
        self.preset
            .iter()
            .filter(|p| p.dataset == dataset && p.pretraining == pretraining)
            .collect()
    }

    pub fn find(&self, dataset: &str, pretraining: &str, name: RegimeName) -> Option<&RegimePreset> {
        self.select(dataset, pretraining).into_iter().find(|p| p.name == name)
    }
}
