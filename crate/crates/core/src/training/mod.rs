//! Optimizer, learning-rate schedules and the fine-tuning protocol.

mod checkpoint;
mod finetune;
mod schedule;
mod sgd;

pub use checkpoint::{chain_digest, digest_bytes, Checkpoint, Phase, Provenance};
pub use finetune::{
    epochs_from_steps, fine_tune, fine_tune_with_history, grid_search, pretrain, replace_head,
    train_from_scratch, FinetuneConfig, GridCell, GridSearchResult, GridSpec, PretrainConfig,
    LR_GRID, WEIGHT_DECAY_GRID,
};
pub use schedule::Schedule;
pub use sgd::{sgd_run, sgd_train, EpochStats, SgdRun, TrainConfig};
