#![allow(dead_code)]

use std::path::PathBuf;

use basinwalk_harness::config::ExperimentPlan;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

/// Setup tables of a task small enough for sub-second sweeps.
pub const TINY_SETUP: &str = r#"
[source]
kind = { type = "spirals", turns = 1.0 }
num_classes = 3
input_dim = 2
n_train = 300
n_val = 30
n_test = 150
noise_scale = 0.05
seed = 1

[target]
kind = { type = "spirals", turns = 1.0 }
num_classes = 3
input_dim = 2
n_train = 64
n_val = 16
n_test = 150
noise_scale = 0.05
transform = { rotation = 0.5, relabel = [1, 2, 0] }
seed = 2

[pretrain]
hidden_widths = [8, 8]
activation = "relu"
lr = 0.05
weight_decay = 1e-4
epochs = 10
batch_size = 32
momentum = 0.9

[finetune]
lr = 0.02
weight_decay = 2e-5
batch_size = 16
momentum = 0.9
steps = 64
"#;

/// A tiny plan; `head` holds the top-level keys.
pub fn tiny_plan_text(head: &str) -> String {
    format!("{head}\n{TINY_SETUP}")
}

pub fn tiny_plan(head: &str) -> ExperimentPlan {
    ExperimentPlan::from_toml(&tiny_plan_text(head)).unwrap()
}

pub fn cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("basinwalk").chain(args.iter().copied());
    let code = basinwalk_harness::cli::run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}
