#![allow(dead_code)]

use basinwalk::datasets::{generate_task, AffineTransform, TaskKind, TaskSpec, TaskSplits};
use basinwalk::nn::Activation;
use basinwalk::training::{pretrain, Checkpoint, FinetuneConfig, PretrainConfig};

/// A small rotated-spirals transfer pair that trains in well under a second.
pub struct Toy {
    pub source: TaskSplits,
    pub target: TaskSplits,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
}

pub fn toy() -> Toy {
    let source = TaskSpec {
        kind: TaskKind::Spirals { turns: 1.0 },
        num_classes: 3,
        input_dim: 2,
        n_train: 600,
        n_val: 30,
        n_test: 300,
        noise_scale: 0.05,
        transform: None,
        geometry_seed: 0,
        seed: 11,
    };
    let target = TaskSpec {
        n_train: 120,
        seed: 12,
        transform: Some(AffineTransform {
            rotation: 0.4,
            translation: vec![],
            relabel: Some(vec![2, 0, 1]),
        }),
        ..source.clone()
    };
    Toy {
        source: generate_task(&source).unwrap(),
        target: generate_task(&target).unwrap(),
        pretrain: PretrainConfig {
            hidden_widths: vec![16, 16],
            activation: Activation::Relu,
            optimizer: FinetuneConfig {
                lr: 0.05,
                weight_decay: 1e-4,
                epochs: 20,
                batch_size: 32,
                momentum: 0.9,
            },
        },
        finetune: FinetuneConfig {
            lr: 0.02,
            weight_decay: 2e-5,
            epochs: 15,
            batch_size: 16,
            momentum: 0.9,
        },
    }
}

impl Toy {
    pub fn pretrained(&self, seed: u64) -> Checkpoint {
        pretrain(&self.source.train, &self.pretrain, seed).unwrap()
    }
}
