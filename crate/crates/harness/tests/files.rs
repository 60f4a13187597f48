mod common;

use basinwalk::ensembling::EnsembleMethod;
use basinwalk::training::fine_tune;
use basinwalk_harness::bbck::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
use basinwalk_harness::config::{load_setup, ExperimentPlan, PresetFile, RegimeName};
use basinwalk_harness::HarnessError;
use common::{fixture, tiny_plan, tiny_plan_text};
use proptest::prelude::*;

#[test]
fn trained_checkpoints_round_trip_through_files() {
    let plan = tiny_plan("method = \"local_de\"\nseed = 0\npretrain_seeds = [1]\n");
    let source = plan.setup.source_data().unwrap();
    let target = plan.setup.target_data().unwrap();
    let pre = basinwalk::training::pretrain(&source.train, &plan.setup.pretrain, 1).unwrap();
    let ck = fine_tune(&pre, &target.train, &plan.setup.base_config().unwrap(), 2).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("member.bbck");
    save_checkpoint(&ck, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.provenance, ck.provenance);
    assert_eq!(back.params.arch(), ck.params.arch());
    for (a, b) in back.params.values().iter().zip(ck.params.values()) {
        assert_eq!(a.to_bits(), (*b as f32 as f64).to_bits());
    }
    let again = dir.path().join("again.bbck");
    save_checkpoint(&back, &again).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());

    let mut bytes = std::fs::read(&path).unwrap();
    bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
    assert!(matches!(decode_checkpoint(&bytes), Err(HarnessError::UnsupportedVersion(2))));
    assert!(load_checkpoint(&dir.path().join("missing.bbck")).is_err());
}

#[test]
fn committed_fixtures_parse() {
    let plan = ExperimentPlan::load(&fixture("reference_plan.toml")).unwrap();
    assert_eq!(plan.method, EnsembleMethod::Sse);
    assert_eq!(plan.cells().len(), plan.lr_multipliers.len() * plan.epoch_multipliers.len());
    let setup = load_setup(&fixture("reference_plan.toml")).unwrap();
    assert_eq!(setup, plan.setup);
    assert_eq!(setup.base_config().unwrap().epochs, 64);

    let presets = PresetFile::load(&fixture("regime_presets.toml")).unwrap();
    assert_eq!(presets.preset.len(), 21);
    for dataset in ["reference", "cifar10", "cifar100", "sun397"] {
        let row = presets.select(dataset, "supervised");
        let names: Vec<_> = row.iter().map(|p| p.name).collect();
        assert_eq!(names, vec![RegimeName::MoreLocal, RegimeName::Optimal, RegimeName::MoreSemiLocal]);
    }
    assert_eq!(presets.select("cifar10", "self_supervised").len(), 3);
    let optimal = presets.find("cifar100", "supervised", RegimeName::Optimal).unwrap();
    assert_eq!((optimal.lr_multiplier, optimal.epoch_multiplier), (8.0, 0.125));
    let semi = presets.find("sun397", "supervised", RegimeName::MoreSemiLocal).unwrap();
    assert_eq!(semi.lr_multiplier, 64.0);
}

#[test]
fn bad_plans_are_rejected() {
    let cases = [
        "method = \"sse\"\nlr_multipliers = [3.0]\nepoch_multipliers = [1.0]\nseed = 0\npretrain_seeds = [1]\n",
        "method = \"sse\"\nlr_multipliers = [1.0]\nepoch_multipliers = [0.3]\nseed = 0\npretrain_seeds = [1]\n",
        "method = \"sse\"\nseed = 0\npretrain_seeds = [1]\n",
        "method = \"local_de\"\nseed = 0\npretrain_seeds = [1, 1]\n",
        "method = \"global_de\"\nsize = 3\nseed = 0\npretrain_seeds = [1, 2]\n",
        "method = \"local_de\"\nsize = 6\nseed = 0\npretrain_seeds = [1]\n",
        "method = \"local_de\"\nrepeats = 0\nseed = 0\npretrain_seeds = [1]\n",
        "method = \"local_de\"\ngrid_size = 2\nseed = 0\npretrain_seeds = [1]\n",
        "method = \"bagging\"\nseed = 0\npretrain_seeds = [1]\n",
        "method = \"local_de\"\npretrain_seeds = [1]\n",
    ];
    for head in cases {
        assert!(ExperimentPlan::from_toml(&tiny_plan_text(head)).is_err(), "accepted:\n{head}");
    }
    // x0.125 of the tiny task's 16 epochs is 2 epochs: still a valid cycle.
    assert!(ExperimentPlan::from_toml(&tiny_plan_text(
        "method = \"fge\"\nlr_multipliers = [1.0]\nepoch_multipliers = [0.125]\nseed = 0\npretrain_seeds = [1]\n"
    ))
    .is_ok());
    let unknown = "[[preset]]\ndataset = \"x\"\npretraining = \"y\"\nname = \"optimal\"\nlr_multiplier = 1.0\nepoch_multiplier = 1.0\ncolor = 1\n";
    assert!(PresetFile::from_toml(unknown).is_err());
    let off_grid = "[[preset]]\ndataset = \"x\"\npretraining = \"y\"\nname = \"optimal\"\nlr_multiplier = 3.0\nepoch_multiplier = 1.0\n";
    assert!(PresetFile::from_toml(off_grid).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn any_checkpoint_survives_encoding(seed in any::<u64>(), hidden in prop::collection::vec(1usize..6, 0..3), k in 2usize..5) {
        let arch = basinwalk::nn::ArchDescriptor::new(3, hidden, k, basinwalk::nn::Activation::Tanh).unwrap();
        let ck = basinwalk::training::Checkpoint {
            params: basinwalk::nn::init_params(&arch, seed).unwrap(),
            provenance: basinwalk::training::Provenance {
                phase: basinwalk::training::Phase::Finetune,
                source_seed: seed,
                finetune_seed: Some(seed ^ 1),
                config_digest: "c".into(),
                parent: None,
            },
        };
        let bytes = encode_checkpoint(&ck).unwrap();
        let back = decode_checkpoint(&bytes).unwrap();
        prop_assert_eq!(encode_checkpoint(&back).unwrap(), bytes.clone());
        for cut in [0, 3, 8, 12, bytes.len() - 1] {
            prop_assert!(decode_checkpoint(&bytes[..cut]).is_err());
        }
    }
}
