#![allow(dead_code)]

use weight_friction::config::{ExperimentConfig, TuningKind};
use weight_friction::continual::{ContinualRunConfig, MethodTag};
use weight_friction::experiment::{build_sequence, run_config_for};

/// desk1 shrunk to a size that trains in well under a second.
pub fn tiny_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset("desk1").unwrap();
    cfg.seeds = vec![1, 2];
    cfg.data.examples_per_task = 200;
    cfg.data.test_examples_per_task = 100;
    cfg.model.hidden = vec![16];
    cfg.train.epochs = vec![2, 2];
    cfg.friction.tuning = TuningKind::None;
    cfg.ewc.fisher_samples = 100;
    cfg
}

pub fn tiny_run(method: MethodTag) -> ContinualRunConfig {
    let cfg = tiny_config();
    let seq = build_sequence(&cfg).unwrap();
    run_config_for(&cfg, method, &seq, None).unwrap()
}
