//! Toy data, optimization, checkpoints, the training loop and ablations.

pub mod ablation;
pub mod checkpoint;
pub mod dataset;
pub mod optim;
pub mod sample;
pub mod train;

pub use ablation::{aggregation_verdict, consistency_verdict, run_ablation, AblationReport, AggregationVerdict, ConsistencyVerdict, RunResult, Sweep};
pub use checkpoint::{CheckpointData, CheckpointWriter};
pub use dataset::{synth_dataset, ToyDataset, ToyDatasetSpec, ToyRecipe};
pub use optim::{ema_update, global_norm, AdamW, AdamWConfig};
pub use sample::save_grid;
pub use train::{
    derive_seed, load_models, run_training, train, EvalConfig, LoadedModels, Evaluation, ExperimentConfig, LossRecord, TrainConfig,
    TrainOutcome, Trainer, LOSS_COLUMNS,
};
