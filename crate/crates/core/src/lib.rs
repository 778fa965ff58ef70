//! Multi-scale transformer GAN with scale-wise masked discrimination,
//! cross-scale consistency regularization, trajectory diagnostics and an
//! analytic compute ledger.

pub mod compute;
pub mod config;
pub mod diagnostics;
pub mod discriminator;
pub mod error;
pub mod generator;
pub mod harness;
pub mod kv;
pub mod nn;
pub mod objectives;
pub mod pyramid;

pub use compute::{
    forward_flops, forward_flops_breakdown, inference_flops, ledger_rows, load_ledger, total_training_flops,
    training_step_flops, ComputeModel, CostSymbol, LedgerRow, LedgerTable, Recipe, TrainingBudget,
};
pub use config::{ModelConfig, ModelKind};
pub use diagnostics::{
    cross_scale_attention_fraction, emit_metrics, toy_frechet_distance, trajectory_metrics,
    AttentionDependency, GaussianStats, TrajectoryMetrics,
};
pub use discriminator::{
    build_scale_mask, read_attention_dump, write_attention_dump, Discriminator, DiscriminatorOutput, MaskMode,
    ScaleMask, ScaleTokenLayout,
};
pub use error::{Error, Result};
pub use generator::{truncate_latent, Generator, LatentBatch, StageOutputs};
pub use kv::KvMap;
pub use nn::ParamStore;
pub use objectives::{
    adversarial_loss_d, adversarial_loss_g, consistency_loss, generator_objective, gradient_penalty_approx,
    ConsistencyConfig, PenaltyConfig,
};
pub use pyramid::{build_pyramids, resize_image, resize_to_scale, PyramidInput, PyramidSource, ScalePyramid};
