//! Analysis instruments: trajectory misalignment, cross-scale attention
//! dependency and a pixel-space Fréchet distance.

mod attention;
mod emit;
mod frechet;
mod trajectory;

pub use attention::{cross_scale_attention_fraction, AttentionDependency};
pub use emit::{emit_metrics, read_metrics_csv, render_metric_plots, MetricsRow, METRICS_COLUMNS};
pub use frechet::{toy_frechet_distance, GaussianStats};
pub use trajectory::{per_sample_trajectories, trajectory_metrics, SampleTrajectory, Stat, TrajectoryMetrics, DEGENERATE_NORM};
