use candle_core::DType;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::pyramid::{upsample_to_native, ScalePyramid};

/// Norms below this are treated as zero.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Stat {
    /// Mean and population standard deviation.
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
                count: 0,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        Self {
            mean,
            std: var.sqrt(),
            count: n,
        }
    }
}

/// Per-stage `delta_k`, `R_k`, `A_k` for one sample; `align[k]` is `None`
/// when a difference vector vanishes.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTrajectory {
    pub delta: Vec<f64>,
    pub rewrite: Vec<f64>,
    pub align: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryMetrics {
    pub delta: Vec<Stat>,
    pub rewrite: Vec<Stat>,
    pub align: Vec<Stat>,
    /// Samples skipped because `||x_K||` vanished.
    pub degenerate: usize,
    /// Per stage, samples whose `A_k` was undefined.
    pub align_missing: Vec<usize>,
}

impl TrajectoryMetrics {
    pub fn num_stages(&self) -> usize {
        self.delta.len()
    }

    /// Averages of the per-stage means.
    pub fn mean_delta(&self) -> f64 {
        mean_of(&self.delta)
    }

    pub fn mean_rewrite(&self) -> f64 {
        mean_of(&self.rewrite)
    }

    pub fn mean_align(&self) -> f64 {
        mean_of(&self.align)
    }
}

fn mean_of(stats: &[Stat]) -> f64 {
    stats.iter().map(|s| s.mean).sum::<f64>() / stats.len() as f64
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Metrics of one sample from its native-resolution stages `u_0..u_K`
/// (`u_k = r_K(x_k)`, `u_K = x_K`). `None` if `||x_K||` vanishes.
fn sample_metrics(up: &[Vec<f64>]) -> Option<SampleTrajectory> {
    let k = up.len() - 1;
    let top = &up[k];
    let top_norm = norm(top);
    if top_norm < DEGENERATE_NORM {
        return None;
    }
    let mut out = SampleTrajectory {
        delta: Vec::with_capacity(k),
        rewrite: Vec::with_capacity(k),
        align: Vec::with_capacity(k),
    };
    for i in 0..k {
        let remaining = sub(top, &up[i]);
        let step = sub(&up[i + 1], &up[i]);
        let (rn, sn) = (norm(&remaining), norm(&step));
        out.delta.push(rn / top_norm);
        out.rewrite.push(sn / top_norm);
        out.align.push(if rn < DEGENERATE_NORM || sn < DEGENERATE_NORM {
            None
        } else {
            Some((dot(&step, &remaining) / (sn * rn)).clamp(-1.0, 1.0))
        });
    }
    Some(out)
}

/// Upsamples every scale to the native resolution and returns, per sample,
/// the flattened stages.
fn native_stages(pyramid: &ScalePyramid, cfg: &ModelConfig) -> Result<Vec<Vec<Vec<f64>>>> {
    pyramid.check(cfg)?;
    let b = pyramid.batch_size()?;
    let mut per_sample = vec![Vec::with_capacity(pyramid.num_scales()); b];
    for x in &pyramid.x {
        let up = upsample_to_native(&x.to_dtype(DType::F64)?, cfg)?;
        let rows: Vec<Vec<f64>> = up.reshape((b, ()))?.to_vec2()?;
        for (s, row) in rows.into_iter().enumerate() {
            per_sample[s].push(row);
        }
    }
    Ok(per_sample)
}

/// Per-sample trajectory values; degenerate samples are `None`.
pub fn per_sample_trajectories(
    pyramid: &ScalePyramid,
    cfg: &ModelConfig,
) -> Result<Vec<Option<SampleTrajectory>>> {
    Ok(native_stages(pyramid, cfg)?
        .iter()
        .map(|stages| sample_metrics(stages))
        .collect())
}

/// Batch statistics of `delta_k`, `R_k` and `A_k` for `k = 0..K-1`.
pub fn trajectory_metrics(pyramid: &ScalePyramid, cfg: &ModelConfig) -> Result<TrajectoryMetrics> {
    let samples = per_sample_trajectories(pyramid, cfg)?;
    let k = cfg.top_scale();
    let degenerate = samples.iter().filter(|s| s.is_none()).count();
    let valid: Vec<&SampleTrajectory> = samples.iter().flatten().collect();
    if valid.is_empty() {
        return Err(Error::numeric("every sample has a vanishing final-stage norm"));
    }
    if degenerate > 0 {
        log::warn!("{degenerate} degenerate samples excluded from trajectory metrics");
    }
    let mut metrics = TrajectoryMetrics {
        delta: Vec::with_capacity(k),
        rewrite: Vec::with_capacity(k),
        align: Vec::with_capacity(k),
        degenerate,
        align_missing: Vec::with_capacity(k),
    };
    for i in 0..k {
        let delta: Vec<f64> = valid.iter().map(|s| s.delta[i]).collect();
        let rewrite: Vec<f64> = valid.iter().map(|s| s.rewrite[i]).collect();
        let align: Vec<f64> = valid.iter().filter_map(|s| s.align[i]).collect();
        metrics.align_missing.push(valid.len() - align.len());
        metrics.delta.push(Stat::from_values(&delta));
        metrics.rewrite.push(Stat::from_values(&rewrite));
        metrics.align.push(Stat::from_values(&align));
    }
    Ok(metrics)
}
