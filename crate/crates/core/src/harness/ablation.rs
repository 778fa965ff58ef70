//! Multi-seed variant sweeps over an experiment config.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::train::{train, Evaluation, ExperimentConfig};
use crate::error::{Error, Result};
use crate::kv::KvMap;

/// Seeds plus named config overrides.
///
/// ```text
/// seeds = 0, 1, 2
/// variant.cons.train.lambda_cons = 0.1
/// variant.nocons.train.lambda_cons = 0
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub seeds: Vec<u64>,
    pub variants: BTreeMap<String, KvMap>,
}

impl Sweep {
    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        kv.ensure_known(&["seeds", "variant."], "sweep")?;
        let seeds: Vec<u64> = kv.get_list("seeds")?.unwrap_or_else(|| vec![0]);
        if seeds.is_empty() {
            return Err(Error::config("sweep needs at least one seed"));
        }
        let mut variants: BTreeMap<String, KvMap> = BTreeMap::new();
        for (key, value) in kv.section("variant").iter() {
            let (name, rest) = key
                .split_once('.')
                .ok_or_else(|| Error::config(format!("variant key `{key}` has no field")))?;
            variants.entry(name.to_string()).or_default().set(rest, value);
        }
        if variants.is_empty() {
            return Err(Error::config("sweep declares no variants"));
        }
        Ok(Self { seeds, variants })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_kv(&KvMap::load(path)?)
    }

    pub fn num_runs(&self) -> usize {
        self.seeds.len() * self.variants.len()
    }

    /// Experiment config of one run.
    pub fn resolve(&self, base: &KvMap, variant: &str, seed: u64) -> Result<ExperimentConfig> {
        let overrides = self
            .variants
            .get(variant)
            .ok_or_else(|| Error::argument(format!("unknown variant `{variant}`")))?;
        let mut kv = base.clone();
        kv.merge(overrides);
        kv.set("train.seed", seed);
        ExperimentConfig::from_kv(&kv)
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub variant: String,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub outcome: std::result::Result<Evaluation, String>,
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub runs: Vec<RunResult>,
}

pub const REPORT_COLUMNS: &str =
    "variant,seed,iteration,delta_mean,rewrite_mean,align_mean,fd,attn_mean,attn_per_layer,status";

impl AblationReport {
    pub fn incomplete(&self) -> bool {
        self.runs.iter().any(|r| r.outcome.is_err())
    }

    pub fn evaluations(&self, variant: &str) -> Vec<&Evaluation> {
        self.runs
            .iter()
            .filter(|r| r.variant == variant)
            .filter_map(|r| r.outcome.as_ref().ok())
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{REPORT_COLUMNS}\n");
        for r in &self.runs {
            match &r.outcome {
                Ok(e) => {
                    let layers: Vec<String> = e.attention.per_layer.iter().map(f64::to_string).collect();
                    out.push_str(&format!(
                        "{},{},{},{},{},{},{},{},{},ok\n",
                        r.variant,
                        r.seed,
                        e.iteration,
                        e.trajectory.mean_delta(),
                        e.trajectory.mean_rewrite(),
                        e.trajectory.mean_align(),
                        e.fd,
                        e.attention.mean(),
                        layers.join(";")
                    ));
                }
                Err(msg) => {
                    let msg = msg.replace([',', '\n'], " ");
                    out.push_str(&format!("{},{},,,,,,,,failed: {msg}\n", r.variant, r.seed));
                }
            }
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Trains every `(variant, seed)` pair into `out_dir/<variant>/seed_<n>` and
/// evaluates the final EMA generator. A failing run is recorded and the
/// sweep continues.
pub fn run_ablation(base: &KvMap, sweep: &Sweep, out_dir: impl AsRef<Path>) -> Result<AblationReport> {
    let out_dir = out_dir.as_ref();
    // Surface config errors before spending time on training.
    for name in sweep.variants.keys() {
        for &seed in &sweep.seeds {
            sweep.resolve(base, name, seed)?;
        }
    }
    let mut runs = Vec::with_capacity(sweep.num_runs());
    for name in sweep.variants.keys() {
        for &seed in &sweep.seeds {
            let exp = sweep.resolve(base, name, seed)?;
            let dir = out_dir.join(name).join(format!("seed_{seed}"));
            log::info!("ablation run {name} seed {seed}");
            let outcome = train(exp, &dir)
                .and_then(|(trainer, _)| trainer.evaluate())
                .map_err(|e| e.to_string());
            if let Err(msg) = &outcome {
                log::warn!("run {name} seed {seed} failed: {msg}");
            }
            runs.push(RunResult {
                variant: name.clone(),
                seed,
                out_dir: dir,
                outcome,
            });
        }
    }
    let report = AblationReport { runs };
    report.write_csv(out_dir.join("report.csv"))?;
    Ok(report)
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

/// With-versus-without consistency comparison, averaged over seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistencyVerdict {
    pub delta_with: f64,
    pub delta_without: f64,
    pub rewrite_with: f64,
    pub rewrite_without: f64,
    pub align_with: f64,
    pub align_without: f64,
    pub fd_with: f64,
    pub fd_without: f64,
}

impl ConsistencyVerdict {
    pub fn delta_reduction(&self) -> f64 {
        1.0 - self.delta_with / self.delta_without
    }

    pub fn rewrite_reduction(&self) -> f64 {
        1.0 - self.rewrite_with / self.rewrite_without
    }

    pub fn fd_change(&self) -> f64 {
        self.fd_with / self.fd_without - 1.0
    }

    /// Both reductions at least `min_reduction`, alignment up, and the
    /// Fréchet distance at most `max_fd_increase` worse.
    pub fn passes(&self, min_reduction: f64, max_fd_increase: f64) -> bool {
        self.delta_reduction() >= min_reduction
            && self.rewrite_reduction() >= min_reduction
            && self.align_with > self.align_without
            && self.fd_change() <= max_fd_increase
    }
}

pub fn consistency_verdict(report: &AblationReport, with: &str, without: &str) -> Result<ConsistencyVerdict> {
    let (a, b) = (report.evaluations(with), report.evaluations(without));
    if a.is_empty() || b.is_empty() {
        return Err(Error::argument(format!("no finished runs for `{with}` or `{without}`")));
    }
    Ok(ConsistencyVerdict {
        delta_with: mean(a.iter().map(|e| e.trajectory.mean_delta())),
        delta_without: mean(b.iter().map(|e| e.trajectory.mean_delta())),
        rewrite_with: mean(a.iter().map(|e| e.trajectory.mean_rewrite())),
        rewrite_without: mean(b.iter().map(|e| e.trajectory.mean_rewrite())),
        align_with: mean(a.iter().map(|e| e.trajectory.mean_align())),
        align_without: mean(b.iter().map(|e| e.trajectory.mean_align())),
        fd_with: mean(a.iter().map(|e| e.fd)),
        fd_without: mean(b.iter().map(|e| e.fd)),
    })
}

/// Aggregated-mode versus scale-wise comparison, averaged over seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregationVerdict {
    pub attn_aggregated: f64,
    pub attn_scale_wise: f64,
    pub fd_aggregated: f64,
    pub fd_scale_wise: f64,
}

impl AggregationVerdict {
    pub fn passes(&self, min_attention: f64) -> bool {
        self.attn_aggregated >= min_attention && self.fd_aggregated >= self.fd_scale_wise
    }
}

pub fn aggregation_verdict(
    report: &AblationReport,
    aggregated: &str,
    scale_wise: &str,
) -> Result<AggregationVerdict> {
    let (a, s) = (report.evaluations(aggregated), report.evaluations(scale_wise));
    if a.is_empty() || s.is_empty() {
        return Err(Error::argument(format!(
            "no finished runs for `{aggregated}` or `{scale_wise}`"
        )));
    }
    Ok(AggregationVerdict {
        attn_aggregated: mean(a.iter().map(|e| e.attention.mean())),
        attn_scale_wise: mean(s.iter().map(|e| e.attention.mean())),
        fd_aggregated: mean(a.iter().map(|e| e.fd)),
        fd_scale_wise: mean(s.iter().map(|e| e.fd)),
    })
}
