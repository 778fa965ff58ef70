//! Alternating discriminator/generator training with EMA, loss logging,
//! checkpointing and end-of-run evaluation.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::{DType, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{CheckpointData, CheckpointWriter};
use super::dataset::{synth_dataset, ToyDataset, ToyDatasetSpec};
use super::optim::{ema_update, AdamW, AdamWConfig};
use crate::config::{config_hash, ModelConfig};
use crate::diagnostics::{
    cross_scale_attention_fraction, toy_frechet_distance, trajectory_metrics, AttentionDependency,
    GaussianStats, TrajectoryMetrics,
};
use crate::discriminator::{Discriminator, MaskMode};
use crate::error::{Error, Result};
use crate::generator::{Generator, LatentBatch};
use crate::kv::KvMap;
use crate::nn::ParamStore;
use crate::objectives::{
    adversarial_loss_d, adversarial_loss_g, consistency_loss, generator_objective,
    gradient_penalty_approx, ConsistencyConfig, PenaltyConfig,
};
use crate::pyramid::ScalePyramid;

/// Optimization, regularization and bookkeeping settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub betas: (f64, f64),
    pub weight_decay: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: u64,
    pub ema_decay: f64,
    pub seed: u64,
    pub consistency: ConsistencyConfig,
    pub penalties: PenaltyConfig,
    pub discriminator_mode: MaskMode,
    /// Global gradient-norm bound; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Checkpoint period in iterations; 0 keeps only the final checkpoint.
    pub checkpoint_every: u64,
}

impl TrainConfig {
    pub fn desk_default(num_stages: usize) -> Self {
        Self {
            betas: (0.0, 0.99),
            weight_decay: 0.0,
            learning_rate: 2e-4,
            batch_size: 64,
            iterations: 5000,
            ema_decay: 0.999,
            seed: 0,
            consistency: ConsistencyConfig::default_for(num_stages.saturating_sub(1)),
            penalties: PenaltyConfig::default(),
            discriminator_mode: MaskMode::ScaleWise,
            grad_clip: Some(1.0),
            checkpoint_every: 0,
        }
    }

    pub fn validate(&self, num_stages: usize) -> Result<()> {
        let (b1, b2) = self.betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return Err(Error::config("betas must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return Err(Error::config("ema_decay must lie in [0, 1]"));
        }
        if self.batch_size == 0 || self.iterations == 0 {
            return Err(Error::config("batch_size and iterations must be positive"));
        }
        if !(self.learning_rate > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::config("learning rate must be positive and weight decay nonnegative"));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::config("grad_clip must be positive (0 disables it in config files)"));
            }
        }
        self.consistency.validate(num_stages)?;
        self.penalties.validate()?;
        self.penalties.subset_size(self.batch_size)?;
        Ok(())
    }

    pub fn adam(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.learning_rate,
            beta1: self.betas.0,
            beta2: self.betas.1,
            eps: 1e-8,
            weight_decay: self.weight_decay,
        }
    }

    const KEYS: [&'static str; 19] = [
        "beta1",
        "beta2",
        "weight_decay",
        "lr",
        "batch_size",
        "iterations",
        "ema_decay",
        "seed",
        "lambda_cons",
        "cons_weights",
        "r1_weight",
        "r1_interval",
        "r2_weight",
        "r2_interval",
        "gp_epsilon",
        "gp_fraction",
        "d_mode",
        "grad_clip",
        "checkpoint_every",
    ];

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.set("beta1", self.betas.0);
        kv.set("beta2", self.betas.1);
        kv.set("weight_decay", self.weight_decay);
        kv.set("lr", self.learning_rate);
        kv.set("batch_size", self.batch_size);
        kv.set("iterations", self.iterations);
        kv.set("ema_decay", self.ema_decay);
        kv.set("seed", self.seed);
        kv.set("lambda_cons", self.consistency.lambda_cons);
        kv.set_list("cons_weights", &self.consistency.weights);
        kv.set("r1_weight", self.penalties.r1_weight);
        kv.set("r1_interval", self.penalties.r1_interval);
        kv.set("r2_weight", self.penalties.r2_weight);
        kv.set("r2_interval", self.penalties.r2_interval);
        kv.set("gp_epsilon", self.penalties.epsilon);
        kv.set("gp_fraction", self.penalties.fraction);
        kv.set("d_mode", self.discriminator_mode);
        kv.set("grad_clip", self.grad_clip.unwrap_or(0.0));
        kv.set("checkpoint_every", self.checkpoint_every);
        kv
    }

    pub fn from_kv(kv: &KvMap, num_stages: usize) -> Result<Self> {
        kv.ensure_known(&Self::KEYS, "train section")?;
        let base = Self::desk_default(num_stages);
        let weights = match kv.get_list::<f64>("cons_weights")? {
            Some(w) => w,
            None => base.consistency.weights.clone(),
        };
        let clip: f64 = kv.get_or("grad_clip", base.grad_clip.unwrap_or(0.0))?;
        let p = &base.penalties;
        let cfg = Self {
            betas: (kv.get_or("beta1", base.betas.0)?, kv.get_or("beta2", base.betas.1)?),
            weight_decay: kv.get_or("weight_decay", base.weight_decay)?,
            learning_rate: kv.get_or("lr", base.learning_rate)?,
            batch_size: kv.get_or("batch_size", base.batch_size)?,
            iterations: kv.get_or("iterations", base.iterations)?,
            ema_decay: kv.get_or("ema_decay", base.ema_decay)?,
            seed: kv.get_or("seed", base.seed)?,
            consistency: ConsistencyConfig {
                lambda_cons: kv.get_or("lambda_cons", base.consistency.lambda_cons)?,
                weights,
            },
            penalties: PenaltyConfig {
                r1_weight: kv.get_or("r1_weight", p.r1_weight)?,
                r1_interval: kv.get_or("r1_interval", p.r1_interval)?,
                r2_weight: kv.get_or("r2_weight", p.r2_weight)?,
                r2_interval: kv.get_or("r2_interval", p.r2_interval)?,
                epsilon: kv.get_or("gp_epsilon", p.epsilon)?,
                fraction: kv.get_or("gp_fraction", p.fraction)?,
            },
            discriminator_mode: kv.get_or("d_mode", base.discriminator_mode)?,
            grad_clip: (clip > 0.0).then_some(clip),
            checkpoint_every: kv.get_or("checkpoint_every", base.checkpoint_every)?,
        };
        cfg.validate(num_stages)?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    /// Generated samples per evaluation.
    pub samples: usize,
    /// Samples whose attention maps are inspected.
    pub attention_samples: usize,
    pub chunk: usize,
    pub psi: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            samples: 512,
            attention_samples: 64,
            chunk: 128,
            psi: 1.0,
        }
    }
}

impl EvalConfig {
    const KEYS: [&'static str; 4] = ["samples", "attention_samples", "chunk", "psi"];

    fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.set("samples", self.samples);
        kv.set("attention_samples", self.attention_samples);
        kv.set("chunk", self.chunk);
        kv.set("psi", self.psi);
        kv
    }

    fn from_kv(kv: &KvMap) -> Result<Self> {
        kv.ensure_known(&Self::KEYS, "eval section")?;
        let d = Self::default();
        let cfg = Self {
            samples: kv.get_or("samples", d.samples)?,
            attention_samples: kv.get_or("attention_samples", d.attention_samples)?,
            chunk: kv.get_or("chunk", d.chunk)?,
            psi: kv.get_or("psi", d.psi)?,
        };
        if cfg.samples < 2 || cfg.chunk == 0 || cfg.attention_samples == 0 {
            return Err(Error::config("eval needs at least 2 samples and positive chunk sizes"));
        }
        Ok(cfg)
    }
}

/// Complete description of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub g: ModelConfig,
    pub d: ModelConfig,
    pub train: TrainConfig,
    pub data: ToyDatasetSpec,
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn desk_default() -> Self {
        let g = ModelConfig::desk_generator();
        Self {
            train: TrainConfig::desk_default(g.num_scales()),
            d: ModelConfig::desk_discriminator(),
            data: ToyDatasetSpec::default(),
            eval: EvalConfig::default(),
            g,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.g.validate()?;
        self.d.validate()?;
        if self.g.scale_resolutions != self.d.scale_resolutions || self.g.channels_in != self.d.channels_in {
            return Err(Error::config("generator and discriminator disagree on the scale hierarchy"));
        }
        if self.g.num_classes != self.d.num_classes {
            return Err(Error::config("generator and discriminator disagree on num_classes"));
        }
        self.data.ensure_matches(&self.g)?;
        self.train.validate(self.g.num_scales())
    }

    /// Sections `g.`, `d.`, `train.`, `data.` and `eval.` over desk defaults.
    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        kv.ensure_known(&["g.", "d.", "train.", "data.", "eval."], "experiment config")?;
        let base = Self::desk_default();
        let g = ModelConfig::from_kv(&kv.section("g"), &base.g)?;
        let d = ModelConfig::from_kv(&kv.section("d"), &base.d)?;
        let exp = Self {
            train: TrainConfig::from_kv(&kv.section("train"), g.num_scales())?,
            data: ToyDatasetSpec::from_kv(&kv.section("data"), &base.data)?,
            eval: EvalConfig::from_kv(&kv.section("eval"))?,
            g,
            d,
        };
        exp.validate()?;
        Ok(exp)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_kv(&KvMap::load(path)?)
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.insert_section("g", &self.g.to_kv());
        kv.insert_section("d", &self.d.to_kv());
        kv.insert_section("train", &self.train.to_kv());
        kv.insert_section("data", &self.data.to_kv());
        kv.insert_section("eval", &self.eval.to_kv());
        kv
    }

    pub fn hash(&self) -> String {
        config_hash(&self.to_kv())
    }
}

/// One row of the loss log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub iteration: u64,
    pub adv_g: f64,
    pub adv_d: f64,
    pub cons: f64,
    pub r1: f64,
    pub r2: f64,
    pub total_g: f64,
}

pub const LOSS_COLUMNS: &str = "iteration,adv_g,adv_d,cons,r1,r2,total_g";

impl LossRecord {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.iteration, self.adv_g, self.adv_d, self.cons, self.r1, self.r2, self.total_g
        )
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Independent seed for one purpose (`tag`) of an experiment seed.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    splitmix(splitmix(seed) ^ tag)
}

const TAG_G_INIT: u64 = 1;
const TAG_D_INIT: u64 = 2;
const TAG_STEP: u64 = 3;
const TAG_EVAL: u64 = 4;

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

fn finite(name: &str, v: f64, iteration: u64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::numeric(format!("{name} is {v} at iteration {iteration}")))
    }
}

/// End-of-run measurements on the EMA generator.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub iteration: u64,
    pub trajectory: TrajectoryMetrics,
    pub fd: f64,
    pub attention: AttentionDependency,
}

pub struct Trainer {
    pub exp: ExperimentConfig,
    pub g: Generator,
    pub d: Discriminator,
    pub ema: ParamStore,
    pub opt_g: AdamW,
    pub opt_d: AdamW,
    pub iteration: u64,
    pub dataset: ToyDataset,
}

impl Trainer {
    pub fn new(exp: ExperimentConfig) -> Result<Self> {
        exp.validate()?;
        let seed = exp.train.seed;
        let g = Generator::new(exp.g.clone(), DType::F32, derive_seed(seed, TAG_G_INIT))?;
        let d = Discriminator::new(
            exp.d.clone(),
            exp.train.discriminator_mode,
            DType::F32,
            derive_seed(seed, TAG_D_INIT),
        )?;
        let ema = g.params().deep_copy()?;
        let opt_g = AdamW::new(exp.train.adam(), g.params())?;
        let opt_d = AdamW::new(exp.train.adam(), d.params())?;
        let dataset = synth_dataset(&exp.data)?;
        Ok(Self {
            exp,
            g,
            d,
            ema,
            opt_g,
            opt_d,
            iteration: 0,
            dataset,
        })
    }

    /// Restores the full training state written by [`Trainer::save_checkpoint`].
    pub fn resume(path: impl AsRef<Path>) -> Result<Self> {
        let ck = CheckpointData::load(path.as_ref())?;
        let exp = ExperimentConfig::from_kv(&ck.meta.section("config"))?;
        let stored_hash: String = ck.meta.require("config_hash")?;
        if stored_hash != exp.hash() {
            return Err(Error::config("checkpoint config hash does not match its config"));
        }
        let mut t = Self::new(exp)?;
        t.g.params().assign_from(&ck.params(t.g.params(), "g")?)?;
        t.d.params().assign_from(&ck.params(t.d.params(), "d")?)?;
        t.ema.assign_from(&ck.params(&t.ema, "ema")?)?;
        t.opt_g = ck.optimizer(t.g.params(), "opt_g", t.exp.train.adam())?;
        t.opt_d = ck.optimizer(t.d.params(), "opt_d", t.exp.train.adam())?;
        t.iteration = ck.meta.require("iteration")?;
        Ok(t)
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut meta = KvMap::new();
        meta.set("iteration", self.iteration);
        meta.set("seed", self.exp.train.seed);
        meta.set("config_hash", self.exp.hash());
        meta.set("d_mode", self.d.mode());
        meta.set_list("layout_spatial", &self.d.layout().spatial);
        meta.insert_section("config", &self.exp.to_kv());
        CheckpointWriter {
            meta,
            stores: vec![("g", self.g.params()), ("d", self.d.params()), ("ema", &self.ema)],
            optimizers: vec![
                ("opt_g", &self.opt_g, self.g.params()),
                ("opt_d", &self.opt_d, self.d.params()),
            ],
        }
        .save(path)
    }

    /// Generator over the EMA parameters.
    pub fn ema_generator(&self) -> Result<Generator> {
        Generator::with_params(self.exp.g.clone(), self.ema.clone())
    }

    /// Random stream for iteration `t`, independent of how the run got there.
    fn step_rng(&self, t: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.exp.train.seed, TAG_STEP));
        rng.set_stream(t);
        rng
    }

    /// One discriminator update followed by one generator update.
    pub fn step(&mut self) -> Result<LossRecord> {
        let t = self.iteration;
        let tc = self.exp.train.clone();
        let gcfg = &self.exp.g;
        let mut rng = self.step_rng(t);
        let (real, labels) = self.dataset.sample_batch(&mut rng, tc.batch_size)?;
        let real = ScalePyramid::from_real(&real, gcfg)?;
        let d = &self.d;
        let logits = |p: &ScalePyramid, l: &[u32]| -> Result<Tensor> { Ok(d.discriminate(p, l)?.logits) };

        // Discriminator step: fakes come from a frozen generator.
        let z = LatentBatch::sample(&mut rng, labels.clone(), gcfg.latent_dim, DType::F32)?;
        let fake = ScalePyramid::from_stages(&self.g.generate_frozen(&z)?, gcfg)?.detach();
        let d_real = logits(&real, &labels)?;
        let d_fake = logits(&fake, &labels)?;
        let adv_d = adversarial_loss_d(&d_real, &d_fake)?;
        let mut loss_d = adv_d.clone();
        let expected = tc.penalties.subset_size(tc.batch_size)?;
        let mut r1 = 0.0;
        let mut r2 = 0.0;
        if tc.penalties.r1_due(t) {
            let p = gradient_penalty_approx(logits, &real, &labels, Some(&d_real), &tc.penalties, &mut rng)?;
            if p.samples != expected {
                return Err(Error::contract(format!("R1 used {} samples, expected {expected}", p.samples)));
            }
            r1 = finite("r1", scalar(&p.value)?, t)?;
            loss_d = (loss_d + (p.value * tc.penalties.r1_weight)?)?;
        }
        if tc.penalties.r2_due(t) {
            let p = gradient_penalty_approx(logits, &fake, &labels, Some(&d_fake), &tc.penalties, &mut rng)?;
            if p.samples != expected {
                return Err(Error::contract(format!("R2 used {} samples, expected {expected}", p.samples)));
            }
            r2 = finite("r2", scalar(&p.value)?, t)?;
            loss_d = (loss_d + (p.value * tc.penalties.r2_weight)?)?;
        }
        let adv_d_value = finite("adv_d", scalar(&adv_d)?, t)?;
        finite("discriminator loss", scalar(&loss_d)?, t)?;
        let grads = loss_d.backward()?;
        self.opt_d.step_with(self.d.params(), &grads, tc.grad_clip)?;

        // Generator step against the updated, frozen discriminator.
        let z = LatentBatch::sample(&mut rng, labels.clone(), gcfg.latent_dim, DType::F32)?;
        let stages = self.g.generate(&z)?;
        let fake = ScalePyramid::from_stages(&stages, gcfg)?;
        let d_fake = self.d.discriminate_frozen(&fake, &labels)?.logits;
        let d_real = self.d.discriminate_frozen(&real, &labels)?.logits.detach();
        let adv_g = adversarial_loss_g(&d_real, &d_fake)?;
        let cons = if tc.consistency.lambda_cons > 0.0 {
            consistency_loss(&stages.h, &tc.consistency)?
        } else {
            Tensor::zeros((), adv_g.dtype(), adv_g.device())?
        };
        let total_g = generator_objective(&adv_g, &cons, &tc.consistency)?;
        let record = LossRecord {
            iteration: t + 1,
            adv_g: finite("adv_g", scalar(&adv_g)?, t)?,
            adv_d: adv_d_value,
            cons: finite("cons", scalar(&cons)?, t)?,
            r1,
            r2,
            total_g: finite("total_g", scalar(&total_g)?, t)?,
        };
        let grads = total_g.backward()?;
        self.opt_g.step_with(self.g.params(), &grads, tc.grad_clip)?;
        ema_update(&self.ema, self.g.params(), tc.ema_decay)?;
        self.iteration += 1;
        Ok(record)
    }

    /// Trajectory metrics and Fréchet distance of the EMA generator, and the
    /// discriminator's cross-scale attention on real images.
    pub fn evaluate(&self) -> Result<Evaluation> {
        let ev = &self.exp.eval;
        let cfg = &self.exp.g;
        let g = self.ema_generator()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(0, TAG_EVAL));
        let labels: Vec<u32> = (0..ev.samples).map(|i| (i % cfg.num_classes) as u32).collect();
        let mut scales: Vec<Vec<Tensor>> = vec![Vec::new(); cfg.num_scales()];
        for chunk in labels.chunks(ev.chunk) {
            let z = LatentBatch::sample(&mut rng, chunk.to_vec(), cfg.latent_dim, DType::F32)?.with_psi(ev.psi)?;
            let p = ScalePyramid::from_stages(&g.generate_frozen(&z)?, cfg)?;
            for (acc, x) in scales.iter_mut().zip(p.x) {
                acc.push(x);
            }
        }
        let fake = ScalePyramid {
            x: scales.iter().map(|xs| Tensor::cat(xs, 0)).collect::<candle_core::Result<_>>()?,
            source: crate::pyramid::PyramidSource::Generated,
        };
        let trajectory = trajectory_metrics(&fake, cfg)?;
        let fake_stats = GaussianStats::from_tensor(&fake.x[cfg.top_scale()])?;
        let real_stats = GaussianStats::from_tensor(&self.dataset.head(ev.samples)?)?;
        let fd = toy_frechet_distance(&real_stats, &fake_stats)?;
        let n = ev.attention_samples.min(self.dataset.len());
        let real = ScalePyramid::from_real(&self.dataset.head(n)?, cfg)?;
        let d = self.d.clone().with_attention_retention(true);
        let maps = d.attention_maps(&real, &self.dataset.labels[..n])?;
        let attention = cross_scale_attention_fraction(&maps, d.layout())?;
        Ok(Evaluation {
            iteration: self.iteration,
            trajectory,
            fd,
            attention,
        })
    }
}

/// Files produced by [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub loss_csv: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub final_checkpoint: PathBuf,
    pub records: Vec<LossRecord>,
}

pub fn checkpoint_path(out_dir: &Path, iteration: u64) -> PathBuf {
    out_dir.join(format!("checkpoint_{iteration:06}.safetensors"))
}

/// Runs `trainer` until `exp.train.iterations`, appending to `loss.csv` in
/// `out_dir`. A fresh run (iteration 0) truncates the log.
pub fn run_training(trainer: &mut Trainer, out_dir: impl AsRef<Path>) -> Result<TrainOutcome> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let loss_csv = out_dir.join("loss.csv");
    let fresh = trainer.iteration == 0 || !loss_csv.exists();
    let mut log = OpenOptions::new()
        .create(true)
        .write(true)
        .append(!fresh)
        .truncate(fresh)
        .open(&loss_csv)
        .map_err(|e| Error::io(&loss_csv, e))?;
    if fresh {
        writeln!(log, "{LOSS_COLUMNS}").map_err(|e| Error::io(&loss_csv, e))?;
    }
    let total = trainer.exp.train.iterations;
    let every = trainer.exp.train.checkpoint_every;
    let mut checkpoints = Vec::new();
    let mut records = Vec::new();
    while trainer.iteration < total {
        let record = trainer.step()?;
        writeln!(log, "{}", record.to_csv_row()).map_err(|e| Error::io(&loss_csv, e))?;
        records.push(record);
        if every > 0 && trainer.iteration % every == 0 && trainer.iteration < total {
            let p = checkpoint_path(out_dir, trainer.iteration);
            trainer.save_checkpoint(&p)?;
            checkpoints.push(p);
        }
        if trainer.iteration % 100 == 0 {
            log::info!(
                "iter {} adv_d {:.4} adv_g {:.4} cons {:.4}",
                record.iteration,
                record.adv_d,
                record.adv_g,
                record.cons
            );
        }
    }
    log.flush().map_err(|e| Error::io(&loss_csv, e))?;
    let final_checkpoint = checkpoint_path(out_dir, trainer.iteration);
    trainer.save_checkpoint(&final_checkpoint)?;
    checkpoints.push(final_checkpoint.clone());
    Ok(TrainOutcome {
        loss_csv,
        checkpoints,
        final_checkpoint,
        records,
    })
}

/// Fresh training run of `exp` into `out_dir`.
pub fn train(exp: ExperimentConfig, out_dir: impl AsRef<Path>) -> Result<(Trainer, TrainOutcome)> {
    let mut trainer = Trainer::new(exp)?;
    let outcome = run_training(&mut trainer, out_dir)?;
    Ok((trainer, outcome))
}

/// Evaluation-side view of a checkpoint: the config, the EMA generator and
/// the discriminator.
pub struct LoadedModels {
    pub exp: ExperimentConfig,
    pub iteration: u64,
    pub ema_generator: Generator,
    pub discriminator: Discriminator,
}

pub fn load_models(path: impl AsRef<Path>) -> Result<LoadedModels> {
    let ck = CheckpointData::load(path.as_ref())?;
    let exp = ExperimentConfig::from_kv(&ck.meta.section("config"))?;
    let g_template = Generator::new(exp.g.clone(), DType::F32, 0)?;
    let d_template = Discriminator::new(exp.d.clone(), exp.train.discriminator_mode, DType::F32, 0)?;
    let ema = ck.params(g_template.params(), "ema")?;
    let d = ck.params(d_template.params(), "d")?;
    Ok(LoadedModels {
        iteration: ck.meta.require("iteration")?,
        ema_generator: Generator::with_params(exp.g.clone(), ema)?,
        discriminator: Discriminator::with_params(exp.d.clone(), exp.train.discriminator_mode, d)?,
        exp,
    })
}
