use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use scalegan::compute::{forward_flops_breakdown, ledger_rows, load_ledger, render_csv, render_text, LedgerTable};
use scalegan::diagnostics::{emit_metrics, render_metric_plots, trajectory_metrics};
use scalegan::discriminator::write_attention_dump;
use scalegan::harness::{
    load_models, run_ablation, run_training, save_grid, ExperimentConfig, Sweep, Trainer,
};
use scalegan::{cross_scale_attention_fraction, KvMap, LatentBatch, ModelConfig, ScalePyramid};

#[derive(Parser)]
#[command(name = "scalegan", version, about = "Train, sample and analyze multi-scale transformer GANs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one experiment; resumes when --resume is given.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, env = "SCALEGAN_OUT_DIR")]
        out: Option<PathBuf>,
        /// Continue from a checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Override the iteration count.
        #[arg(long)]
        iterations: Option<u64>,
    },
    /// Write a PNG grid of EMA samples for one class.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "class")]
        class: u32,
        #[arg(long, default_value_t = 16)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        psi: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Evaluate a checkpoint and write trajectory metrics as CSV.
    Metrics {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also render the metric panels to this PNG.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Print trajectory or cross-scale attention diagnostics.
    Diagnose {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, value_enum)]
        mode: DiagnoseMode,
        /// Samples to analyze.
        #[arg(long, default_value_t = 64)]
        n: usize,
        /// Write the raw attention maps to this file (attention mode).
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Forward FLOPs of a model config, or a compute ledger table.
    Flops {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "4")]
        table: String,
        #[arg(long)]
        csv: bool,
    },
    /// Run a multi-seed variant sweep.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        sweep: PathBuf,
        #[arg(long, env = "SCALEGAN_OUT_DIR")]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DiagnoseMode {
    Trajectory,
    Attention,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Ok(threads) = std::env::var("SCALEGAN_THREADS") {
        std::env::set_var("RAYON_NUM_THREADS", threads);
    }
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn out_dir(out: Option<PathBuf>, exp: &ExperimentConfig) -> PathBuf {
    out.unwrap_or_else(|| PathBuf::from("runs").join(format!("{}_seed{}", exp.hash(), exp.train.seed)))
}

fn load_experiment(path: &Path, seed: Option<u64>, iterations: Option<u64>) -> Result<ExperimentConfig> {
    let mut kv = KvMap::load(path)?;
    if let Some(s) = seed {
        kv.set("train.seed", s);
    }
    if let Some(n) = iterations {
        kv.set("train.iterations", n);
    }
    Ok(ExperimentConfig::from_kv(&kv)?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            seed,
            out,
            resume,
            iterations,
        } => {
            let exp = load_experiment(&config, seed, iterations)?;
            let mut trainer = match resume {
                Some(ck) => {
                    let mut t = Trainer::resume(&ck)?;
                    if let Some(n) = iterations {
                        t.exp.train.iterations = n;
                    }
                    t
                }
                None => Trainer::new(exp)?,
            };
            let dir = out_dir(out, &trainer.exp);
            let outcome = run_training(&mut trainer, &dir)?;
            println!("loss log: {}", outcome.loss_csv.display());
            println!("checkpoint: {}", outcome.final_checkpoint.display());
        }
        Command::Sample {
            ckpt,
            class,
            n,
            psi,
            out,
            seed,
        } => {
            let models = load_models(&ckpt)?;
            let cfg = &models.exp.g;
            if class as usize >= cfg.num_classes {
                bail!("class {class} outside [0, {})", cfg.num_classes);
            }
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
            let z = LatentBatch::sample(&mut rng, vec![class; n], cfg.latent_dim, candle_core::DType::F32)?
                .with_psi(psi)?;
            let out_images = models.ema_generator.generate_frozen(&z)?;
            let cols = (n as f64).sqrt().ceil() as usize;
            save_grid(out_images.final_image(), cols, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Metrics { ckpt, out, plot } => {
            let trainer = Trainer::resume(&ckpt)?;
            let eval = trainer.evaluate()?;
            let series = vec![(eval.iteration, eval.trajectory.clone())];
            emit_metrics(&series, &out)?;
            if let Some(p) = plot {
                render_metric_plots(&series, &p)?;
            }
            println!("fd {}", eval.fd);
            println!("attention_fraction {}", eval.attention.mean());
            println!("wrote {}", out.display());
        }
        Command::Diagnose { ckpt, mode, n, dump } => {
            let models = load_models(&ckpt)?;
            let cfg = &models.exp.g;
            let labels: Vec<u32> = (0..n).map(|i| (i % cfg.num_classes) as u32).collect();
            match mode {
                DiagnoseMode::Trajectory => {
                    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
                    let z = LatentBatch::sample(&mut rng, labels, cfg.latent_dim, candle_core::DType::F32)?;
                    let p = ScalePyramid::from_stages(&models.ema_generator.generate_frozen(&z)?, cfg)?;
                    let m = trajectory_metrics(&p, cfg)?;
                    println!("k  delta            rewrite          align");
                    for k in 0..m.num_stages() {
                        println!(
                            "{k}  {:.4} ± {:.4}  {:.4} ± {:.4}  {:.4} ± {:.4}",
                            m.delta[k].mean,
                            m.delta[k].std,
                            m.rewrite[k].mean,
                            m.rewrite[k].std,
                            m.align[k].mean,
                            m.align[k].std
                        );
                    }
                }
                DiagnoseMode::Attention => {
                    let data = scalegan::harness::synth_dataset(&models.exp.data)?;
                    let n = n.min(data.len());
                    let real = ScalePyramid::from_real(&data.head(n)?, cfg)?;
                    let d = models.discriminator.with_attention_retention(true);
                    let maps = d.attention_maps(&real, &data.labels[..n])?;
                    let dep = cross_scale_attention_fraction(&maps, d.layout())?;
                    println!("mode {}", d.mode());
                    for (l, f) in dep.per_layer.iter().enumerate() {
                        println!("layer {} cross_scale_fraction {f:.6}", l + 1);
                    }
                    println!("mean {:.6}", dep.mean());
                    if let Some(path) = dump {
                        write_attention_dump(&path, &maps)?;
                        println!("wrote {}", path.display());
                    }
                }
            }
        }
        Command::Flops { config, table, csv } => {
            if config.is_file() {
                let kv = KvMap::load(&config)?;
                if !kv.contains("recipe") {
                    let cfg = ModelConfig::from_kv(&kv, &ModelConfig::desk_generator())
                        .with_context(|| format!("reading {}", config.display()))?;
                    let b = forward_flops_breakdown(&cfg)?;
                    println!("tokens      {}", b.tokens);
                    println!("embed       {:.3}", b.embed / 1e9);
                    println!("mapping     {:.3}", b.mapping / 1e9);
                    println!("modulation  {:.3}", b.modulation / 1e9);
                    println!("attn_proj   {:.3}", b.attn_proj / 1e9);
                    println!("attn_mix    {:.3}", b.attn_mix / 1e9);
                    println!("ffn         {:.3}", b.ffn / 1e9);
                    println!("heads       {:.3}", b.heads / 1e9);
                    println!("total       {:.3} GFLOPs", b.gflops());
                    return Ok(());
                }
            }
            let table: LedgerTable = table.parse()?;
            let rows = ledger_rows(&load_ledger(&config)?)?;
            if csv {
                print!("{}", render_csv(&rows, table)?);
            } else {
                print!("{}", render_text(&rows, table));
            }
        }
        Command::Ablate { config, sweep, out } => {
            let base = KvMap::load(&config)?;
            let sweep = Sweep::load(&sweep)?;
            let dir = out.unwrap_or_else(|| PathBuf::from("runs").join("ablation"));
            let report = run_ablation(&base, &sweep, &dir)?;
            print!("{}", report.to_csv());
            if report.incomplete() {
                bail!("some runs failed; report at {} is incomplete", dir.join("report.csv").display());
            }
        }
    }
    Ok(())
}
