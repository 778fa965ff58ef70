//! Acceptance gate: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the verdict lines are always
//! printed. The two training ablations take the bulk of the runtime; set
//! `ACCEPTANCE_CRITERIA=1,2,5` to run a subset.
//!
//! Criteria 6 and 7 are directional outcomes of short training runs. Their
//! verdicts are reported but only an ablation that fails to run makes the
//! process exit nonzero; every other criterion gates the exit code.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scalegan::harness::{
    aggregation_verdict, consistency_verdict, ema_update, run_ablation, train, AblationReport, ExperimentConfig,
    Sweep,
};
use scalegan::nn::normal_tensor;
use scalegan::objectives::{consistency_loss, gradient_penalty_approx, ConsistencyConfig, PenaltyConfig};
use scalegan::{
    adversarial_loss_d, adversarial_loss_g, cross_scale_attention_fraction, forward_flops, generator_objective,
    ledger_rows, load_ledger, toy_frechet_distance, trajectory_metrics, truncate_latent, Discriminator,
    GaussianStats, KvMap, MaskMode, ModelConfig, ParamStore, ScalePyramid,
};

use common::{flat, random_pyramid, rel_err, tiny_d};

const LEDGER_TOL: f64 = 0.02;
const FLOPS_TOL: f64 = 0.10;
const ISOLATION_TRIALS: usize = 1000;
const ISOLATION_TOL: f64 = 1e-6;
const ORACLE_PYRAMIDS: usize = 100;
const ORACLE_TOL: f64 = 1e-6;
const EXAMPLE_TOL: f64 = 1e-9;
const GRAD_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-5;
const MIN_REDUCTION: f64 = 0.20;
const MAX_FD_INCREASE: f64 = 0.10;
const MIN_AGG_ATTENTION: f64 = 0.05;
const REPRO_ITERATIONS: u64 = 100;

type Verdict = Result<String, String>;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------------------
// 1. Compute ledger

fn ledger() -> Verdict {
    // name -> (train GFLOPs, inference GFLOPs, total x10^3, relative)
    let published: BTreeMap<&str, (f64, f64, f64, f64)> = [
        ("iMF-XL/2", (1306.3, 174.6, 1045.0, 16.7)),
        ("GAT-XL/2", (2297.2, 118.6, 137.8, 2.2)),
        ("CAT-H/2", (1040.2, 166.7, 62.4, 1.0)),
    ]
    .into_iter()
    .collect();
    let models = load_ledger(configs_dir().join("ledger")).map_err(|e| e.to_string())?;
    let rows = ledger_rows(&models).map_err(|e| e.to_string())?;
    if rows.len() != published.len() {
        return Err(format!("{} ledger rows, expected {}", rows.len(), published.len()));
    }
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for row in &rows {
        let &(train, infer, total, relative) =
            published.get(row.name.as_str()).ok_or_else(|| format!("unexpected row {}", row.name))?;
        let budget = row.budget.ok_or_else(|| format!("{} has no epochs", row.name))?;
        let rel = row.relative.ok_or_else(|| format!("{} has no relative total", row.name))?;
        for (got, want) in [
            (row.train_gflops, train),
            (row.infer_gflops, infer),
            (budget.total_kgflops, total),
            (rel, relative),
        ] {
            worst = worst.max(rel_err(got, want));
        }
        parts.push(format!(
            "{} {:.1}/{:.1} -> {:.1}k {:.1}x",
            row.name, row.train_gflops, row.infer_gflops, budget.total_kgflops, rel
        ));
    }
    check(
        worst <= LEDGER_TOL,
        format!("max rel err {:.2}% (tol 2%): {}", 100.0 * worst, parts.join("; ")),
    )
}

// ---------------------------------------------------------------------------
// 2. Forward FLOPs

fn forward_estimates() -> Verdict {
    let cases = [
        ("G-B/2", ModelConfig::latent_g_b2(), 23.0),
        ("G-M/2", ModelConfig::latent_g_m2(), 46.0),
        ("G-H/2", ModelConfig::latent_g_h2(), 166.8),
        ("D-B/2", ModelConfig::latent_d_b2(), 33.9),
    ];
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for (name, cfg, want) in cases {
        let got = forward_flops(&cfg).map_err(|e| e.to_string())?;
        let err = rel_err(got, want);
        worst = worst.max(err);
        parts.push(format!("{name} {got:.2} vs {want} ({:+.1}%)", 100.0 * (got / want - 1.0)));
    }
    check(
        worst <= FLOPS_TOL,
        format!("max rel err {:.1}% (tol 10%): {}", 100.0 * worst, parts.join("; ")),
    )
}

// ---------------------------------------------------------------------------
// 3. Scale isolation

fn isolation() -> Verdict {
    let configs = [ModelConfig::desk_discriminator(), tiny_d()];
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst = 0.0f64;
    let per_model = ISOLATION_TRIALS / 10;
    for trial_block in 0..10 {
        let cfg = &configs[trial_block % 2];
        let d = Discriminator::new(cfg.clone(), MaskMode::ScaleWise, DType::F32, 100 + trial_block as u64)
            .map_err(|e| e.to_string())?;
        let scales = cfg.num_scales();
        for _ in 0..per_model {
            let p = random_pyramid(&mut rng, cfg, 2, DType::F32);
            let labels: Vec<u32> = (0..2).map(|_| rng.random_range(0..cfg.num_classes as u32)).collect();
            let k = rng.random_range(0..scales);
            let j = (k + rng.random_range(1..scales)) % scales;
            let mut q = p.clone();
            q.x[j] = normal_tensor(&mut rng, p.x[j].dims(), DType::F32).map_err(|e| e.to_string())?;
            let a = d.discriminate_frozen(&p, &labels).map_err(|e| e.to_string())?.to_rows().unwrap();
            let b = d.discriminate_frozen(&q, &labels).map_err(|e| e.to_string())?.to_rows().unwrap();
            for s in 0..2 {
                worst = worst.max((a[s][k] - b[s][k]).abs());
            }
        }
    }

    let cfg = ModelConfig::desk_discriminator();
    let p = random_pyramid(&mut rng, &cfg, 4, DType::F32);
    let labels = vec![0, 3, 5, 7];
    let fraction = |mode: MaskMode| -> Result<Vec<f64>, String> {
        let d = Discriminator::new(cfg.clone(), mode, DType::F32, 7)
            .map_err(|e| e.to_string())?
            .with_attention_retention(true);
        let maps = d.attention_maps(&p, &labels).map_err(|e| e.to_string())?;
        Ok(cross_scale_attention_fraction(&maps, d.layout()).map_err(|e| e.to_string())?.per_layer)
    };
    let masked = fraction(MaskMode::ScaleWise)?;
    let open = fraction(MaskMode::Aggregated)?;
    check(
        worst <= ISOLATION_TOL && masked.iter().all(|&f| f == 0.0) && open.iter().all(|&f| f > 0.0),
        format!(
            "{ISOLATION_TRIALS} trials, max |delta d_k| {worst:.1e} (tol 1e-6); masked fraction {masked:?}; aggregated {:?}",
            open.iter().map(|f| format!("{f:.3}")).collect::<Vec<_>>()
        ),
    )
}

// ---------------------------------------------------------------------------
// 4. Metric oracle

/// Half-pixel bilinear upsampling of one `[n, n, c]` image, written pixel by
/// pixel.
fn oracle_upsample(img: &[f64], n: usize, c: usize, out: usize) -> Vec<f64> {
    if n == out {
        return img.to_vec();
    }
    let coord = |i: usize| {
        let s = ((i as f64 + 0.5) * n as f64 / out as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let lo = s.floor() as usize;
        (lo, (lo + 1).min(n - 1), s - lo as f64)
    };
    let mut res = vec![0.0; out * out * c];
    for i in 0..out {
        let (y0, y1, wy) = coord(i);
        for j in 0..out {
            let (x0, x1, wx) = coord(j);
            for ch in 0..c {
                let at = |y: usize, x: usize| img[(y * n + x) * c + ch];
                res[(i * out + j) * c + ch] = (1.0 - wy) * ((1.0 - wx) * at(y0, x0) + wx * at(y0, x1))
                    + wy * ((1.0 - wx) * at(y1, x0) + wx * at(y1, x1));
            }
        }
    }
    res
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Mean over samples of (delta_k, R_k, A_k) for every k < K.
fn oracle_trajectory(p: &ScalePyramid, cfg: &ModelConfig) -> Vec<(f64, f64, f64)> {
    let b = p.x[0].dim(0).unwrap();
    let native = cfg.native_resolution();
    let c = cfg.channels_in;
    let scales = cfg.num_scales();
    let mut sums = vec![(0.0, 0.0, 0.0); scales - 1];
    for s in 0..b {
        let up: Vec<Vec<f64>> = (0..scales)
            .map(|k| {
                let x = flat(&p.x[k].narrow(0, s, 1).unwrap());
                oracle_upsample(&x, cfg.resolution_of(k), c, native)
            })
            .collect();
        let top = &up[scales - 1];
        for k in 0..scales - 1 {
            let remaining = diff(top, &up[k]);
            let step = diff(&up[k + 1], &up[k]);
            let dot: f64 = remaining.iter().zip(&step).map(|(a, b)| a * b).sum();
            sums[k].0 += l2(&remaining) / l2(top);
            sums[k].1 += l2(&step) / l2(top);
            sums[k].2 += dot / (l2(&remaining) * l2(&step));
        }
    }
    sums.into_iter()
        .map(|(d, r, a)| (d / b as f64, r / b as f64, a / b as f64))
        .collect()
}

fn constant_pyramid(cfg: &ModelConfig, values: &[f64]) -> ScalePyramid {
    ScalePyramid {
        x: values
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                let r = cfg.resolution_of(k);
                Tensor::full(v, (1, r, r, cfg.channels_in), &Device::Cpu).unwrap()
            })
            .collect(),
        source: scalegan::PyramidSource::Generated,
    }
}

fn scalar(t: Tensor) -> f64 {
    t.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
}

fn worked_examples() -> Result<usize, String> {
    let cfg = ModelConfig::desk_generator();
    let dev = Device::Cpu;
    let mut cases: Vec<(&str, f64, f64)> = Vec::new();

    let m = trajectory_metrics(&constant_pyramid(&cfg, &[0.5, 0.5, 0.5, 1.0]), &cfg).unwrap();
    cases.push(("delta with x_K=1, r_K(x_k)=0.5", m.delta[0].mean, 0.5));
    let m = trajectory_metrics(&constant_pyramid(&cfg, &[0.0, 1.0, 1.0, 1.0]), &cfg).unwrap();
    cases.push(("A_k with r_K(x_k)=0, x_k+1=x_K", m.align[0].mean, 1.0));
    let m = trajectory_metrics(&constant_pyramid(&cfg, &[0.8, 0.8, 0.8, 0.8]), &cfg).unwrap();
    cases.push(("delta with aligned stages", m.delta[2].mean, 0.0));
    cases.push(("R with aligned stages", m.rewrite[1].mean, 0.0));

    let top = Tensor::zeros((1, 1), DType::F64, &dev).unwrap();
    let first = Tensor::ones((1, 1), DType::F64, &dev).unwrap();
    let stages = [first, top.clone(), top.clone(), top];
    let cons = consistency_loss(&stages, &ConsistencyConfig::default_for(3)).unwrap();
    cases.push(("L_cons one-ninth case", scalar(cons), 1.0 / 9.0));

    let zeros = Tensor::zeros((2, 4), DType::F64, &dev).unwrap();
    cases.push(("softplus(0)", scalar(adversarial_loss_d(&zeros, &zeros).unwrap()), 2f64.ln()));
    cases.push(("G loss at equal logits", scalar(adversarial_loss_g(&zeros, &zeros).unwrap()), 2f64.ln()));
    let real = Tensor::new(&[[0.0f64, 20.0]], &dev).unwrap();
    let fake = Tensor::zeros((1, 2), DType::F64, &dev).unwrap();
    let two_scale = scalar(adversarial_loss_d(&real, &fake).unwrap());
    cases.push(("two-scale mean", two_scale, (2f64.ln() + (-20f64).exp().ln_1p()) / 2.0));

    let c = ConsistencyConfig::default_for(3);
    let adv = Tensor::new(0.7f64, &dev).unwrap();
    let objective = |cons: f64| scalar(generator_objective(&adv, &Tensor::new(cons, &dev).unwrap(), &c).unwrap());
    cases.push(("objective with zero consistency", objective(0.0), 0.7));
    cases.push(("objective 0.7 + 0.1 * 2", objective(2.0), 0.9));

    let z = Tensor::new(&[2.0f64, -2.0], &dev).unwrap();
    let t = flat(&truncate_latent(&z, 0.85).unwrap());
    cases.push(("truncation +", t[0], 1.7));
    cases.push(("truncation -", t[1], -1.7));

    let pop = |mean: f64| {
        GaussianStats::new(
            nalgebra::DVector::from_element(1, mean),
            nalgebra::DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap()
    };
    cases.push(("1-D Frechet distance", toy_frechet_distance(&pop(0.0), &pop(3.0)).unwrap(), 9.0));

    let mut ema = ParamStore::new(DType::F64);
    ema.insert("w", Tensor::zeros(1, DType::F64, &dev).unwrap()).unwrap();
    let mut new = ParamStore::new(DType::F64);
    new.insert("w", Tensor::ones(1, DType::F64, &dev).unwrap()).unwrap();
    ema_update(&ema, &new, 0.999).unwrap();
    cases.push(("one EMA step", flat(ema.var("w").unwrap().as_tensor())[0], 0.001));

    let failed: Vec<String> = cases
        .iter()
        .filter(|(_, got, want)| (got - want).abs() > EXAMPLE_TOL)
        .map(|(name, got, want)| format!("{name}: {got} != {want}"))
        .collect();
    if failed.is_empty() {
        Ok(cases.len())
    } else {
        Err(failed.join("; "))
    }
}

fn metric_oracle() -> Verdict {
    let cfg = ModelConfig::desk_generator();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut worst = 0.0f64;
    for _ in 0..ORACLE_PYRAMIDS {
        let p = random_pyramid(&mut rng, &cfg, 3, DType::F64);
        let m = trajectory_metrics(&p, &cfg).map_err(|e| e.to_string())?;
        for (k, (d, r, a)) in oracle_trajectory(&p, &cfg).into_iter().enumerate() {
            worst = worst
                .max(rel_err(m.delta[k].mean, d))
                .max(rel_err(m.rewrite[k].mean, r))
                .max(rel_err(m.align[k].mean, a));
        }
    }
    let examples = worked_examples();
    let detail = format!(
        "{ORACLE_PYRAMIDS} pyramids, max rel err {worst:.1e} (tol 1e-6); worked examples: {}",
        match &examples {
            Ok(n) => format!("{n} within 1e-9"),
            Err(e) => e.clone(),
        }
    );
    check(worst < ORACLE_TOL && examples.is_ok(), detail)
}

// ---------------------------------------------------------------------------
// 5. Gradient checks

/// Norm-wise relative error between backprop and central differences of a
/// scalar function of `inputs`, over the coordinates of `probe` inputs.
fn grad_error(inputs: &[Tensor], probe: &[usize], f: impl Fn(&[Tensor]) -> Tensor) -> f64 {
    let vars: Vec<Var> = inputs.iter().map(|t| Var::from_tensor(t).unwrap()).collect();
    let tensors: Vec<Tensor> = vars.iter().map(|v| v.as_tensor().clone()).collect();
    let grads = f(&tensors).backward().unwrap();
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for &i in probe {
        let analytic = grads.get(vars[i].as_tensor()).map(flat).unwrap_or_else(|| vec![0.0; inputs[i].elem_count()]);
        let base = flat(&inputs[i]);
        for e in 0..base.len() {
            let eval = |delta: f64| {
                let mut v = base.clone();
                v[e] += delta;
                let mut plain: Vec<Tensor> = inputs.to_vec();
                plain[i] = Tensor::from_vec(v, inputs[i].dims(), &Device::Cpu).unwrap();
                scalar(f(&plain))
            };
            let numeric = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
            num += (numeric - analytic[e]).powi(2);
            den = den.max(numeric.abs()).max(analytic[e].abs());
        }
    }
    num.sqrt() / den.max(1e-12)
}

/// Same check for a function of a parameter store, over a few coordinates of
/// selected parameters.
fn param_grad_error(params: &ParamStore, names: &[&str], f: impl Fn() -> Tensor) -> f64 {
    let grads = f().backward().unwrap();
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for name in names {
        let var = params.var(name).unwrap();
        let analytic = flat(grads.get(var.as_tensor()).unwrap());
        let original = var.as_tensor().copy().unwrap();
        let base = flat(&original);
        let n = base.len();
        for e in [0, n / 3, n / 2, n - 1] {
            let eval = |delta: f64| {
                let mut v = base.clone();
                v[e] += delta;
                var.set(&Tensor::from_vec(v, original.dims(), &Device::Cpu).unwrap()).unwrap();
                let out = scalar(f());
                var.set(&original).unwrap();
                out
            };
            let numeric = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
            num += (numeric - analytic[e]).powi(2);
            den = den.max(numeric.abs()).max(analytic[e].abs());
        }
    }
    num.sqrt() / den.max(1e-12)
}

fn gradient_checks() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let stages: Vec<Tensor> = (0..4)
        .map(|_| normal_tensor(&mut rng, &[2, 2, 2, 3], DType::F64).unwrap())
        .collect();
    let cfg = ConsistencyConfig::default_for(3);
    let cons = grad_error(&stages, &[0, 1, 2, 3], |s| consistency_loss(s, &cfg).unwrap());

    let logits = vec![
        normal_tensor(&mut rng, &[3, 4], DType::F64).unwrap(),
        normal_tensor(&mut rng, &[3, 4], DType::F64).unwrap(),
    ];
    let adv_d = grad_error(&logits, &[0, 1], |l| adversarial_loss_d(&l[0], &l[1]).unwrap());
    // The real logits are constants on the generator side.
    let adv_g = grad_error(&logits, &[1], |l| adversarial_loss_g(&l[0], &l[1]).unwrap());

    let d_cfg = tiny_d();
    let d = Discriminator::new(d_cfg.clone(), MaskMode::ScaleWise, DType::F64, 52).unwrap();
    let p = random_pyramid(&mut rng, &d_cfg, 8, DType::F64);
    let labels = vec![0u32, 1, 2, 0, 1, 2, 0, 1];
    let pc = PenaltyConfig::default();
    let penalty = || {
        let mut dir_rng = ChaCha8Rng::seed_from_u64(53);
        gradient_penalty_approx(
            |q: &ScalePyramid, l: &[u32]| Ok(d.discriminate(q, l)?.logits),
            &p,
            &labels,
            None,
            &pc,
            &mut dir_rng,
        )
        .unwrap()
        .value
    };
    let names = ["embed.0.w", "scale_embed", "blocks.0.attn.qkv", "blocks.1.ffn.out", "head.w", "class_embed"];
    let gp = param_grad_error(d.params(), &names, penalty);

    let errs = [("consistency", cons), ("adv_d", adv_d), ("adv_g", adv_g), ("penalty", gp)];
    check(
        errs.iter().all(|(_, e)| *e < GRAD_TOL),
        format!(
            "rel err (tol 1e-4): {}",
            errs.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

// ---------------------------------------------------------------------------
// 6 and 7. Desk-scale ablations

fn ablation_report(dir: &Path) -> Result<AblationReport, String> {
    let base = KvMap::load(configs_dir().join("acceptance.kv")).map_err(|e| e.to_string())?;
    let sweep = Sweep::load(configs_dir().join("sweeps/acceptance.kv")).map_err(|e| e.to_string())?;
    let report = run_ablation(&base, &sweep, dir).map_err(|e| e.to_string())?;
    if report.incomplete() {
        return Err(format!("incomplete ablation:\n{}", report.to_csv()));
    }
    Ok(report)
}

fn consistency_ablation(report: &AblationReport) -> Verdict {
    let v = consistency_verdict(report, "cons", "nocons").map_err(|e| e.to_string())?;
    check(
        v.passes(MIN_REDUCTION, MAX_FD_INCREASE),
        format!(
            "3 seeds: delta {:.4} vs {:.4} (-{:.1}%), R {:.4} vs {:.4} (-{:.1}%), A {:.4} vs {:.4}, FD {:.2} vs {:.2} ({:+.1}%); need >= 20% reductions, A up, FD <= +10%",
            v.delta_with,
            v.delta_without,
            100.0 * v.delta_reduction(),
            v.rewrite_with,
            v.rewrite_without,
            100.0 * v.rewrite_reduction(),
            v.align_with,
            v.align_without,
            v.fd_with,
            v.fd_without,
            100.0 * v.fd_change()
        ),
    )
}

fn aggregation_ablation(report: &AblationReport) -> Verdict {
    let v = aggregation_verdict(report, "aggregated", "cons").map_err(|e| e.to_string())?;
    check(
        v.passes(MIN_AGG_ATTENTION),
        format!(
            "3 seeds: cross-scale attention {:.3} aggregated vs {:.3} masked (need >= 0.05), FD {:.2} aggregated vs {:.2} scale-wise (need aggregated >= scale-wise)",
            v.attn_aggregated, v.attn_scale_wise, v.fd_aggregated, v.fd_scale_wise
        ),
    )
}

// ---------------------------------------------------------------------------
// 8. Reproducibility

fn reproducibility() -> Verdict {
    let run = || -> Result<Vec<u8>, String> {
        let mut kv = KvMap::load(configs_dir().join("acceptance.kv")).map_err(|e| e.to_string())?;
        kv.set("train.iterations", REPRO_ITERATIONS);
        let exp = ExperimentConfig::from_kv(&kv).map_err(|e| e.to_string())?;
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let (_, outcome) = train(exp, dir.path()).map_err(|e| e.to_string())?;
        std::fs::read(&outcome.loss_csv).map_err(|e| e.to_string())
    };
    let (a, b) = (run()?, run()?);
    let rows = a.iter().filter(|&&c| c == b'\n').count() - 1;
    check(
        a == b && rows as u64 == REPRO_ITERATIONS,
        format!(
            "{rows} loss rows, {} vs {} bytes, identical: {}",
            a.len(),
            b.len(),
            a == b
        ),
    )
}

// ---------------------------------------------------------------------------

fn guarded<T>(f: impl FnOnce() -> Result<T, String>) -> Result<T, String> {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(v) => v,
        Err(panic) => Err(format!(
            "panicked: {}",
            panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default()
        )),
    }
}

fn report(id: u32, name: &str, started: Instant, verdict: &Verdict) {
    let (status, detail) = match verdict {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("criterion {id} [{name}]: {status} ({:.1}s) {detail}", started.elapsed().as_secs_f64());
}

fn selected() -> impl Fn(u32) -> bool {
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_CRITERIA")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    move |id| only.as_ref().is_none_or(|ids| ids.contains(&id))
}

fn main() -> ExitCode {
    let wanted = selected();
    let mut verdicts: Vec<(u32, Verdict)> = Vec::new();
    let mut broken = false;
    let quick: [(u32, &str, fn() -> Verdict); 5] = [
        (1, "compute ledger", ledger),
        (2, "forward FLOPs", forward_estimates),
        (3, "scale isolation", isolation),
        (4, "metric oracle", metric_oracle),
        (5, "gradient checks", gradient_checks),
    ];
    for (id, name, f) in quick.into_iter().filter(|c| wanted(c.0)) {
        let t = Instant::now();
        let v = guarded(f);
        report(id, name, t, &v);
        verdicts.push((id, v));
    }

    if wanted(6) || wanted(7) {
        let t = Instant::now();
        let dir = tempfile::tempdir().expect("temporary directory");
        let ablation = guarded(|| ablation_report(dir.path()));
        match &ablation {
            Ok(r) => print!("{}", r.to_csv()),
            Err(_) => broken = true,
        }
        for (id, name, f) in [
            (6, "consistency ablation", consistency_ablation as fn(&AblationReport) -> Verdict),
            (7, "aggregated diagnostic", aggregation_ablation),
        ] {
            if !wanted(id) {
                continue;
            }
            let v = match &ablation {
                Ok(r) => guarded(|| f(r)),
                Err(e) => Err(e.clone()),
            };
            report(id, name, t, &v);
            verdicts.push((id, v));
        }
    }

    if wanted(8) {
        let t = Instant::now();
        let v = guarded(reproducibility);
        report(8, "reproducibility", t, &v);
        verdicts.push((8, v));
    }

    let passed = verdicts.iter().filter(|(_, v)| v.is_ok()).count();
    let directional: Vec<String> = verdicts
        .iter()
        .filter(|(id, v)| v.is_err() && (*id == 6 || *id == 7))
        .map(|(id, _)| id.to_string())
        .collect();
    let gating = verdicts.iter().any(|(id, v)| v.is_err() && *id != 6 && *id != 7);
    print!("acceptance: {passed}/{} criteria passed", verdicts.len());
    if !directional.is_empty() {
        print!("; directional criteria failed: {}", directional.join(", "));
    }
    println!();
    if !gating && !broken {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
