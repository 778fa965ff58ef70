//! Training objectives: relativistic multi-scale adversarial losses, the
//! finite-difference gradient penalty and the cross-scale consistency term.

use candle_core::{DType, Tensor};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{normal_tensor, softplus};
use crate::pyramid::ScalePyramid;

/// `lambda_cons` and the per-stage weights `w_0..w_{K-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyConfig {
    pub lambda_cons: f64,
    pub weights: Vec<f64>,
}

impl ConsistencyConfig {
    /// `w_k = 1 / (K - k)`, i.e. (1/3, 1/2, 1) for `K = 3`, and `lambda = 0.1`.
    pub fn default_for(k: usize) -> Self {
        Self {
            lambda_cons: 0.1,
            weights: (0..k).map(|i| 1.0 / (k - i) as f64).collect(),
        }
    }

    pub fn with_lambda(mut self, lambda_cons: f64) -> Self {
        self.lambda_cons = lambda_cons;
        self
    }

    /// `num_stages` is `K + 1`.
    pub fn validate(&self, num_stages: usize) -> Result<()> {
        if !(self.lambda_cons >= 0.0 && self.lambda_cons.is_finite()) {
            return Err(Error::config("lambda_cons must be a nonnegative finite number"));
        }
        let k = num_stages.saturating_sub(1);
        if self.weights.len() != k {
            return Err(Error::config(format!(
                "{} consistency weights for {k} intermediate stages",
                self.weights.len()
            )));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::config("consistency weights must be nonnegative"));
        }
        if self.weights.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::config("consistency weights must be nondecreasing in k"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyConfig {
    pub r1_weight: f64,
    pub r1_interval: u64,
    pub r2_weight: f64,
    pub r2_interval: u64,
    pub epsilon: f64,
    pub fraction: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            r1_weight: 1.0,
            r1_interval: 1,
            r2_weight: 1.0,
            r2_interval: 1,
            epsilon: 0.01,
            fraction: 0.25,
        }
    }
}

impl PenaltyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::argument(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::config(format!("fraction must lie in (0, 1], got {}", self.fraction)));
        }
        if self.r1_weight < 0.0 || self.r2_weight < 0.0 {
            return Err(Error::config("penalty weights must be nonnegative"));
        }
        if self.r1_interval == 0 || self.r2_interval == 0 {
            return Err(Error::config("penalty intervals must be positive"));
        }
        Ok(())
    }

    /// Samples used by one penalty evaluation: `round(fraction * batch)`.
    pub fn subset_size(&self, batch: usize) -> Result<usize> {
        let n = (self.fraction * batch as f64).round() as usize;
        if n == 0 {
            return Err(Error::argument(format!(
                "penalty fraction {} of batch {batch} selects no samples",
                self.fraction
            )));
        }
        Ok(n.min(batch))
    }

    pub fn r1_due(&self, iteration: u64) -> bool {
        self.r1_weight > 0.0 && iteration % self.r1_interval == 0
    }

    pub fn r2_due(&self, iteration: u64) -> bool {
        self.r2_weight > 0.0 && iteration % self.r2_interval == 0
    }
}

fn check_pair(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() || a.rank() != 2 {
        return Err(Error::contract(format!(
            "logit shapes {:?} and {:?} must be equal [batch, scales]",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// `mean_{b,k} softplus(-(d_real - d_fake))` over `[batch, K + 1]` logits.
pub fn adversarial_loss_d(d_real: &Tensor, d_fake: &Tensor) -> Result<Tensor> {
    check_pair(d_real, d_fake)?;
    Ok(softplus(&(d_fake - d_real)?)?.mean_all()?)
}

/// Generator side of the relativistic pair; the real logits are treated as
/// constants.
pub fn adversarial_loss_g(d_real: &Tensor, d_fake: &Tensor) -> Result<Tensor> {
    check_pair(d_real, d_fake)?;
    Ok(softplus(&(d_real.detach() - d_fake)?)?.mean_all()?)
}

/// `(1/K) sum_k w_k ||h_k - h_K||^2`, squared norm summed per sample and
/// averaged over the batch.
pub fn consistency_loss(stages: &[Tensor], cfg: &ConsistencyConfig) -> Result<Tensor> {
    let last = stages.last().ok_or_else(|| Error::contract("no stage outputs"))?;
    let k = stages.len() - 1;
    if k == 0 {
        log::warn!("consistency loss requested without intermediate stages; using 0");
        return Ok(Tensor::zeros((), last.dtype(), last.device())?);
    }
    if cfg.weights.len() != k {
        return Err(Error::contract(format!(
            "{} consistency weights for {k} intermediate stages",
            cfg.weights.len()
        )));
    }
    let b = last.dim(0)?;
    let mut total: Option<Tensor> = None;
    for (h, &w) in stages[..k].iter().zip(&cfg.weights) {
        if h.dims() != last.dims() {
            return Err(Error::contract("stage outputs differ in shape"));
        }
        let per_sample = (h - last)?.sqr()?.reshape((b, ()))?.sum(1)?;
        let term = (per_sample.mean_all()? * w)?;
        total = Some(match total {
            Some(t) => (t + term)?,
            None => term,
        });
    }
    Ok((total.expect("k >= 1") / k as f64)?)
}

/// Pyramid perturbed by `epsilon * u` with one direction per scale.
fn perturb(x: &ScalePyramid, directions: &[Tensor], epsilon: f64) -> Result<ScalePyramid> {
    if directions.len() != x.num_scales() {
        return Err(Error::contract("one direction per scale required"));
    }
    let shifted = x
        .x
        .iter()
        .zip(directions)
        .map(|(xk, u)| Ok((xk + (u.to_dtype(xk.dtype())? * epsilon)?)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(ScalePyramid {
        x: shifted,
        source: x.source,
    })
}

/// Finite-difference penalty along fixed directions:
/// `mean_{b,k} (d(x + eps u) - d(x))^2 / eps^2`.
///
/// `x` must already be the selected sub-batch. When `base` is given it is
/// used as `d(x)` instead of another forward pass.
pub fn gradient_penalty_along<F>(
    d: F,
    x: &ScalePyramid,
    labels: &[u32],
    base: Option<&Tensor>,
    directions: &[Tensor],
    epsilon: f64,
) -> Result<Tensor>
where
    F: Fn(&ScalePyramid, &[u32]) -> Result<Tensor>,
{
    if !(epsilon > 0.0) {
        return Err(Error::argument(format!("epsilon must be positive, got {epsilon}")));
    }
    let x = x.detach();
    let shifted = d(&perturb(&x, directions, epsilon)?, labels)?;
    let base = match base {
        Some(t) => t.clone(),
        None => d(&x, labels)?,
    };
    check_pair(&base, &shifted)?;
    Ok(((shifted - base)?.sqr()?.mean_all()? / (epsilon * epsilon))?)
}

#[derive(Debug, Clone)]
pub struct PenaltyValue {
    pub value: Tensor,
    pub samples: usize,
}

/// Approximate R1/R2 on the first `round(fraction * batch)` samples with a
/// standard-normal direction per sample and scale.
///
/// `full_logits`, if available, are the logits of the whole batch `x` and
/// supply `d(x)` for the selected rows.
pub fn gradient_penalty_approx<F, R>(
    d: F,
    x: &ScalePyramid,
    labels: &[u32],
    full_logits: Option<&Tensor>,
    cfg: &PenaltyConfig,
    rng: &mut R,
) -> Result<PenaltyValue>
where
    F: Fn(&ScalePyramid, &[u32]) -> Result<Tensor>,
    R: Rng + ?Sized,
{
    cfg.validate()?;
    let batch = x.batch_size()?;
    let n = cfg.subset_size(batch)?;
    let sub = x.narrow(0, n)?;
    let directions = sub
        .x
        .iter()
        .map(|t| normal_tensor(rng, t.dims(), t.dtype()))
        .collect::<Result<Vec<_>>>()?;
    let base = full_logits.map(|t| t.narrow(0, 0, n)).transpose()?;
    let value = gradient_penalty_along(d, &sub, &labels[..n], base.as_ref(), &directions, cfg.epsilon)?;
    Ok(PenaltyValue { value, samples: n })
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// `L_G = L_adv + lambda_cons * L_cons`.
pub fn generator_objective(adv: &Tensor, cons: &Tensor, cfg: &ConsistencyConfig) -> Result<Tensor> {
    let (a, c) = (scalar(adv)?, scalar(cons)?);
    if !a.is_finite() || !c.is_finite() {
        return Err(Error::numeric(format!("non-finite generator objective input (adv {a}, cons {c})")));
    }
    if cfg.lambda_cons == 0.0 {
        return Ok(adv.clone());
    }
    Ok((adv + (cons * cfg.lambda_cons)?)?)
}

/// Optional auxiliary generator loss on the fake pyramid, e.g. a projected
/// feature-alignment term. The default adds nothing.
pub trait FeatureLoss {
    fn loss(&self, fake: &ScalePyramid, labels: &[u32]) -> Result<Option<Tensor>>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NoFeatureLoss;

impl FeatureLoss for NoFeatureLoss {
    fn loss(&self, _fake: &ScalePyramid, _labels: &[u32]) -> Result<Option<Tensor>> {
        Ok(None)
    }
}
