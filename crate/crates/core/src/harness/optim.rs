//! AdamW with exposed moments, global-norm clipping and parameter EMA.

use candle_core::backprop::GradStore;
use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::nn::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.0,
            beta2: 0.99,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// AdamW whose first and second moments are plain tensors so they can be
/// checkpointed and restored exactly.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, params: &ParamStore) -> Result<Self> {
        let zeros = params
            .vars()
            .iter()
            .map(|v| v.as_tensor().zeros_like())
            .collect::<candle_core::Result<Vec<_>>>()?;
        Ok(Self {
            cfg,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        })
    }

    /// Gradients of every parameter (zeros where none flowed), detached
    /// from the backward graph.
    pub fn collect_grads(params: &ParamStore, grads: &GradStore) -> Result<Vec<Tensor>> {
        params
            .vars()
            .iter()
            .map(|v| match grads.get(v.as_tensor()) {
                Some(g) => Ok(g.detach()),
                None => Ok(v.as_tensor().zeros_like()?),
            })
            .collect()
    }

    /// Applies one update. Returns the gradient norm before clipping.
    pub fn apply(&mut self, params: &ParamStore, grads: &[Tensor], clip: Option<f64>) -> Result<f64> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::contract("gradient count does not match the parameters"));
        }
        let norm = global_norm(grads)?;
        if !norm.is_finite() {
            return Err(Error::numeric("non-finite gradient norm"));
        }
        let scale = match clip {
            Some(max) if norm > max => max / (norm + 1e-6),
            _ => 1.0,
        };
        self.step += 1;
        let AdamWConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, var) in params.vars().iter().enumerate() {
            let g = grads[i].detach();
            let g = if scale == 1.0 { g } else { (g * scale)? };
            let m = ((&self.m[i] * beta1)? + (&g * (1.0 - beta1))?)?;
            let v = ((&self.v[i] * beta2)? + (g.sqr()? * (1.0 - beta2))?)?;
            let denom = ((&v / bc2)?.sqrt()? + eps)?;
            let mut update = ((&m / bc1)? / denom)?;
            let p = var.as_tensor();
            if weight_decay != 0.0 {
                update = (update + (p * weight_decay)?)?;
            }
            var.set(&(p - (update * lr)?)?)?;
            self.m[i] = m;
            self.v[i] = v;
        }
        Ok(norm)
    }

    pub fn step_with(&mut self, params: &ParamStore, grads: &GradStore, clip: Option<f64>) -> Result<f64> {
        let g = Self::collect_grads(params, grads)?;
        self.apply(params, &g, clip)
    }
}

pub fn global_norm(grads: &[Tensor]) -> Result<f64> {
    let mut total = 0.0f64;
    for g in grads {
        total += g
            .sqr()?
            .sum_all()?
            .to_dtype(candle_core::DType::F64)?
            .to_scalar::<f64>()?;
    }
    Ok(total.sqrt())
}

/// `ema <- decay * ema + (1 - decay) * new`, elementwise.
pub fn ema_update(ema: &ParamStore, new: &ParamStore, decay: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&decay) {
        return Err(Error::argument(format!("EMA decay {decay} outside [0, 1]")));
    }
    ema.ensure_same_layout(new)?;
    if decay == 1.0 {
        return Ok(());
    }
    for (e, n) in ema.vars().iter().zip(new.vars()) {
        let next = if decay == 0.0 {
            n.as_tensor().detach().copy()?
        } else {
            ((e.as_tensor() * decay)? + (n.as_tensor().detach() * (1.0 - decay))?)?
        };
        e.set(&next)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Init;
    use candle_core::{DType, Device, Var};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store(value: f64) -> ParamStore {
        let mut s = ParamStore::new(DType::F64);
        s.insert("w", Tensor::full(value, (2, 2), &Device::Cpu).unwrap()).unwrap();
        s
    }

    fn first(s: &ParamStore) -> f64 {
        s.vars()[0].as_tensor().flatten_all().unwrap().to_vec1::<f64>().unwrap()[0]
    }

    #[test]
    fn ema_limits_and_one_step() {
        let (ema, new) = (store(0.0), store(1.0));
        ema_update(&ema, &new, 1.0).unwrap();
        assert_eq!(first(&ema), 0.0);
        ema_update(&ema, &new, 0.999).unwrap();
        assert!((first(&ema) - 0.001).abs() < 1e-15);
        ema_update(&ema, &new, 0.0).unwrap();
        assert_eq!(first(&ema), 1.0);
        let mut other = ParamStore::new(DType::F64);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        other.add("w", &[3], Init::Zeros, &mut rng).unwrap();
        assert!(matches!(ema_update(&ema, &other, 0.5), Err(Error::Contract(_))));
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let s = store(1.0);
        let mut opt = AdamW::new(AdamWConfig::default(), &s).unwrap();
        let g = vec![Tensor::full(0.3f64, (2, 2), &Device::Cpu).unwrap()];
        opt.apply(&s, &g, None).unwrap();
        // beta1 = 0: the bias-corrected step is g / |g| = 1.
        assert!((first(&s) - (1.0 - 2e-4)).abs() < 1e-9);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut s = ParamStore::new(DType::F64);
        s.insert("x", Tensor::new(&[3.0f64, -2.0], &Device::Cpu).unwrap()).unwrap();
        let mut opt = AdamW::new(
            AdamWConfig {
                lr: 0.05,
                beta1: 0.9,
                ..AdamWConfig::default()
            },
            &s,
        )
        .unwrap();
        for _ in 0..500 {
            let x: &Var = &s.vars()[0];
            let loss = x.as_tensor().sqr().unwrap().sum_all().unwrap();
            let grads = loss.backward().unwrap();
            opt.step_with(&s, &grads, Some(1.0)).unwrap();
        }
        let x = s.vars()[0].as_tensor().to_vec1::<f64>().unwrap();
        assert!(x.iter().all(|v| v.abs() < 0.05), "{x:?}");
    }

    #[test]
    fn clipping_bounds_the_update_direction() {
        let g = vec![Tensor::new(&[3.0f64, 4.0], &Device::Cpu).unwrap()];
        assert_eq!(global_norm(&g).unwrap(), 5.0);
    }
}
