//! Multi-stage transformer generator.
//!
//! Synthesis starts from fixed 2-D sinusoidal tokens. Noise and class enter
//! only through a two-layer mapping network whose style vector drives the
//! per-block adaptive modulation. Every block owns an output head; the
//! accumulated head outputs are read at the configured tap layers, giving
//! `K + 1` same-resolution stage outputs `h_0..h_K`.

use candle_core::{DType, Device, Tensor, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ModelConfig, ModelKind};
use crate::error::{Error, Result};
use crate::nn::{
    block_forward, ensure_finite, linear, normal_tensor, register_block, rms_norm, sinusoidal_2d,
    unpatchify, BlockDims, Init, Modulation, ParamStore, ParamView, Rope,
};

/// Noise, labels and a truncation factor for one forward pass.
#[derive(Debug, Clone)]
pub struct LatentBatch {
    /// `[batch, latent_dim]` standard-normal noise.
    pub z: Tensor,
    pub labels: Vec<u32>,
    pub psi: f64,
}

impl LatentBatch {
    pub fn new(z: Tensor, labels: Vec<u32>, psi: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&psi) {
            return Err(Error::argument(format!("truncation psi {psi} outside [0, 1]")));
        }
        if z.dims().len() != 2 || z.dim(0)? != labels.len() {
            return Err(Error::contract(format!(
                "noise shape {:?} does not match {} labels",
                z.dims(),
                labels.len()
            )));
        }
        Ok(Self { z, labels, psi })
    }

    pub fn sample<R: Rng + ?Sized>(
        rng: &mut R,
        labels: Vec<u32>,
        latent_dim: usize,
        dtype: DType,
    ) -> Result<Self> {
        let z = normal_tensor(rng, &[labels.len(), latent_dim], dtype)?;
        Self::new(z, labels, 1.0)
    }

    pub fn with_psi(mut self, psi: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&psi) {
            return Err(Error::argument(format!("truncation psi {psi} outside [0, 1]")));
        }
        self.psi = psi;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// `psi * z`: interpolation toward the mean of the noise prior.
pub fn truncate_latent(z: &Tensor, psi: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&psi) {
        return Err(Error::argument(format!("truncation psi {psi} outside [0, 1]")));
    }
    if psi == 1.0 {
        return Ok(z.clone());
    }
    Ok(z.affine(psi, 0.0)?)
}

/// The `K + 1` accumulated generator outputs, all at native resolution.
#[derive(Debug, Clone)]
pub struct StageOutputs {
    /// `h[k]`: `[batch, native, native, channels]`; `h[K]` is the final image.
    pub h: Vec<Tensor>,
    /// Residual stream after each tap block, when requested.
    pub hidden: Option<Vec<Tensor>>,
}

impl StageOutputs {
    pub fn final_image(&self) -> &Tensor {
        self.h.last().expect("stage outputs are never empty")
    }

    pub fn num_stages(&self) -> usize {
        self.h.len()
    }
}

#[derive(Debug, Clone)]
pub struct Generator {
    cfg: ModelConfig,
    params: ParamStore,
    pos_tokens: Tensor,
    rope: Rope,
}

impl Generator {
    pub fn new(cfg: ModelConfig, dtype: DType, seed: u64) -> Result<Self> {
        let params = Self::init_params(&cfg, dtype, seed)?;
        Self::build(cfg, params)
    }

    /// Wraps existing parameters (e.g. the EMA copy or a checkpoint).
    pub fn with_params(cfg: ModelConfig, params: ParamStore) -> Result<Self> {
        let template = Self::init_params(&cfg, params.dtype(), 0)?;
        params.ensure_compatible(&template)?;
        Self::build(cfg, params)
    }

    fn build(cfg: ModelConfig, params: ParamStore) -> Result<Self> {
        let dtype = params.dtype();
        let pos_tokens = sinusoidal_2d(cfg.grid, cfg.hidden_dim, dtype)?;
        let rope = Rope::new(&Rope::grid_positions(cfg.grid), cfg.head_dim, dtype)?;
        Ok(Self {
            cfg,
            params,
            pos_tokens,
            rope,
        })
    }

    fn dims(cfg: &ModelConfig) -> BlockDims {
        BlockDims {
            hidden: cfg.hidden_dim,
            heads: cfg.num_heads,
            head_dim: cfg.head_dim,
            ffn_hidden: cfg.ffn_hidden(),
            depth: cfg.depth,
        }
    }

    fn init_params(cfg: &ModelConfig, dtype: DType, seed: u64) -> Result<ParamStore> {
        if cfg.kind != ModelKind::Generator {
            return Err(Error::config("generator built from a discriminator config"));
        }
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new(dtype);
        let (c, s, z) = (cfg.hidden_dim, cfg.style_dim, cfg.latent_dim);
        let out = cfg.patch_size * cfg.patch_size * cfg.channels_in;
        p.add("map.class_embed", &[cfg.num_classes, s], Init::Normal(1.0), &mut rng)?;
        p.add("map.fc1.w", &[z + s, s], Init::Normal(1.0 / ((z + s) as f64).sqrt()), &mut rng)?;
        p.add("map.fc1.b", &[s], Init::Zeros, &mut rng)?;
        p.add("map.fc2.w", &[s, s], Init::Normal(1.0 / (s as f64).sqrt()), &mut rng)?;
        p.add("map.fc2.b", &[s], Init::Zeros, &mut rng)?;
        let dims = Self::dims(cfg);
        for i in 0..cfg.depth {
            let prefix = format!("blocks.{i}");
            p.add(format!("{prefix}.mod.w"), &[s, 6 * c], Init::Normal(0.1 / (s as f64).sqrt()), &mut rng)?;
            p.add(format!("{prefix}.mod.b"), &[6 * c], Init::Zeros, &mut rng)?;
            register_block(&mut p, &prefix, dims, false, &mut rng)?;
            p.add(format!("{prefix}.head.norm"), &[c], Init::Ones, &mut rng)?;
            p.add(format!("{prefix}.head.w"), &[c, out], Init::Normal(1.0 / (c as f64).sqrt()), &mut rng)?;
            p.add(format!("{prefix}.head.b"), &[out], Init::Zeros, &mut rng)?;
        }
        Ok(p)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn dtype(&self) -> DType {
        self.params.dtype()
    }

    /// Forward pass recording gradients for the generator parameters.
    pub fn generate(&self, batch: &LatentBatch) -> Result<StageOutputs> {
        self.forward(self.params.view(true), batch, false)
    }

    /// Forward pass with frozen (detached) parameters.
    pub fn generate_frozen(&self, batch: &LatentBatch) -> Result<StageOutputs> {
        self.forward(self.params.view(false), batch, false)
    }

    /// Frozen forward pass that also keeps the residual stream at every tap.
    pub fn generate_with_hidden(&self, batch: &LatentBatch) -> Result<StageOutputs> {
        self.forward(self.params.view(false), batch, true)
    }

    fn style(&self, params: ParamView<'_>, batch: &LatentBatch) -> Result<Tensor> {
        let cfg = &self.cfg;
        if batch.z.dim(1)? != cfg.latent_dim {
            return Err(Error::contract(format!(
                "noise width {} does not match latent_dim {}",
                batch.z.dim(1)?,
                cfg.latent_dim
            )));
        }
        if let Some(&bad) = batch.labels.iter().find(|&&l| l as usize >= cfg.num_classes) {
            return Err(Error::argument(format!(
                "class label {bad} outside [0, {})",
                cfg.num_classes
            )));
        }
        let z = truncate_latent(&batch.z.to_dtype(self.dtype())?, batch.psi)?;
        let ids = Tensor::from_vec(batch.labels.clone(), batch.labels.len(), &Device::Cpu)?;
        let class = params.get("map.class_embed")?.index_select(&ids, 0)?;
        let input = Tensor::cat(&[&z, &class], 1)?;
        let h = linear(&input, &params.get("map.fc1.w")?, Some(&params.get("map.fc1.b")?))?.silu()?;
        linear(&h, &params.get("map.fc2.w")?, Some(&params.get("map.fc2.b")?))
    }

    fn forward(
        &self,
        params: ParamView<'_>,
        batch: &LatentBatch,
        keep_hidden: bool,
    ) -> Result<StageOutputs> {
        let cfg = &self.cfg;
        let b = batch.len();
        if b == 0 {
            return Err(Error::contract("empty latent batch"));
        }
        let c = cfg.hidden_dim;
        let dims = Self::dims(cfg);
        let style = self.style(params, batch)?;
        let mut x = self
            .pos_tokens
            .unsqueeze(0)?
            .broadcast_as((b, cfg.grid * cfg.grid, c))?
            .contiguous()?;
        let mut acc: Option<Tensor> = None;
        let mut h = Vec::with_capacity(cfg.num_scales());
        let mut hidden = keep_hidden.then(Vec::new);
        let mut taps = cfg.output_layers.iter().peekable();
        for i in 0..cfg.depth {
            let prefix = format!("blocks.{i}");
            let m = linear(
                &style,
                &params.get(&format!("{prefix}.mod.w"))?,
                Some(&params.get(&format!("{prefix}.mod.b"))?),
            )?
            .unsqueeze(1)?;
            let chunk = |j: usize| m.narrow(D::Minus1, j * c, c);
            let modulation = Modulation {
                attn: [chunk(0)?, chunk(1)?, chunk(2)?],
                ffn: [chunk(3)?, chunk(4)?, chunk(5)?],
            };
            x = block_forward(params, &prefix, dims, &x, &self.rope, None, Some(&modulation), false)?.0;
            ensure_finite(&x, "generator activations", Some(i + 1))?;
            let head_in = rms_norm(&x, Some(&params.get(&format!("{prefix}.head.norm"))?))?;
            let out = linear(
                &head_in,
                &params.get(&format!("{prefix}.head.w"))?,
                Some(&params.get(&format!("{prefix}.head.b"))?),
            )?;
            let sum = match acc {
                Some(prev) => (prev + out)?,
                None => out,
            };
            if taps.peek() == Some(&&(i + 1)) {
                taps.next();
                h.push(unpatchify(&sum, cfg.grid, cfg.patch_size, cfg.channels_in)?);
                if let Some(hs) = hidden.as_mut() {
                    hs.push(x.clone());
                }
            }
            acc = Some(sum);
        }
        Ok(StageOutputs { h, hidden })
    }
}
