//! Resizing between the native resolution and the scale hierarchy, and the
//! per-scale image pyramids fed to the discriminator.
//!
//! Downsizing is an area average over `f x f` blocks; upsizing is bilinear
//! with half-pixel centres and edge clamping. Both are separable linear maps
//! whose rows sum to one, so constants are preserved.

use candle_core::{DType, Device, Tensor};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::generator::StageOutputs;

/// Row-major `[out_len, in_len]` matrix of the 1-D resampling kernel.
pub fn resize_matrix(in_len: usize, out_len: usize) -> Result<Vec<f64>> {
    if in_len == 0 || out_len == 0 {
        return Err(Error::config("cannot resize to or from zero length"));
    }
    let mut m = vec![0.0; out_len * in_len];
    if out_len == in_len {
        for i in 0..in_len {
            m[i * in_len + i] = 1.0;
        }
    } else if out_len < in_len {
        if in_len % out_len != 0 {
            return Err(Error::config(format!(
                "non-integer downsizing factor {in_len} -> {out_len}"
            )));
        }
        let f = in_len / out_len;
        let w = 1.0 / f as f64;
        for i in 0..out_len {
            for j in i * f..(i + 1) * f {
                m[i * in_len + j] = w;
            }
        }
    } else {
        if out_len % in_len != 0 {
            return Err(Error::config(format!(
                "non-integer upsizing factor {in_len} -> {out_len}"
            )));
        }
        let f = (out_len / in_len) as f64;
        let last = (in_len - 1) as f64;
        for i in 0..out_len {
            let src = ((i as f64 + 0.5) / f - 0.5).clamp(0.0, last);
            let i0 = src.floor();
            let w1 = src - i0;
            let i0 = i0 as usize;
            let i1 = (i0 + 1).min(in_len - 1);
            m[i * in_len + i0] += 1.0 - w1;
            m[i * in_len + i1] += w1;
        }
    }
    Ok(m)
}

fn matrix_tensor(in_len: usize, out_len: usize, dtype: DType) -> Result<Tensor> {
    let m = resize_matrix(in_len, out_len)?;
    Ok(Tensor::from_vec(m, (out_len, in_len), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Resizes a square NHWC batch to `out x out`. Differentiable.
pub fn resize_image(x: &Tensor, out: usize) -> Result<Tensor> {
    let (b, h, w, c) = x.dims4()?;
    if h != w {
        return Err(Error::contract(format!("expected square images, got {h}x{w}")));
    }
    if out == h {
        return Ok(x.clone());
    }
    let mt = matrix_tensor(h, out, x.dtype())?.t()?;
    // [b, h, w, c] -> [b, c, w, h], resize h
    let y = x.permute((0, 3, 2, 1))?.contiguous()?;
    let y = y.reshape((b * c * w, h))?.matmul(&mt)?.reshape((b, c, w, out))?;
    // -> [b, c, out, w], resize w
    let y = y.transpose(2, 3)?.contiguous()?;
    let y = y.reshape((b * c * out, w))?.matmul(&mt)?.reshape((b, c, out, out))?;
    Ok(y.permute((0, 2, 3, 1))?.contiguous()?)
}

fn check_native(h: &Tensor, cfg: &ModelConfig) -> Result<()> {
    let (_, rows, cols, ch) = h.dims4()?;
    let native = cfg.native_resolution();
    if rows != native || cols != native || ch != cfg.channels_in {
        return Err(Error::contract(format!(
            "expected [_, {native}, {native}, {}] at native resolution, got {:?}",
            cfg.channels_in,
            h.dims()
        )));
    }
    Ok(())
}

/// `x_k = r_k(h)`: native-resolution image to the resolution of scale `k`.
pub fn resize_to_scale(h: &Tensor, k: usize, cfg: &ModelConfig) -> Result<Tensor> {
    if k >= cfg.num_scales() {
        return Err(Error::argument(format!(
            "scale index {k} out of range for {} scales",
            cfg.num_scales()
        )));
    }
    check_native(h, cfg)?;
    resize_image(h, cfg.resolution_of(k))
}

/// `r_K`: any scale back up to the native resolution.
pub fn upsample_to_native(x: &Tensor, cfg: &ModelConfig) -> Result<Tensor> {
    resize_image(x, cfg.native_resolution())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PyramidSource {
    Generated,
    Real,
}

/// Per-scale images, `x[k]` at the resolution of scale `k` (coarse to fine).
#[derive(Debug, Clone)]
pub struct ScalePyramid {
    pub x: Vec<Tensor>,
    pub source: PyramidSource,
}

pub enum PyramidInput<'a> {
    Generated(&'a StageOutputs),
    Real(&'a Tensor),
}

pub fn build_pyramids(input: PyramidInput<'_>, cfg: &ModelConfig) -> Result<ScalePyramid> {
    match input {
        PyramidInput::Generated(stages) => ScalePyramid::from_stages(stages, cfg),
        PyramidInput::Real(images) => ScalePyramid::from_real(images, cfg),
    }
}

impl ScalePyramid {
    /// Stage `k`'s own output feeds scale `k`.
    pub fn from_stages(stages: &StageOutputs, cfg: &ModelConfig) -> Result<Self> {
        if stages.h.len() != cfg.num_scales() {
            return Err(Error::contract(format!(
                "{} stage outputs for {} scales",
                stages.h.len(),
                cfg.num_scales()
            )));
        }
        let x = stages
            .h
            .iter()
            .enumerate()
            .map(|(k, h)| resize_to_scale(h, k, cfg))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            x,
            source: PyramidSource::Generated,
        })
    }

    /// The single real image resized to every scale.
    pub fn from_real(images: &Tensor, cfg: &ModelConfig) -> Result<Self> {
        let x = (0..cfg.num_scales())
            .map(|k| resize_to_scale(images, k, cfg))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            x,
            source: PyramidSource::Real,
        })
    }

    pub fn batch_size(&self) -> Result<usize> {
        Ok(self.x.first().ok_or_else(|| Error::contract("empty pyramid"))?.dim(0)?)
    }

    pub fn num_scales(&self) -> usize {
        self.x.len()
    }

    /// Samples `start..start + len` of every scale.
    pub fn narrow(&self, start: usize, len: usize) -> Result<Self> {
        Ok(Self {
            x: self
                .x
                .iter()
                .map(|t| t.narrow(0, start, len))
                .collect::<candle_core::Result<Vec<_>>>()?,
            source: self.source,
        })
    }

    pub fn detach(&self) -> Self {
        Self {
            x: self.x.iter().map(Tensor::detach).collect(),
            source: self.source,
        }
    }

    pub fn to_dtype(&self, dtype: DType) -> Result<Self> {
        Ok(Self {
            x: self
                .x
                .iter()
                .map(|t| t.to_dtype(dtype))
                .collect::<candle_core::Result<Vec<_>>>()?,
            source: self.source,
        })
    }

    /// Checks per-scale shapes against the configured hierarchy.
    pub fn check(&self, cfg: &ModelConfig) -> Result<()> {
        if self.x.len() != cfg.num_scales() {
            return Err(Error::contract(format!(
                "pyramid has {} scales, layout expects {}",
                self.x.len(),
                cfg.num_scales()
            )));
        }
        let b = self.batch_size()?;
        for (k, x) in self.x.iter().enumerate() {
            let r = cfg.resolution_of(k);
            if x.dims() != [b, r, r, cfg.channels_in] {
                return Err(Error::contract(format!(
                    "scale {k} has shape {:?}, expected [{b}, {r}, {r}, {}]",
                    x.dims(),
                    cfg.channels_in
                )));
            }
        }
        Ok(())
    }
}
