#![allow(dead_code)]

use candle_core::{DType, Tensor};
use rand::Rng;
use scalegan::nn::normal_tensor;
use scalegan::{ModelConfig, PyramidSource, ScalePyramid};

/// Three-scale discriminator small enough for randomized trials.
pub fn tiny_d() -> ModelConfig {
    ModelConfig {
        depth: 2,
        hidden_dim: 16,
        num_heads: 2,
        head_dim: 8,
        grid: 4,
        scale_resolutions: vec![8, 4, 2],
        num_classes: 3,
        ..ModelConfig::desk_discriminator()
    }
}

/// Generator matching `tiny_d`'s hierarchy.
pub fn tiny_g() -> ModelConfig {
    ModelConfig {
        depth: 3,
        hidden_dim: 16,
        num_heads: 2,
        head_dim: 8,
        grid: 4,
        output_layers: vec![1, 2, 3],
        scale_resolutions: vec![8, 4, 2],
        latent_dim: 8,
        style_dim: 16,
        num_classes: 3,
        ..ModelConfig::desk_generator()
    }
}

pub fn random_pyramid<R: Rng>(rng: &mut R, cfg: &ModelConfig, b: usize, dtype: DType) -> ScalePyramid {
    let x = (0..cfg.num_scales())
        .map(|k| {
            let r = cfg.resolution_of(k);
            normal_tensor(rng, &[b, r, r, cfg.channels_in], dtype).unwrap()
        })
        .collect();
    ScalePyramid {
        x,
        source: PyramidSource::Real,
    }
}

pub fn flat(t: &Tensor) -> Vec<f64> {
    t.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1().unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}
