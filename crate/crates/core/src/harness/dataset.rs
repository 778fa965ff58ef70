//! Procedural class-conditional toy images in `[-1, 1]`.

use std::f64::consts::TAU;

use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::kv::KvMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToyRecipe {
    /// Class sets the number of blobs, their ring position and their hue.
    GaussianBlobs,
    /// Class sets the shape and the foreground/background color pair.
    TwoToneShapes,
}

impl std::fmt::Display for ToyRecipe {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ToyRecipe::GaussianBlobs => "gaussian_blobs",
            ToyRecipe::TwoToneShapes => "two_tone_shapes",
        })
    }
}

impl std::str::FromStr for ToyRecipe {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian_blobs" => Ok(ToyRecipe::GaussianBlobs),
            "two_tone_shapes" => Ok(ToyRecipe::TwoToneShapes),
            other => Err(Error::config(format!("unknown toy recipe `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDatasetSpec {
    pub num_classes: usize,
    pub resolution: usize,
    pub channels: usize,
    pub samples_per_class: usize,
    pub recipe: ToyRecipe,
    pub seed: u64,
}

impl Default for ToyDatasetSpec {
    fn default() -> Self {
        Self {
            num_classes: 8,
            resolution: 16,
            channels: 3,
            samples_per_class: 512,
            recipe: ToyRecipe::GaussianBlobs,
            seed: 0,
        }
    }
}

impl ToyDatasetSpec {
    pub const KEYS: [&'static str; 6] = [
        "num_classes",
        "resolution",
        "channels",
        "samples_per_class",
        "recipe",
        "seed",
    ];

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.resolution == 0 || self.channels == 0 || self.samples_per_class == 0 {
            return Err(Error::config("toy dataset sizes must be positive"));
        }
        Ok(())
    }

    /// Configuration error unless the images fit the model's native input.
    pub fn ensure_matches(&self, cfg: &ModelConfig) -> Result<()> {
        if self.resolution != cfg.native_resolution() || self.channels != cfg.channels_in {
            return Err(Error::config(format!(
                "dataset is {r}x{r}x{c} but the model expects {n}x{n}x{m}",
                r = self.resolution,
                c = self.channels,
                n = cfg.native_resolution(),
                m = cfg.channels_in
            )));
        }
        if self.num_classes != cfg.num_classes {
            return Err(Error::config(format!(
                "dataset has {} classes, model {}",
                self.num_classes, cfg.num_classes
            )));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.set("num_classes", self.num_classes);
        kv.set("resolution", self.resolution);
        kv.set("channels", self.channels);
        kv.set("samples_per_class", self.samples_per_class);
        kv.set("recipe", self.recipe);
        kv.set("seed", self.seed);
        kv
    }

    pub fn from_kv(kv: &KvMap, base: &ToyDatasetSpec) -> Result<Self> {
        kv.ensure_known(&Self::KEYS, "data section")?;
        let spec = Self {
            num_classes: kv.get_or("num_classes", base.num_classes)?,
            resolution: kv.get_or("resolution", base.resolution)?,
            channels: kv.get_or("channels", base.channels)?,
            samples_per_class: kv.get_or("samples_per_class", base.samples_per_class)?,
            recipe: kv.get_or("recipe", base.recipe)?,
            seed: kv.get_or("seed", base.seed)?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Images `[n, res, res, ch]` (f32) and their labels.
#[derive(Debug, Clone)]
pub struct ToyDataset {
    pub images: Tensor,
    pub labels: Vec<u32>,
    pub spec: ToyDatasetSpec,
}

impl ToyDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Uniform draw with replacement.
    pub fn sample_batch<R: Rng + ?Sized>(&self, rng: &mut R, batch: usize) -> Result<(Tensor, Vec<u32>)> {
        let idx: Vec<u32> = (0..batch).map(|_| rng.random_range(0..self.len() as u32)).collect();
        let labels = idx.iter().map(|&i| self.labels[i as usize]).collect();
        let ids = Tensor::from_vec(idx, batch, &Device::Cpu)?;
        Ok((self.images.index_select(&ids, 0)?, labels))
    }

    /// The first `n` images of every class in turn (deterministic subset).
    pub fn head(&self, n: usize) -> Result<Tensor> {
        let n = n.min(self.len());
        Ok(self.images.narrow(0, 0, n)?)
    }
}

fn hue_to_rgb(h: f64) -> [f64; 3] {
    let k = |n: f64| {
        let k = (n + h * 6.0) % 6.0;
        1.0 - (k.min(4.0 - k).clamp(0.0, 1.0))
    };
    [k(5.0), k(3.0), k(1.0)]
}

fn color(rgb: [f64; 3], ch: usize) -> f64 {
    if ch < 3 {
        rgb[ch]
    } else {
        (rgb[0] + rgb[1] + rgb[2]) / 3.0
    }
}

fn blobs_image<R: Rng>(rng: &mut R, class: usize, spec: &ToyDatasetSpec, out: &mut [f32]) {
    let r = spec.resolution as f64;
    let count = 1 + class % 3;
    let base_angle = TAU * class as f64 / spec.num_classes as f64;
    let rgb = hue_to_rgb(class as f64 / spec.num_classes as f64);
    let mut canvas = vec![0.0f64; spec.resolution * spec.resolution];
    for b in 0..count {
        let angle = base_angle + TAU * b as f64 / count as f64 + rng.random_range(-0.2..0.2);
        let radius = if count == 1 { 0.18 * r } else { 0.28 * r };
        let cy = r / 2.0 + radius * angle.sin() + rng.random_range(-0.75..0.75);
        let cx = r / 2.0 + radius * angle.cos() + rng.random_range(-0.75..0.75);
        let sigma = r * rng.random_range(0.09..0.13);
        for y in 0..spec.resolution {
            for x in 0..spec.resolution {
                let d2 = (y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2);
                canvas[y * spec.resolution + x] += (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    for (p, &a) in canvas.iter().enumerate() {
        let a = a.min(1.0);
        for ch in 0..spec.channels {
            let v = -0.8 + a * (0.8 + color(rgb, ch));
            out[p * spec.channels + ch] = v.clamp(-1.0, 1.0) as f32;
        }
    }
}

fn shapes_image<R: Rng>(rng: &mut R, class: usize, spec: &ToyDatasetSpec, out: &mut [f32]) {
    let r = spec.resolution as f64;
    let fg = hue_to_rgb(class as f64 / spec.num_classes as f64);
    let bg = hue_to_rgb((class as f64 / spec.num_classes as f64 + 0.5) % 1.0);
    let cy = r / 2.0 + rng.random_range(-0.15..0.15) * r;
    let cx = r / 2.0 + rng.random_range(-0.15..0.15) * r;
    let size = r * rng.random_range(0.2..0.3);
    for y in 0..spec.resolution {
        for x in 0..spec.resolution {
            let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
            let inside = match class % 4 {
                0 => dy.abs() <= size && dx.abs() <= size,
                1 => dy * dy + dx * dx <= size * size,
                2 => dy.abs() <= size / 3.0 || dx.abs() <= size / 3.0,
                _ => ((y as f64 / (size / 2.0)).floor() as i64) % 2 == 0,
            };
            let rgb = if inside { fg } else { bg };
            for ch in 0..spec.channels {
                let v = if inside { 0.9 } else { 0.5 } * (2.0 * color(rgb, ch) - 1.0);
                out[(y * spec.resolution + x) * spec.channels + ch] = v as f32;
            }
        }
    }
}

/// Class-balanced, fully determined by `spec` (labels cycle `0, 1, ..`).
pub fn synth_dataset(spec: &ToyDatasetSpec) -> Result<ToyDataset> {
    spec.validate()?;
    let n = spec.num_classes * spec.samples_per_class;
    let pixels = spec.resolution * spec.resolution * spec.channels;
    let mut data = vec![0.0f32; n * pixels];
    let mut labels = Vec::with_capacity(n);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for (i, chunk) in data.chunks_mut(pixels).enumerate() {
        let class = i % spec.num_classes;
        match spec.recipe {
            ToyRecipe::GaussianBlobs => blobs_image(&mut rng, class, spec, chunk),
            ToyRecipe::TwoToneShapes => shapes_image(&mut rng, class, spec, chunk),
        }
        labels.push(class as u32);
    }
    let images = Tensor::from_vec(data, (n, spec.resolution, spec.resolution, spec.channels), &Device::Cpu)?
        .to_dtype(DType::F32)?;
    Ok(ToyDataset {
        images,
        labels,
        spec: spec.clone(),
    })
}
