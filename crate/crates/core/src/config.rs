//! Architecture descriptions shared by the generator, the discriminator and
//! the compute ledger.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kv::KvMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Generator,
    Discriminator,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Generator => "generator",
            ModelKind::Discriminator => "discriminator",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "generator" | "g" => Ok(ModelKind::Generator),
            "discriminator" | "d" => Ok(ModelKind::Discriminator),
            other => Err(Error::config(format!("unknown model kind `{other}`"))),
        }
    }
}

/// Transformer dimensions plus the scale hierarchy.
///
/// `scale_resolutions` runs from the native resolution down to the coarsest
/// scale, so scale index `k` (coarse to fine, `k = K` native) maps to
/// `scale_resolutions[K - k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub depth: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub head_dim: usize,
    pub patch_size: usize,
    /// Token-grid side length at the native resolution.
    pub grid: usize,
    pub channels_in: usize,
    pub mlp_ratio: f64,
    /// Generator taps, 1-based block indices. Unused by the discriminator.
    pub output_layers: Vec<usize>,
    pub scale_resolutions: Vec<usize>,
    /// Discriminator patch size per scale (coarse to fine). Empty means
    /// `patch_size` everywhere.
    pub scale_patch_sizes: Vec<usize>,
    pub num_classes: usize,
    pub latent_dim: usize,
    pub style_dim: usize,
}

impl ModelConfig {
    /// Desk-scale generator: 16x16x3 output from an 8x8 token grid.
    pub fn desk_generator() -> Self {
        Self {
            kind: ModelKind::Generator,
            depth: 8,
            hidden_dim: 128,
            num_heads: 4,
            head_dim: 32,
            patch_size: 2,
            grid: 8,
            channels_in: 3,
            mlp_ratio: 4.0,
            output_layers: vec![2, 4, 6, 8],
            scale_resolutions: vec![16, 8, 4, 2],
            scale_patch_sizes: Vec::new(),
            num_classes: 8,
            latent_dim: 64,
            style_dim: 128,
        }
    }

    pub fn desk_discriminator() -> Self {
        Self {
            kind: ModelKind::Discriminator,
            depth: 4,
            output_layers: Vec::new(),
            ..Self::desk_generator()
        }
    }

    fn latent_generator(depth: usize, hidden_dim: usize, num_heads: usize) -> Self {
        let taps = (1..=4).map(|i| i * depth / 4).collect();
        Self {
            kind: ModelKind::Generator,
            depth,
            hidden_dim,
            num_heads,
            head_dim: hidden_dim / num_heads,
            patch_size: 2,
            grid: 16,
            channels_in: 4,
            mlp_ratio: 4.0,
            output_layers: taps,
            scale_resolutions: vec![32, 16, 8, 4],
            scale_patch_sizes: Vec::new(),
            num_classes: 1000,
            latent_dim: 64,
            style_dim: hidden_dim,
        }
    }

    /// 32x32x4 latent-space Base generator (12 x 768).
    pub fn latent_g_b2() -> Self {
        Self::latent_generator(12, 768, 12)
    }

    pub fn latent_g_m2() -> Self {
        Self::latent_generator(24, 768, 12)
    }

    pub fn latent_g_h2() -> Self {
        Self::latent_generator(32, 1280, 16)
    }

    pub fn latent_d_b2() -> Self {
        Self {
            kind: ModelKind::Discriminator,
            output_layers: Vec::new(),
            ..Self::latent_g_b2()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk-g" => Ok(Self::desk_generator()),
            "desk-d" => Ok(Self::desk_discriminator()),
            "G-B/2" | "g-b2" => Ok(Self::latent_g_b2()),
            "G-M/2" | "g-m2" => Ok(Self::latent_g_m2()),
            "G-H/2" | "g-h2" => Ok(Self::latent_g_h2()),
            "D-B/2" | "d-b2" => Ok(Self::latent_d_b2()),
            other => Err(Error::config(format!("unknown model preset `{other}`"))),
        }
    }

    pub fn native_resolution(&self) -> usize {
        self.grid * self.patch_size
    }

    /// Number of scales, `K + 1`.
    pub fn num_scales(&self) -> usize {
        self.scale_resolutions.len()
    }

    /// Index of the native scale, `K`.
    pub fn top_scale(&self) -> usize {
        self.num_scales() - 1
    }

    /// Spatial side of scale `k` (0 = coarsest).
    pub fn resolution_of(&self, k: usize) -> usize {
        self.scale_resolutions[self.top_scale() - k]
    }

    pub fn patch_of(&self, k: usize) -> usize {
        if self.scale_patch_sizes.is_empty() {
            self.patch_size
        } else {
            self.scale_patch_sizes[k]
        }
    }

    pub fn attn_dim(&self) -> usize {
        self.num_heads * self.head_dim
    }

    /// Hidden width of the gated feed-forward: parameter matched to a plain
    /// MLP of ratio `mlp_ratio`.
    pub fn ffn_hidden(&self) -> usize {
        ((2.0 / 3.0) * self.mlp_ratio * self.hidden_dim as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("depth", self.depth),
            ("hidden_dim", self.hidden_dim),
            ("num_heads", self.num_heads),
            ("head_dim", self.head_dim),
            ("patch_size", self.patch_size),
            ("grid", self.grid),
            ("channels_in", self.channels_in),
            ("num_classes", self.num_classes),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if !(self.mlp_ratio > 0.0) {
            return Err(Error::config("mlp_ratio must be positive"));
        }
        if self.head_dim % 4 != 0 {
            return Err(Error::config(format!(
                "head_dim {} must be a multiple of 4 for 2-D rotary encoding",
                self.head_dim
            )));
        }
        let native = self.native_resolution();
        if self.scale_resolutions.is_empty() {
            return Err(Error::config("scale_resolutions is empty"));
        }
        if self.scale_resolutions[0] != native {
            return Err(Error::config(format!(
                "first scale resolution {} must equal the native resolution {native}",
                self.scale_resolutions[0]
            )));
        }
        for pair in self.scale_resolutions.windows(2) {
            if pair[1] >= pair[0] {
                return Err(Error::config("scale_resolutions must be strictly decreasing"));
            }
        }
        for &r in &self.scale_resolutions {
            if r == 0 || native % r != 0 {
                return Err(Error::config(format!(
                    "scale resolution {r} is not an integer fraction of {native}"
                )));
            }
        }
        match self.kind {
            ModelKind::Generator => {
                if self.latent_dim == 0 || self.style_dim == 0 {
                    return Err(Error::config("latent_dim and style_dim must be positive"));
                }
                if self.output_layers.len() != self.num_scales() {
                    return Err(Error::config(format!(
                        "{} output layers for {} scales",
                        self.output_layers.len(),
                        self.num_scales()
                    )));
                }
                if self.output_layers.iter().any(|&l| l == 0 || l > self.depth) {
                    return Err(Error::config("output layers must lie in [1, depth]"));
                }
                for pair in self.output_layers.windows(2) {
                    if pair[1] <= pair[0] {
                        return Err(Error::config("output_layers must be strictly increasing"));
                    }
                }
                if self.output_layers.last() != Some(&self.depth) {
                    return Err(Error::config("the last output layer must be the final block"));
                }
            }
            ModelKind::Discriminator => {
                if !self.scale_patch_sizes.is_empty()
                    && self.scale_patch_sizes.len() != self.num_scales()
                {
                    return Err(Error::config("scale_patch_sizes must list one patch per scale"));
                }
                for k in 0..self.num_scales() {
                    let (r, p) = (self.resolution_of(k), self.patch_of(k));
                    if p == 0 || r % p != 0 {
                        return Err(Error::config(format!(
                            "patch {p} does not tile scale resolution {r}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.set("kind", self.kind);
        kv.set("depth", self.depth);
        kv.set("hidden_dim", self.hidden_dim);
        kv.set("num_heads", self.num_heads);
        kv.set("head_dim", self.head_dim);
        kv.set("patch_size", self.patch_size);
        kv.set("grid", self.grid);
        kv.set("channels_in", self.channels_in);
        kv.set("mlp_ratio", self.mlp_ratio);
        kv.set_list("output_layers", &self.output_layers);
        kv.set_list("scale_resolutions", &self.scale_resolutions);
        kv.set_list("scale_patch_sizes", &self.scale_patch_sizes);
        kv.set("num_classes", self.num_classes);
        kv.set("latent_dim", self.latent_dim);
        kv.set("style_dim", self.style_dim);
        kv
    }

    pub const KEYS: &'static [&'static str] = &[
        "kind",
        "preset",
        "depth",
        "hidden_dim",
        "num_heads",
        "head_dim",
        "patch_size",
        "grid",
        "channels_in",
        "mlp_ratio",
        "output_layers",
        "scale_resolutions",
        "scale_patch_sizes",
        "num_classes",
        "latent_dim",
        "style_dim",
    ];

    /// Overlays `kv` on `base` (or on `preset = ...` when present) and
    /// validates the result.
    pub fn from_kv(kv: &KvMap, base: &ModelConfig) -> Result<Self> {
        kv.ensure_known(Self::KEYS, "model config")?;
        let mut cfg = match kv.raw("preset") {
            Some(name) => Self::preset(name)?,
            None => base.clone(),
        };
        if let Some(kind) = kv.get("kind")? {
            cfg.kind = kind;
        }
        macro_rules! overlay {
            ($($field:ident),*) => {
                $( if let Some(v) = kv.get(stringify!($field))? { cfg.$field = v; } )*
            };
        }
        overlay!(depth, hidden_dim, num_heads, head_dim, patch_size, grid, channels_in, mlp_ratio);
        overlay!(num_classes, latent_dim, style_dim);
        if let Some(v) = kv.get_list("output_layers")? {
            cfg.output_layers = v;
        }
        if let Some(v) = kv.get_list("scale_resolutions")? {
            cfg.scale_resolutions = v;
        }
        if let Some(v) = kv.get_list("scale_patch_sizes")? {
            cfg.scale_patch_sizes = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Short stable digest of the canonical key-value rendering.
    pub fn hash(&self) -> String {
        config_hash(&self.to_kv())
    }
}

pub(crate) fn config_hash(kv: &KvMap) -> String {
    let digest = Sha256::digest(kv.to_text().as_bytes());
    hex::encode(&digest[..8])
}
