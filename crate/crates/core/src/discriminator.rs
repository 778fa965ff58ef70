//! Shared transformer discriminator over the concatenated multi-scale token
//! sequence.
//!
//! Each scale contributes its patch tokens followed by one class token; a
//! learnable scale embedding is added to every token of the scale. In
//! [`MaskMode::ScaleWise`] a block-diagonal attention mask confines every
//! token to its own scale, so the scale-`k` logit depends on `x_k` alone.
//! [`MaskMode::Aggregated`] drops the mask and lets scales exchange
//! information.

use std::io::{Read, Write};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ModelConfig, ModelKind};
use crate::error::{Error, Result};
use crate::nn::{
    block_forward, linear, patchify, register_block, rms_norm, BlockDims, Init, ParamStore,
    ParamView, Rope, MASKED_LOGIT,
};
use crate::pyramid::ScalePyramid;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    ScaleWise,
    Aggregated,
}

impl std::fmt::Display for MaskMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MaskMode::ScaleWise => "scale_wise",
            MaskMode::Aggregated => "aggregated",
        })
    }
}

impl std::str::FromStr for MaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scale_wise" | "scalewise" => Ok(MaskMode::ScaleWise),
            "aggregated" => Ok(MaskMode::Aggregated),
            other => Err(Error::config(format!("unknown discriminator mode `{other}`"))),
        }
    }
}

/// Where each scale's tokens live in the concatenated sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScaleTokenLayout {
    /// Spatial token count per scale (coarse to fine).
    pub spatial: Vec<usize>,
    /// Sequence index of each scale's class token.
    pub cls_slots: Vec<usize>,
    /// Half-open `(start, end)` range per scale, class token included.
    pub blocks: Vec<(usize, usize)>,
    pub seq_len: usize,
}

impl ScaleTokenLayout {
    /// Blocks in scale order, each followed by its class token.
    pub fn from_spatial_counts(spatial: &[usize]) -> Self {
        let mut blocks = Vec::with_capacity(spatial.len());
        let mut cls_slots = Vec::with_capacity(spatial.len());
        let mut start = 0;
        for &n in spatial {
            let end = start + n + 1;
            blocks.push((start, end));
            cls_slots.push(end - 1);
            start = end;
        }
        Self {
            spatial: spatial.to_vec(),
            cls_slots,
            blocks,
            seq_len: start,
        }
    }

    pub fn from_config(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let spatial: Vec<usize> = (0..cfg.num_scales())
            .map(|k| {
                let side = cfg.resolution_of(k) / cfg.patch_of(k);
                side * side
            })
            .collect();
        Ok(Self::from_spatial_counts(&spatial))
    }

    pub fn num_scales(&self) -> usize {
        self.blocks.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.blocks.len();
        if k == 0 || self.cls_slots.len() != k || self.spatial.len() != k {
            return Err(Error::Layout("every scale needs one block and one class slot".into()));
        }
        let mut cursor = 0;
        for (i, &(start, end)) in self.blocks.iter().enumerate() {
            if start != cursor {
                return Err(Error::Layout(format!(
                    "block {i} starts at {start}, expected {cursor} (blocks must be disjoint and contiguous)"
                )));
            }
            if end <= start || end - start != self.spatial[i] + 1 {
                return Err(Error::Layout(format!("block {i} has the wrong size")));
            }
            if !(start..end).contains(&self.cls_slots[i]) {
                return Err(Error::Layout(format!("class slot of block {i} lies outside it")));
            }
            cursor = end;
        }
        if cursor != self.seq_len {
            return Err(Error::Layout(format!(
                "blocks cover {cursor} tokens of {}",
                self.seq_len
            )));
        }
        Ok(())
    }

    /// Scale index owning sequence position `token`.
    pub fn block_of(&self, token: usize) -> usize {
        self.blocks
            .iter()
            .position(|&(s, e)| (s..e).contains(&token))
            .expect("token inside the sequence")
    }

    pub fn block_ids(&self) -> Vec<usize> {
        let mut ids = vec![0; self.seq_len];
        for (k, &(s, e)) in self.blocks.iter().enumerate() {
            ids[s..e].fill(k);
        }
        ids
    }
}

/// Square boolean attention mask, `allowed[i * seq + j]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScaleMask {
    pub seq_len: usize,
    pub allowed: Vec<bool>,
}

impl ScaleMask {
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.seq_len + j]
    }

    pub fn is_full(&self) -> bool {
        self.allowed.iter().all(|&a| a)
    }

    /// Additive logit bias: 0 where allowed, a large negative number elsewhere.
    pub fn to_bias(&self, dtype: DType) -> Result<Tensor> {
        let data: Vec<f64> = self
            .allowed
            .iter()
            .map(|&a| if a { 0.0 } else { MASKED_LOGIT })
            .collect();
        Ok(Tensor::from_vec(data, (self.seq_len, self.seq_len), &Device::Cpu)?.to_dtype(dtype)?)
    }
}

pub fn build_scale_mask(layout: &ScaleTokenLayout, mode: MaskMode) -> Result<ScaleMask> {
    layout.validate()?;
    let n = layout.seq_len;
    let allowed = match mode {
        MaskMode::Aggregated => vec![true; n * n],
        MaskMode::ScaleWise => {
            let ids = layout.block_ids();
            let mut allowed = vec![false; n * n];
            for i in 0..n {
                for j in 0..n {
                    allowed[i * n + j] = ids[i] == ids[j];
                }
            }
            allowed
        }
    };
    Ok(ScaleMask { seq_len: n, allowed })
}

/// Per-scale logits `[batch, K + 1]`, plus retained attention maps.
#[derive(Debug, Clone)]
pub struct DiscriminatorOutput {
    pub logits: Tensor,
    /// One `[batch, heads, seq, seq]` tensor per layer.
    pub attn: Option<Vec<Tensor>>,
}

impl DiscriminatorOutput {
    pub fn num_scales(&self) -> usize {
        self.logits.dims()[1]
    }

    /// Logit of scale `k` for every sample.
    pub fn d(&self, k: usize) -> Result<Tensor> {
        Ok(self.logits.narrow(1, k, 1)?.squeeze(1)?)
    }

    /// `[sample][scale]` as f64.
    pub fn to_rows(&self) -> Result<Vec<Vec<f64>>> {
        Ok(self.logits.to_dtype(DType::F64)?.to_vec2()?)
    }
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    cfg: ModelConfig,
    mode: MaskMode,
    layout: ScaleTokenLayout,
    params: ParamStore,
    rope: Rope,
    mask_bias: Option<Tensor>,
    retain_attention: bool,
}

impl Discriminator {
    pub fn new(cfg: ModelConfig, mode: MaskMode, dtype: DType, seed: u64) -> Result<Self> {
        let params = Self::init_params(&cfg, dtype, seed)?;
        Self::build(cfg, mode, params)
    }

    pub fn with_params(cfg: ModelConfig, mode: MaskMode, params: ParamStore) -> Result<Self> {
        let template = Self::init_params(&cfg, params.dtype(), 0)?;
        params.ensure_compatible(&template)?;
        Self::build(cfg, mode, params)
    }

    /// Keep per-layer attention probabilities on every forward pass.
    pub fn with_attention_retention(mut self, retain: bool) -> Self {
        self.retain_attention = retain;
        self
    }

    fn build(cfg: ModelConfig, mode: MaskMode, params: ParamStore) -> Result<Self> {
        let layout = ScaleTokenLayout::from_config(&cfg)?;
        let dtype = params.dtype();
        let mask_bias = match mode {
            MaskMode::ScaleWise => Some(build_scale_mask(&layout, mode)?.to_bias(dtype)?),
            MaskMode::Aggregated => None,
        };
        let mut positions = Vec::with_capacity(layout.seq_len);
        for k in 0..cfg.num_scales() {
            let side = cfg.resolution_of(k) / cfg.patch_of(k);
            positions.extend(Rope::grid_positions(side));
            positions.push(None);
        }
        let rope = Rope::new(&positions, cfg.head_dim, dtype)?;
        Ok(Self {
            cfg,
            mode,
            layout,
            params,
            rope,
            mask_bias,
            retain_attention: false,
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
        if cfg.kind != ModelKind::Discriminator {
            return Err(Error::config("discriminator built from a generator config"));
        }
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new(dtype);
        let c = cfg.hidden_dim;
        for k in 0..cfg.num_scales() {
            let fan_in = cfg.patch_of(k) * cfg.patch_of(k) * cfg.channels_in;
            p.add(format!("embed.{k}.w"), &[fan_in, c], Init::Normal(1.0 / (fan_in as f64).sqrt()), &mut rng)?;
            p.add(format!("embed.{k}.b"), &[c], Init::Zeros, &mut rng)?;
        }
        p.add("scale_embed", &[cfg.num_scales(), c], Init::Normal(0.5), &mut rng)?;
        p.add("cls", &[cfg.num_scales(), c], Init::Normal(0.5), &mut rng)?;
        let dims = Self::dims(cfg);
        for i in 0..cfg.depth {
            register_block(&mut p, &format!("blocks.{i}"), dims, true, &mut rng)?;
        }
        p.add("final_norm", &[c], Init::Ones, &mut rng)?;
        p.add("head.w", &[c, 1], Init::Normal(1.0 / (c as f64).sqrt()), &mut rng)?;
        p.add("head.scale_bias", &[cfg.num_scales()], Init::Zeros, &mut rng)?;
        p.add("class_embed", &[cfg.num_classes, c], Init::Normal(1.0 / (c as f64).sqrt()), &mut rng)?;
        Ok(p)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn mode(&self) -> MaskMode {
        self.mode
    }

    pub fn layout(&self) -> &ScaleTokenLayout {
        &self.layout
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn dtype(&self) -> DType {
        self.params.dtype()
    }

    /// Forward pass recording gradients for the discriminator parameters.
    pub fn discriminate(&self, pyramid: &ScalePyramid, labels: &[u32]) -> Result<DiscriminatorOutput> {
        self.forward(self.params.view(true), pyramid, labels)
    }

    /// Forward pass with frozen parameters; gradients still reach the inputs.
    pub fn discriminate_frozen(
        &self,
        pyramid: &ScalePyramid,
        labels: &[u32],
    ) -> Result<DiscriminatorOutput> {
        self.forward(self.params.view(false), pyramid, labels)
    }

    /// Row-normalized attention weights per layer, `[batch, heads, seq, seq]`.
    pub fn attention_maps(&self, pyramid: &ScalePyramid, labels: &[u32]) -> Result<Vec<Tensor>> {
        if !self.retain_attention {
            return Err(Error::Unsupported(
                "attention retention is disabled for this discriminator".into(),
            ));
        }
        self.forward(self.params.view(false), pyramid, labels)?
            .attn
            .ok_or_else(|| Error::Unsupported("no attention maps retained".into()))
    }

    fn forward(
        &self,
        params: ParamView<'_>,
        pyramid: &ScalePyramid,
        labels: &[u32],
    ) -> Result<DiscriminatorOutput> {
        let cfg = &self.cfg;
        pyramid.check(cfg)?;
        let b = pyramid.batch_size()?;
        if labels.len() != b {
            return Err(Error::contract(format!("{} labels for {b} samples", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= cfg.num_classes) {
            return Err(Error::argument(format!("class label {bad} outside [0, {})", cfg.num_classes)));
        }
        let c = cfg.hidden_dim;
        let scale_embed = params.get("scale_embed")?;
        let cls = params.get("cls")?;
        let mut pieces = Vec::with_capacity(2 * cfg.num_scales());
        for (k, x) in pyramid.x.iter().enumerate() {
            let x = x.to_dtype(self.dtype())?;
            let tokens = linear(
                &patchify(&x, cfg.patch_of(k))?,
                &params.get(&format!("embed.{k}.w"))?,
                Some(&params.get(&format!("embed.{k}.b"))?),
            )?;
            let e = scale_embed.get(k)?;
            pieces.push(tokens.broadcast_add(&e)?);
            let cls_token = (cls.get(k)? + &e)?.reshape((1, 1, c))?.broadcast_as((b, 1, c))?;
            pieces.push(cls_token.contiguous()?);
        }
        let mut h = Tensor::cat(&pieces, 1)?;
        let dims = Self::dims(cfg);
        let mut attn = self.retain_attention.then(Vec::new);
        for i in 0..cfg.depth {
            let (next, probs) = block_forward(
                params,
                &format!("blocks.{i}"),
                dims,
                &h,
                &self.rope,
                self.mask_bias.as_ref(),
                None,
                self.retain_attention,
            )?;
            h = next;
            if let (Some(maps), Some(p)) = (attn.as_mut(), probs) {
                maps.push(p);
            }
        }
        let h = rms_norm(&h, Some(&params.get("final_norm")?))?;
        let slots: Vec<u32> = self.layout.cls_slots.iter().map(|&s| s as u32).collect();
        let slots = Tensor::from_vec(slots, self.layout.num_scales(), &Device::Cpu)?;
        let feats = h.index_select(&slots, 1)?; // [b, K+1, c]
        let uncond = linear(&feats, &params.get("head.w")?, None)?.squeeze(2)?;
        let ids = Tensor::from_vec(labels.to_vec(), b, &Device::Cpu)?;
        let class = params.get("class_embed")?.index_select(&ids, 0)?.unsqueeze(1)?;
        let projection = feats.broadcast_mul(&class)?.sum(2)?;
        let logits = (uncond + projection)?.broadcast_add(&params.get("head.scale_bias")?)?;
        let finite = logits.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        if !finite.is_finite() {
            return Err(Error::numeric("non-finite discriminator logits"));
        }
        Ok(DiscriminatorOutput { logits, attn })
    }
}

const DUMP_MAGIC: &[u8; 4] = b"SGAT";
const DUMP_VERSION: u32 = 1;

/// Writes per-layer attention maps as a little-endian tensor container.
///
/// Layout: magic `SGAT`, `u32` version, `u32` dtype (0 = f32, 1 = f64),
/// `u32` layer count, `u32` rank, `rank` x `u64` dims, then every layer's
/// values in row-major order.
pub fn write_attention_dump(path: impl AsRef<Path>, maps: &[Tensor]) -> Result<()> {
    let path = path.as_ref();
    let first = maps.first().ok_or_else(|| Error::argument("no attention maps to write"))?;
    let dims = first.dims().to_vec();
    if maps.iter().any(|m| m.dims() != dims.as_slice()) {
        return Err(Error::contract("attention maps have differing shapes"));
    }
    let (code, dtype) = match first.dtype() {
        DType::F64 => (1u32, DType::F64),
        _ => (0u32, DType::F32),
    };
    let mut buf = Vec::new();
    buf.extend_from_slice(DUMP_MAGIC);
    buf.extend_from_slice(&DUMP_VERSION.to_le_bytes());
    buf.extend_from_slice(&code.to_le_bytes());
    buf.extend_from_slice(&(maps.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for d in &dims {
        buf.extend_from_slice(&(*d as u64).to_le_bytes());
    }
    for m in maps {
        let flat = m.to_dtype(dtype)?.flatten_all()?;
        if dtype == DType::F64 {
            for v in flat.to_vec1::<f64>()? {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        } else {
            for v in flat.to_vec1::<f32>()? {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_attention_dump(path: impl AsRef<Path>) -> Result<Vec<Tensor>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::Format {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    };
    let mut cursor = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes.get(cursor..cursor + n).ok_or_else(|| bad("truncated"))?;
        cursor += n;
        Ok(s)
    };
    if take(4)? != DUMP_MAGIC {
        return Err(bad("bad magic"));
    }
    let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().expect("4 bytes"));
    if u32_at(take(4)?) != DUMP_VERSION {
        return Err(bad("unsupported version"));
    }
    let code = u32_at(take(4)?);
    let layers = u32_at(take(4)?) as usize;
    let rank = u32_at(take(4)?) as usize;
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize);
    }
    let n: usize = dims.iter().product();
    let mut out = Vec::with_capacity(layers);
    for _ in 0..layers {
        let t = match code {
            0 => {
                let raw = take(4 * n)?;
                let v: Vec<f32> = raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect();
                Tensor::from_vec(v, dims.as_slice(), &Device::Cpu)?
            }
            1 => {
                let raw = take(8 * n)?;
                let v: Vec<f64> = raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect();
                Tensor::from_vec(v, dims.as_slice(), &Device::Cpu)?
            }
            _ => return Err(bad("unknown dtype code")),
        };
        out.push(t);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::normal_tensor;

    pub(crate) fn tiny_cfg() -> ModelConfig {
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

    fn pyramid(cfg: &ModelConfig, b: usize, seed: u64) -> ScalePyramid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = (0..cfg.num_scales())
            .map(|k| {
                let r = cfg.resolution_of(k);
                normal_tensor(&mut rng, &[b, r, r, cfg.channels_in], DType::F64).unwrap()
            })
            .collect();
        ScalePyramid {
            x,
            source: crate::pyramid::PyramidSource::Real,
        }
    }

    #[test]
    fn two_scale_mask_is_block_diagonal() {
        let layout = ScaleTokenLayout::from_spatial_counts(&[2, 2]);
        let mask = build_scale_mask(&layout, MaskMode::ScaleWise).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(mask.get(i, j), (i < 3) == (j < 3), "({i},{j})");
            }
        }
        assert!(build_scale_mask(&layout, MaskMode::Aggregated).unwrap().is_full());
    }

    #[test]
    fn desk_layout_blocks() {
        let layout = ScaleTokenLayout::from_config(&ModelConfig::desk_discriminator()).unwrap();
        assert_eq!(layout.seq_len, 89);
        let sizes: Vec<usize> = layout.blocks.iter().map(|(s, e)| e - s).collect();
        assert_eq!(sizes, vec![2, 5, 17, 65]);
        assert_eq!(layout.cls_slots, vec![1, 6, 23, 88]);
    }

    #[test]
    fn overlapping_blocks_are_rejected() {
        let mut layout = ScaleTokenLayout::from_spatial_counts(&[2, 2]);
        layout.blocks[1] = (2, 6);
        layout.cls_slots[1] = 5;
        assert!(matches!(
            build_scale_mask(&layout, MaskMode::ScaleWise),
            Err(Error::Layout(_))
        ));
    }

    #[test]
    fn mask_is_symmetric_reflexive_and_stable() {
        let layout = ScaleTokenLayout::from_spatial_counts(&[3, 1, 4]);
        let a = build_scale_mask(&layout, MaskMode::ScaleWise).unwrap();
        let b = build_scale_mask(&layout, MaskMode::ScaleWise).unwrap();
        assert_eq!(a, b);
        for i in 0..a.seq_len {
            assert!(a.get(i, i));
            for j in 0..a.seq_len {
                assert_eq!(a.get(i, j), a.get(j, i));
            }
        }
    }

    #[test]
    fn arity_and_scale_isolation() {
        let cfg = tiny_cfg();
        let d = Discriminator::new(cfg.clone(), MaskMode::ScaleWise, DType::F64, 1).unwrap();
        let p = pyramid(&cfg, 2, 0);
        let out = d.discriminate(&p, &[0, 2]).unwrap();
        assert_eq!(out.logits.dims(), &[2, 3]);
        let mut q = p.clone();
        q.x[0] = pyramid(&cfg, 2, 99).x[0].clone();
        let out2 = d.discriminate(&q, &[0, 2]).unwrap();
        let (a, b) = (out.to_rows().unwrap(), out2.to_rows().unwrap());
        for s in 0..2 {
            assert_ne!(a[s][0], b[s][0]);
            assert_eq!(a[s][1..], b[s][1..]);
        }
    }

    #[test]
    fn aggregated_mode_leaks_across_scales_with_same_parameters() {
        let cfg = tiny_cfg();
        let masked = Discriminator::new(cfg.clone(), MaskMode::ScaleWise, DType::F64, 1).unwrap();
        let open =
            Discriminator::with_params(cfg.clone(), MaskMode::Aggregated, masked.params().clone()).unwrap();
        let p = pyramid(&cfg, 2, 0);
        let mut q = p.clone();
        q.x[0] = pyramid(&cfg, 2, 99).x[0].clone();
        let a = open.discriminate(&p, &[1, 1]).unwrap().to_rows().unwrap();
        let b = open.discriminate(&q, &[1, 1]).unwrap().to_rows().unwrap();
        assert!((0..2).any(|s| a[s][1..] != b[s][1..]));
    }

    #[test]
    fn attention_maps_need_retention_and_are_normalized() {
        let cfg = tiny_cfg();
        let d = Discriminator::new(cfg.clone(), MaskMode::ScaleWise, DType::F64, 1).unwrap();
        let p = pyramid(&cfg, 1, 0);
        assert!(matches!(d.attention_maps(&p, &[0]), Err(Error::Unsupported(_))));
        let d = d.with_attention_retention(true);
        let maps = d.attention_maps(&p, &[0]).unwrap();
        assert_eq!(maps.len(), cfg.depth);
        let ids = d.layout().block_ids();
        let seq = d.layout().seq_len;
        for m in &maps {
            let v = m.flatten_all().unwrap().to_vec1::<f64>().unwrap();
            for (r, row) in v.chunks(seq).enumerate() {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                let i = r % seq;
                for (j, &a) in row.iter().enumerate() {
                    if ids[i] != ids[j] {
                        assert_eq!(a, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn attention_dump_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("attn.bin");
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let maps: Vec<Tensor> = (0..3)
            .map(|_| normal_tensor(&mut rng, &[2, 2, 5, 5], DType::F32).unwrap())
            .collect();
        write_attention_dump(&path, &maps).unwrap();
        let back = read_attention_dump(&path).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in maps.iter().zip(&back) {
            assert_eq!(b.dims(), &[2, 2, 5, 5]);
            assert_eq!(
                a.flatten_all().unwrap().to_vec1::<f32>().unwrap(),
                b.flatten_all().unwrap().to_vec1::<f32>().unwrap()
            );
        }
        std::fs::write(&path, b"nope").unwrap();
        assert!(matches!(read_attention_dump(&path), Err(Error::Format { .. })));
    }
}
