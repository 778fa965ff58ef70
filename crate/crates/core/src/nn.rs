//! Parameter storage and the transformer building blocks shared by the
//! generator and the discriminator.

use std::collections::HashMap;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Large negative logit used for disallowed attention pairs. `exp` of it
/// underflows to exactly zero in both f32 and f64.
pub(crate) const MASKED_LOGIT: f64 = -1e9;

const NORM_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Normal(f64),
    Zeros,
    Ones,
}

/// Ordered, named collection of trainable variables.
///
/// Insertion order is the canonical order for optimizers, EMA and
/// checkpoints.
#[derive(Debug, Clone)]
pub struct ParamStore {
    names: Vec<String>,
    vars: Vec<Var>,
    index: HashMap<String, usize>,
    dtype: DType,
}

impl ParamStore {
    pub fn new(dtype: DType) -> Self {
        Self {
            names: Vec::new(),
            vars: Vec::new(),
            index: HashMap::new(),
            dtype,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.vars.iter().map(|v| v.elem_count()).sum()
    }

    pub(crate) fn add<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        init: Init,
        rng: &mut R,
    ) -> Result<()> {
        let name = name.into();
        let n: usize = shape.iter().product();
        let values: Vec<f64> = match init {
            Init::Normal(std) => (0..n)
                .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                .collect(),
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
        };
        let t = Tensor::from_vec(values, shape, &Device::Cpu)?.to_dtype(self.dtype)?;
        self.insert(name, t)
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::contract(format!("duplicate parameter `{name}`")));
        }
        let var = Var::from_tensor(&value.to_dtype(self.dtype)?)?;
        self.index.insert(name.clone(), self.vars.len());
        self.names.push(name);
        self.vars.push(var);
        Ok(())
    }

    pub fn var(&self, name: &str) -> Result<&Var> {
        self.index
            .get(name)
            .map(|&i| &self.vars[i])
            .ok_or_else(|| Error::config(format!("missing parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.names.iter().map(String::as_str).zip(self.vars.iter())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// A detached copy with fresh variables holding the same values.
    pub fn deep_copy(&self) -> Result<Self> {
        let mut out = Self::new(self.dtype);
        for (name, var) in self.iter() {
            out.insert(name, var.as_tensor().detach().copy()?)?;
        }
        Ok(out)
    }

    /// Overwrites values from `other`; names and shapes must agree.
    pub fn assign_from(&self, other: &ParamStore) -> Result<()> {
        self.ensure_same_layout(other)?;
        for (dst, src) in self.vars.iter().zip(other.vars.iter()) {
            dst.set(&src.as_tensor().detach())?;
        }
        Ok(())
    }

    pub fn ensure_same_layout(&self, other: &ParamStore) -> Result<()> {
        if self.names != other.names {
            return Err(Error::contract("parameter sets have different names"));
        }
        for ((name, a), b) in self.iter().zip(other.vars.iter()) {
            if a.dims() != b.dims() {
                return Err(Error::contract(format!(
                    "parameter `{name}` has shape {:?} vs {:?}",
                    a.dims(),
                    b.dims()
                )));
            }
        }
        Ok(())
    }

    /// Checks that `self` has exactly the names and shapes of `expected`.
    pub(crate) fn ensure_compatible(&self, expected: &ParamStore) -> Result<()> {
        expected
            .ensure_same_layout(self)
            .map_err(|e| Error::config(format!("parameters do not match the config: {e}")))
    }

    pub(crate) fn view(&self, tracked: bool) -> ParamView<'_> {
        ParamView {
            store: self,
            tracked,
        }
    }

    pub fn to_named_tensors(&self, prefix: &str) -> Vec<(String, Tensor)> {
        self.iter()
            .map(|(n, v)| (format!("{prefix}{n}"), v.as_tensor().detach()))
            .collect()
    }

    /// Rebuilds a store in the order of `template` from `tensors[prefix + name]`.
    pub fn from_named_tensors(
        template: &ParamStore,
        tensors: &HashMap<String, Tensor>,
        prefix: &str,
    ) -> Result<Self> {
        let mut out = Self::new(template.dtype);
        for (name, var) in template.iter() {
            let key = format!("{prefix}{name}");
            let t = tensors
                .get(&key)
                .ok_or_else(|| Error::config(format!("missing tensor `{key}`")))?;
            if t.dims() != var.dims() {
                return Err(Error::config(format!(
                    "tensor `{key}` has shape {:?}, expected {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
            out.insert(name, t.clone())?;
        }
        Ok(out)
    }
}

/// Read access to a [`ParamStore`] that either records gradients for the
/// variables or hands out detached tensors (frozen network).
#[derive(Clone, Copy)]
pub(crate) struct ParamView<'a> {
    store: &'a ParamStore,
    tracked: bool,
}

impl ParamView<'_> {
    pub fn get(&self, name: &str) -> Result<Tensor> {
        let var = self.store.var(name)?;
        Ok(if self.tracked {
            var.as_tensor().clone()
        } else {
            var.as_tensor().detach()
        })
    }
}

/// `x @ w + b` over the last dimension; `w` is stored `[in, out]`.
pub(crate) fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let dims = x.dims().to_vec();
    let (last, lead) = dims.split_last().ok_or_else(|| Error::contract("linear on a scalar"))?;
    let rows: usize = lead.iter().product();
    let out = x.reshape((rows, *last))?.matmul(w)?;
    let out = match b {
        Some(b) => out.broadcast_add(b)?,
        None => out,
    };
    let mut shape = lead.to_vec();
    shape.push(w.dim(1)?);
    Ok(out.reshape(shape)?)
}

pub(crate) fn rms_norm(x: &Tensor, weight: Option<&Tensor>) -> Result<Tensor> {
    let inv = x
        .sqr()?
        .mean_keepdim(D::Minus1)?
        .affine(1.0, NORM_EPS)?
        .sqrt()?
        .recip()?;
    let y = x.broadcast_mul(&inv)?;
    Ok(match weight {
        Some(w) => y.broadcast_mul(w)?,
        None => y,
    })
}

pub(crate) fn softmax_last(x: &Tensor) -> Result<Tensor> {
    // The shift is a constant of the function, so detaching it keeps the
    // gradient exact.
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    let s = e.sum_keepdim(D::Minus1)?;
    Ok(e.broadcast_div(&s)?)
}

/// Numerically stable `ln(1 + e^x)`.
pub(crate) fn softplus(x: &Tensor) -> Result<Tensor> {
    let tail = x.abs()?.neg()?.exp()?.affine(1.0, 1.0)?.log()?;
    Ok((x.relu()? + tail)?)
}

pub(crate) fn ensure_finite(t: &Tensor, what: &str, layer: Option<usize>) -> Result<()> {
    let s = t.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    if s.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric {
            msg: format!("non-finite {what}"),
            layer,
        })
    }
}

/// 2-D rotary tables for a token sequence.
///
/// The first half of each head uses the row coordinate, the second half the
/// column coordinate; tokens without a position (class tokens) get the
/// identity rotation.
#[derive(Debug, Clone)]
pub(crate) struct Rope {
    cos: Tensor,
    sin: Tensor,
}

impl Rope {
    pub fn new(positions: &[Option<(usize, usize)>], head_dim: usize, dtype: DType) -> Result<Self> {
        let half = head_dim / 2;
        let quarter = head_dim / 4;
        let mut cos = Vec::with_capacity(positions.len() * head_dim);
        let mut sin = Vec::with_capacity(positions.len() * head_dim);
        for pos in positions {
            let mut angles = vec![0.0f64; half];
            if let Some((row, col)) = *pos {
                for i in 0..half {
                    let (coord, j) = if i < quarter { (row, i) } else { (col, i - quarter) };
                    let freq = 100f64.powf(-(j as f64) / quarter as f64);
                    angles[i] = coord as f64 * freq;
                }
            }
            for _ in 0..2 {
                cos.extend(angles.iter().map(|a| a.cos()));
                sin.extend(angles.iter().map(|a| a.sin()));
            }
        }
        let n = positions.len();
        Ok(Self {
            cos: Tensor::from_vec(cos, (n, head_dim), &Device::Cpu)?.to_dtype(dtype)?,
            sin: Tensor::from_vec(sin, (n, head_dim), &Device::Cpu)?.to_dtype(dtype)?,
        })
    }

    pub fn grid_positions(side: usize) -> Vec<Option<(usize, usize)>> {
        (0..side * side).map(|i| Some((i / side, i % side))).collect()
    }

    /// `x`: `[batch, heads, tokens, head_dim]`.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let d = x.dim(D::Minus1)?;
        let half = d / 2;
        let x1 = x.narrow(D::Minus1, 0, half)?;
        let x2 = x.narrow(D::Minus1, half, half)?;
        let rotated = Tensor::cat(&[&x2.neg()?, &x1], D::Minus1)?;
        Ok((x.broadcast_mul(&self.cos)? + rotated.broadcast_mul(&self.sin)?)?)
    }
}

/// Fixed 2-D sinusoidal embedding `[side * side, dim]`.
pub(crate) fn sinusoidal_2d(side: usize, dim: usize, dtype: DType) -> Result<Tensor> {
    let quarter = dim / 4;
    let mut data = Vec::with_capacity(side * side * dim);
    for i in 0..side * side {
        let (row, col) = ((i / side) as f64, (i % side) as f64);
        let mut token = vec![0.0f64; dim];
        for j in 0..quarter {
            let freq = 1.0 / 10000f64.powf(j as f64 / quarter as f64);
            token[j] = (row * freq).sin();
            token[quarter + j] = (row * freq).cos();
            token[2 * quarter + j] = (col * freq).sin();
            token[3 * quarter + j] = (col * freq).cos();
        }
        data.extend(token);
    }
    Ok(Tensor::from_vec(data, (side * side, dim), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Shapes of one transformer block.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BlockDims {
    pub hidden: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub ffn_hidden: usize,
    pub depth: usize,
}

impl BlockDims {
    pub fn attn_dim(&self) -> usize {
        self.heads * self.head_dim
    }
}

/// Per-sample adaptive modulation: `(shift, scale, gate)` for the attention
/// and feed-forward branches, each `[batch, 1, hidden]`.
pub(crate) struct Modulation {
    pub attn: [Tensor; 3],
    pub ffn: [Tensor; 3],
}

pub(crate) fn register_block<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    dims: BlockDims,
    norm_weights: bool,
    rng: &mut R,
) -> Result<()> {
    let c = dims.hidden;
    let a = dims.attn_dim();
    let h = dims.ffn_hidden;
    let residual_scale = 1.0 / (2.0 * dims.depth as f64).sqrt();
    if norm_weights {
        store.add(format!("{prefix}.norm1"), &[c], Init::Ones, rng)?;
        store.add(format!("{prefix}.norm2"), &[c], Init::Ones, rng)?;
    }
    store.add(format!("{prefix}.attn.qkv"), &[c, 3 * a], Init::Normal(1.0 / (c as f64).sqrt()), rng)?;
    store.add(format!("{prefix}.attn.q_norm"), &[dims.head_dim], Init::Ones, rng)?;
    store.add(format!("{prefix}.attn.k_norm"), &[dims.head_dim], Init::Ones, rng)?;
    store.add(
        format!("{prefix}.attn.out"),
        &[a, c],
        Init::Normal(residual_scale / (a as f64).sqrt()),
        rng,
    )?;
    store.add(format!("{prefix}.ffn.in"), &[c, 2 * h], Init::Normal(1.0 / (c as f64).sqrt()), rng)?;
    store.add(
        format!("{prefix}.ffn.out"),
        &[h, c],
        Init::Normal(residual_scale / (h as f64).sqrt()),
        rng,
    )?;
    Ok(())
}

fn modulate(x: &Tensor, shift: &Tensor, scale: &Tensor) -> Result<Tensor> {
    Ok(x.broadcast_mul(&scale.affine(1.0, 1.0)?)?.broadcast_add(shift)?)
}

/// One pre-norm block. Returns the new residual stream and, when asked,
/// the attention probabilities `[batch, heads, tokens, tokens]`.
pub(crate) fn block_forward(
    params: ParamView<'_>,
    prefix: &str,
    dims: BlockDims,
    x: &Tensor,
    rope: &Rope,
    mask_bias: Option<&Tensor>,
    modulation: Option<&Modulation>,
    keep_attention: bool,
) -> Result<(Tensor, Option<Tensor>)> {
    let (b, n, _) = x.dims3()?;
    let (heads, hd) = (dims.heads, dims.head_dim);
    let w1 = params.get(&format!("{prefix}.norm1")).ok();
    let w2 = params.get(&format!("{prefix}.norm2")).ok();

    let mut y = rms_norm(x, w1.as_ref())?;
    if let Some(m) = modulation {
        y = modulate(&y, &m.attn[0], &m.attn[1])?;
    }
    let qkv = linear(&y, &params.get(&format!("{prefix}.attn.qkv"))?, None)?
        .reshape((b, n, 3, heads, hd))?
        .permute((2, 0, 3, 1, 4))?;
    let q = qkv.get(0)?.contiguous()?;
    let k = qkv.get(1)?.contiguous()?;
    let v = qkv.get(2)?.contiguous()?;
    let q = rope.apply(&rms_norm(&q, Some(&params.get(&format!("{prefix}.attn.q_norm"))?))?)?;
    let k = rope.apply(&rms_norm(&k, Some(&params.get(&format!("{prefix}.attn.k_norm"))?))?)?;
    let scores = (q.matmul(&k.t()?.contiguous()?)? / (hd as f64).sqrt())?;
    let scores = match mask_bias {
        Some(bias) => scores.broadcast_add(bias)?,
        None => scores,
    };
    let probs = softmax_last(&scores)?;
    let attn = probs
        .matmul(&v)?
        .transpose(1, 2)?
        .contiguous()?
        .reshape((b, n, heads * hd))?;
    let mut branch = linear(&attn, &params.get(&format!("{prefix}.attn.out"))?, None)?;
    if let Some(m) = modulation {
        branch = branch.broadcast_mul(&m.attn[2])?;
    }
    let x = (x + branch)?;

    let mut y = rms_norm(&x, w2.as_ref())?;
    if let Some(m) = modulation {
        y = modulate(&y, &m.ffn[0], &m.ffn[1])?;
    }
    let gate_up = linear(&y, &params.get(&format!("{prefix}.ffn.in"))?, None)?;
    let gate = gate_up.narrow(D::Minus1, 0, dims.ffn_hidden)?;
    let up = gate_up.narrow(D::Minus1, dims.ffn_hidden, dims.ffn_hidden)?;
    let hidden = (gate.silu()? * up)?;
    let mut branch = linear(&hidden, &params.get(&format!("{prefix}.ffn.out"))?, None)?;
    if let Some(m) = modulation {
        branch = branch.broadcast_mul(&m.ffn[2])?;
    }
    let x = (x + branch)?;
    Ok((x, keep_attention.then(|| probs.detach())))
}

/// `[batch, side*patch, side*patch, ch]` to `[batch, side*side, patch*patch*ch]`.
pub(crate) fn patchify(x: &Tensor, patch: usize) -> Result<Tensor> {
    let (b, h, w, c) = x.dims4()?;
    let (gh, gw) = (h / patch, w / patch);
    Ok(x.reshape((b, gh, patch, gw, patch, c))?
        .permute((0, 1, 3, 2, 4, 5))?
        .contiguous()?
        .reshape((b, gh * gw, patch * patch * c))?)
}

pub(crate) fn unpatchify(tokens: &Tensor, side: usize, patch: usize, channels: usize) -> Result<Tensor> {
    let b = tokens.dim(0)?;
    Ok(tokens
        .reshape((b, side, side, patch, patch, channels))?
        .permute((0, 1, 3, 2, 4, 5))?
        .contiguous()?
        .reshape((b, side * patch, side * patch, channels))?)
}

pub fn normal_tensor<R: Rng + ?Sized>(
    rng: &mut R,
    shape: &[usize],
    dtype: DType,
) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Ok(Tensor::from_vec(data, shape, &Device::Cpu)?.to_dtype(dtype)?)
}
