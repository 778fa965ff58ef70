use candle_core::{DType, Device, Tensor};

use crate::discriminator::ScaleTokenLayout;
use crate::error::{Error, Result};

/// Per layer, the mean attention mass a token places outside its own scale.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionDependency {
    pub per_layer: Vec<f64>,
}

impl AttentionDependency {
    pub fn mean(&self) -> f64 {
        self.per_layer.iter().sum::<f64>() / self.per_layer.len() as f64
    }
}

/// Mean over samples, heads and query tokens of the attention weight that
/// falls outside the query's scale block.
pub fn cross_scale_attention_fraction(
    attn: &[Tensor],
    layout: &ScaleTokenLayout,
) -> Result<AttentionDependency> {
    layout.validate()?;
    let n = layout.seq_len;
    let ids = layout.block_ids();
    let foreign: Vec<f64> = (0..n * n)
        .map(|p| if ids[p / n] != ids[p % n] { 1.0 } else { 0.0 })
        .collect();
    let foreign = Tensor::from_vec(foreign, (n, n), &Device::Cpu)?;
    let per_layer = attn
        .iter()
        .enumerate()
        .map(|(l, a)| {
            let dims = a.dims();
            if dims.len() != 4 || dims[2] != n || dims[3] != n {
                return Err(Error::contract(format!(
                    "attention map {l} has shape {dims:?}, layout has {n} tokens"
                )));
            }
            let mass = a.to_dtype(DType::F64)?.broadcast_mul(&foreign)?.sum(3)?;
            Ok(mass.mean_all()?.to_scalar::<f64>()?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AttentionDependency { per_layer })
}
