//! Safetensors checkpoints with an embedded key-value metadata record.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};

use super::optim::{AdamW, AdamWConfig};
use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::nn::ParamStore;

const META_KEY: &str = "__meta__";

/// Loaded checkpoint: metadata plus every stored tensor by name.
#[derive(Debug, Clone)]
pub struct CheckpointData {
    pub meta: KvMap,
    pub tensors: HashMap<String, Tensor>,
}

/// Everything a checkpoint writer needs.
pub struct CheckpointWriter<'a> {
    pub meta: KvMap,
    pub stores: Vec<(&'a str, &'a ParamStore)>,
    pub optimizers: Vec<(&'a str, &'a AdamW, &'a ParamStore)>,
}

impl CheckpointWriter<'_> {
    /// Writes to a sibling temporary file, then renames it into place.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut tensors: HashMap<String, Tensor> = HashMap::new();
        for (prefix, store) in &self.stores {
            for (name, t) in store.to_named_tensors(&format!("{prefix}.")) {
                tensors.insert(name, t);
            }
        }
        let mut meta = self.meta.clone();
        for (prefix, opt, store) in &self.optimizers {
            meta.set(format!("{prefix}.step"), opt.step);
            for ((name, _), (m, v)) in store.iter().zip(opt.m.iter().zip(&opt.v)) {
                tensors.insert(format!("{prefix}.m.{name}"), m.clone());
                tensors.insert(format!("{prefix}.v.{name}"), v.clone());
            }
        }
        let text = meta.to_text().into_bytes();
        let n = text.len();
        tensors.insert(META_KEY.to_string(), Tensor::from_vec(text, n, &Device::Cpu)?);
        let file_name = path
            .file_name()
            .ok_or_else(|| Error::argument(format!("checkpoint path {} has no file name", path.display())))?;
        let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
        candle_core::safetensors::save(&tensors, &tmp).map_err(|e| match e {
            candle_core::Error::Io(io) => Error::io(&tmp, io),
            other => Error::Tensor(other),
        })?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }
}

impl CheckpointData {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)));
        }
        let mut tensors = candle_core::safetensors::load(path, &Device::Cpu).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        let raw = tensors.remove(META_KEY).ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            msg: "missing metadata record".into(),
        })?;
        if raw.dtype() != DType::U8 {
            return Err(Error::Format {
                path: path.to_path_buf(),
                msg: "metadata record is not bytes".into(),
            });
        }
        let text = String::from_utf8(raw.to_vec1::<u8>()?).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        Ok(Self {
            meta: KvMap::parse(&text)?,
            tensors,
        })
    }

    /// Parameters stored under `prefix.`, in the order of `template`.
    pub fn params(&self, template: &ParamStore, prefix: &str) -> Result<ParamStore> {
        ParamStore::from_named_tensors(template, &self.tensors, &format!("{prefix}."))
    }

    pub fn optimizer(&self, template: &ParamStore, prefix: &str, cfg: AdamWConfig) -> Result<AdamW> {
        let m = ParamStore::from_named_tensors(template, &self.tensors, &format!("{prefix}.m."))?;
        let v = ParamStore::from_named_tensors(template, &self.tensors, &format!("{prefix}.v."))?;
        let detach = |s: &ParamStore| s.vars().iter().map(|x| x.as_tensor().detach()).collect();
        Ok(AdamW {
            cfg,
            step: self.meta.require(&format!("{prefix}.step"))?,
            m: detach(&m),
            v: detach(&v),
        })
    }
}
