//! Offline adapter for pretrained checkpoints in a local hub cache.
//!
//! Layout: `$UDAKIT_HUB_CACHE/<id with '/' replaced by "--">/` holding a
//! `config.json` and `model.safetensors`.

use std::path::PathBuf;

use safetensors::SafeTensors;
use serde::Deserialize;

use super::{BackboneSpec, ClassifierModel};
use crate::error::{Error, Result};
use crate::tensor::{Array, Real};

pub const HUB_CACHE_ENV: &str = "UDAKIT_HUB_CACHE";
pub const COMPACT_MODEL_TYPE: &str = "udakit-compact";

/// Published embedding widths of well-known checkpoints.
const KNOWN: [(&str, usize); 6] = [
    ("google/vit-base-patch16-224", 768),
    ("google/vit-base-patch16-224-in21k", 768),
    ("microsoft/swinv2-base-patch4-window12-192-22k", 1024),
    ("facebook/convnextv2-base-22k-224", 1024),
    ("facebook/deit-base-distilled-patch16-224", 768),
    ("facebook/deit-base-patch16-224", 768),
];

pub fn known_feature_dim(id: &str) -> Option<usize> {
    KNOWN.iter().find(|(k, _)| *k == id).map(|(_, d)| *d)
}

/// The subset of a hub `config.json` this adapter needs.
#[derive(Clone, Debug, Deserialize)]
pub struct HubConfig {
    pub model_type: String,
    pub hidden_size: Option<usize>,
    pub hidden_sizes: Option<Vec<usize>>,
}

impl HubConfig {
    pub fn feature_dim(&self) -> Option<usize> {
        self.hidden_size
            .or_else(|| self.hidden_sizes.as_ref().and_then(|h| h.last().copied()))
    }
}

pub fn resolve_hub_dir(id: &str) -> Result<PathBuf> {
    let root = std::env::var_os(HUB_CACHE_ENV)
        .ok_or_else(|| Error::Dependency(format!("hub checkpoint {id:?} unavailable: {HUB_CACHE_ENV} is not set")))?;
    if id.is_empty() || id.split('/').any(|p| p.is_empty() || p == "." || p == "..") {
        return Err(Error::Dependency(format!("invalid hub checkpoint id {id:?}")));
    }
    let dir = PathBuf::from(root).join(id.replace('/', "--"));
    if !dir.join("config.json").is_file() {
        return Err(Error::Dependency(format!(
            "hub checkpoint {id:?} not found in cache {}",
            dir.display()
        )));
    }
    Ok(dir)
}

pub(super) fn load_hub<T: Real>(id: &str, spec: &BackboneSpec, seed: u64) -> Result<ClassifierModel<T>> {
    let dir = resolve_hub_dir(id)?;
    let cfg_path = dir.join("config.json");
    let text = std::fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
    let cfg: HubConfig =
        serde_json::from_str(&text).map_err(|e| Error::Integrity(format!("{}: {e}", cfg_path.display())))?;
    let d = cfg
        .feature_dim()
        .ok_or_else(|| Error::Integrity(format!("{id}: config has no hidden size")))?;
    if d != spec.feature_dim {
        return Err(Error::Integrity(format!(
            "{id}: checkpoint feature dimension {d} does not match spec {}",
            spec.feature_dim
        )));
    }
    if cfg.model_type != COMPACT_MODEL_TYPE {
        return Err(Error::Dependency(format!(
            "{id}: architecture {:?} has no runtime in this build",
            cfg.model_type
        )));
    }
    let mut model = ClassifierModel::<T>::compact(spec.clone(), seed)?;
    let weights = dir.join("model.safetensors");
    let bytes = std::fs::read(&weights).map_err(|e| Error::io(&weights, e))?;
    let st = SafeTensors::deserialize(&bytes).map_err(|e| Error::Integrity(format!("{}: {e}", weights.display())))?;
    let names: Vec<String> = model
        .params
        .iter()
        .filter(|(_, p)| p.name.starts_with("features."))
        .map(|(_, p)| p.name.clone())
        .collect();
    for name in names {
        let view = st
            .tensor(&name)
            .map_err(|_| Error::Integrity(format!("{id}: missing tensor {name}")))?;
        let id_ = model.params.id(&name).expect("own parameter");
        let slot = &mut model.params.get_mut(id_).value;
        if view.shape() != slot.shape() {
            return Err(Error::Integrity(format!(
                "{id}: tensor {name} has shape {:?}, expected {:?}",
                view.shape(),
                slot.shape()
            )));
        }
        let data: Vec<T> = match view.dtype() {
            safetensors::Dtype::F32 => f32::from_le_bytes_slice(view.data())
                .into_iter()
                .map(|v| T::lit(v as f64))
                .collect(),
            safetensors::Dtype::F64 => f64::from_le_bytes_slice(view.data()).into_iter().map(T::lit).collect(),
            other => return Err(Error::Integrity(format!("{id}: tensor {name} has dtype {other:?}"))),
        };
        *slot = Array::from_vec(view.shape(), data);
    }
    Ok(model)
}
