use std::collections::HashMap;
use std::path::Path;

use safetensors::tensor::TensorView;
use safetensors::{Dtype, SafeTensors};
use serde::{Deserialize, Serialize};

use super::{BackboneSpec, ClassifierModel};
use crate::error::{Error, Result};
use crate::tensor::{Array, ParamGroup, ParamStore, Real};

const META_KEY: &str = "udakit";
pub const FORMAT_VERSION: u32 = 1;

/// Metadata stored next to the tensors of a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub spec: BackboneSpec,
    pub num_classes: usize,
    pub feature_dim: usize,
    /// Free-form training provenance (scheme, epoch, source checkpoint, ...).
    #[serde(default)]
    pub provenance: serde_json::Value,
}

impl CheckpointMeta {
    pub fn for_model<T: Real>(model: &ClassifierModel<T>, provenance: serde_json::Value) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            spec: model.spec().clone(),
            num_classes: model.num_classes(),
            feature_dim: model.feature_dim(),
            provenance,
        }
    }
}

pub fn encode_checkpoint<T: Real>(model: &ClassifierModel<T>, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let bytes: Vec<(String, Vec<usize>, Vec<u8>)> = model
        .params
        .iter()
        .map(|(_, p)| {
            (
                p.name.clone(),
                p.value.shape().to_vec(),
                T::to_le_bytes_vec(p.value.data()),
            )
        })
        .collect();
    let views = bytes
        .iter()
        .map(|(name, shape, data)| {
            TensorView::new(T::DTYPE, shape.clone(), data)
                .map(|v| (name.clone(), v))
                .map_err(|e| Error::Integrity(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let meta_json = serde_json::to_string(meta).map_err(|e| Error::Integrity(e.to_string()))?;
    let info = HashMap::from([(META_KEY.to_string(), meta_json)]);
    safetensors::serialize(views, Some(info)).map_err(|e| Error::Integrity(e.to_string()))
}

fn read_tensor<T: Real>(name: &str, view: &TensorView<'_>) -> Result<Array<T>> {
    let shape = view.shape().to_vec();
    let data: Vec<T> = match view.dtype() {
        d if d == T::DTYPE => T::from_le_bytes_slice(view.data()),
        Dtype::F32 => f32::from_le_bytes_slice(view.data())
            .into_iter()
            .map(|v| T::lit(v as f64))
            .collect(),
        Dtype::F64 => f64::from_le_bytes_slice(view.data()).into_iter().map(T::lit).collect(),
        other => {
            return Err(Error::Integrity(format!(
                "tensor {name} has unsupported dtype {other:?}"
            )))
        }
    };
    if data.len() != shape.iter().product::<usize>() {
        return Err(Error::Integrity(format!("tensor {name} has inconsistent size")));
    }
    Ok(Array::from_vec(&shape, data))
}

/// Parses checkpoint bytes into a model and its metadata.
pub fn decode_checkpoint<T: Real>(bytes: &[u8]) -> Result<(ClassifierModel<T>, CheckpointMeta)> {
    let (_, header) =
        SafeTensors::read_metadata(bytes).map_err(|e| Error::Integrity(format!("checkpoint header: {e}")))?;
    let meta_json = header
        .metadata()
        .as_ref()
        .and_then(|m| m.get(META_KEY))
        .ok_or_else(|| Error::Integrity("checkpoint has no model metadata".into()))?;
    let meta: CheckpointMeta =
        serde_json::from_str(meta_json).map_err(|e| Error::Integrity(format!("checkpoint metadata: {e}")))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::Integrity(format!(
            "unsupported checkpoint version {}",
            meta.format_version
        )));
    }
    if meta.spec.feature_dim != meta.feature_dim {
        return Err(Error::Integrity(format!(
            "metadata feature dimension {} disagrees with spec {}",
            meta.feature_dim, meta.spec.feature_dim
        )));
    }
    if meta.num_classes < 2 || meta.num_classes > 1 << 16 || meta.spec.resolution > 4096 || meta.feature_dim > 1 << 16 {
        return Err(Error::Integrity("checkpoint metadata out of range".into()));
    }
    let st = SafeTensors::deserialize(bytes).map_err(|e| Error::Integrity(format!("checkpoint body: {e}")))?;
    // the stored head must match the metadata before the architecture is allocated
    let head_shape = st.tensor("head.weight").map(|v| v.shape().to_vec()).ok();
    if head_shape.as_deref() != Some(&[meta.num_classes, meta.feature_dim][..]) {
        return Err(Error::Integrity(format!(
            "head.weight shape {head_shape:?} disagrees with metadata ({} classes, d_f {})",
            meta.num_classes, meta.feature_dim
        )));
    }
    let mut store = ParamStore::new();
    let mut names: Vec<String> = st.names().into_iter().map(str::to_string).collect();
    names.sort();
    for name in names {
        let view = st.tensor(&name).map_err(|e| Error::Integrity(e.to_string()))?;
        let group = if name.starts_with("head.") {
            ParamGroup::Head
        } else {
            ParamGroup::Features
        };
        store.add(name.clone(), read_tensor(&name, &view)?, group);
    }
    let model = ClassifierModel::from_parts(meta.spec.clone(), store, meta.num_classes)?;
    Ok((model, meta))
}

pub fn save_checkpoint<T: Real>(model: &ClassifierModel<T>, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(model, meta)?;
    crate::io::write_atomic(path, &bytes)
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<(ClassifierModel<T>, CheckpointMeta)> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::config(format!("checkpoint {} does not exist", path.display())),
        _ => Error::io(path, e),
    })?;
    decode_checkpoint(&bytes).map_err(|e| match e {
        Error::Integrity(m) => Error::Integrity(format!("{}: {m}", path.display())),
        other => other,
    })
}
