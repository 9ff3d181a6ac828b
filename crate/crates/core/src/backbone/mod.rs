//! Classifier models: a feature extractor and a replaceable linear head
//! with per-group freeze control.

mod checkpoint;
mod hub;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointMeta};
pub use hub::{known_feature_dim, resolve_hub_dir, HubConfig, HUB_CACHE_ENV};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Array, Bound, ConvGeom, Graph, ParamGroup, ParamId, ParamStore, Real, Var};

pub const HEAD_INIT_STD: f64 = 0.02;
/// Class count given to a freshly loaded model before the task head is set.
pub const PLACEHOLDER_CLASSES: usize = 2;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneSource {
    Compact,
    Hub(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSpec {
    pub source: BackboneSource,
    pub resolution: usize,
    pub feature_dim: usize,
}

impl BackboneSpec {
    pub fn compact() -> Self {
        Self {
            source: BackboneSource::Compact,
            resolution: 64,
            feature_dim: 128,
        }
    }

    pub fn label(&self) -> String {
        match &self.source {
            BackboneSource::Compact => "compact".to_string(),
            BackboneSource::Hub(id) => id.clone(),
        }
    }
}

/// Which parameters a training scheme may update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trainable {
    HeadOnly,
    All,
}

/// Compact convolutional pyramid: `(kernel, stride, pad, out_channels)`;
/// the last width is replaced by the feature dimension.
const COMPACT_LAYERS: [(usize, usize, usize, usize); 4] = [(4, 4, 0, 32), (3, 2, 1, 64), (3, 2, 1, 128), (3, 1, 1, 0)];

#[derive(Clone, Debug)]
pub struct ClassifierModel<T: Real> {
    spec: BackboneSpec,
    pub params: ParamStore<T>,
    convs: Vec<(ParamId, ParamId, ConvGeom)>,
    head: (ParamId, ParamId),
    num_classes: usize,
}

fn kaiming_normal<T: Real>(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Array<T> {
    let n = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
    let len = shape.iter().product();
    Array::from_vec(shape, (0..len).map(|_| T::lit(n.sample(rng))).collect())
}

/// Normal draws resampled until they fall within two standard deviations.
fn truncated_normal<T: Real>(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Array<T> {
    let n = Normal::new(0.0, std).expect("finite std");
    let len = shape.iter().product();
    let data = (0..len)
        .map(|_| loop {
            let v = n.sample(rng);
            if v.abs() <= 2.0 * std {
                break T::lit(v);
            }
        })
        .collect();
    Array::from_vec(shape, data)
}

impl<T: Real> ClassifierModel<T> {
    /// Bundled compact backbone with Kaiming-normal weights and zero biases.
    pub fn compact(spec: BackboneSpec, seed: u64) -> Result<Self> {
        let res = spec.resolution;
        if res < 16 || res % 4 != 0 {
            return Err(Error::config(format!(
                "compact backbone needs a resolution divisible by 4 and at least 16, got {res}"
            )));
        }
        if spec.feature_dim == 0 {
            return Err(Error::config("feature dimension must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut convs = Vec::new();
        let mut cin = 3;
        for (i, &(k, stride, pad, width)) in COMPACT_LAYERS.iter().enumerate() {
            let cout = if width == 0 { spec.feature_dim } else { width };
            let fan_in = k * k * cin;
            let w = params.add(
                format!("features.conv{i}.weight"),
                kaiming_normal(&[cout, k, k, cin], fan_in, &mut rng),
                ParamGroup::Features,
            );
            let b = params.add(
                format!("features.conv{i}.bias"),
                Array::zeros(&[cout]),
                ParamGroup::Features,
            );
            convs.push((w, b, ConvGeom { kernel: k, stride, pad }));
            cin = cout;
        }
        let hw = params.add(
            "head.weight",
            Array::zeros(&[PLACEHOLDER_CLASSES, spec.feature_dim]),
            ParamGroup::Head,
        );
        let hb = params.add("head.bias", Array::zeros(&[PLACEHOLDER_CLASSES]), ParamGroup::Head);
        let mut model = Self {
            spec,
            params,
            convs,
            head: (hw, hb),
            num_classes: PLACEHOLDER_CLASSES,
        };
        model.replace_head(PLACEHOLDER_CLASSES, seed ^ 0x6865_6164)?;
        Ok(model)
    }

    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    pub fn feature_dim(&self) -> usize {
        self.spec.feature_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn head_ids(&self) -> (ParamId, ParamId) {
        self.head
    }

    /// Fresh `C x d_f` head from a truncated normal (std 0.02), zero bias.
    /// Feature parameters are untouched.
    pub fn replace_head(&mut self, num_classes: usize, seed: u64) -> Result<()> {
        if num_classes < 2 {
            return Err(Error::config(format!(
                "a classification head needs at least 2 classes, got {num_classes}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.spec.feature_dim;
        self.params.get_mut(self.head.0).value = truncated_normal(&[num_classes, d], HEAD_INIT_STD, &mut rng);
        self.params.get_mut(self.head.1).value = Array::zeros(&[num_classes]);
        self.num_classes = num_classes;
        Ok(())
    }

    pub fn set_trainable(&mut self, which: Trainable) {
        self.params.set_all_trainable(true);
        if which == Trainable::HeadOnly {
            self.params.set_group_trainable(ParamGroup::Features, false);
        }
    }

    /// Features only: `B x d_f`.
    pub fn features(&self, g: &mut Graph<'_, T>, bound: &Bound, x: Var) -> Result<Var> {
        let shape = g.value(x).shape().to_vec();
        let r = self.spec.resolution;
        if shape.len() != 4 || shape[1] != r || shape[2] != r || shape[3] != 3 {
            return Err(Error::Shape(format!(
                "expected a B x {r} x {r} x 3 batch, got {shape:?}"
            )));
        }
        let mut h = x;
        for &(w, b, geom) in &self.convs {
            h = g.conv2d(h, bound.var(w), Some(bound.var(b)), geom);
            h = g.relu(h);
        }
        Ok(g.mean_pool(h))
    }

    /// `(F, Z)` with `Z = F W^T + b`.
    pub fn forward(&self, g: &mut Graph<'_, T>, bound: &Bound, x: Var) -> Result<(Var, Var)> {
        let f = self.features(g, bound, x)?;
        let z = g.linear(f, bound.var(self.head.0), Some(bound.var(self.head.1)));
        Ok((f, z))
    }

    /// Inference forward without gradient tracking.
    pub fn predict(&self, batch: &Array<T>) -> Result<(Array<T>, Array<T>)> {
        let mut g = Graph::inference();
        let bound = self.params.bind(&mut g);
        let x = g.constant(batch.clone());
        let (f, z) = self.forward(&mut g, &bound, x)?;
        Ok((g.value(f).clone(), g.value(z).clone()))
    }

    pub(crate) fn from_parts(spec: BackboneSpec, params: ParamStore<T>, num_classes: usize) -> Result<Self> {
        let mut model = Self::compact(spec, 0)?;
        model.replace_head(num_classes, 0)?;
        for (id, p) in params.iter() {
            let _ = id;
            let dst = model
                .params
                .id(&p.name)
                .ok_or_else(|| Error::Integrity(format!("unexpected tensor {}", p.name)))?;
            let slot = &mut model.params.get_mut(dst).value;
            if slot.shape() != p.value.shape() {
                return Err(Error::Integrity(format!(
                    "tensor {} has shape {:?}, architecture expects {:?}",
                    p.name,
                    p.value.shape(),
                    slot.shape()
                )));
            }
            *slot = p.value.clone();
        }
        if params.len() != model.params.len() {
            return Err(Error::Integrity(format!(
                "checkpoint holds {} tensors, architecture has {}",
                params.len(),
                model.params.len()
            )));
        }
        Ok(model)
    }
}

/// Builds a model from a spec: random compact weights or a cached hub
/// checkpoint.
pub fn load_backbone<T: Real>(spec: &BackboneSpec, seed: u64) -> Result<ClassifierModel<T>> {
    match &spec.source {
        BackboneSource::Compact => ClassifierModel::compact(spec.clone(), seed),
        BackboneSource::Hub(id) => hub::load_hub(id, spec, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Optimizer, UpdateRule};

    fn small() -> ClassifierModel<f64> {
        let spec = BackboneSpec {
            source: BackboneSource::Compact,
            resolution: 16,
            feature_dim: 12,
        };
        ClassifierModel::compact(spec, 1).unwrap()
    }

    fn batch(b: usize, res: usize, seed: u64) -> Array<f64> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = b * res * res * 3;
        Array::from_vec(&[b, res, res, 3], (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn compact_shapes() {
        let m: ClassifierModel<f32> = load_backbone(&BackboneSpec::compact(), 0).unwrap();
        let x = Array::zeros(&[2, 64, 64, 3]);
        let (f, z) = m.predict(&x).unwrap();
        assert_eq!(f.shape(), &[2, 128]);
        assert_eq!(z.shape(), &[2, PLACEHOLDER_CLASSES]);
    }

    #[test]
    fn resolution_mismatch_is_a_shape_error() {
        let m = small();
        assert!(matches!(m.predict(&batch(1, 20, 0)), Err(Error::Shape(_))));
    }

    #[test]
    fn head_replacement() {
        let mut m = small();
        let before: Vec<_> = m
            .params
            .group_values(ParamGroup::Features)
            .into_iter()
            .cloned()
            .collect();
        m.replace_head(12, 5).unwrap();
        let w1 = m.params.get(m.head.0).value.clone();
        assert_eq!(w1.shape(), &[12, 12]);
        assert!(w1.data().iter().all(|v| v.abs() <= 0.04));
        assert!(m.params.get(m.head.1).value.data().iter().all(|&v| v == 0.0));
        let after: Vec<_> = m
            .params
            .group_values(ParamGroup::Features)
            .into_iter()
            .cloned()
            .collect();
        assert_eq!(before, after);
        m.replace_head(12, 5).unwrap();
        assert_eq!(m.params.get(m.head.0).value, w1);
        assert!(matches!(m.replace_head(1, 0), Err(Error::Config(_))));
    }

    #[test]
    fn trainable_counts() {
        let mut m = small();
        m.replace_head(5, 0).unwrap();
        m.set_trainable(Trainable::All);
        assert_eq!(m.params.trainable_count(), m.params.total_count());
        m.set_trainable(Trainable::HeadOnly);
        assert_eq!(m.params.trainable_count(), 5 * 12 + 5);
    }

    #[test]
    fn head_only_step_keeps_features() {
        let mut m = small();
        m.set_trainable(Trainable::HeadOnly);
        let before: Vec<_> = m
            .params
            .group_values(ParamGroup::Features)
            .into_iter()
            .cloned()
            .collect();
        let head_before = m.params.get(m.head.0).value.clone();
        let mut opt = Optimizer::new(
            UpdateRule::Sgd {
                momentum: 0.9,
                weight_decay: 0.0,
            },
            0.1,
        );
        let grads = {
            let mut g = Graph::new();
            let bound = m.params.bind(&mut g);
            let x = g.constant(batch(3, 16, 2));
            let (_, z) = m.forward(&mut g, &bound, x).unwrap();
            let loss = g.cross_entropy(z, &[0, 1, 1]);
            let mut gr = g.backward(loss);
            bound.grads(&mut gr)
        };
        opt.step(&mut m.params, &grads);
        let after: Vec<_> = m
            .params
            .group_values(ParamGroup::Features)
            .into_iter()
            .cloned()
            .collect();
        assert_eq!(before, after);
        assert_ne!(m.params.get(m.head.0).value, head_before);
    }

    #[test]
    fn zero_head_gives_zero_logits() {
        let mut m = small();
        let (w, b) = m.head;
        m.params.get_mut(w).value = Array::zeros(&[2, 12]);
        m.params.get_mut(b).value = Array::zeros(&[2]);
        let (_, z) = m.predict(&batch(4, 16, 3)).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_independence() {
        let m = small();
        let x1 = batch(1, 16, 7);
        let mut two = x1.data().to_vec();
        two.extend_from_slice(x1.data());
        let x2 = Array::from_vec(&[2, 16, 16, 3], two);
        let (_, z1) = m.predict(&x1).unwrap();
        let (_, z2) = m.predict(&x2).unwrap();
        assert_eq!(z1.row(0), z2.row(0));
        assert_eq!(z2.row(0), z2.row(1));
    }
}
