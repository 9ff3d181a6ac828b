//! Declarative experiment description.
//!
//! Scheme-dependent defaults (optimizer kind, weight decay, scheduler,
//! warmup) are filled in by [`TrainConfig::resolve`]; the resolved form
//! serializes with every field present and parses back to itself.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapt::UdaMethod;
use crate::backbone::{known_feature_dim, BackboneSource, BackboneSpec};
use crate::datakit::{AugmentationKind, ShiftSpec};
use crate::error::{Error, Result};

pub const DEFAULT_SEED: u64 = 42;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "ch", alias = "CH")]
    Ch,
    #[serde(rename = "ft", alias = "FT")]
    Ft,
    #[serde(rename = "ch_ft", alias = "CH_FT")]
    ChFt,
    #[serde(rename = "uda", alias = "UDA")]
    Uda,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Ch => "ch",
            Scheme::Ft => "ft",
            Scheme::ChFt => "ch_ft",
            Scheme::Uda => "uda",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimKind {
    Sgd,
    Adamw,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    None,
    WarmupCosine,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    ValTop1,
    TargetMacro,
}

impl SelectionMetric {
    pub fn key(self) -> &'static str {
        match self {
            SelectionMetric::ValTop1 => "val_top1",
            SelectionMetric::TargetMacro => "target_macro",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeepCheckpoints {
    All,
    Best,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// `"compact"` or a hub checkpoint id.
    #[serde(default = "default_backbone")]
    pub backbone: String,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    pub feature_dim: Option<usize>,
}

fn default_backbone() -> String {
    "compact".into()
}

fn default_resolution() -> usize {
    64
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: default_backbone(),
            resolution: default_resolution(),
            feature_dim: None,
        }
    }
}

impl ModelConfig {
    pub fn spec(&self) -> Result<BackboneSpec> {
        let source = if self.backbone == "compact" {
            BackboneSource::Compact
        } else {
            BackboneSource::Hub(self.backbone.clone())
        };
        let feature_dim = self
            .feature_dim
            .ok_or_else(|| Error::config("model.feature_dim unresolved"))?;
        Ok(BackboneSpec {
            source,
            resolution: self.resolution,
            feature_dim,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    /// Procedural glyph benchmark.
    Synthetic {
        #[serde(default = "default_classes")]
        classes: usize,
        #[serde(default = "default_per_class")]
        per_class: usize,
        /// Clean source images per class held out for validation.
        #[serde(default = "default_val_per_class")]
        val_per_class: usize,
        #[serde(default = "default_image_size")]
        image_size: usize,
        /// Seed of the generated images, independent of the training seed.
        #[serde(default)]
        data_seed: u64,
        #[serde(default = "ShiftSpec::benchmark")]
        shift: ShiftSpec,
    },
    /// Folder-per-class roots.
    Folder {
        source: PathBuf,
        target: PathBuf,
        source_val: Option<PathBuf>,
        #[serde(default = "default_val_fraction")]
        val_fraction: f64,
        class_names: Option<Vec<String>>,
    },
    /// `path label` list files.
    List {
        source_list: PathBuf,
        source_root: PathBuf,
        target_list: PathBuf,
        target_root: PathBuf,
        source_val_list: Option<PathBuf>,
        #[serde(default = "default_val_fraction")]
        val_fraction: f64,
        class_names: Option<Vec<String>>,
    },
}

fn default_classes() -> usize {
    8
}
fn default_per_class() -> usize {
    32
}
fn default_val_per_class() -> usize {
    8
}
fn default_image_size() -> usize {
    crate::datakit::DEFAULT_SIZE
}
fn default_val_fraction() -> f64 {
    0.1
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Synthetic {
            classes: default_classes(),
            per_class: default_per_class(),
            val_per_class: default_val_per_class(),
            image_size: default_image_size(),
            data_seed: 0,
            shift: ShiftSpec::benchmark(),
        }
    }
}

impl DataConfig {
    fn absolutize(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match self {
            DataConfig::Synthetic { .. } => {}
            DataConfig::Folder {
                source,
                target,
                source_val,
                ..
            } => {
                fix(source);
                fix(target);
                if let Some(v) = source_val {
                    fix(v);
                }
            }
            DataConfig::List {
                source_list,
                source_root,
                target_list,
                target_root,
                source_val_list,
                ..
            } => {
                fix(source_list);
                fix(source_root);
                fix(target_list);
                fix(target_root);
                if let Some(v) = source_val_list {
                    fix(v);
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    pub kind: Option<OptimKind>,
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    pub weight_decay: Option<f64>,
}

fn default_momentum() -> f64 {
    0.9
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub kind: Option<ScheduleKind>,
    pub warmup_epochs: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UdaConfig {
    pub method: UdaMethod,
    #[serde(default = "one")]
    pub cdan_weight: f64,
    #[serde(default = "one")]
    pub mcc_weight: f64,
    #[serde(default = "one")]
    pub mcc_temperature: f64,
    #[serde(default)]
    pub detach_mcc_weights: bool,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_random_dim")]
    pub random_dim: usize,
    #[serde(default = "yes")]
    pub entropy_conditioning: bool,
}

fn one() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}
fn default_hidden() -> usize {
    crate::adapt::DEFAULT_HIDDEN
}
fn default_random_dim() -> usize {
    crate::adapt::DEFAULT_RANDOM_DIM
}

impl UdaConfig {
    pub fn new(method: UdaMethod) -> Self {
        Self {
            method,
            cdan_weight: 1.0,
            mcc_weight: 1.0,
            mcc_temperature: 1.0,
            detach_mcc_weights: false,
            hidden: default_hidden(),
            random_dim: default_random_dim(),
            entropy_conditioning: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub scheme: Scheme,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_eval_batch")]
    pub eval_batch_size: usize,
    #[serde(default = "default_augmentation")]
    pub augmentation: AugmentationKind,
    /// Checkpoint to start from; `"hub"` (or absent) loads the backbone
    /// named in `model`.
    pub init_checkpoint: Option<String>,
    #[serde(default = "default_selection")]
    pub selection: SelectionMetric,
    #[serde(default = "default_keep")]
    pub keep_checkpoints: KeepCheckpoints,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub data: DataConfig,
    pub optim: OptimConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    pub uda: Option<UdaConfig>,
}

fn default_name() -> String {
    "run".into()
}
fn default_seed() -> u64 {
    DEFAULT_SEED
}
fn default_epochs() -> usize {
    20
}
fn default_batch() -> usize {
    32
}
fn default_eval_batch() -> usize {
    64
}
fn default_augmentation() -> AugmentationKind {
    AugmentationKind::Base
}
fn default_selection() -> SelectionMetric {
    SelectionMetric::ValTop1
}
fn default_keep() -> KeepCheckpoints {
    KeepCheckpoints::All
}

/// Parser message with the line it refers to.
fn toml_error(e: toml::de::Error, text: &str) -> Error {
    match e.span() {
        Some(span) => {
            let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
            let snippet = text.lines().nth(line - 1).unwrap_or("").trim();
            Error::config(format!("line {line} ({snippet:?}): {}", e.message()))
        }
        None => Error::config(e.message().to_string()),
    }
}

impl TrainConfig {
    /// Parses, fills scheme defaults and validates.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: TrainConfig = toml::from_str(text).map_err(|e| toml_error(e, text))?;
        raw.resolve()
    }

    /// Reads a config file; relative data paths are taken relative to it.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::config(format!("config file {} does not exist", path.display())),
            _ => Error::io(path, e),
        })?;
        let mut raw: TrainConfig = toml::from_str(&text).map_err(|e| match toml_error(e, &text) {
            Error::Config(m) => Error::config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let base = std::fs::canonicalize(&base).unwrap_or(base);
        raw.data.absolutize(&base);
        if let Some(init) = &raw.init_checkpoint {
            if init != "hub" && Path::new(init).is_relative() {
                raw.init_checkpoint = Some(base.join(init).to_string_lossy().into_owned());
            }
        }
        raw.resolve()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the resolved TOML text.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn resolve(mut self) -> Result<Self> {
        let default_kind = match self.scheme {
            Scheme::Ch => OptimKind::Sgd,
            _ => OptimKind::Adamw,
        };
        let kind = *self.optim.kind.get_or_insert(default_kind);
        self.optim.weight_decay.get_or_insert(match kind {
            OptimKind::Sgd => 0.0,
            OptimKind::Adamw => 0.01,
        });
        self.schedule.kind.get_or_insert(match self.scheme {
            Scheme::Ch => ScheduleKind::None,
            _ => ScheduleKind::WarmupCosine,
        });
        let warm = match self.schedule.kind {
            Some(ScheduleKind::WarmupCosine) => self.epochs as f64 * 0.1,
            _ => 0.0,
        };
        self.schedule.warmup_epochs.get_or_insert(warm);
        if self.model.feature_dim.is_none() {
            self.model.feature_dim = Some(if self.model.backbone == "compact" {
                128
            } else {
                known_feature_dim(&self.model.backbone).ok_or_else(|| {
                    Error::config(format!(
                        "model.feature_dim is required for hub checkpoint {:?}",
                        self.model.backbone
                    ))
                })?
            });
        }
        self.validate()?;
        Ok(self)
    }

    pub fn optim_kind(&self) -> OptimKind {
        self.optim.kind.expect("resolved")
    }

    pub fn weight_decay(&self) -> f64 {
        self.optim.weight_decay.expect("resolved")
    }

    pub fn schedule_kind(&self) -> ScheduleKind {
        self.schedule.kind.expect("resolved")
    }

    pub fn warmup_epochs(&self) -> f64 {
        self.schedule.warmup_epochs.expect("resolved")
    }

    /// Checkpoint file to start from. A run directory stands for its best
    /// checkpoint.
    pub fn init_path(&self) -> Option<PathBuf> {
        let path = PathBuf::from(self.init_checkpoint.as_deref().filter(|s| *s != "hub")?);
        if path.is_dir() {
            let ckpt = path.join(super::manifest::CHECKPOINT_DIR);
            if let Ok(name) = std::fs::read_to_string(ckpt.join(super::manifest::BEST_POINTER)) {
                return Some(ckpt.join(name.trim()));
            }
        }
        Some(path)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::config(m));
        let scheme = self.scheme.as_str();
        match (self.scheme, self.schedule_kind()) {
            (Scheme::Ch, ScheduleKind::WarmupCosine) => {
                return fail("scheme ch requires schedule.kind = \"none\"".into())
            }
            (Scheme::Ft | Scheme::ChFt | Scheme::Uda, ScheduleKind::None) => {
                return fail(format!("scheme {scheme} requires schedule.kind = \"warmup_cosine\""))
            }
            _ => {}
        }
        match (self.scheme, self.optim_kind()) {
            (Scheme::Ch, OptimKind::Adamw) => return fail("scheme ch trains with optim.kind = \"sgd\"".into()),
            (Scheme::Ft | Scheme::ChFt | Scheme::Uda, OptimKind::Sgd) => {
                return fail(format!("scheme {scheme} trains with optim.kind = \"adamw\""))
            }
            _ => {}
        }
        match (self.scheme, &self.uda) {
            (Scheme::Uda, None) => return fail("scheme uda requires a [uda] section with a method".into()),
            (Scheme::Uda, Some(u)) => {
                if !(u.cdan_weight >= 0.0 && u.mcc_weight >= 0.0) {
                    return fail("uda loss weights must be non-negative".into());
                }
                if !(u.mcc_temperature > 0.0 && u.mcc_temperature.is_finite()) {
                    return fail("uda.mcc_temperature must be positive".into());
                }
                if u.hidden == 0 || u.random_dim == 0 {
                    return fail("uda.hidden and uda.random_dim must be positive".into());
                }
            }
            (_, Some(_)) => return fail(format!("[uda] section is only valid for scheme uda, not {scheme}")),
            _ => {}
        }
        if self.scheme == Scheme::ChFt && self.init_path().is_none() {
            return fail("scheme ch_ft requires init_checkpoint pointing at a CH checkpoint".into());
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return fail("batch sizes must be at least 1".into());
        }
        if self.augmentation == AugmentationKind::Eval {
            return fail("augmentation must be \"base\" or \"augmix\" for training".into());
        }
        if !(self.optim.lr > 0.0 && self.optim.lr.is_finite()) {
            return fail(format!("optim.lr must be positive, got {}", self.optim.lr));
        }
        if !(0.0..1.0).contains(&self.optim.momentum) || self.weight_decay() < 0.0 {
            return fail("optim.momentum must be in [0, 1) and weight_decay >= 0".into());
        }
        let w = self.warmup_epochs();
        if !(w >= 0.0 && w < self.epochs as f64) {
            return fail(format!("schedule.warmup_epochs must be in [0, epochs), got {w}"));
        }
        if self.schedule_kind() == ScheduleKind::None && w != 0.0 {
            return fail("schedule.warmup_epochs needs schedule.kind = \"warmup_cosine\"".into());
        }
        if self.model.resolution == 0 || self.model.feature_dim == Some(0) {
            return fail("model resolution and feature_dim must be positive".into());
        }
        match &self.data {
            DataConfig::Synthetic {
                classes,
                per_class,
                val_per_class,
                image_size,
                shift,
                ..
            } => {
                if !(2..=16).contains(classes) || *per_class == 0 || *image_size < 8 {
                    return fail("synthetic data needs 2..=16 classes, per_class >= 1 and image_size >= 8".into());
                }
                let _ = val_per_class;
                shift.validate()?;
            }
            DataConfig::Folder { val_fraction, .. } | DataConfig::List { val_fraction, .. } => {
                if !(*val_fraction > 0.0 && *val_fraction < 1.0) {
                    return fail(format!("data.val_fraction must be in (0, 1), got {val_fraction}"));
                }
            }
        }
        Ok(())
    }
}
