use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{Scheme, SelectionMetric, TrainConfig};
use crate::error::{Error, Result};
use crate::evalkit::EvalReport;
use crate::io::write_atomic;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const BEST_POINTER: &str = "best";

pub fn code_revision() -> String {
    match option_env!("UDAKIT_REVISION") {
        Some(rev) => format!("{} ({rev})", env!("CARGO_PKG_VERSION")),
        None => env!("CARGO_PKG_VERSION").to_string(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Running,
    Completed,
    AbortedUnstable,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Running => "running",
            RunStatus::Completed => "completed",
            RunStatus::AbortedUnstable => "aborted-unstable",
        }
    }
}

/// `split -> metric -> value`.
pub type Metrics = BTreeMap<String, BTreeMap<String, f64>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub steps: usize,
    pub metrics: Metrics,
    /// Relative to the run directory.
    pub checkpoint: Option<String>,
}

impl EpochRecord {
    pub fn metric(&self, key: SelectionMetric) -> Option<f64> {
        let (split, name) = match key {
            SelectionMetric::ValTop1 => ("val", "top1"),
            SelectionMetric::TargetMacro => ("target", "macro"),
        };
        self.metrics.get(split).and_then(|m| m.get(name)).copied()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestPointer {
    pub epoch: usize,
    pub metric: SelectionMetric,
    pub value: f64,
    pub checkpoint: Option<String>,
}

/// Provenance and metric log of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    pub method_label: String,
    pub scheme: Scheme,
    pub status: RunStatus,
    pub abort_reason: Option<String>,
    pub seed: u64,
    pub config_hash: String,
    pub code_revision: String,
    pub config: TrainConfig,
    pub init_checkpoint: Option<String>,
    #[serde(default)]
    pub provenance: serde_json::Value,
    pub class_names: Vec<String>,
    pub epochs: Vec<EpochRecord>,
    pub best: Option<BestPointer>,
    /// Reports at the best epoch, by split.
    #[serde(default)]
    pub best_reports: BTreeMap<String, EvalReport>,
    /// Reports at the last completed epoch, by split.
    #[serde(default)]
    pub final_reports: BTreeMap<String, EvalReport>,
    pub target_label_reads_in_optimization: Option<u64>,
    pub discriminator_digest: Option<DigestPair>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DigestPair {
    pub start: String,
    pub end: String,
}

impl RunManifest {
    pub fn new(config: &TrainConfig, class_names: Vec<String>) -> Self {
        let method_label = match (&config.uda, config.scheme) {
            (Some(u), Scheme::Uda) => u.method.as_str().to_string(),
            _ => config.scheme.as_str().to_string(),
        };
        Self {
            name: config.name.clone(),
            method_label,
            scheme: config.scheme,
            status: RunStatus::Running,
            abort_reason: None,
            seed: config.seed,
            config_hash: config.hash(),
            code_revision: code_revision(),
            config: config.clone(),
            init_checkpoint: config.init_checkpoint.clone(),
            provenance: serde_json::Value::Null,
            class_names,
            epochs: Vec::new(),
            best: None,
            best_reports: BTreeMap::new(),
            final_reports: BTreeMap::new(),
            target_label_reads_in_optimization: None,
            discriminator_digest: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Integrity(format!("manifest: {e}")))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Integrity(m) => Error::Integrity(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// `epoch,split,metric,value` rows in epoch order.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("epoch,split,metric,value\n");
        for rec in &self.epochs {
            for (split, m) in &rec.metrics {
                for (name, v) in m {
                    writeln!(out, "{},{split},{name},{v}", rec.epoch).unwrap();
                }
            }
        }
        out
    }

    /// Checkpoint of the best epoch under `metric`.
    pub fn best_checkpoint(&self, metric: SelectionMetric) -> Result<Option<String>> {
        let i = select_best(&self.epochs, metric)?;
        Ok(self.epochs[i].checkpoint.clone())
    }
}

/// Index of the best record; ties go to the earliest epoch. Records
/// without the metric are skipped.
pub fn select_best(records: &[EpochRecord], metric: SelectionMetric) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in records.iter().enumerate() {
        if let Some(v) = r.metric(metric).filter(|v| v.is_finite()) {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
    }
    best.map(|(i, _)| i)
        .ok_or_else(|| Error::State(format!("no completed epoch carries metric {}", metric.key())))
}

/// On-disk layout of one run.
#[derive(Clone, Debug)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path, config: &TrainConfig) -> Result<Self> {
        std::fs::create_dir_all(root.join(CHECKPOINT_DIR)).map_err(|e| Error::io(root, e))?;
        write_atomic(&root.join(CONFIG_FILE), config.to_toml().as_bytes())?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn checkpoint_rel(epoch: usize) -> String {
        format!("{CHECKPOINT_DIR}/epoch_{epoch}.safetensors")
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn write(&self, manifest: &RunManifest) -> Result<()> {
        let json = serde_json::to_string_pretty(manifest).map_err(|e| Error::Integrity(e.to_string()))?;
        write_atomic(&self.root.join(MANIFEST_FILE), json.as_bytes())?;
        write_atomic(&self.root.join(METRICS_FILE), manifest.metrics_csv().as_bytes())?;
        if let Some(best) = manifest.best.as_ref().and_then(|b| b.checkpoint.as_ref()) {
            let name = Path::new(best)
                .file_name()
                .unwrap_or_default()
                .to_string_lossy()
                .into_owned();
            write_atomic(
                &self.root.join(CHECKPOINT_DIR).join(BEST_POINTER),
                format!("{name}\n").as_bytes(),
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(epoch: usize, val: Option<f64>) -> EpochRecord {
        let mut metrics = Metrics::new();
        if let Some(v) = val {
            metrics.entry("val".into()).or_default().insert("top1".into(), v);
        }
        EpochRecord {
            epoch,
            steps: 1,
            metrics,
            checkpoint: Some(RunDir::checkpoint_rel(epoch)),
        }
    }

    #[test]
    fn argmax_and_ties() {
        let log = [rec(1, Some(70.0)), rec(2, Some(80.0)), rec(3, Some(75.0))];
        assert_eq!(select_best(&log, SelectionMetric::ValTop1).unwrap(), 1);
        let tie = [rec(1, Some(80.0)), rec(2, Some(80.0))];
        assert_eq!(select_best(&tie, SelectionMetric::ValTop1).unwrap(), 0);
        let one = [rec(1, Some(12.0))];
        assert_eq!(select_best(&one, SelectionMetric::ValTop1).unwrap(), 0);
    }

    #[test]
    fn empty_log_is_a_state_error() {
        assert!(matches!(
            select_best(&[], SelectionMetric::ValTop1),
            Err(Error::State(_))
        ));
        assert!(matches!(
            select_best(&[rec(1, None)], SelectionMetric::ValTop1),
            Err(Error::State(_))
        ));
    }
}
