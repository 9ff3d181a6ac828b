//! Training schemes: head tuning, fine-tuning, head-then-full tuning and
//! unsupervised adaptation, with run directories and best-epoch selection.

mod config;
mod data;
mod manifest;
mod run;
mod schedule;

pub use config::{
    DataConfig, KeepCheckpoints, ModelConfig, OptimConfig, OptimKind, ScheduleConfig, ScheduleKind, Scheme,
    SelectionMetric, TrainConfig, UdaConfig, DEFAULT_SEED,
};
pub use data::{load_data, DataBundle};
pub use manifest::{
    code_revision, select_best, BestPointer, DigestPair, EpochRecord, Metrics, RunDir, RunManifest, RunStatus,
    BEST_POINTER, CHECKPOINT_DIR, CONFIG_FILE, MANIFEST_FILE, METRICS_FILE,
};
pub use run::{
    evaluate_model, init_model, run_config, train_ch_ft, train_source_only, train_uda, RunOptions, TrainOutcome,
};
pub use schedule::{lr_at, WarmupCosine};
