//! Dataset ingestion, augmentation, paired batching and the synthetic
//! glyph benchmark.

mod augmix;
mod dataset;
mod ingest;
mod loader;
mod policy;
mod synthetic;
pub mod transforms;

pub use augmix::{augmix, AugOp};
pub use dataset::{Domain, DomainDataset, ImageRef, Sample};
pub use ingest::{decode_image, ingest_folder, ingest_list, parse_list_file};
pub use loader::{
    batch_labels, derive_seed, eval_batches, rng_for, single_epoch, BatchBuilder, PairedLoader, PairedStep,
};
pub use policy::{apply_policy, AugmentationKind, AugmentationPolicy};
pub use synthetic::{
    class_names as synthetic_class_names, make_synthetic_pair, make_synthetic_pair_sized, write_folder, ShiftSpec,
    DEFAULT_SIZE,
};
