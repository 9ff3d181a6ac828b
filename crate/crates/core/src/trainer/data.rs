use super::config::DataConfig;
use crate::datakit::{derive_seed, ingest_folder, ingest_list, make_synthetic_pair_sized, Domain, DomainDataset};
use crate::error::Result;

/// Datasets of one experiment. `source_val` is a held-out source split.
#[derive(Clone, Debug)]
pub struct DataBundle {
    pub source: DomainDataset,
    pub source_val: Option<DomainDataset>,
    pub target: DomainDataset,
}

impl DataBundle {
    pub fn class_names(&self) -> &[String] {
        self.source.class_names()
    }
}

const VAL_SALT: u64 = 0x0076_616c;

pub fn load_data(cfg: &DataConfig) -> Result<DataBundle> {
    match cfg {
        DataConfig::Synthetic {
            classes,
            per_class,
            val_per_class,
            image_size,
            data_seed,
            shift,
        } => {
            let (source, target) = make_synthetic_pair_sized(*classes, *per_class, shift, *data_seed, *image_size)?;
            let source_val = if *val_per_class > 0 {
                let seed = derive_seed(&[*data_seed, VAL_SALT]);
                Some(make_synthetic_pair_sized(*classes, *val_per_class, shift, seed, *image_size)?.0)
            } else {
                None
            };
            Ok(DataBundle {
                source,
                source_val,
                target,
            })
        }
        DataConfig::Folder {
            source,
            target,
            source_val,
            val_fraction,
            class_names,
        } => {
            let src = ingest_folder(source, class_names.as_deref(), Domain::Source)?;
            let names = src.class_names().to_vec();
            let tgt = ingest_folder(target, Some(&names), Domain::Target)?;
            let (src, val) = match source_val {
                Some(p) => (src, ingest_folder(p, Some(&names), Domain::Source)?),
                None => src.split_holdout(*val_fraction)?,
            };
            Ok(DataBundle {
                source: src,
                source_val: Some(val),
                target: tgt,
            })
        }
        DataConfig::List {
            source_list,
            source_root,
            target_list,
            target_root,
            source_val_list,
            val_fraction,
            class_names,
        } => {
            let src = ingest_list(source_list, source_root, class_names.as_deref(), Domain::Source)?;
            let names = src.class_names().to_vec();
            let tgt = ingest_list(target_list, target_root, Some(&names), Domain::Target)?;
            let (src, val) = match source_val_list {
                Some(p) => (src, ingest_list(p, source_root, Some(&names), Domain::Source)?),
                None => src.split_holdout(*val_fraction)?,
            };
            Ok(DataBundle {
                source: src,
                source_val: Some(val),
                target: tgt,
            })
        }
    }
}
