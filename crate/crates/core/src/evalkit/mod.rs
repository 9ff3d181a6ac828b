//! Target-domain evaluation and comparison tables.

mod table;

pub use table::{confusion_csv, emit_table, TableFormat, TableRow};

use serde::{Deserialize, Serialize};

use crate::backbone::ClassifierModel;
use crate::datakit::{batch_labels, eval_batches, AugmentationPolicy, BatchBuilder, DomainDataset};
use crate::error::{Error, Result};
use crate::tensor::{argmax_rows, Real};

/// Top-1 accuracies in percent and the raw confusion counts
/// (`confusion[true][predicted]`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    /// `None` for classes without samples.
    pub per_class_top1: Vec<Option<f64>>,
    pub macro_mean: f64,
    pub micro_accuracy: f64,
    pub confusion: Vec<Vec<u64>>,
    pub n_samples: u64,
}

impl EvalReport {
    pub fn from_predictions(class_names: Vec<String>, labels: &[usize], predictions: &[usize]) -> Result<Self> {
        let c = class_names.len();
        if labels.len() != predictions.len() {
            return Err(Error::Contract(format!(
                "{} labels for {} predictions",
                labels.len(),
                predictions.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::Contract("cannot evaluate an empty dataset".into()));
        }
        let mut confusion = vec![vec![0u64; c]; c];
        for (&y, &p) in labels.iter().zip(predictions) {
            if y >= c || p >= c {
                return Err(Error::Contract(format!(
                    "class id out of range ({y}, {p}) for {c} classes"
                )));
            }
            confusion[y][p] += 1;
        }
        Ok(Self::from_confusion(class_names, confusion))
    }

    pub fn from_confusion(class_names: Vec<String>, confusion: Vec<Vec<u64>>) -> Self {
        let n: u64 = confusion.iter().flatten().sum();
        let correct: u64 = (0..confusion.len()).map(|j| confusion[j][j]).sum();
        let per_class_top1: Vec<Option<f64>> = confusion
            .iter()
            .enumerate()
            .map(|(j, row)| {
                let total: u64 = row.iter().sum();
                (total > 0).then(|| 100.0 * row[j] as f64 / total as f64)
            })
            .collect();
        let present: Vec<f64> = per_class_top1.iter().flatten().copied().collect();
        let macro_mean = if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        };
        let micro_accuracy = if n == 0 { 0.0 } else { 100.0 * correct as f64 / n as f64 };
        Self {
            class_names,
            per_class_top1,
            macro_mean,
            micro_accuracy,
            confusion,
            n_samples: n,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }
}

/// Row-normalized confusion matrix. Rows of classes without samples are
/// all-NaN and listed in `empty_rows`.
#[derive(Clone, Debug)]
pub struct NormalizedConfusion {
    pub matrix: Vec<Vec<f64>>,
    pub empty_rows: Vec<usize>,
}

pub fn confusion_normalized(report: &EvalReport) -> NormalizedConfusion {
    let mut empty_rows = Vec::new();
    let matrix = report
        .confusion
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let total: u64 = row.iter().sum();
            if total == 0 {
                empty_rows.push(i);
                vec![f64::NAN; row.len()]
            } else {
                row.iter().map(|&v| v as f64 / total as f64).collect()
            }
        })
        .collect();
    NormalizedConfusion { matrix, empty_rows }
}

/// Scores every sample once with the evaluation policy (resize and
/// normalize only); prediction is the logit argmax.
pub fn evaluate<T: Real>(
    model: &ClassifierModel<T>,
    dataset: &DomainDataset,
    batch: usize,
    parallel: bool,
) -> Result<EvalReport> {
    if dataset.num_classes() != model.num_classes() {
        return Err(Error::config(format!(
            "dataset {} has {} classes, model head has {}",
            dataset.name(),
            dataset.num_classes(),
            model.num_classes()
        )));
    }
    let builder = BatchBuilder::new(AugmentationPolicy::eval(model.spec().resolution), 0, parallel);
    let mut labels = Vec::with_capacity(dataset.len());
    let mut preds = Vec::with_capacity(dataset.len());
    for idx in eval_batches(dataset.len(), batch) {
        let x = builder.images::<T>(dataset, &idx, 0, 0)?;
        let (_, z) = model.predict(&x)?;
        preds.extend(argmax_rows(&z));
        labels.extend(batch_labels(dataset, &idx)?);
    }
    EvalReport::from_predictions(dataset.class_names().to_vec(), &labels, &preds)
}
