use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn tag(self) -> u64 {
        match self {
            Domain::Source => 1,
            Domain::Target => 2,
        }
    }
}

/// Where a sample's pixels come from.
#[derive(Clone, Debug)]
pub enum ImageRef {
    Path(PathBuf),
    Pixels(Arc<RgbImage>),
}

impl ImageRef {
    pub fn describe(&self) -> PathBuf {
        match self {
            ImageRef::Path(p) => p.clone(),
            ImageRef::Pixels(_) => PathBuf::from("<memory>"),
        }
    }

    pub fn load(&self) -> Result<Arc<RgbImage>> {
        match self {
            ImageRef::Pixels(px) => Ok(px.clone()),
            ImageRef::Path(p) => {
                let bytes = std::fs::read(p).map_err(|e| Error::Data {
                    path: p.clone(),
                    reason: e.to_string(),
                })?;
                super::decode_image(&bytes).map(Arc::new).map_err(|reason| Error::Data {
                    path: p.clone(),
                    reason,
                })
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Sample {
    pub image: ImageRef,
    label: Option<usize>,
    pub domain: Domain,
}

impl Sample {
    pub fn new(image: ImageRef, label: Option<usize>, domain: Domain) -> Self {
        Self { image, label, domain }
    }
}

/// Ordered samples of one domain with a dense class-id mapping.
///
/// Labels are only reachable through [`DomainDataset::label`], which counts
/// every read so training code can prove it never looked at target labels.
#[derive(Debug)]
pub struct DomainDataset {
    name: String,
    domain: Domain,
    class_names: Vec<String>,
    samples: Vec<Sample>,
    label_reads: AtomicUsize,
}

impl Clone for DomainDataset {
    fn clone(&self) -> Self {
        Self {
            name: self.name.clone(),
            domain: self.domain,
            class_names: self.class_names.clone(),
            samples: self.samples.clone(),
            label_reads: AtomicUsize::new(0),
        }
    }
}

impl DomainDataset {
    pub fn new(
        name: impl Into<String>,
        domain: Domain,
        class_names: Vec<String>,
        samples: Vec<Sample>,
    ) -> Result<Self> {
        let name = name.into();
        let c = class_names.len();
        let mut seen = std::collections::HashSet::new();
        for n in &class_names {
            if !seen.insert(n) {
                return Err(Error::Ingest(format!("duplicate class name {n:?} in {name}")));
            }
        }
        for (i, s) in samples.iter().enumerate() {
            if s.domain != domain {
                return Err(Error::Ingest(format!(
                    "sample {i} of {name} is tagged {:?}, dataset is {domain:?}",
                    s.domain
                )));
            }
            if let Some(l) = s.label {
                if l >= c {
                    return Err(Error::Ingest(format!(
                        "sample {i} of {name} has label {l} but only {c} classes"
                    )));
                }
            }
        }
        Ok(Self {
            name,
            domain,
            class_names,
            samples,
            label_reads: AtomicUsize::new(0),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample(&self, i: usize) -> &Sample {
        &self.samples[i]
    }

    pub fn image(&self, i: usize) -> &ImageRef {
        &self.samples[i].image
    }

    /// Counted label access.
    pub fn label(&self, i: usize) -> Option<usize> {
        self.label_reads.fetch_add(1, Ordering::Relaxed);
        self.samples[i].label
    }

    pub fn label_reads(&self) -> usize {
        self.label_reads.load(Ordering::Relaxed)
    }

    pub fn has_labels(&self) -> bool {
        self.samples.iter().all(|s| s.label.is_some())
    }

    /// Decodes every path-backed image into memory.
    pub fn preload(&mut self) -> Result<()> {
        for s in &mut self.samples {
            if let ImageRef::Path(_) = s.image {
                s.image = ImageRef::Pixels(s.image.load()?);
            }
        }
        Ok(())
    }

    /// Stratified split: every `1/fraction`-th sample of each class (by
    /// position) moves to the second dataset.
    pub fn split_holdout(self, fraction: f64) -> Result<(DomainDataset, DomainDataset)> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::config(format!(
                "validation fraction must be in (0, 1), got {fraction}"
            )));
        }
        let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); self.num_classes()];
        let mut unlabeled = Vec::new();
        for (i, s) in self.samples.iter().enumerate() {
            match s.label {
                Some(l) => per_class[l].push(i),
                None => unlabeled.push(i),
            }
        }
        let mut held = vec![false; self.samples.len()];
        for idx in &per_class {
            let k = ((idx.len() as f64) * fraction).round() as usize;
            let k = k.min(idx.len().saturating_sub(1));
            if k == 0 {
                continue;
            }
            let stride = idx.len() as f64 / k as f64;
            for n in 0..k {
                held[idx[(n as f64 * stride) as usize]] = true;
            }
        }
        let (mut train, mut val) = (Vec::new(), Vec::new());
        for (i, s) in self.samples.into_iter().enumerate() {
            if held[i] {
                val.push(s);
            } else {
                train.push(s);
            }
        }
        Ok((
            DomainDataset::new(self.name.clone(), self.domain, self.class_names.clone(), train)?,
            DomainDataset::new(format!("{}-val", self.name), self.domain, self.class_names, val)?,
        ))
    }

    /// Same samples in a different order (evaluation tests).
    pub fn permuted(&self, order: &[usize]) -> Result<DomainDataset> {
        let samples = order.iter().map(|&i| self.samples[i].clone()).collect();
        DomainDataset::new(self.name.clone(), self.domain, self.class_names.clone(), samples)
    }
}
