use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{apply_policy, AugmentationPolicy, Domain, DomainDataset};
use crate::error::{Error, Result};
use crate::tensor::{Array, Real};

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Order-sensitive hash of seed components.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x243F_6A88_85A3_08D3, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng_for(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(parts))
}

fn permutation(n: usize, parts: &[u64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_for(parts));
    idx
}

/// `count` indices from back-to-back independent permutations of `0..n`.
fn stream(n: usize, count: usize, seed: u64, epoch: usize, domain: Domain) -> Vec<usize> {
    let mut out = Vec::with_capacity(count);
    let mut cycle = 0u64;
    while out.len() < count {
        let perm = permutation(n, &[seed, epoch as u64, domain.tag(), cycle]);
        let take = (count - out.len()).min(n);
        out.extend_from_slice(&perm[..take]);
        cycle += 1;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairedStep {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

/// Simultaneous source/target index batches. An epoch runs over the longer
/// domain once (tail dropped); the shorter one cycles with a fresh shuffle
/// per pass.
#[derive(Clone, Debug)]
pub struct PairedLoader {
    source_len: usize,
    target_len: usize,
    batch: usize,
    seed: u64,
}

impl PairedLoader {
    pub fn new(source: &DomainDataset, target: &DomainDataset, batch: usize, seed: u64) -> Result<Self> {
        Self::from_lengths(source.len(), target.len(), batch, seed)
    }

    pub fn from_lengths(source_len: usize, target_len: usize, batch: usize, seed: u64) -> Result<Self> {
        if batch == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if source_len == 0 || target_len == 0 {
            return Err(Error::config("paired loading needs non-empty source and target"));
        }
        if batch > source_len.min(target_len) {
            return Err(Error::config(format!(
                "batch size {batch} exceeds the smaller domain ({} samples)",
                source_len.min(target_len)
            )));
        }
        Ok(Self {
            source_len,
            target_len,
            batch,
            seed,
        })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.source_len.max(self.target_len) / self.batch
    }

    pub fn epoch(&self, epoch: usize) -> Vec<PairedStep> {
        let steps = self.steps_per_epoch();
        let n = steps * self.batch;
        let s = stream(self.source_len, n, self.seed, epoch, Domain::Source);
        let t = stream(self.target_len, n, self.seed, epoch, Domain::Target);
        s.chunks_exact(self.batch)
            .zip(t.chunks_exact(self.batch))
            .map(|(a, b)| PairedStep {
                source: a.to_vec(),
                target: b.to_vec(),
            })
            .collect()
    }
}

/// Shuffled single-domain training batches, partial tail dropped.
pub fn single_epoch(len: usize, batch: usize, seed: u64, epoch: usize, domain: Domain) -> Result<Vec<Vec<usize>>> {
    if batch == 0 || batch > len {
        return Err(Error::config(format!(
            "batch size {batch} must be in [1, {len}] for a dataset of {len} samples"
        )));
    }
    let perm = permutation(len, &[seed, epoch as u64, domain.tag(), 0]);
    Ok(perm.chunks_exact(batch).map(|c| c.to_vec()).collect())
}

/// In-order evaluation batches, partial tail kept.
pub fn eval_batches(len: usize, batch: usize) -> Vec<Vec<usize>> {
    let idx: Vec<usize> = (0..len).collect();
    idx.chunks(batch.max(1)).map(|c| c.to_vec()).collect()
}

/// Turns index batches into normalized image tensors.
#[derive(Clone, Debug)]
pub struct BatchBuilder {
    pub policy: AugmentationPolicy,
    pub seed: u64,
    pub parallel: bool,
}

impl BatchBuilder {
    pub fn new(policy: AugmentationPolicy, seed: u64, parallel: bool) -> Self {
        Self { policy, seed, parallel }
    }

    /// `[B, res, res, 3]` tensor. Sample `k` of `indices` draws from a stream
    /// keyed by (seed, epoch, domain, step, k, index), so results do not
    /// depend on worker count.
    pub fn images<T: Real>(
        &self,
        ds: &DomainDataset,
        indices: &[usize],
        epoch: usize,
        step: usize,
    ) -> Result<Array<T>> {
        let res = self.policy.resolution;
        let tag = ds.domain().tag();
        let one = |(k, &i): (usize, &usize)| -> Result<Vec<f32>> {
            let mut rng = rng_for(&[self.seed, epoch as u64, tag, step as u64, k as u64, i as u64]);
            apply_policy(ds.sample(i), &self.policy, &mut rng)
        };
        let parts: Vec<Result<Vec<f32>>> = if self.parallel {
            indices.par_iter().enumerate().map(one).collect()
        } else {
            indices.iter().enumerate().map(one).collect()
        };
        let mut data = Vec::with_capacity(indices.len() * res * res * 3);
        for p in parts {
            data.extend(p?.into_iter().map(|v| T::lit(v as f64)));
        }
        Ok(Array::from_vec(&[indices.len(), res, res, 3], data))
    }
}

/// Labels for a batch; every read is counted by the dataset.
pub fn batch_labels(ds: &DomainDataset, indices: &[usize]) -> Result<Vec<usize>> {
    indices
        .iter()
        .map(|&i| {
            ds.label(i)
                .ok_or_else(|| Error::Contract(format!("sample {i} of {} has no label", ds.name())))
        })
        .collect()
}
