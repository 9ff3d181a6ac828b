use rand::Rng;
use serde::{Deserialize, Serialize};

use super::augmix::augmix;
use super::transforms::{color_jitter, random_resized_crop_box, Canvas};
use super::Sample;
use crate::error::{Error, Result};

pub const CROP_RATIO: (f64, f64) = (3.0 / 4.0, 4.0 / 3.0);
pub const HFLIP_P: f64 = 0.5;
pub const GRAYSCALE_P: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentationKind {
    Base,
    Augmix,
    Eval,
}

impl AugmentationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AugmentationKind::Base => "base",
            AugmentationKind::Augmix => "augmix",
            AugmentationKind::Eval => "eval",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentationPolicy {
    pub kind: AugmentationKind,
    pub crop_scale: (f64, f64),
    /// brightness, contrast, saturation, hue
    pub jitter: [f64; 4],
    pub mean: [f32; 3],
    pub std: [f32; 3],
    pub resolution: usize,
}

impl AugmentationPolicy {
    pub fn new(kind: AugmentationKind, resolution: usize) -> Self {
        Self {
            kind,
            crop_scale: (0.7, 1.0),
            jitter: [0.3; 4],
            mean: [0.5; 3],
            std: [0.5; 3],
            resolution,
        }
    }

    pub fn eval(resolution: usize) -> Self {
        Self::new(AugmentationKind::Eval, resolution)
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.crop_scale;
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return Err(Error::config(format!(
                "crop scale must satisfy 0 < lo <= hi <= 1, got ({lo}, {hi})"
            )));
        }
        if self.resolution == 0 {
            return Err(Error::config("resolution must be positive"));
        }
        if self.std.iter().any(|&s| s <= 0.0) {
            return Err(Error::config("normalization std must be positive"));
        }
        if self.jitter.iter().any(|&j| j < 0.0) || self.jitter[3] > 0.5 {
            return Err(Error::config("jitter magnitudes must be >= 0 and hue <= 0.5"));
        }
        Ok(())
    }

    /// `(x/255 - mean)/std` into an HWC buffer.
    pub fn normalize(&self, img: &Canvas, out: &mut [f32]) {
        for (o, chunk) in out.chunks_exact_mut(3).zip(img.data.chunks_exact(3)) {
            for c in 0..3 {
                o[c] = (chunk[c] / 255.0 - self.mean[c]) / self.std[c];
            }
        }
    }

    pub fn denormalize(&self, values: &[f32]) -> Vec<f32> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| (v * self.std[i % 3] + self.mean[i % 3]) * 255.0)
            .collect()
    }

    /// Pixel-space augmentation without normalization.
    pub fn augment<R: Rng>(&self, img: &Canvas, rng: &mut R) -> Canvas {
        let res = self.resolution;
        if self.kind == AugmentationKind::Eval {
            return img.resize(res, res);
        }
        let (x, y, w, h) = random_resized_crop_box(img.width, img.height, self.crop_scale, CROP_RATIO, rng);
        let mut out = img.crop(x, y, w, h).resize(res, res);
        if rng.random_bool(HFLIP_P) {
            out.hflip();
        }
        match self.kind {
            AugmentationKind::Base => {
                color_jitter(&mut out, self.jitter, rng);
                if rng.random_bool(GRAYSCALE_P) {
                    out.grayscale();
                }
            }
            AugmentationKind::Augmix => {
                out.quantize();
                out = augmix(&out, rng);
            }
            AugmentationKind::Eval => unreachable!(),
        }
        out.clamp();
        out
    }
}

/// Loads, augments and normalizes one sample into a `res x res x 3` buffer.
pub fn apply_policy<R: Rng>(sample: &Sample, policy: &AugmentationPolicy, rng: &mut R) -> Result<Vec<f32>> {
    let img = sample.image.load()?;
    let canvas = policy.augment(&Canvas::from_rgb(&img), rng);
    let mut out = vec![0f32; policy.resolution * policy.resolution * 3];
    policy.normalize(&canvas, &mut out);
    Ok(out)
}
