//! Procedural two-domain glyph benchmark. Class identity is the glyph
//! shape; the target domain applies a configurable appearance shift.

use std::sync::Arc;

use image::RgbImage;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::loader::rng_for;
use super::transforms::{adjust_hue, Canvas};
use super::{Domain, DomainDataset, ImageRef, Sample};
use crate::error::{Error, Result};

pub const DEFAULT_SIZE: usize = 64;
pub const MAX_CLASSES: usize = 16;

const GLYPH_NAMES: [&str; MAX_CLASSES] = [
    "disk",
    "square",
    "triangle",
    "plus",
    "ring",
    "cross",
    "diamond",
    "bars",
    "ell",
    "tee",
    "half_disk",
    "frame",
    "dots",
    "crescent",
    "stripes",
    "chevron",
];

/// Appearance shift applied to target images. Zero disables a component.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShiftSpec {
    /// Hue rotation in degrees.
    pub hue: f64,
    /// Background texture strength in [0, 1].
    pub texture: f64,
    /// Additive Gaussian noise standard deviation in 8-bit pixel units.
    pub noise: f64,
}

impl ShiftSpec {
    pub fn identity() -> Self {
        Self::default()
    }

    /// Shift used by the bundled benchmark.
    pub fn benchmark() -> Self {
        Self {
            hue: 150.0,
            texture: 0.8,
            noise: 16.0,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.hue == 0.0 && self.texture == 0.0 && self.noise == 0.0
    }

    pub fn parse(text: &str) -> Result<Self> {
        let spec: ShiftSpec =
            toml::from_str(text).map_err(|e| Error::config(format!("shift spec: {}", e.message())))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.hue.is_finite() || self.hue.abs() > 360.0 {
            return Err(Error::config(format!(
                "shift.hue must be within [-360, 360], got {}",
                self.hue
            )));
        }
        if !(0.0..=1.0).contains(&self.texture) {
            return Err(Error::config(format!(
                "shift.texture must be within [0, 1], got {}",
                self.texture
            )));
        }
        if !(0.0..=128.0).contains(&self.noise) {
            return Err(Error::config(format!(
                "shift.noise must be within [0, 128], got {}",
                self.noise
            )));
        }
        Ok(())
    }
}

fn inside(class: usize, u: f64, v: f64) -> bool {
    let r = (u * u + v * v).sqrt();
    let (au, av) = (u.abs(), v.abs());
    match class {
        0 => r < 0.8,
        1 => au.max(av) < 0.68,
        2 => v > -0.75 && v < 0.7 && au < (v + 0.75) * 0.58,
        3 => (au < 0.22 && av < 0.82) || (av < 0.22 && au < 0.82),
        4 => r > 0.48 && r < 0.85,
        5 => ((u - v).abs() < 0.3 || (u + v).abs() < 0.3) && au.max(av) < 0.75,
        6 => au + av < 0.88,
        7 => au < 0.8 && ((v - 0.42).abs() < 0.2 || (v + 0.42).abs() < 0.2),
        8 => ((u + 0.45).abs() < 0.22 && av < 0.8) || (v > 0.42 && v < 0.8 && u > -0.67 && u < 0.7),
        9 => (au < 0.22 && v > -0.45 && v < 0.82) || (v > -0.82 && v < -0.42 && au < 0.78),
        10 => r < 0.85 && v > -0.05,
        11 => au.max(av) < 0.8 && au.max(av) > 0.5,
        12 => ((u - 0.42).powi(2) + v * v).sqrt() < 0.32 || ((u + 0.42).powi(2) + v * v).sqrt() < 0.32,
        13 => r < 0.8 && ((u - 0.38).powi(2) + v * v).sqrt() > 0.6,
        14 => av < 0.8 && (au < 0.13 || (au - 0.55).abs() < 0.13),
        _ => {
            let d = (v + 0.8 * au - 0.25).abs();
            d < 0.3 && au < 0.8
        }
    }
}

struct Glyph {
    canvas: Canvas,
    coverage: Vec<f32>,
    background: [f32; 3],
}

fn hsv(h: f64, s: f64, v: f64) -> [f32; 3] {
    let mut c = Canvas::new(1, 1);
    c.set(
        0,
        0,
        [
            255.0 * v as f32,
            255.0 * (v * (1.0 - s)) as f32,
            255.0 * (v * (1.0 - s)) as f32,
        ],
    );
    adjust_hue(&mut c, h as f32);
    c.px(0, 0)
}

fn render_glyph(class: usize, size: usize, parts: &[u64]) -> Glyph {
    let mut rng = rng_for(parts);
    let scale = rng.random_range(0.62..0.9);
    let theta = rng.random_range(-15f64..15.0).to_radians();
    let (dx, dy) = (rng.random_range(-0.12..0.12), rng.random_range(-0.12..0.12));
    let fg = hsv(
        rng.random_range(0.0..0.17),
        rng.random_range(0.65..1.0),
        rng.random_range(0.8..1.0),
    );
    let grey = rng.random_range(25.0f32..70.0);
    let background = [grey, grey, grey + rng.random_range(0.0f32..15.0)];
    let (sin, cos) = theta.sin_cos();
    let mut canvas = Canvas::new(size, size);
    let mut coverage = vec![0f32; size * size];
    const SS: usize = 3;
    for y in 0..size {
        for x in 0..size {
            let mut hits = 0;
            for sy in 0..SS {
                for sx in 0..SS {
                    let px = (x as f64 + (sx as f64 + 0.5) / SS as f64) / size as f64 * 2.0 - 1.0 - dx;
                    let py = (y as f64 + (sy as f64 + 0.5) / SS as f64) / size as f64 * 2.0 - 1.0 - dy;
                    let u = (cos * px + sin * py) / scale;
                    let v = (-sin * px + cos * py) / scale;
                    if inside(class, u, v) {
                        hits += 1;
                    }
                }
            }
            let a = hits as f32 / (SS * SS) as f32;
            coverage[y * size + x] = a;
            let mut p = [0f32; 3];
            for c in 0..3 {
                p[c] = a * fg[c] + (1.0 - a) * background[c];
            }
            canvas.set(x, y, p);
        }
    }
    Glyph {
        canvas,
        coverage,
        background,
    }
}

/// Oriented gratings plus random strokes in a few random colours.
fn texture_field<R: Rng>(size: usize, rng: &mut R) -> Vec<[f32; 3]> {
    let mut field = vec![[0f32; 3]; size * size];
    for _ in 0..3 {
        let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let freq = rng.random_range(2.0..7.0) * std::f64::consts::TAU / size as f64;
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let colour = hsv(rng.random_range(0.0..1.0), rng.random_range(0.3..1.0), 1.0);
        let (s, c) = angle.sin_cos();
        for y in 0..size {
            for x in 0..size {
                let w = ((x as f64 * c + y as f64 * s) * freq + phase).sin() as f32 * 0.5 + 0.5;
                for ch in 0..3 {
                    field[y * size + x][ch] += w * colour[ch] / 3.0;
                }
            }
        }
    }
    for _ in 0..6 {
        let colour = hsv(rng.random_range(0.0..1.0), rng.random_range(0.3..1.0), 1.0);
        let (x0, y0) = (rng.random_range(0.0..size as f64), rng.random_range(0.0..size as f64));
        let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let len = rng.random_range(0.3..0.8) * size as f64;
        let half_width = rng.random_range(1.0..2.5);
        let (s, c) = angle.sin_cos();
        for y in 0..size {
            for x in 0..size {
                let (px, py) = (x as f64 + 0.5 - x0, y as f64 + 0.5 - y0);
                let along = px * c + py * s;
                let across = (-px * s + py * c).abs();
                if along >= 0.0 && along <= len && across < half_width {
                    field[y * size + x] = colour;
                }
            }
        }
    }
    field
}

fn apply_shift(glyph: Glyph, shift: &ShiftSpec, parts: &[u64]) -> Canvas {
    let Glyph {
        mut canvas,
        coverage,
        background,
    } = glyph;
    if shift.is_identity() {
        return canvas;
    }
    let mut rng = rng_for(parts);
    let size = canvas.width;
    if shift.texture > 0.0 {
        let field = texture_field(size, &mut rng);
        let t = shift.texture as f32;
        for (i, (p, a)) in canvas.data.chunks_exact_mut(3).zip(&coverage).enumerate() {
            for c in 0..3 {
                let bg = (1.0 - t) * background[c] + t * field[i][c];
                p[c] += (1.0 - a) * (bg - background[c]);
            }
        }
    }
    if shift.hue != 0.0 {
        adjust_hue(&mut canvas, (shift.hue / 360.0) as f32);
    }
    if shift.noise > 0.0 {
        let n = Normal::new(0.0, shift.noise).expect("finite sigma");
        for v in &mut canvas.data {
            *v += n.sample(&mut rng) as f32;
        }
    }
    canvas.clamp();
    canvas
}

pub fn class_names(num_classes: usize) -> Vec<String> {
    GLYPH_NAMES[..num_classes].iter().map(|s| s.to_string()).collect()
}

fn check_args(num_classes: usize, per_class: usize, size: usize) -> Result<()> {
    if !(2..=MAX_CLASSES).contains(&num_classes) {
        return Err(Error::config(format!(
            "synthetic benchmark supports 2..={MAX_CLASSES} classes, got {num_classes}"
        )));
    }
    if per_class == 0 {
        return Err(Error::config("per_class must be at least 1"));
    }
    if size < 8 {
        return Err(Error::config(format!("image size {size} is too small")));
    }
    Ok(())
}

const GEOMETRY: u64 = 0x6765_6f6d;
const SHIFT: u64 = 0x7368_6966;

/// Source and target glyph datasets. Sample `i` of both domains shares its
/// geometry, so an identity shift yields pixel-identical pairs.
pub fn make_synthetic_pair(
    num_classes: usize,
    per_class: usize,
    shift: &ShiftSpec,
    seed: u64,
) -> Result<(DomainDataset, DomainDataset)> {
    make_synthetic_pair_sized(num_classes, per_class, shift, seed, DEFAULT_SIZE)
}

pub fn make_synthetic_pair_sized(
    num_classes: usize,
    per_class: usize,
    shift: &ShiftSpec,
    seed: u64,
    size: usize,
) -> Result<(DomainDataset, DomainDataset)> {
    check_args(num_classes, per_class, size)?;
    shift.validate()?;
    let mut source = Vec::with_capacity(num_classes * per_class);
    let mut target = Vec::with_capacity(num_classes * per_class);
    for class in 0..num_classes {
        for k in 0..per_class {
            let id = [seed, GEOMETRY, class as u64, k as u64];
            let glyph = render_glyph(class, size, &id);
            let clean = glyph.canvas.to_rgb();
            let shifted = apply_shift(glyph, shift, &[seed, SHIFT, class as u64, k as u64]).to_rgb();
            source.push(Sample::new(
                ImageRef::Pixels(Arc::new(clean)),
                Some(class),
                Domain::Source,
            ));
            target.push(Sample::new(
                ImageRef::Pixels(Arc::new(shifted)),
                Some(class),
                Domain::Target,
            ));
        }
    }
    let names = class_names(num_classes);
    Ok((
        DomainDataset::new("synthetic-source", Domain::Source, names.clone(), source)?,
        DomainDataset::new("synthetic-target", Domain::Target, names, target)?,
    ))
}

/// Writes a dataset in folder-per-class layout as PNG files.
pub fn write_folder(ds: &DomainDataset, root: &std::path::Path) -> Result<()> {
    for (c, name) in ds.class_names().iter().enumerate() {
        let dir = root.join(name);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let _ = c;
    }
    let mut counters = vec![0usize; ds.num_classes()];
    for i in 0..ds.len() {
        let label = ds.label(i).ok_or_else(|| Error::Contract("unlabeled sample".into()))?;
        let img: Arc<RgbImage> = ds.image(i).load()?;
        let path = root
            .join(&ds.class_names()[label])
            .join(format!("{:05}.png", counters[label]));
        counters[label] += 1;
        img.save(&path)
            .map_err(|e| Error::io(&path, std::io::Error::other(e.to_string())))?;
    }
    Ok(())
}
