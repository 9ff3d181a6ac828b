//! Pixel-space image operations on a float HWC canvas with values in
//! [0, 255].

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Canvas {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Canvas {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn from_rgb(img: &RgbImage) -> Self {
        Self {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.as_raw().iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn to_rgb(&self) -> RgbImage {
        let raw = self.data.iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect();
        RgbImage::from_raw(self.width as u32, self.height as u32, raw).expect("canvas size")
    }

    #[inline]
    pub fn px(&self, x: usize, y: usize) -> [f32; 3] {
        let o = (y * self.width + x) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: [f32; 3]) {
        let o = (y * self.width + x) * 3;
        self.data[o..o + 3].copy_from_slice(&v);
    }

    pub fn clamp(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 255.0);
        }
    }

    /// Rounds to the 8-bit grid, as if the image were stored and reloaded.
    pub fn quantize(&mut self) {
        for v in &mut self.data {
            *v = v.round().clamp(0.0, 255.0);
        }
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Canvas {
        let mut out = Canvas::new(w, h);
        for y in 0..h {
            let src = ((y0 + y) * self.width + x0) * 3;
            out.data[y * w * 3..(y + 1) * w * 3].copy_from_slice(&self.data[src..src + w * 3]);
        }
        out
    }

    pub fn hflip(&mut self) {
        let w = self.width;
        for y in 0..self.height {
            let row = &mut self.data[y * w * 3..(y + 1) * w * 3];
            for x in 0..w / 2 {
                for c in 0..3 {
                    row.swap(x * 3 + c, (w - 1 - x) * 3 + c);
                }
            }
        }
    }

    /// Separable triangle-filter resize. The filter support widens when
    /// downscaling so it also antialiases.
    pub fn resize(&self, width: usize, height: usize) -> Canvas {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let tmp = resample_axis(&self.data, self.width, self.height, width, true);
        let data = resample_axis(&tmp, width, self.height, height, false);
        Canvas { width, height, data }
    }

    pub fn luma(&self) -> Vec<f32> {
        self.data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect()
    }

    pub fn grayscale(&mut self) {
        let l = self.luma();
        for (p, g) in self.data.chunks_exact_mut(3).zip(l) {
            p.fill(g);
        }
    }
}

struct Taps {
    start: usize,
    weights: Vec<f32>,
}

fn filter_taps(in_len: usize, out_len: usize) -> Vec<Taps> {
    let scale = in_len as f64 / out_len as f64;
    let support = scale.max(1.0);
    (0..out_len)
        .map(|o| {
            let center = (o as f64 + 0.5) * scale;
            let lo = ((center - support).floor().max(0.0)) as usize;
            let hi = ((center + support).ceil() as usize).min(in_len);
            let mut weights: Vec<f32> = (lo..hi)
                .map(|i| {
                    let d = ((i as f64 + 0.5 - center) / support).abs();
                    (1.0 - d).max(0.0) as f32
                })
                .collect();
            let sum: f32 = weights.iter().sum();
            if sum > 0.0 {
                weights.iter_mut().for_each(|w| *w /= sum);
            } else {
                // degenerate: nearest sample
                let nearest = (center as usize).min(in_len - 1);
                return Taps {
                    start: nearest,
                    weights: vec![1.0],
                };
            }
            Taps { start: lo, weights }
        })
        .collect()
}

fn resample_axis(src: &[f32], w: usize, h: usize, out: usize, horizontal: bool) -> Vec<f32> {
    if horizontal {
        let taps = filter_taps(w, out);
        let mut dst = vec![0.0; out * h * 3];
        for y in 0..h {
            for (x, t) in taps.iter().enumerate() {
                let mut acc = [0.0f32; 3];
                for (k, wt) in t.weights.iter().enumerate() {
                    let s = (y * w + t.start + k) * 3;
                    for c in 0..3 {
                        acc[c] += wt * src[s + c];
                    }
                }
                dst[(y * out + x) * 3..(y * out + x) * 3 + 3].copy_from_slice(&acc);
            }
        }
        dst
    } else {
        let taps = filter_taps(h, out);
        let mut dst = vec![0.0; w * out * 3];
        for (y, t) in taps.iter().enumerate() {
            let row = &mut dst[y * w * 3..(y + 1) * w * 3];
            for (k, wt) in t.weights.iter().enumerate() {
                let s = (t.start + k) * w * 3;
                for (d, v) in row.iter_mut().zip(&src[s..s + w * 3]) {
                    *d += wt * v;
                }
            }
        }
        dst
    }
}

/// Crop box `(x, y, w, h)` sampled the way torchvision's
/// `RandomResizedCrop.get_params` does: ten attempts, then a centre crop
/// with the aspect ratio clamped into range.
pub fn random_resized_crop_box<R: Rng>(
    width: usize,
    height: usize,
    scale: (f64, f64),
    ratio: (f64, f64),
    rng: &mut R,
) -> (usize, usize, usize, usize) {
    let area = (width * height) as f64;
    let (lr0, lr1) = (ratio.0.ln(), ratio.1.ln());
    for _ in 0..10 {
        let target = area * rng.random_range(scale.0..=scale.1);
        let aspect = rng.random_range(lr0..=lr1).exp();
        let w = (target * aspect).sqrt().round() as usize;
        let h = (target / aspect).sqrt().round() as usize;
        if 0 < w && w <= width && 0 < h && h <= height {
            let y = rng.random_range(0..=height - h);
            let x = rng.random_range(0..=width - w);
            return (x, y, w, h);
        }
    }
    let in_ratio = width as f64 / height as f64;
    let (w, h) = if in_ratio < ratio.0 {
        (width, ((width as f64 / ratio.0).round() as usize).max(1))
    } else if in_ratio > ratio.1 {
        (((height as f64 * ratio.1).round() as usize).max(1), height)
    } else {
        (width, height)
    };
    ((width - w) / 2, (height - h) / 2, w, h)
}

fn blend(a: &mut Canvas, b: impl Fn(usize) -> f32, factor: f32) {
    for (i, v) in a.data.iter_mut().enumerate() {
        *v = (factor * *v + (1.0 - factor) * b(i)).clamp(0.0, 255.0);
    }
}

pub fn adjust_brightness(img: &mut Canvas, factor: f32) {
    blend(img, |_| 0.0, factor);
}

pub fn adjust_contrast(img: &mut Canvas, factor: f32) {
    let l = img.luma();
    let mean = l.iter().sum::<f32>() / l.len().max(1) as f32;
    blend(img, |_| mean, factor);
}

pub fn adjust_saturation(img: &mut Canvas, factor: f32) {
    let l = img.luma();
    blend(img, |i| l[i / 3], factor);
}

fn rgb_to_hsv(p: [f32; 3]) -> [f32; 3] {
    let [r, g, b] = p;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let s = if max > 0.0 { d / max } else { 0.0 };
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    [h, s, max]
}

fn hsv_to_rgb(p: [f32; 3]) -> [f32; 3] {
    let [h, s, v] = p;
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = (h6.floor() as i32).rem_euclid(6);
    let f = h6 - h6.floor();
    let (p_, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i {
        0 => [v, t, p_],
        1 => [q, v, p_],
        2 => [p_, v, t],
        3 => [p_, q, v],
        4 => [t, p_, v],
        _ => [v, p_, q],
    }
}

/// Rotates hue by `shift` turns (so 0.5 is 180 degrees).
pub fn adjust_hue(img: &mut Canvas, shift: f32) {
    for p in img.data.chunks_exact_mut(3) {
        let mut hsv = rgb_to_hsv([p[0], p[1], p[2]]);
        hsv[0] += shift;
        let rgb = hsv_to_rgb(hsv);
        p.copy_from_slice(&rgb);
    }
}

/// Colour jitter with factors drawn uniformly around 1 (hue around 0) and
/// the four adjustments applied in random order.
pub fn color_jitter<R: Rng>(img: &mut Canvas, jitter: [f64; 4], rng: &mut R) {
    let mut order = [0usize, 1, 2, 3];
    order.shuffle(rng);
    let factor = |rng: &mut R, m: f64| rng.random_range((1.0 - m).max(0.0)..=1.0 + m) as f32;
    let [b, c, s, h] = jitter;
    let bf = if b > 0.0 { Some(factor(rng, b)) } else { None };
    let cf = if c > 0.0 { Some(factor(rng, c)) } else { None };
    let sf = if s > 0.0 { Some(factor(rng, s)) } else { None };
    let hf = if h > 0.0 {
        Some(rng.random_range(-h..=h) as f32)
    } else {
        None
    };
    for op in order {
        match (op, bf, cf, sf, hf) {
            (0, Some(f), ..) => adjust_brightness(img, f),
            (1, _, Some(f), ..) => adjust_contrast(img, f),
            (2, _, _, Some(f), _) => adjust_saturation(img, f),
            (3, .., Some(f)) => adjust_hue(img, f),
            _ => {}
        }
    }
}
