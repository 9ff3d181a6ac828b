//! AugMix with torchvision's default parameters: severity 3, mixture
//! width 3, random chain depth in [1, 3], alpha 1 and the full operation
//! set.

use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma};

use super::transforms::{adjust_brightness, adjust_contrast, adjust_saturation, Canvas};

pub const SEVERITY: usize = 3;
pub const MIXTURE_WIDTH: usize = 3;
pub const MAX_CHAIN_DEPTH: usize = 3;
pub const ALPHA: f64 = 1.0;
const NUM_BINS: usize = 11;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AugOp {
    AutoContrast,
    Equalize,
    Posterize,
    Solarize,
    Rotate,
    ShearX,
    ShearY,
    TranslateX,
    TranslateY,
    Brightness,
    Color,
    Contrast,
    Sharpness,
}

impl AugOp {
    pub const ALL: [AugOp; 13] = [
        AugOp::AutoContrast,
        AugOp::Equalize,
        AugOp::Posterize,
        AugOp::Solarize,
        AugOp::Rotate,
        AugOp::ShearX,
        AugOp::ShearY,
        AugOp::TranslateX,
        AugOp::TranslateY,
        AugOp::Brightness,
        AugOp::Color,
        AugOp::Contrast,
        AugOp::Sharpness,
    ];

    fn signed(self) -> bool {
        matches!(
            self,
            AugOp::Rotate
                | AugOp::ShearX
                | AugOp::ShearY
                | AugOp::TranslateX
                | AugOp::TranslateY
                | AugOp::Brightness
                | AugOp::Color
                | AugOp::Contrast
                | AugOp::Sharpness
        )
    }

    /// Magnitude at bin `bin` of the linear grid.
    pub fn magnitude(self, bin: usize, width: usize, height: usize) -> f64 {
        let t = bin as f64 / (NUM_BINS - 1) as f64;
        match self {
            AugOp::AutoContrast | AugOp::Equalize => 0.0,
            AugOp::ShearX | AugOp::ShearY => 0.3 * t,
            AugOp::TranslateX => width as f64 / 3.0 * t,
            AugOp::TranslateY => height as f64 / 3.0 * t,
            AugOp::Rotate => 30.0 * t,
            AugOp::Brightness | AugOp::Color | AugOp::Contrast | AugOp::Sharpness => 0.9 * t,
            AugOp::Posterize => 4.0 - (bin as f64 / ((NUM_BINS - 1) as f64 / 4.0)).round(),
            AugOp::Solarize => 1.0 - t,
        }
    }

    pub fn apply(self, img: &Canvas, magnitude: f64) -> Canvas {
        let mut out = img.clone();
        match self {
            AugOp::AutoContrast => autocontrast(&mut out),
            AugOp::Equalize => equalize(&mut out),
            AugOp::Posterize => posterize(&mut out, magnitude as u32),
            AugOp::Solarize => solarize(&mut out, (magnitude * 255.0) as f32),
            AugOp::Rotate => {
                let (s, c) = (-magnitude.to_radians()).sin_cos();
                return affine(img, [c, -s, 0.0, s, c, 0.0]);
            }
            AugOp::ShearX => return affine(img, [1.0, magnitude, 0.0, 0.0, 1.0, 0.0]),
            AugOp::ShearY => return affine(img, [1.0, 0.0, 0.0, magnitude, 1.0, 0.0]),
            AugOp::TranslateX => return affine(img, [1.0, 0.0, -magnitude.trunc(), 0.0, 1.0, 0.0]),
            AugOp::TranslateY => return affine(img, [1.0, 0.0, 0.0, 0.0, 1.0, -magnitude.trunc()]),
            AugOp::Brightness => adjust_brightness(&mut out, (1.0 + magnitude) as f32),
            AugOp::Color => adjust_saturation(&mut out, (1.0 + magnitude) as f32),
            AugOp::Contrast => adjust_contrast(&mut out, (1.0 + magnitude) as f32),
            AugOp::Sharpness => sharpness(&mut out, (1.0 + magnitude) as f32),
        }
        out.quantize();
        out
    }
}

/// Inverse-mapped affine warp about the image centre, nearest neighbour,
/// zero fill. `m` maps output coordinates to input coordinates.
fn affine(img: &Canvas, m: [f64; 6]) -> Canvas {
    let (w, h) = (img.width, img.height);
    let (cx, cy) = (w as f64 * 0.5, h as f64 * 0.5);
    let mut out = Canvas::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            let sx = m[0] * dx + m[1] * dy + m[2] + cx;
            let sy = m[3] * dx + m[4] * dy + m[5] + cy;
            let (ix, iy) = (sx.floor(), sy.floor());
            if ix >= 0.0 && iy >= 0.0 && (ix as usize) < w && (iy as usize) < h {
                out.set(x, y, img.px(ix as usize, iy as usize));
            }
        }
    }
    out
}

fn autocontrast(img: &mut Canvas) {
    for c in 0..3 {
        let (mut lo, mut hi) = (f32::MAX, f32::MIN);
        for p in img.data.chunks_exact(3) {
            lo = lo.min(p[c]);
            hi = hi.max(p[c]);
        }
        if hi > lo {
            let scale = 255.0 / (hi - lo);
            for p in img.data.chunks_exact_mut(3) {
                p[c] = (p[c] - lo) * scale;
            }
        }
    }
}

/// Per-channel histogram equalisation following PIL's `ImageOps.equalize`.
fn equalize(img: &mut Canvas) {
    for c in 0..3 {
        let mut hist = [0usize; 256];
        for p in img.data.chunks_exact(3) {
            hist[p[c].round().clamp(0.0, 255.0) as usize] += 1;
        }
        let nonzero: Vec<usize> = hist.iter().copied().filter(|&n| n > 0).collect();
        if nonzero.len() <= 1 {
            continue;
        }
        let step = (nonzero.iter().sum::<usize>() - nonzero[nonzero.len() - 1]) / 255;
        if step == 0 {
            continue;
        }
        let mut lut = [0f32; 256];
        let mut n = step / 2;
        for (i, &count) in hist.iter().enumerate() {
            lut[i] = (n / step).min(255) as f32;
            n += count;
        }
        for p in img.data.chunks_exact_mut(3) {
            p[c] = lut[p[c].round().clamp(0.0, 255.0) as usize];
        }
    }
}

fn posterize(img: &mut Canvas, bits: u32) {
    let mask: u8 = !(((1u16 << (8 - bits.min(8))) - 1) as u8);
    for v in &mut img.data {
        *v = ((v.round().clamp(0.0, 255.0) as u8) & mask) as f32;
    }
}

fn solarize(img: &mut Canvas, threshold: f32) {
    for v in &mut img.data {
        if *v >= threshold {
            *v = 255.0 - *v;
        }
    }
}

/// Blend with a 3x3 smoothed copy; border pixels keep their values.
fn sharpness(img: &mut Canvas, factor: f32) {
    let (w, h) = (img.width, img.height);
    if w < 3 || h < 3 {
        return;
    }
    let src = img.clone();
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let mut acc = [0f32; 3];
            for dy in 0..3 {
                for dx in 0..3 {
                    let k = if dx == 1 && dy == 1 { 5.0 } else { 1.0 };
                    let p = src.px(x + dx - 1, y + dy - 1);
                    for c in 0..3 {
                        acc[c] += k * p[c];
                    }
                }
            }
            let orig = src.px(x, y);
            let mut out = [0f32; 3];
            for c in 0..3 {
                let blurred = (acc[c] / 13.0).round();
                out[c] = (blurred + factor * (orig[c] - blurred)).clamp(0.0, 255.0);
            }
            img.set(x, y, out);
        }
    }
}

fn dirichlet<R: Rng>(n: usize, alpha: f64, rng: &mut R) -> Vec<f64> {
    let g = Gamma::new(alpha, 1.0).expect("valid gamma");
    let draws: Vec<f64> = (0..n).map(|_| g.sample(rng)).collect();
    let sum: f64 = draws.iter().sum();
    draws.into_iter().map(|d| d / sum).collect()
}

/// Mixes `MIXTURE_WIDTH` random operation chains and blends the mixture
/// with the original using a Beta(alpha, alpha) weight.
pub fn augmix<R: Rng>(img: &Canvas, rng: &mut R) -> Canvas {
    let m = Beta::new(ALPHA, ALPHA).expect("valid beta").sample(rng) as f32;
    let ws = dirichlet(MIXTURE_WIDTH, ALPHA, rng);
    let mut mix = vec![0f32; img.data.len()];
    for &wi in &ws {
        let depth = rng.random_range(1..=MAX_CHAIN_DEPTH);
        let mut aug = img.clone();
        for _ in 0..depth {
            let op = AugOp::ALL[rng.random_range(0..AugOp::ALL.len())];
            let bin = rng.random_range(0..SEVERITY);
            let mut mag = op.magnitude(bin, img.width, img.height);
            if op.signed() && rng.random_bool(0.5) {
                mag = -mag;
            }
            aug = op.apply(&aug, mag);
        }
        for (acc, v) in mix.iter_mut().zip(&aug.data) {
            *acc += wi as f32 * v;
        }
    }
    let mut out = img.clone();
    for (o, mx) in out.data.iter_mut().zip(mix) {
        *o = (m * *o + (1.0 - m) * mx).clamp(0.0, 255.0);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn noise(w: usize, h: usize, seed: u64) -> Canvas {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c = Canvas::new(w, h);
        c.data.iter_mut().for_each(|v| *v = rng.random_range(0..256) as f32);
        c
    }

    #[test]
    fn zero_magnitude_geometric_ops_are_identity() {
        let c = noise(9, 7, 1);
        for op in [
            AugOp::Rotate,
            AugOp::ShearX,
            AugOp::ShearY,
            AugOp::TranslateX,
            AugOp::TranslateY,
        ] {
            assert_eq!(op.apply(&c, 0.0), c, "{op:?}");
        }
        for op in [AugOp::Brightness, AugOp::Color, AugOp::Contrast, AugOp::Sharpness] {
            assert_eq!(op.apply(&c, 0.0), c, "{op:?}");
        }
    }

    #[test]
    fn magnitude_grid_endpoints() {
        assert_eq!(AugOp::Posterize.magnitude(0, 32, 32), 4.0);
        assert_eq!(AugOp::Posterize.magnitude(10, 32, 32), 0.0);
        assert_eq!(AugOp::Solarize.magnitude(0, 32, 32), 1.0);
        assert!((AugOp::Rotate.magnitude(10, 32, 32) - 30.0).abs() < 1e-12);
        assert!((AugOp::TranslateX.magnitude(10, 30, 60) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn posterize_and_solarize() {
        let mut c = Canvas::new(1, 1);
        c.set(0, 0, [255.0, 129.0, 15.0]);
        posterize(&mut c, 4);
        assert_eq!(c.px(0, 0), [240.0, 128.0, 0.0]);
        let mut s = Canvas::new(1, 1);
        s.set(0, 0, [200.0, 10.0, 128.0]);
        solarize(&mut s, 128.0);
        assert_eq!(s.px(0, 0), [55.0, 10.0, 127.0]);
    }

    #[test]
    fn translate_shifts_content() {
        let c = noise(8, 8, 2);
        let t = AugOp::TranslateX.apply(&c, 2.0);
        assert_eq!(t.px(5, 3), c.px(3, 3));
        assert_eq!(t.px(0, 3), [0.0; 3]);
    }

    #[test]
    fn autocontrast_stretches_range() {
        let mut c = Canvas::new(2, 1);
        c.set(0, 0, [50.0, 50.0, 50.0]);
        c.set(1, 0, [100.0, 100.0, 100.0]);
        autocontrast(&mut c);
        assert_eq!(c.px(0, 0), [0.0; 3]);
        assert_eq!(c.px(1, 0), [255.0; 3]);
    }

    #[test]
    fn augmix_is_deterministic_and_in_range() {
        let c = noise(16, 16, 3);
        let a = augmix(&c, &mut ChaCha8Rng::seed_from_u64(9));
        let b = augmix(&c, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        assert!(a.data.iter().all(|v| (0.0..=255.0).contains(v)));
        assert_ne!(a, c);
    }
}
