//! Deterministic synthetic RGB-X samples.
//!
//! Each sample holds one rectangle or ellipse on a textured background.
//! Which modality reveals the object depends on the sample mode; pixel
//! values are quantized to multiples of 1/255 so that 8-bit image files
//! round-trip exactly.

use std::fmt;
use std::str::FromStr;

use crate::error::{config_err, Result};
use crate::rng::{derive, SplitMix64};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SampleMode {
    RgbInformative,
    XInformative,
    Both,
}

impl SampleMode {
    pub fn name(self) -> &'static str {
        match self {
            SampleMode::RgbInformative => "rgb_informative",
            SampleMode::XInformative => "x_informative",
            SampleMode::Both => "both",
        }
    }
}

impl fmt::Display for SampleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SampleMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        [SampleMode::RgbInformative, SampleMode::XInformative, SampleMode::Both]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| config_err!("unknown sample mode `{s}`"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T> {
    /// `H×W×3`, values in `[0, 1]`.
    pub rgb: Tensor<T>,
    /// `H×W×1`, values in `[0, 1]`.
    pub x: Tensor<T>,
    /// `H×W`, values in `{0, 1}`.
    pub mask: Tensor<T>,
    pub mode: SampleMode,
}

pub const MIN_AREA: f64 = 0.05;
pub const MAX_AREA: f64 = 0.40;
/// Upper bound on object/background RGB contrast when RGB is camouflaged.
pub const CAMOUFLAGE_CONTRAST: f64 = 0.05;
/// Lower bound on object/background contrast in an informative modality.
pub const VISIBLE_CONTRAST: f64 = 0.3;

const RGB_SHIFT: f64 = 0.35;
const X_SHIFT: f64 = 0.45;
const TEXTURE_AMP: f64 = 0.08;
const NOISE_AMP: f64 = 0.12;

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

struct Shape {
    ellipse: bool,
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
}

impl Shape {
    fn contains(&self, y: usize, x: usize) -> bool {
        let dy = (y as f64 + 0.5 - self.cy) / self.ry;
        let dx = (x as f64 + 0.5 - self.cx) / self.rx;
        if self.ellipse {
            dy * dy + dx * dx <= 1.0
        } else {
            dy.abs() <= 1.0 && dx.abs() <= 1.0
        }
    }
}

fn draw_mask(rng: &mut SplitMix64, size: usize) -> Vec<bool> {
    let s = size as f64;
    loop {
        let shape = Shape {
            ellipse: rng.next_f64() < 0.5,
            cy: rng.uniform(0.25, 0.75) * s,
            cx: rng.uniform(0.25, 0.75) * s,
            ry: rng.uniform(0.12, 0.38) * s,
            rx: rng.uniform(0.12, 0.38) * s,
        };
        let mask: Vec<bool> = (0..size * size)
            .map(|i| shape.contains(i / size, i % size))
            .collect();
        let frac = mask.iter().filter(|&&m| m).count() as f64 / (size * size) as f64;
        if (MIN_AREA..=MAX_AREA).contains(&frac) {
            return mask;
        }
    }
}

/// Oriented sinusoidal texture plus uniform pixel noise.
fn texture(rng: &mut SplitMix64, size: usize) -> Vec<f64> {
    let fy = rng.uniform(0.6, 1.6);
    let fx = rng.uniform(0.6, 1.6);
    let phase = rng.uniform(0.0, std::f64::consts::TAU);
    (0..size * size)
        .map(|i| {
            let (y, x) = ((i / size) as f64, (i % size) as f64);
            TEXTURE_AMP * (fy * y + fx * x + phase).sin() + rng.uniform(-NOISE_AMP, NOISE_AMP)
        })
        .collect()
}

fn shifted(base: f64, shift: f64) -> f64 {
    if base > 0.5 {
        base - shift
    } else {
        base + shift
    }
}

/// Absolute difference of object and background means, per channel,
/// averaged over channels.
pub fn contrast<T: Real>(image: &Tensor<T>, mask: &Tensor<T>) -> f64 {
    let channels = image.numel() / mask.numel();
    let mut total = 0.0;
    for ch in 0..channels {
        let (mut so, mut no, mut sb, mut nb) = (0.0, 0usize, 0.0, 0usize);
        for (px, &m) in mask.data().iter().enumerate() {
            let v = image.data()[px * channels + ch].as_f64();
            if m > T::lit(0.5) {
                so += v;
                no += 1;
            } else {
                sb += v;
                nb += 1;
            }
        }
        total += (so / no.max(1) as f64 - sb / nb.max(1) as f64).abs();
    }
    total / channels as f64
}

fn render(rng: &mut SplitMix64, mask: &[bool], size: usize, mode: SampleMode) -> (Vec<f64>, Vec<f64>) {
    let rgb_visible = mode != SampleMode::XInformative;
    let x_visible = mode != SampleMode::RgbInformative;
    let base: [f64; 3] = [rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8)];
    let object: [f64; 3] = if rgb_visible {
        base.map(|b| shifted(b, RGB_SHIFT))
    } else {
        base
    };
    let rgb_tex: Vec<Vec<f64>> = (0..3).map(|_| texture(rng, size)).collect();
    let mut rgb = vec![0.0; size * size * 3];
    for px in 0..size * size {
        for ch in 0..3 {
            let level = if mask[px] { object[ch] } else { base[ch] };
            rgb[px * 3 + ch] = quantize(level + rgb_tex[ch][px]);
        }
    }
    let x_base = rng.uniform(0.25, 0.75);
    let x_obj = if x_visible {
        shifted(x_base, X_SHIFT)
    } else {
        x_base
    };
    let x_tex = texture(rng, size);
    let x = (0..size * size)
        .map(|px| quantize(if mask[px] { x_obj } else { x_base } + x_tex[px]))
        .collect();
    (rgb, x)
}

/// Generates one sample; identical `(seed, mode, size)` give identical bits.
pub fn gen_sample<T: Real>(seed: u64, mode: SampleMode, size: usize) -> Sample<T> {
    let mut rng = SplitMix64::new(seed);
    let mask_bits = draw_mask(&mut rng, size);
    let mask = Tensor::from_fn(&[size, size], |i| if mask_bits[i] { T::one() } else { T::zero() });
    loop {
        let (rgb, x) = render(&mut rng, &mask_bits, size, mode);
        let rgb = Tensor::from_fn(&[size, size, 3], |i| T::lit(rgb[i]));
        let x = Tensor::from_fn(&[size, size, 1], |i| T::lit(x[i]));
        let (crgb, cx) = (contrast(&rgb, &mask), contrast(&x, &mask));
        let ok = match mode {
            SampleMode::XInformative => crgb < CAMOUFLAGE_CONTRAST && cx > VISIBLE_CONTRAST,
            SampleMode::RgbInformative => crgb > VISIBLE_CONTRAST && cx < CAMOUFLAGE_CONTRAST,
            SampleMode::Both => crgb > VISIBLE_CONTRAST && cx > VISIBLE_CONTRAST,
        };
        if ok {
            return Sample { rgb, x, mask, mode };
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    fn label(self) -> u64 {
        match self {
            Split::Train => 0x7472_6169_6e,
            Split::Test => 0x7465_7374,
        }
    }
}

/// Seed of sample `index` in `split` of a dataset seeded with `seed`.
pub fn sample_seed(seed: u64, split: Split, index: usize) -> u64 {
    derive(derive(seed, split.label()), index as u64)
}

/// Mode of sample `index`: an even spread of `x_fraction` camouflaged-RGB
/// samples, the rest alternating RGB-only and both-visible.
pub fn sample_mode(index: usize, x_fraction: f64) -> SampleMode {
    let before = (index as f64 * x_fraction).floor();
    let after = ((index + 1) as f64 * x_fraction).floor();
    if after > before {
        SampleMode::XInformative
    } else {
        let others = index - after as usize;
        if others % 2 == 0 {
            SampleMode::RgbInformative
        } else {
            SampleMode::Both
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub samples: Vec<Sample<T>>,
    pub seeds: Vec<u64>,
}

impl<T: Real> Dataset<T> {
    pub fn generate(seed: u64, split: Split, count: usize, size: usize, x_fraction: f64) -> Self {
        let seeds: Vec<u64> = (0..count).map(|i| sample_seed(seed, split, i)).collect();
        let samples = seeds
            .iter()
            .enumerate()
            .map(|(i, &s)| gen_sample(s, sample_mode(i, x_fraction), size))
            .collect();
        Self { samples, seeds }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}
