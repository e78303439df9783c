//! Bicubic up-sampling baseline (Keys kernel, `a = -0.5`).
//!
//! The grid is sample-aligned: output pixel `i` reads source coordinate
//! `i / scale`, so every retained grid point lands on an integer source
//! position and is reproduced exactly. Out-of-range taps clamp to the edge.

use crate::data::Image;
use crate::data::Pair;
use crate::error::{Error, Result};
use crate::metrics::{score_pairs, MetricsReport};

pub const KEYS_A: f64 = -0.5;

/// Keys cubic convolution kernel.
pub fn keys_kernel(t: f64) -> f64 {
    let a = KEYS_A;
    let t = t.abs();
    if t <= 1.0 {
        (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a
    } else {
        0.0
    }
}

/// Weights of the four taps at offsets `-1, 0, 1, 2` for fractional phase `t`.
pub fn keys_weights(t: f64) -> [f64; 4] {
    [
        keys_kernel(t + 1.0),
        keys_kernel(t),
        keys_kernel(1.0 - t),
        keys_kernel(2.0 - t),
    ]
}

/// Float-valued single-channel raster on the 8-bit intensity scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn from_image(image: &Image) -> Self {
        Self {
            height: image.height(),
            width: image.width(),
            data: image.pixels().iter().map(|&p| p as f32).collect(),
        }
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Rounds half up and clamps to `[0, 255]`.
    pub fn to_image(&self) -> Image {
        Image::from_fn(self.width, self.height, |y, x| {
            (self.get(y, x) + 0.5).floor().clamp(0.0, 255.0) as u8
        })
    }
}

fn resample_1d(src: &[f32], stride: usize, n: usize, scale: usize, out: &mut [f32], out_stride: usize) {
    let last = n as isize - 1;
    for i in 0..n * scale {
        let base = i / scale;
        let t = (i % scale) as f64 / scale as f64;
        let w = keys_weights(t);
        let mut acc = 0.0f64;
        for (k, wk) in w.iter().enumerate() {
            let j = (base as isize + k as isize - 1).clamp(0, last) as usize;
            acc += wk * src[j * stride] as f64;
        }
        out[i * out_stride] = acc as f32;
    }
}

/// Horizontal pass: width grows by `scale`.
pub fn upsample_rows(p: &Plane, scale: usize) -> Plane {
    let ow = p.width * scale;
    let mut data = vec![0.0f32; p.height * ow];
    for y in 0..p.height {
        resample_1d(&p.data[y * p.width..], 1, p.width, scale, &mut data[y * ow..], 1);
    }
    Plane {
        height: p.height,
        width: ow,
        data,
    }
}

/// Vertical pass: height grows by `scale`.
pub fn upsample_cols(p: &Plane, scale: usize) -> Plane {
    let oh = p.height * scale;
    let mut data = vec![0.0f32; oh * p.width];
    for x in 0..p.width {
        resample_1d(&p.data[x..], p.width, p.height, scale, &mut data[x..], p.width);
    }
    Plane {
        height: oh,
        width: p.width,
        data,
    }
}

fn check(height: usize, width: usize, scale: usize) -> Result<()> {
    if !matches!(scale, 2 | 4) {
        return Err(Error::invalid(format!("bicubic scale must be 2 or 4, got {scale}")));
    }
    if height < 4 || width < 4 {
        return Err(Error::invalid(format!(
            "bicubic input must be at least 4×4, got {width}×{height}"
        )));
    }
    Ok(())
}

/// Unrounded bicubic result.
pub fn bicubic_upsample_plane(p: &Plane, scale: usize) -> Result<Plane> {
    check(p.height, p.width, scale)?;
    Ok(upsample_cols(&upsample_rows(p, scale), scale))
}

pub fn bicubic_upsample(image: &Image, scale: usize) -> Result<Image> {
    Ok(bicubic_upsample_plane(&Plane::from_image(image), scale)?.to_image())
}

/// PSNR/SSIM of bicubic reconstructions against ground truth.
pub fn evaluate_baseline(pairs: &[Pair], scale: usize) -> Result<MetricsReport> {
    if pairs.is_empty() {
        return Err(Error::invalid("baseline evaluation needs at least one pair"));
    }
    let restored = pairs
        .iter()
        .map(|p| bicubic_upsample(&p.low, scale))
        .collect::<Result<Vec<_>>>()?;
    score_pairs(pairs, &restored)
}
