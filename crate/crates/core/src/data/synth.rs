//! Deterministic leaf-vein-like test images: random-walk trunks with
//! recursive side branches, bright on a dark, slowly varying background.
//!
//! Output for a given `(seed, size)` is frozen by golden tests; any change
//! here changes every derived fixture.

use std::f32::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Image;
use crate::error::{Error, Result};

const MAX_DEPTH: u32 = 3;
const BLUR_SIGMA: f32 = 1.0;

struct Canvas {
    size: usize,
    px: Vec<f32>,
}

impl Canvas {
    fn stamp(&mut self, cx: f32, cy: f32, radius: f32, value: f32) {
        let reach = radius + 1.0;
        let y0 = (cy - reach).floor().max(0.0) as usize;
        let x0 = (cx - reach).floor().max(0.0) as usize;
        let y1 = ((cy + reach).ceil() as usize).min(self.size - 1);
        let x1 = ((cx + reach).ceil() as usize).min(self.size - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d = ((x as f32 - cx).powi(2) + (y as f32 - cy).powi(2)).sqrt();
                let cover = (radius + 0.5 - d).clamp(0.0, 1.0);
                let p = &mut self.px[y * self.size + x];
                *p = p.max(value * cover);
            }
        }
    }
}

struct Branch {
    x: f32,
    y: f32,
    heading: f32,
    width: f32,
    length: f32,
    intensity: f32,
    depth: u32,
}

fn grow(canvas: &mut Canvas, rng: &mut ChaCha8Rng, b: Branch) {
    let size = canvas.size as f32;
    let wiggle = Normal::new(0.0f32, 0.06).expect("valid sigma");
    let spacing = size / 9.0;
    let (mut x, mut y, mut heading) = (b.x, b.y, b.heading);
    let steps = b.length as usize;
    for step in 0..steps {
        if !(-2.0..size + 2.0).contains(&x) || !(-2.0..size + 2.0).contains(&y) {
            break;
        }
        // Taper towards the tip.
        let t = step as f32 / steps.max(1) as f32;
        let width = b.width * (1.0 - 0.35 * t);
        canvas.stamp(x, y, width / 2.0, b.intensity);

        if b.depth < MAX_DEPTH && step > 4 && rng.random::<f32>() < 1.0 / spacing {
            let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let child = Branch {
                x,
                y,
                heading: heading + side * rng.random_range(0.5..1.1f32),
                width: (width * rng.random_range(0.5..0.7f32)).max(1.0),
                length: (steps - step) as f32 * rng.random_range(0.3..0.6f32),
                intensity: b.intensity * rng.random_range(0.8..0.92f32),
                depth: b.depth + 1,
            };
            grow(canvas, rng, child);
        }
        heading += wiggle.sample(rng);
        x += heading.cos();
        y += heading.sin();
    }
}

fn gaussian_blur(px: &[f32], size: usize, sigma: f32) -> Vec<f32> {
    let r = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f32> = (-r..=r)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f32 = taps.iter().sum();
    let at = |i: isize| i.clamp(0, size as isize - 1) as usize;
    let mut tmp = vec![0.0f32; px.len()];
    for y in 0..size {
        for x in 0..size {
            tmp[y * size + x] = (-r..=r)
                .map(|d| taps[(d + r) as usize] * px[y * size + at(x as isize + d)])
                .sum::<f32>()
                / norm;
        }
    }
    let mut out = vec![0.0f32; px.len()];
    for y in 0..size {
        for x in 0..size {
            out[y * size + x] = (-r..=r)
                .map(|d| taps[(d + r) as usize] * tmp[at(y as isize + d) * size + x])
                .sum::<f32>()
                / norm;
        }
    }
    out
}

/// Branching vein raster of `size × size` pixels, deterministic in `seed`.
pub fn synth_veins(seed: u64, size: usize) -> Result<Image> {
    if !(64..=512).contains(&size) {
        return Err(Error::invalid(format!(
            "synthetic size must be in 64..=512, got {size}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f32;

    // Background: dark base plus two broad cosine ripples.
    let base = rng.random_range(3.0..7.0f32);
    let ripples: Vec<(f32, f32, f32, f32)> = (0..2)
        .map(|_| {
            (
                rng.random_range(4.0..9.0f32),
                rng.random_range(0.5..2.0f32) * 2.0 * PI / s,
                rng.random_range(0.0..PI),
                rng.random_range(0.0..2.0 * PI),
            )
        })
        .collect();
    let mut canvas = Canvas {
        size,
        px: vec![0.0; size * size],
    };

    let trunks = rng.random_range(2..=3);
    let unit = s / 256.0;
    for _ in 0..trunks {
        // Enter from a random edge, pointing roughly inward.
        let edge = rng.random_range(0..4);
        let along = rng.random_range(0.15..0.85f32) * s;
        let (x, y, inward) = match edge {
            0 => (along, 0.0, PI / 2.0),
            1 => (s - 1.0, along, PI),
            2 => (along, s - 1.0, -PI / 2.0),
            _ => (0.0, along, 0.0),
        };
        let trunk = Branch {
            x,
            y,
            heading: inward + rng.random_range(-0.5..0.5f32),
            width: (unit * rng.random_range(4.5..7.0f32)).max(3.5),
            length: s * rng.random_range(0.9..1.3f32),
            intensity: rng.random_range(225.0..245.0f32),
            depth: 0,
        };
        grow(&mut canvas, &mut rng, trunk);
    }

    let veins = gaussian_blur(&canvas.px, size, BLUR_SIGMA);
    let pixels = veins
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let (y, x) = ((i / size) as f32, (i % size) as f32);
            let bg = base
                + ripples
                    .iter()
                    .map(|&(amp, freq, dir, phase)| {
                        amp * (0.5 + 0.5 * (freq * (x * dir.cos() + y * dir.sin()) + phase).cos())
                    })
                    .sum::<f32>();
            (bg.max(v) + 0.5).floor().clamp(0.0, 255.0) as u8
        })
        .collect();
    Image::new(size, size, pixels)
}
