//! PSNR and SSIM on the 8-bit scale.

use std::fmt::Write as _;

use crate::data::{Image, Pair};
use crate::error::{Error, Result};

pub const PEAK: f64 = 255.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn same_dims(a: &Image, b: &Image) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::shape(
            "metric",
            format!("{}×{} vs {}×{}", a.width(), a.height(), b.width(), b.height()),
        ));
    }
    Ok(())
}

/// Mean squared error on the 8-bit scale.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    same_dims(a, b)?;
    let sq: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&p, &q)| {
            let d = p as f64 - q as f64;
            d * d
        })
        .sum();
    Ok(sq / a.pixels().len() as f64)
}

/// Peak signal-to-noise ratio in dB; `f64::INFINITY` for identical images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (PEAK * PEAK / m).log10())
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - r;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    taps
}

/// Valid-region separable Gaussian filter.
fn filter_valid(src: &[f64], h: usize, w: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let n = SSIM_WINDOW;
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|k| taps[k] * src[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|k| taps[k] * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity over every fully-inside 11×11 Gaussian window.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    same_dims(a, b)?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "SSIM needs at least {SSIM_WINDOW}×{SSIM_WINDOW} pixels, got {w}×{h}"
        )));
    }
    let c1 = (SSIM_K1 * PEAK).powi(2);
    let c2 = (SSIM_K2 * PEAK).powi(2);
    let x: Vec<f64> = a.pixels().iter().map(|&p| p as f64).collect();
    let y: Vec<f64> = b.pixels().iter().map(|&p| p as f64).collect();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
    let taps = gaussian_taps();
    let [mx, my, exx, eyy, exy] = [&x, &y, &xx, &yy, &xy].map(|s| filter_valid(s, h, w, &taps));
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = exx[i] - ux * ux;
            let vy = eyy[i] - uy * uy;
            let cxy = exy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mx.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageScore {
    pub id: String,
    pub psnr: f64,
    pub ssim: f64,
}

/// Per-image scores and their means.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<ImageScore>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

impl MetricsReport {
    pub fn from_rows(rows: Vec<ImageScore>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("no images to report"));
        }
        let n = rows.len() as f64;
        let mean_psnr = rows.iter().map(|r| r.psnr).sum::<f64>() / n;
        let mean_ssim = rows.iter().map(|r| r.ssim).sum::<f64>() / n;
        Ok(Self {
            rows,
            mean_psnr,
            mean_ssim,
        })
    }

    /// Tab-separated `id psnr ssim` lines followed by a `mean` line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("id\tpsnr_db\tssim\n");
        for r in &self.rows {
            let _ = writeln!(out, "{}\t{}\t{:.6}", r.id, fmt_db(r.psnr), r.ssim);
        }
        let _ = writeln!(out, "mean\t{}\t{:.6}", fmt_db(self.mean_psnr), self.mean_ssim);
        out
    }
}

pub fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.4}")
    }
}

/// Scores `restored[i]` against `pairs[i].full`.
pub fn score_pairs(pairs: &[Pair], restored: &[Image]) -> Result<MetricsReport> {
    if pairs.len() != restored.len() {
        return Err(Error::invalid(format!(
            "{} pairs but {} restored images",
            pairs.len(),
            restored.len()
        )));
    }
    let rows = pairs
        .iter()
        .zip(restored)
        .map(|(p, r)| {
            Ok(ImageScore {
                id: p.id.clone(),
                psnr: psnr(r, &p.full)?,
                ssim: ssim(r, &p.full)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::from_rows(rows)
}
