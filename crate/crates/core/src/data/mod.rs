//! Grayscale images, sparse grid sampling, dataset handling and the synthetic
//! vein generator.

mod dataset;
pub mod pgm;
mod sampling;
mod synth;

pub use dataset::{load_pairs, pgm_files, read_split, sparse_dir, write_sparse_dir, write_split, Pair};
pub use sampling::{augment, augment_pair, dihedral, downsample_grid, split_dataset, DatasetSplit, DIHEDRAL_VARIANTS};
pub use synth::synth_veins;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// 8-bit grayscale raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!("empty image {width}×{height}")));
        }
        if pixels.len() != width * height {
            return Err(Error::invalid(format!(
                "{width}×{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> u8) -> Self {
        assert!(width > 0 && height > 0);
        let pixels = (0..height)
            .flat_map(|y| (0..width).map(move |x| (y, x)))
            .map(|(y, x)| f(y, x))
            .collect();
        Self { width, height, pixels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// `[H, W, 1]` tensor in `[-1, 1]` via `p / 127.5 - 1`.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.pixels.iter().map(|&p| normalize(p)).collect();
        Tensor::new([self.height, self.width, 1], data).expect("non-empty image")
    }

    /// Inverse of [`to_tensor`](Self::to_tensor): clamps to `[0, 255]` and rounds half up.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (h, w, c) = t.hwc()?;
        if c != 1 {
            return Err(Error::shape("from_tensor", format!("expected one channel, got {c}")));
        }
        Self::new(w, h, t.data().iter().map(|&v| denormalize(v)).collect())
    }
}

pub fn normalize(p: u8) -> f32 {
    p as f32 / 127.5 - 1.0
}

pub fn denormalize(v: f32) -> u8 {
    let x = (v + 1.0) * 127.5;
    if x.is_nan() {
        return 0;
    }
    (x + 0.5).floor().clamp(0.0, 255.0) as u8
}
