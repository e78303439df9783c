use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Image;
use crate::error::{Error, Result};

/// Keeps pixels whose row and column are multiples of `scale`, anchored at (0, 0).
pub fn downsample_grid(image: &Image, scale: usize) -> Result<Image> {
    if !matches!(scale, 1 | 2 | 4) {
        return Err(Error::invalid(format!("scale must be 1, 2 or 4, got {scale}")));
    }
    let (h, w) = (image.height(), image.width());
    if h % scale != 0 || w % scale != 0 {
        return Err(Error::invalid(format!(
            "{w}×{h} image is not divisible by scale {scale}"
        )));
    }
    Ok(Image::from_fn(w / scale, h / scale, |y, x| {
        image.get(y * scale, x * scale)
    }))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Seeded shuffle, then `floor(0.8 N)` train, `floor(0.1 N)` validation and
/// the remainder as test.
pub fn split_dataset(ids: &[String], seed: u64) -> Result<DatasetSplit> {
    let n = ids.len();
    if n < 3 {
        return Err(Error::invalid(format!("need at least 3 samples to split, got {n}")));
    }
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = n * 8 / 10;
    let n_val = n / 10;
    let test = shuffled.split_off(n_train + n_val);
    let validation = shuffled.split_off(n_train);
    Ok(DatasetSplit {
        train: shuffled,
        validation,
        test,
        seed,
    })
}

pub const DIHEDRAL_VARIANTS: usize = 8;

fn rot90(img: &Image) -> Image {
    let n = img.width();
    Image::from_fn(n, n, |y, x| img.get(n - 1 - x, y))
}

fn flip_h(img: &Image) -> Image {
    let n = img.width();
    Image::from_fn(n, n, |y, x| img.get(y, n - 1 - x))
}

/// Dihedral variant `index` of a square image: variants 0–3 rotate clockwise by
/// `90°·index`, variants 4–7 mirror horizontally first and then rotate.
pub fn dihedral(image: &Image, index: usize) -> Result<Image> {
    if image.width() != image.height() {
        return Err(Error::invalid(format!(
            "dihedral transforms need a square image, got {}×{}",
            image.width(),
            image.height()
        )));
    }
    if index >= DIHEDRAL_VARIANTS {
        return Err(Error::invalid(format!("dihedral index {index} out of range")));
    }
    let mut out = if index >= 4 { flip_h(image) } else { image.clone() };
    for _ in 0..index % 4 {
        out = rot90(&out);
    }
    Ok(out)
}

/// All eight flip/rotation variants, in [`dihedral`] index order.
pub fn augment(image: &Image) -> Result<Vec<Image>> {
    (0..DIHEDRAL_VARIANTS).map(|i| dihedral(image, i)).collect()
}

/// Variant `index` of a training pair.
///
/// Mirroring moves the sampled grid from the (0, 0) corner to the opposite
/// one, so the sparse image is re-derived from the transformed full image to
/// keep the anchor fixed.
pub fn augment_pair(full: &Image, scale: usize, index: usize) -> Result<(Image, Image)> {
    let full = dihedral(full, index)?;
    let low = downsample_grid(&full, scale)?;
    Ok((low, full))
}
