//! On-disk dataset layout: `<root>/full/*.pgm` holds ground truth and
//! `<root>/x2/`, `<root>/x4/` hold the grid-sampled inputs under the same
//! file names. A split is stored as `<root>/split.txt` with one
//! `<part>\t<id>` line per sample.

use std::fs;
use std::path::{Path, PathBuf};

use super::pgm::{read_pgm, write_pgm};
use super::{downsample_grid, DatasetSplit, Image};
use crate::error::{Error, Result};

/// A sparse input and its full-resolution ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub id: String,
    pub low: Image,
    pub full: Image,
}

impl Pair {
    /// Pair whose sparse side is derived from `full` by grid sampling.
    pub fn from_full(id: impl Into<String>, full: Image, scale: usize) -> Result<Self> {
        let low = downsample_grid(&full, scale)?;
        Ok(Self {
            id: id.into(),
            low,
            full,
        })
    }
}

/// Sorted `.pgm` files of a directory.
pub fn pgm_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn sparse_dir(root: &Path, scale: usize) -> PathBuf {
    root.join(format!("x{scale}"))
}

/// Loads every `(x{scale}, full)` pair under `root`, ordered by id.
pub fn load_pairs(root: &Path, scale: usize) -> Result<Vec<Pair>> {
    let low_dir = sparse_dir(root, scale);
    let mut pairs = Vec::new();
    for path in pgm_files(&root.join("full"))? {
        let name = path.file_name().expect("file path");
        let full = read_pgm(&path)?;
        let low = read_pgm(low_dir.join(name))?;
        if low.width() * scale != full.width() || low.height() * scale != full.height() {
            return Err(Error::invalid(format!(
                "{}: sparse image {}×{} does not match {}×{} at scale {scale}",
                stem(&path),
                low.width(),
                low.height(),
                full.width(),
                full.height()
            )));
        }
        pairs.push(Pair {
            id: stem(&path),
            low,
            full,
        });
    }
    Ok(pairs)
}

/// Grid-samples every image of `input` into `output`; returns the count.
pub fn write_sparse_dir(input: &Path, output: &Path, scale: usize) -> Result<usize> {
    fs::create_dir_all(output).map_err(|e| Error::io(output, e))?;
    let files = pgm_files(input)?;
    for path in &files {
        let low = downsample_grid(&read_pgm(path)?, scale)?;
        write_pgm(output.join(path.file_name().expect("file path")), &low)?;
    }
    Ok(files.len())
}

pub fn write_split(path: &Path, split: &DatasetSplit) -> Result<()> {
    let mut text = format!("# seed {}\n", split.seed);
    for (part, ids) in [
        ("train", &split.train),
        ("val", &split.validation),
        ("test", &split.test),
    ] {
        for id in ids {
            text.push_str(&format!("{part}\t{id}\n"));
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_split(path: &Path) -> Result<DatasetSplit> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut split = DatasetSplit {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
        seed: 0,
    };
    for (i, line) in text.lines().enumerate() {
        if let Some(seed) = line.strip_prefix("# seed ") {
            split.seed = seed.trim().parse().unwrap_or(0);
            continue;
        }
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || Error::Config {
            line: i + 1,
            msg: format!("expected `<train|val|test>\\t<id>`, got `{line}`"),
        };
        let (part, id) = line.split_once('\t').ok_or_else(bad)?;
        match part {
            "train" => split.train.push(id.to_string()),
            "val" => split.validation.push(id.to_string()),
            "test" => split.test.push(id.to_string()),
            _ => return Err(bad()),
        }
    }
    Ok(split)
}
