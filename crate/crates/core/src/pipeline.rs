//! Inference and evaluation on top of a trained model.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::checkpoint::load_checkpoint;
use crate::data::pgm::{read_pgm, write_pgm};
use crate::data::{pgm_files, Image, Pair};
use crate::error::{Error, Result};
use crate::interp::evaluate_baseline;
use crate::metrics::{fmt_db, psnr, score_pairs, ssim, MetricsReport};
use crate::model::{Model, ModelConfig};
use crate::tensor::Tensor;

/// Runs the model on one sparse image.
pub fn restore_image(model: &Model, low: &Image) -> Result<Image> {
    Image::from_tensor(&model.restore(&low.to_tensor())?)
}

/// PSNR/SSIM of the model's reconstructions of `pairs`.
pub fn evaluate_model(model: &Model, pairs: &[Pair]) -> Result<MetricsReport> {
    if pairs.is_empty() {
        return Err(Error::invalid("evaluation needs at least one pair"));
    }
    let restored = pairs
        .iter()
        .map(|p| restore_image(model, &p.low))
        .collect::<Result<Vec<_>>>()?;
    score_pairs(pairs, &restored)
}

fn count_prefixed(params: &BTreeMap<String, Tensor>, prefix: &str, suffix: &str) -> usize {
    (0..)
        .take_while(|i| params.contains_key(&format!("{prefix}{i}{suffix}")))
        .count()
}

/// Recovers the topology from tensor names and shapes.
pub fn config_from_params(params: &BTreeMap<String, Tensor>) -> Result<ModelConfig> {
    let head = params.get("head.conv.weight").ok_or_else(|| Error::Tensor {
        name: "head.conv.weight".into(),
        msg: "missing".into(),
    })?;
    let channels = match *head.shape() {
        [_, _, _, c] => c,
        ref s => {
            return Err(Error::Tensor {
                name: "head.conv.weight".into(),
                msg: format!("expected rank 4, found {s:?}"),
            })
        }
    };
    let n_up = count_prefixed(params, "up", ".conv.weight");
    let n_res = count_prefixed(params, "res", ".conv1.weight");
    let n_se = count_prefixed(params, "se", ".fc1.weight");
    let mut config = ModelConfig::new(1 << n_up)
        .with_blocks(n_res, n_se)
        .with_trunk_channels(channels);
    if let Some(fc1) = params.get("se0.fc1.weight") {
        match *fc1.shape() {
            [_, hidden] if hidden > 0 => config = config.with_se_reduction(channels / hidden),
            ref s => {
                return Err(Error::Tensor {
                    name: "se0.fc1.weight".into(),
                    msg: format!("unexpected shape {s:?}"),
                })
            }
        }
    }
    config.validate()?;
    Ok(config)
}

/// Loads a checkpoint and rebuilds the model it describes.
pub fn load_model(path: &Path) -> Result<Model> {
    let params = load_checkpoint(path)?;
    let config = config_from_params(&params)?;
    Model::from_params(config, params)
}

/// Loads a checkpoint and checks that it was trained for `scale`.
pub fn load_model_for_scale(path: &Path, scale: usize) -> Result<Model> {
    let model = load_model(path)?;
    if model.config().scale != scale {
        return Err(Error::invalid(format!(
            "checkpoint {} restores scale {}, not {scale}",
            path.display(),
            model.config().scale
        )));
    }
    Ok(model)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inferred {
    pub id: String,
    pub output: PathBuf,
    /// PSNR and SSIM against the reference image, when one was given.
    pub score: Option<(f64, f64)>,
}

/// Restores every `.pgm` in `input` into `output` under the same file name.
pub fn infer_dir(model: &Model, input: &Path, output: &Path, reference: Option<&Path>) -> Result<Vec<Inferred>> {
    let files = pgm_files(input)?;
    if files.is_empty() {
        return Err(Error::invalid(format!("no .pgm files in {}", input.display())));
    }
    fs::create_dir_all(output).map_err(|e| Error::io(output, e))?;
    let mut results = Vec::with_capacity(files.len());
    for path in files {
        let name = path.file_name().expect("file path");
        let id = path.file_stem().expect("file path").to_string_lossy().into_owned();
        let restored = restore_image(model, &read_pgm(&path)?)?;
        let out = output.join(name);
        write_pgm(&out, &restored)?;
        let score = match reference {
            Some(dir) => {
                let truth = read_pgm(dir.join(name))?;
                Some((psnr(&restored, &truth)?, ssim(&restored, &truth)?))
            }
            None => None,
        };
        results.push(Inferred { id, output: out, score });
    }
    Ok(results)
}

/// Model and bicubic scores on the same pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub model: MetricsReport,
    pub bicubic: MetricsReport,
}

impl Comparison {
    pub fn delta_psnr(&self) -> f64 {
        self.model.mean_psnr - self.bicubic.mean_psnr
    }

    pub fn delta_ssim(&self) -> f64 {
        self.model.mean_ssim - self.bicubic.mean_ssim
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("id\tmodel_psnr_db\tmodel_ssim\tbicubic_psnr_db\tbicubic_ssim\n");
        for (m, b) in self.model.rows.iter().zip(&self.bicubic.rows) {
            let _ = writeln!(
                out,
                "{}\t{}\t{:.6}\t{}\t{:.6}",
                m.id,
                fmt_db(m.psnr),
                m.ssim,
                fmt_db(b.psnr),
                b.ssim
            );
        }
        let _ = writeln!(
            out,
            "mean\t{}\t{:.6}\t{}\t{:.6}",
            fmt_db(self.model.mean_psnr),
            self.model.mean_ssim,
            fmt_db(self.bicubic.mean_psnr),
            self.bicubic.mean_ssim
        );
        let _ = writeln!(
            out,
            "delta\t{}\t{:.6}\t\t",
            fmt_db(self.delta_psnr()),
            self.delta_ssim()
        );
        out
    }
}

pub fn compare_with_bicubic(model: &Model, pairs: &[Pair]) -> Result<Comparison> {
    Ok(Comparison {
        model: evaluate_model(model, pairs)?,
        bicubic: evaluate_baseline(pairs, model.config().scale)?,
    })
}

/// Two-row table contrasting a network without SE blocks against one with them.
pub fn se_ablation_table(without_se: &MetricsReport, with_se: &MetricsReport) -> String {
    let mut out = String::from("variant\tpsnr_db\tssim\n");
    let _ = writeln!(
        out,
        "Without SE blocks\t{}\t{:.4}",
        fmt_db(without_se.mean_psnr),
        without_se.mean_ssim
    );
    let _ = writeln!(
        out,
        "With SE blocks\t{}\t{:.4}",
        fmt_db(with_se.mean_psnr),
        with_se.mean_ssim
    );
    let _ = writeln!(
        out,
        "gain\t{}\t{:.4}",
        fmt_db(with_se.mean_psnr - without_se.mean_psnr),
        with_se.mean_ssim - without_se.mean_ssim
    );
    out
}
