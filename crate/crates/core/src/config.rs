//! Training configuration: plain `key=value` text with `#` comments.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::model::ModelConfig;
use crate::optim::AdamConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub scale: usize,
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
    pub batch_size: usize,
    pub max_steps: u64,
    pub seed: u64,
    pub loss_kind: LossKind,
    pub se_enabled: bool,
    pub n_residual_blocks: usize,
    pub n_se_blocks: usize,
    pub trunk_channels: usize,
    pub se_reduction: usize,
    /// Side of the random low-resolution crop per sample; 0 trains on whole images.
    pub patch_size: usize,
    /// Steps between validation passes; 0 disables validation.
    pub val_interval: u64,
    pub data_root: PathBuf,
    pub fnet_path: Option<PathBuf>,
    pub checkpoint_out: PathBuf,
    /// Defaults to `checkpoint_out` with `.log` appended.
    pub log_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let m = ModelConfig::new(4);
        let a = AdamConfig::default();
        Self {
            scale: 4,
            learning_rate: a.learning_rate,
            beta1: a.beta1,
            beta2: a.beta2,
            epsilon: a.epsilon,
            batch_size: 8,
            max_steps: 1000,
            seed: 0,
            loss_kind: LossKind::Perceptual,
            se_enabled: true,
            n_residual_blocks: m.n_residual_blocks,
            n_se_blocks: m.n_se_blocks,
            trunk_channels: m.trunk_channels,
            se_reduction: m.se_reduction,
            patch_size: 0,
            val_interval: 100,
            data_root: PathBuf::from("data"),
            fnet_path: None,
            checkpoint_out: PathBuf::from("model.ntns"),
            log_path: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value.parse().map_err(|_| Error::Config {
        line,
        msg: format!("invalid value `{value}` for `{key}`"),
    })
}

fn parse_bool(key: &str, value: &str, line: usize) -> Result<bool> {
    match value {
        "true" | "1" | "on" | "yes" => Ok(true),
        "false" | "0" | "off" | "no" => Ok(false),
        _ => Err(Error::Config {
            line,
            msg: format!("`{key}` expects true or false, got `{value}`"),
        }),
    }
}

impl TrainConfig {
    /// Parses config text on top of the defaults, then applies `overrides`
    /// (each `key=value`) in order and validates the result.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if !line.is_empty() {
                cfg.apply_line(line, i + 1)?;
            }
        }
        for o in overrides {
            cfg.apply_line(o.trim(), 0)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, overrides)
    }

    /// Applies one `key=value`; `line` is 0 for command-line overrides.
    pub fn apply_line(&mut self, line: &str, lineno: usize) -> Result<()> {
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
            line: lineno,
            msg: format!("expected key=value, got `{line}`"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        let l = lineno;
        match key {
            "scale" => self.scale = parse(key, value, l)?,
            "learning_rate" => self.learning_rate = parse(key, value, l)?,
            "beta1" => self.beta1 = parse(key, value, l)?,
            "beta2" => self.beta2 = parse(key, value, l)?,
            "epsilon" => self.epsilon = parse(key, value, l)?,
            "batch_size" => self.batch_size = parse(key, value, l)?,
            "max_steps" => self.max_steps = parse(key, value, l)?,
            "seed" => self.seed = parse(key, value, l)?,
            "loss_kind" => {
                self.loss_kind = value.parse().map_err(|_| Error::Config {
                    line: l,
                    msg: format!("loss_kind must be perceptual or pixel_mse, got `{value}`"),
                })?
            }
            "se_enabled" => self.se_enabled = parse_bool(key, value, l)?,
            "n_residual_blocks" => self.n_residual_blocks = parse(key, value, l)?,
            "n_se_blocks" => self.n_se_blocks = parse(key, value, l)?,
            "trunk_channels" => self.trunk_channels = parse(key, value, l)?,
            "se_reduction" => self.se_reduction = parse(key, value, l)?,
            "patch_size" => self.patch_size = parse(key, value, l)?,
            "val_interval" => self.val_interval = parse(key, value, l)?,
            "data_root" => self.data_root = PathBuf::from(value),
            "fnet_path" => self.fnet_path = (!value.is_empty()).then(|| PathBuf::from(value)),
            "checkpoint_out" => self.checkpoint_out = PathBuf::from(value),
            "log_path" => self.log_path = (!value.is_empty()).then(|| PathBuf::from(value)),
            _ => {
                return Err(Error::Config {
                    line: l,
                    msg: format!("unknown key `{key}`"),
                })
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.adam().validate()?;
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if self.patch_size != 0 && self.patch_size < 4 {
            return Err(Error::invalid("patch_size must be 0 or at least 4"));
        }
        self.model_config().validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        let m = ModelConfig::new(self.scale)
            .with_blocks(self.n_residual_blocks, self.n_se_blocks)
            .with_trunk_channels(self.trunk_channels)
            .with_se_reduction(self.se_reduction);
        if self.se_enabled {
            m
        } else {
            m.without_se()
        }
    }

    pub fn log_path(&self) -> PathBuf {
        self.log_path.clone().unwrap_or_else(|| {
            let mut s = self.checkpoint_out.clone().into_os_string();
            s.push(".log");
            PathBuf::from(s)
        })
    }
}
