//! Seeded, deterministic training loop.
//!
//! Samples are `(pair, dihedral variant)` items drawn from a shuffled pool that
//! is reshuffled whenever it runs out. Each sample gets its own graph; the
//! gradients of a batch are averaged before one Adam step.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::save_checkpoint;
use crate::config::TrainConfig;
use crate::data::{augment_pair, load_pairs, read_split, Image, Pair, DIHEDRAL_VARIANTS};
use crate::error::{Error, Result};
use crate::loss::{load_feature_net, perceptual_loss, pixel_mse_loss, FeatureNet, LossKind};
use crate::model::Model;
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::pipeline::evaluate_model;
use crate::tensor::{Graph, Tensor};

/// Low/high resolution tensors for one training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub low: Tensor,
    pub high: Tensor,
}

fn crop(image: &Image, y0: usize, x0: usize, size: usize) -> Image {
    Image::from_fn(size, size, |y, x| image.get(y0 + y, x0 + x))
}

/// Training state that advances one optimizer step at a time.
pub struct Trainer {
    model: Model,
    state: AdamState,
    adam: AdamConfig,
    loss_kind: LossKind,
    fnet: Option<FeatureNet>,
    pairs: Vec<Pair>,
    batch_size: usize,
    patch_size: usize,
    rng: ChaCha8Rng,
    pool: Vec<(usize, usize)>,
    cursor: usize,
}

impl Trainer {
    /// Checks everything a step needs up front, so a bad setup fails before
    /// any parameter is touched.
    pub fn new(cfg: &TrainConfig, model: Model, pairs: Vec<Pair>, fnet: Option<FeatureNet>) -> Result<Self> {
        cfg.validate()?;
        if pairs.is_empty() {
            return Err(Error::invalid("no training pairs"));
        }
        if cfg.loss_kind == LossKind::Perceptual && fnet.is_none() {
            return Err(Error::invalid("loss_kind = perceptual needs a feature net"));
        }
        let scale = model.config().scale;
        if scale != cfg.scale {
            return Err(Error::invalid(format!(
                "model scale {scale} differs from configured scale {}",
                cfg.scale
            )));
        }
        for p in &pairs {
            let (w, h) = (p.full.width(), p.full.height());
            if w != h {
                return Err(Error::invalid(format!("training image `{}` is not square", p.id)));
            }
            if w % scale != 0 || p.low.width() * scale != w {
                return Err(Error::invalid(format!("pair `{}` does not match scale {scale}", p.id)));
            }
            if cfg.patch_size > p.low.width() {
                return Err(Error::invalid(format!(
                    "patch_size {} exceeds input size {} of `{}`",
                    cfg.patch_size,
                    p.low.width(),
                    p.id
                )));
            }
            if let Some(f) = &fnet {
                let side = if cfg.patch_size == 0 { w } else { cfg.patch_size * scale };
                if side % f.spatial_divisor() != 0 {
                    return Err(Error::invalid(format!(
                        "target side {side} is not divisible by the feature net's {}",
                        f.spatial_divisor()
                    )));
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        let pool = (0..pairs.len())
            .flat_map(|i| (0..DIHEDRAL_VARIANTS).map(move |v| (i, v)))
            .collect();
        Ok(Self {
            model,
            state: AdamState::new(),
            adam: cfg.adam(),
            loss_kind: cfg.loss_kind,
            fnet,
            pairs,
            batch_size: cfg.batch_size,
            patch_size: cfg.patch_size,
            rng,
            pool,
            cursor: usize::MAX,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn optimizer(&self) -> &AdamState {
        &self.state
    }

    pub fn steps_taken(&self) -> u64 {
        self.state.t
    }

    fn next_sample(&mut self) -> Result<Sample> {
        if self.cursor >= self.pool.len() {
            self.pool.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let (i, variant) = self.pool[self.cursor];
        self.cursor += 1;
        let scale = self.model.config().scale;
        let (low, high) = augment_pair(&self.pairs[i].full, scale, variant)?;
        let n = low.width();
        let (low, high) = if self.patch_size == 0 || self.patch_size == n {
            (low, high)
        } else {
            let p = self.patch_size;
            let y = self.rng.random_range(0..=n - p);
            let x = self.rng.random_range(0..=n - p);
            (crop(&low, y, x, p), crop(&high, y * scale, x * scale, p * scale))
        };
        Ok(Sample {
            low: low.to_tensor(),
            high: high.to_tensor(),
        })
    }

    /// Loss and parameter gradients for one sample.
    pub fn sample_gradients(&self, sample: &Sample) -> Result<(f32, BTreeMap<String, Tensor>)> {
        let mut g = Graph::new();
        let params = self.model.bind(&mut g, true);
        let x = g.constant(sample.low.clone());
        let target = g.constant(sample.high.clone());
        let pred = self.model.forward(&mut g, &params, x)?;
        let loss = match (self.loss_kind, &self.fnet) {
            (LossKind::Perceptual, Some(f)) => perceptual_loss(&mut g, pred, target, f)?,
            _ => pixel_mse_loss(&mut g, pred, target)?,
        };
        let value = g.value(loss).item().expect("scalar loss");
        let mut grads = g.backward(loss)?;
        let named = params
            .iter()
            .map(|(name, v)| (name.to_string(), grads.take(v).expect("trainable leaf")))
            .collect();
        Ok((value, named))
    }

    /// One optimizer step over the next batch; returns the mean batch loss.
    pub fn step(&mut self) -> Result<f32> {
        let mut total: Option<BTreeMap<String, Tensor>> = None;
        let mut loss_sum = 0.0f64;
        for _ in 0..self.batch_size {
            let sample = self.next_sample()?;
            let (loss, grads) = self.sample_gradients(&sample)?;
            loss_sum += loss as f64;
            match total.as_mut() {
                None => total = Some(grads),
                Some(acc) => {
                    for (name, g) in grads {
                        acc.get_mut(&name).expect("same parameter set").add_assign(&g);
                    }
                }
            }
        }
        let mut grads = total.expect("batch_size >= 1");
        if self.batch_size > 1 {
            let inv = 1.0 / self.batch_size as f32;
            for g in grads.values_mut() {
                g.data_mut().iter_mut().for_each(|v| *v *= inv);
            }
        }
        adam_step(self.model.params_mut(), &grads, &mut self.state, &self.adam)?;
        Ok((loss_sum / self.batch_size as f64) as f32)
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub loss: f32,
    pub val_psnr: Option<f64>,
}

impl StepRecord {
    /// `step<TAB>loss<TAB>val_psnr`, with `NA` when no validation ran.
    pub fn log_line(&self) -> String {
        match self.val_psnr {
            Some(p) => format!("{}\t{}\t{}", self.step, self.loss, p),
            None => format!("{}\t{}\tNA", self.step, self.loss),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_model: Model,
    /// Best model by validation PSNR; the final model when no validation ran.
    pub best_model: Model,
    pub best_val_psnr: Option<f64>,
    pub history: Vec<StepRecord>,
}

/// Runs `cfg.max_steps` steps, validating every `cfg.val_interval` steps and
/// after the last one. Each record is written to `log` as it is produced.
pub fn train_pairs(
    cfg: &TrainConfig,
    train: Vec<Pair>,
    validation: &[Pair],
    fnet: Option<FeatureNet>,
    log: &mut dyn Write,
) -> Result<TrainOutcome> {
    let model = Model::build(cfg.model_config(), cfg.seed)?;
    let mut trainer = Trainer::new(cfg, model, train, fnet)?;
    let validate = cfg.val_interval > 0 && !validation.is_empty();
    let mut best: Option<(f64, Model)> = None;
    let mut history = Vec::with_capacity(cfg.max_steps as usize);
    for step in 1..=cfg.max_steps {
        let loss = trainer.step()?;
        if !loss.is_finite() {
            return Err(Error::invalid(format!("training diverged at step {step}: loss {loss}")));
        }
        let val_psnr = if validate && (step % cfg.val_interval == 0 || step == cfg.max_steps) {
            let psnr = evaluate_model(trainer.model(), validation)?.mean_psnr;
            if best.as_ref().is_none_or(|(b, _)| psnr > *b) {
                best = Some((psnr, trainer.model().clone()));
            }
            Some(psnr)
        } else {
            None
        };
        let rec = StepRecord { step, loss, val_psnr };
        writeln!(log, "{}", rec.log_line()).map_err(|e| Error::io("training log", e))?;
        history.push(rec);
    }
    let final_model = trainer.into_model();
    let (best_val_psnr, best_model) = match best {
        Some((p, m)) => (Some(p), m),
        None => (None, final_model.clone()),
    };
    Ok(TrainOutcome {
        final_model,
        best_model,
        best_val_psnr,
        history,
    })
}

/// Loads the data named by `cfg`, trains, appends to the log file and writes
/// the best model to `cfg.checkpoint_out`.
///
/// The split comes from `<data_root>/split.txt` when present; otherwise every
/// pair trains and validation is skipped.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let fnet = match (cfg.loss_kind, &cfg.fnet_path) {
        (LossKind::Perceptual, None) => {
            return Err(Error::invalid("loss_kind = perceptual needs fnet_path"));
        }
        (LossKind::Perceptual, Some(p)) => Some(load_feature_net(p)?),
        (LossKind::PixelMse, _) => None,
    };
    let pairs = load_pairs(&cfg.data_root, cfg.scale)?;
    if pairs.is_empty() {
        return Err(Error::invalid(format!("no pairs under {}", cfg.data_root.display())));
    }
    let split_path = cfg.data_root.join("split.txt");
    let (train_set, val_set) = if split_path.exists() {
        let split = read_split(&split_path)?;
        let pick = |ids: &[String]| -> Result<Vec<Pair>> {
            ids.iter()
                .map(|id| {
                    pairs
                        .iter()
                        .find(|p| &p.id == id)
                        .cloned()
                        .ok_or_else(|| Error::invalid(format!("split names unknown sample `{id}`")))
                })
                .collect()
        };
        (pick(&split.train)?, pick(&split.validation)?)
    } else {
        (pairs, Vec::new())
    };
    if let Some(dir) = cfg.checkpoint_out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let log_path = cfg.log_path();
    let file = File::options()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(file);
    let outcome = train_pairs(cfg, train_set, &val_set, fnet, &mut log)?;
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    save_checkpoint(&cfg.checkpoint_out, outcome.best_model.params())?;
    Ok(outcome)
}
