//! The SE-residual restoration network.
//!
//! Topology: a 9×9 head convolution with PReLU, a trunk of residual blocks
//! with a squeeze-and-excitation block after every `n_residual / n_se`-th
//! residual block, a 3×3 trunk-tail convolution closed by a long skip from
//! the head, `log2(scale)` upconv blocks (nearest 2× upsample, 3×3 conv to
//! 256 channels, PReLU), and a 9×9 single-channel output convolution with Tanh.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Padding, Tensor, Var};

/// Filter count of every upconv convolution.
pub const UPCONV_CHANNELS: usize = 256;
const HEAD_KERNEL: usize = 9;
const TAIL_KERNEL: usize = 9;
const TRUNK_KERNEL: usize = 3;
const PRELU_INIT: f32 = 0.25;

// Without normalization layers a plain He init is unstable in two places.
// Summed residual branches grow the trunk's scale with depth, and Adam's
// sign-like early steps on the wide 256-channel output path throw the tanh
// into exact f32 saturation. The last conv of every residual branch
// therefore starts at zero, so each block starts as the identity, and the
// output-path convs start with a reduced gain.
const RESIDUAL_OUT_GAIN: f32 = 0.0;
const OUTPUT_PATH_GAIN: f32 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub scale: usize,
    pub n_residual_blocks: usize,
    pub n_se_blocks: usize,
    pub trunk_channels: usize,
    pub se_reduction: usize,
}

impl ModelConfig {
    /// Full-size network: 16 residual blocks, 8 SE blocks, 64 trunk channels.
    pub fn new(scale: usize) -> Self {
        Self {
            scale,
            n_residual_blocks: 16,
            n_se_blocks: 8,
            trunk_channels: 64,
            se_reduction: 16,
        }
    }

    pub fn with_blocks(mut self, n_residual_blocks: usize, n_se_blocks: usize) -> Self {
        self.n_residual_blocks = n_residual_blocks;
        self.n_se_blocks = n_se_blocks;
        self
    }

    pub fn with_trunk_channels(mut self, channels: usize) -> Self {
        self.trunk_channels = channels;
        self
    }

    pub fn with_se_reduction(mut self, r: usize) -> Self {
        self.se_reduction = r;
        self
    }

    /// Same network with every SE block removed.
    pub fn without_se(mut self) -> Self {
        self.n_se_blocks = 0;
        self
    }

    pub fn se_enabled(&self) -> bool {
        self.n_se_blocks > 0
    }

    pub fn upconv_channels(&self) -> usize {
        UPCONV_CHANNELS
    }

    pub fn n_upconv_blocks(&self) -> usize {
        self.scale.trailing_zeros() as usize
    }

    fn se_hidden(&self) -> usize {
        self.trunk_channels / self.se_reduction
    }

    /// Residual blocks between consecutive SE blocks.
    fn se_interval(&self) -> Option<usize> {
        self.se_enabled().then(|| self.n_residual_blocks / self.n_se_blocks)
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.scale, 2 | 4) {
            return Err(Error::invalid(format!("scale must be 2 or 4, got {}", self.scale)));
        }
        if self.n_residual_blocks == 0 {
            return Err(Error::invalid("at least one residual block is required"));
        }
        if self.trunk_channels == 0 {
            return Err(Error::invalid("trunk_channels must be positive"));
        }
        if self.n_se_blocks > self.n_residual_blocks {
            return Err(Error::invalid(format!(
                "{} SE blocks exceed {} residual blocks",
                self.n_se_blocks, self.n_residual_blocks
            )));
        }
        if self.se_enabled() {
            if !self.n_residual_blocks.is_multiple_of(self.n_se_blocks) {
                return Err(Error::invalid(format!(
                    "{} residual blocks are not divisible by {} SE blocks",
                    self.n_residual_blocks, self.n_se_blocks
                )));
            }
            if self.se_reduction == 0 || !self.trunk_channels.is_multiple_of(self.se_reduction) {
                return Err(Error::invalid(format!(
                    "trunk_channels {} is not divisible by SE reduction {}",
                    self.trunk_channels, self.se_reduction
                )));
            }
        }
        Ok(())
    }

    /// Parameter count from the closed-form topology sum.
    pub fn count_params(&self) -> usize {
        let c = self.trunk_channels;
        let u = UPCONV_CHANNELS;
        let conv = |k: usize, cin: usize, cout: usize| k * k * cin * cout + cout;
        let head = conv(HEAD_KERNEL, 1, c) + c;
        let residual = 2 * conv(TRUNK_KERNEL, c, c) + c;
        let trunk_tail = conv(TRUNK_KERNEL, c, c);
        let ups: usize = (0..self.n_upconv_blocks())
            .map(|i| conv(TRUNK_KERNEL, if i == 0 { c } else { u }, u) + u)
            .sum();
        let tail = conv(TAIL_KERNEL, u, 1);
        head + self.n_residual_blocks * residual + self.n_se_blocks * self.se_param_count() + trunk_tail + ups + tail
    }

    /// Parameters of one SE block: two affine layers with biases.
    pub fn se_param_count(&self) -> usize {
        if self.se_reduction == 0 {
            return 0;
        }
        let c = self.trunk_channels;
        let h = self.se_hidden();
        c * h + h + h * c + c
    }

    /// Every parameter in forward order with its shape and initializer.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let c = self.trunk_channels;
        let u = UPCONV_CHANNELS;
        let mut specs = Vec::new();
        let conv = |specs: &mut Vec<ParamSpec>, prefix: &str, k: usize, cin: usize, cout: usize, gain: f32| {
            let init = if gain == 0.0 {
                Init::Zeros
            } else {
                Init::HeNormal {
                    fan_in: k * k * cin,
                    gain,
                }
            };
            specs.push(ParamSpec::new(format!("{prefix}.weight"), vec![k, k, cin, cout], init));
            specs.push(ParamSpec::new(format!("{prefix}.bias"), vec![cout], Init::Zeros));
        };
        conv(&mut specs, "head.conv", HEAD_KERNEL, 1, c, 1.0);
        specs.push(ParamSpec::new("head.prelu".into(), vec![c], Init::Constant(PRELU_INIT)));
        for i in 0..self.n_residual_blocks {
            conv(&mut specs, &format!("res{i}.conv1"), TRUNK_KERNEL, c, c, 1.0);
            specs.push(ParamSpec::new(
                format!("res{i}.prelu"),
                vec![c],
                Init::Constant(PRELU_INIT),
            ));
            conv(
                &mut specs,
                &format!("res{i}.conv2"),
                TRUNK_KERNEL,
                c,
                c,
                RESIDUAL_OUT_GAIN,
            );
            if let Some(se) = self.se_after(i) {
                let h = self.se_hidden();
                specs.push(ParamSpec::new(
                    format!("se{se}.fc1.weight"),
                    vec![c, h],
                    Init::HeNormal { fan_in: c, gain: 1.0 },
                ));
                specs.push(ParamSpec::new(format!("se{se}.fc1.bias"), vec![h], Init::Zeros));
                specs.push(ParamSpec::new(
                    format!("se{se}.fc2.weight"),
                    vec![h, c],
                    Init::HeNormal { fan_in: h, gain: 1.0 },
                ));
                specs.push(ParamSpec::new(format!("se{se}.fc2.bias"), vec![c], Init::Zeros));
            }
        }
        conv(&mut specs, "trunk_tail.conv", TRUNK_KERNEL, c, c, 1.0);
        for i in 0..self.n_upconv_blocks() {
            let cin = if i == 0 { c } else { u };
            conv(
                &mut specs,
                &format!("up{i}.conv"),
                TRUNK_KERNEL,
                cin,
                u,
                OUTPUT_PATH_GAIN,
            );
            specs.push(ParamSpec::new(
                format!("up{i}.prelu"),
                vec![u],
                Init::Constant(PRELU_INIT),
            ));
        }
        conv(&mut specs, "tail.conv", TAIL_KERNEL, u, 1, OUTPUT_PATH_GAIN);
        specs
    }

    /// Index of the SE block following residual block `i` (0-based), if any.
    fn se_after(&self, i: usize) -> Option<usize> {
        let every = self.se_interval()?;
        (i + 1).is_multiple_of(every).then(|| (i + 1) / every - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Normal with standard deviation `gain·sqrt(2 / fan_in)`.
    HeNormal {
        fan_in: usize,
        gain: f32,
    },
    Zeros,
    Constant(f32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    fn new(name: String, shape: Vec<usize>, init: Init) -> Self {
        Self { name, shape, init }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Graph handles for the four tensors of one SE block.
#[derive(Debug, Clone, Copy)]
pub struct SeWeights {
    pub fc1_weight: Var,
    pub fc1_bias: Var,
    pub fc2_weight: Var,
    pub fc2_bias: Var,
}

/// Squeeze-and-excitation: `x · sigmoid(fc2(relu(fc1(mean_hw(x)))))` per channel.
pub fn se_block(g: &mut Graph, features: Var, w: &SeWeights, reduction: usize) -> Result<Var> {
    let (_, _, c) = g.value(features).hwc()?;
    if reduction == 0 || c % reduction != 0 {
        return Err(Error::invalid(format!(
            "SE block: {c} channels not divisible by reduction {reduction}"
        )));
    }
    let hidden = c / reduction;
    if g.value(w.fc1_weight).shape() != [c, hidden] || g.value(w.fc2_weight).shape() != [hidden, c] {
        return Err(Error::shape(
            "se_block",
            format!(
                "expected fc1 [{c}, {hidden}] and fc2 [{hidden}, {c}], got {:?} and {:?}",
                g.value(w.fc1_weight).shape(),
                g.value(w.fc2_weight).shape()
            ),
        ));
    }
    let squeezed = g.global_avg_pool(features)?;
    let z = g.dense(squeezed, w.fc1_weight, w.fc1_bias)?;
    let z = g.relu(z);
    let z = g.dense(z, w.fc2_weight, w.fc2_bias)?;
    let gains = g.sigmoid(z);
    g.channel_scale(features, gains)
}

/// Named parameter handles recorded into one graph.
#[derive(Debug, Clone, Default)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` is not bound"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: BTreeMap<String, Tensor>,
}

impl Model {
    /// Builds a freshly initialised network; deterministic in `seed`.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = BTreeMap::new();
        for spec in config.param_specs() {
            let n = spec.numel();
            let data = match spec.init {
                Init::HeNormal { fan_in, gain } => {
                    let normal =
                        Normal::new(0.0f32, gain * (2.0 / fan_in as f32).sqrt()).expect("positive standard deviation");
                    (0..n).map(|_| normal.sample(&mut rng)).collect()
                }
                Init::Zeros => vec![0.0; n],
                Init::Constant(v) => vec![v; n],
            };
            params.insert(spec.name, Tensor::new(spec.shape, data)?);
        }
        Ok(Self { config, params })
    }

    /// Wraps existing tensors, checking names and shapes against `config`.
    /// The first offending tensor (in forward order) is named in the error.
    pub fn from_params(config: ModelConfig, params: BTreeMap<String, Tensor>) -> Result<Self> {
        config.validate()?;
        let specs = config.param_specs();
        for spec in &specs {
            match params.get(&spec.name) {
                None => {
                    return Err(Error::Tensor {
                        name: spec.name.clone(),
                        msg: "missing".into(),
                    })
                }
                Some(t) if t.shape() != spec.shape.as_slice() => {
                    return Err(Error::Tensor {
                        name: spec.name.clone(),
                        msg: format!("expected shape {:?}, found {:?}", spec.shape, t.shape()),
                    })
                }
                Some(_) => {}
            }
        }
        if params.len() != specs.len() {
            let known: std::collections::BTreeSet<_> = specs.iter().map(|s| s.name.as_str()).collect();
            let extra = params
                .keys()
                .find(|k| !known.contains(k.as_str()))
                .cloned()
                .unwrap_or_default();
            return Err(Error::Tensor {
                name: extra,
                msg: "not part of this topology".into(),
            });
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut BTreeMap<String, Tensor> {
        &mut self.params
    }

    pub fn into_params(self) -> BTreeMap<String, Tensor> {
        self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn num_params(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Records every parameter as a leaf of `g`.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundParams {
        let vars = self
            .params
            .iter()
            .map(|(name, t)| {
                let v = if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                };
                (name.clone(), v)
            })
            .collect();
        BoundParams { vars }
    }

    fn conv(&self, g: &mut Graph, p: &BoundParams, prefix: &str, x: Var) -> Result<Var> {
        g.conv2d(
            x,
            p.get(&format!("{prefix}.weight")),
            p.get(&format!("{prefix}.bias")),
            1,
            Padding::SameReplicate,
        )
    }

    /// Output of the trunk (head features plus the long skip), before upsampling.
    pub fn trunk(&self, g: &mut Graph, p: &BoundParams, input: Var) -> Result<Var> {
        match *g.value(input).shape() {
            [_, _, 1] => {}
            ref s => {
                return Err(Error::shape(
                    "forward",
                    format!("expected a single-channel [h, w, 1] input, got {s:?}"),
                ))
            }
        }
        let head = self.conv(g, p, "head.conv", input)?;
        let head = g.prelu(head, p.get("head.prelu"))?;
        let mut x = head;
        for i in 0..self.config.n_residual_blocks {
            let r = self.conv(g, p, &format!("res{i}.conv1"), x)?;
            let r = g.prelu(r, p.get(&format!("res{i}.prelu")))?;
            let r = self.conv(g, p, &format!("res{i}.conv2"), r)?;
            x = g.add(x, r)?;
            if let Some(se) = self.config.se_after(i) {
                let w = SeWeights {
                    fc1_weight: p.get(&format!("se{se}.fc1.weight")),
                    fc1_bias: p.get(&format!("se{se}.fc1.bias")),
                    fc2_weight: p.get(&format!("se{se}.fc2.weight")),
                    fc2_bias: p.get(&format!("se{se}.fc2.bias")),
                };
                x = se_block(g, x, &w, self.config.se_reduction)?;
            }
        }
        let tail = self.conv(g, p, "trunk_tail.conv", x)?;
        g.add(tail, head)
    }

    /// Full forward pass: `[h, w, 1]` in `[-1, 1]` to `[h·s, w·s, 1]` in `(-1, 1)`.
    pub fn forward(&self, g: &mut Graph, p: &BoundParams, input: Var) -> Result<Var> {
        let mut x = self.trunk(g, p, input)?;
        for i in 0..self.config.n_upconv_blocks() {
            x = g.upsample_nn2x(x)?;
            x = self.conv(g, p, &format!("up{i}.conv"), x)?;
            x = g.prelu(x, p.get(&format!("up{i}.prelu")))?;
        }
        let out = self.conv(g, p, "tail.conv", x)?;
        Ok(g.tanh(out))
    }

    /// Inference on a single normalized `[h, w, 1]` tensor.
    pub fn restore(&self, lr: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let x = g.constant(lr.clone());
        let y = self.forward(&mut g, &p, x)?;
        Ok(g.value(y).clone())
    }
}
