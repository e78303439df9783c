//! Frozen feature network and the losses built on it.
//!
//! The perceptual loss is the mean squared difference between feature maps of
//! prediction and ground truth, normalized by the feature-map element count
//! `n_x · n_y · n_z`. The pixel loss is the same reduction applied directly to
//! the images.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Padding, Tensor, Var};

/// Marker that separates the tensor block from the manifest in a feature-net file.
pub const MANIFEST_MAGIC: &[u8; 4] = b"MNFT";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Layer {
    /// Convolution reading `<name>.weight` `[k, k, Cin, Cout]` and `<name>.bias`.
    Conv(String),
    Relu,
    MaxPool,
}

/// Maps a `[-1, 1]` single-channel image to the network's input space:
/// `x·gain + offset - means[c]` for each of `means.len()` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocess {
    pub gain: f32,
    pub offset: f32,
    pub channel_means: Vec<f32>,
}

impl Preprocess {
    /// `[-1, 1] → [0, 255]`, replicated to RGB, ImageNet channel means removed.
    pub fn imagenet() -> Self {
        Self {
            gain: 127.5,
            offset: 127.5,
            channel_means: vec![123.68, 116.779, 103.939],
        }
    }

    pub fn identity() -> Self {
        Self {
            gain: 1.0,
            offset: 0.0,
            channel_means: vec![0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureNet {
    layers: Vec<Layer>,
    weights: BTreeMap<String, Tensor>,
    preprocess: Preprocess,
}

/// Layer list of a VGG19-style stack up to and including the ReLU after its
/// seventh convolution: 256 channels at a quarter of the input resolution.
pub fn vgg19_conv3_3_layers() -> Vec<Layer> {
    let conv = |n: &str| Layer::Conv(n.to_string());
    vec![
        conv("conv1_1"),
        Layer::Relu,
        conv("conv1_2"),
        Layer::Relu,
        Layer::MaxPool,
        conv("conv2_1"),
        Layer::Relu,
        conv("conv2_2"),
        Layer::Relu,
        Layer::MaxPool,
        conv("conv3_1"),
        Layer::Relu,
        conv("conv3_2"),
        Layer::Relu,
        conv("conv3_3"),
        Layer::Relu,
    ]
}

impl FeatureNet {
    /// Validates layer/weight consistency: every conv has a square odd kernel,
    /// a matching bias, and an input width equal to the running channel count.
    pub fn new(layers: Vec<Layer>, weights: BTreeMap<String, Tensor>, preprocess: Preprocess) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("feature net has no layers"));
        }
        if preprocess.channel_means.is_empty() {
            return Err(Error::invalid("feature net needs at least one input channel"));
        }
        let mut channels = preprocess.channel_means.len();
        for layer in &layers {
            let Layer::Conv(name) = layer else { continue };
            let wname = format!("{name}.weight");
            let bname = format!("{name}.bias");
            let w = weights.get(&wname).ok_or_else(|| Error::Tensor {
                name: wname.clone(),
                msg: "declared in manifest but missing".into(),
            })?;
            let (k, cin, cout) = match *w.shape() {
                [k1, k2, ci, co] if k1 == k2 && k1 % 2 == 1 => (k1, ci, co),
                ref s => {
                    return Err(Error::Tensor {
                        name: wname,
                        msg: format!("expected [k, k, Cin, Cout] with odd k, found {s:?}"),
                    })
                }
            };
            let _ = k;
            if cin != channels {
                return Err(Error::Tensor {
                    name: wname,
                    msg: format!("expects {cin} input channels but receives {channels}"),
                });
            }
            match weights.get(&bname) {
                None => {
                    return Err(Error::Tensor {
                        name: bname,
                        msg: "declared in manifest but missing".into(),
                    })
                }
                Some(b) if b.shape() != [cout] => {
                    return Err(Error::Tensor {
                        name: bname,
                        msg: format!("expected shape [{cout}], found {:?}", b.shape()),
                    })
                }
                Some(_) => {}
            }
            channels = cout;
        }
        Ok(Self {
            layers,
            weights,
            preprocess,
        })
    }

    /// A single 1×1 unit convolution with identity preprocessing: features are
    /// the pixels themselves.
    pub fn identity() -> Self {
        let mut weights = BTreeMap::new();
        weights.insert("id.weight".into(), Tensor::full([1, 1, 1, 1], 1.0));
        weights.insert("id.bias".into(), Tensor::zeros([1]));
        Self::new(vec![Layer::Conv("id".into())], weights, Preprocess::identity()).expect("valid identity net")
    }

    /// Randomly initialised net (He-normal weights, small biases) for a layer
    /// list; `widths` gives each conv's output channels in order.
    pub fn seeded(
        layers: Vec<Layer>,
        widths: &[usize],
        kernel: usize,
        preprocess: Preprocess,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = BTreeMap::new();
        let mut channels = preprocess.channel_means.len();
        let mut widths = widths.iter();
        for layer in &layers {
            let Layer::Conv(name) = layer else { continue };
            let cout = *widths
                .next()
                .ok_or_else(|| Error::invalid("fewer widths than conv layers"))?;
            let fan_in = kernel * kernel * channels;
            let normal = Normal::new(0.0f32, (2.0 / fan_in as f32).sqrt()).expect("positive sigma");
            let w = (0..fan_in * cout).map(|_| normal.sample(&mut rng)).collect();
            let bias = Normal::new(0.0f32, 0.1).expect("positive sigma");
            let b = (0..cout).map(|_| bias.sample(&mut rng)).collect();
            weights.insert(
                format!("{name}.weight"),
                Tensor::new([kernel, kernel, channels, cout], w)?,
            );
            weights.insert(format!("{name}.bias"), Tensor::new([cout], b)?);
            channels = cout;
        }
        Self::new(layers, weights, preprocess)
    }

    /// Two 3×3 convolutions with ReLU, single input channel, seeded weights.
    pub fn tiny(seed: u64) -> Self {
        let layers = vec![
            Layer::Conv("c1".into()),
            Layer::Relu,
            Layer::Conv("c2".into()),
            Layer::Relu,
        ];
        let pre = Preprocess {
            gain: 1.0,
            offset: 0.0,
            channel_means: vec![0.0],
        };
        Self::seeded(layers, &[8, 8], 3, pre, seed).expect("valid tiny net")
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn weights(&self) -> &BTreeMap<String, Tensor> {
        &self.weights
    }

    pub fn preprocess(&self) -> &Preprocess {
        &self.preprocess
    }

    /// Product of pooling factors; inputs must be divisible by it.
    pub fn spatial_divisor(&self) -> usize {
        1 << self.layers.iter().filter(|l| **l == Layer::MaxPool).count()
    }

    /// Records the feature extraction of a `[H, W, 1]` image into `g`. Weights
    /// enter as constants, so no gradient is ever accumulated for them.
    pub fn features(&self, g: &mut Graph, image: Var) -> Result<Var> {
        let (h, w, _) = g.value(image).hwc()?;
        let d = self.spatial_divisor();
        if h % d != 0 || w % d != 0 {
            return Err(Error::shape(
                "feature net",
                format!("input {h}×{w} is not divisible by {d}"),
            ));
        }
        let p = &self.preprocess;
        let offsets: Vec<f32> = p.channel_means.iter().map(|m| p.offset - m).collect();
        let mut x = g.affine_expand(image, p.gain, &offsets)?;
        for layer in &self.layers {
            x = match layer {
                Layer::Conv(name) => {
                    let k = g.constant(self.weights[&format!("{name}.weight")].clone());
                    let b = g.constant(self.weights[&format!("{name}.bias")].clone());
                    g.conv2d(x, k, b, 1, Padding::SameReplicate)?
                }
                Layer::Relu => g.relu(x),
                Layer::MaxPool => g.maxpool2x2(x)?,
            };
        }
        Ok(x)
    }

    /// Feature map of an image tensor, outside any training graph.
    pub fn extract(&self, image: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.constant(image.clone());
        let f = self.features(&mut g, x)?;
        Ok(g.value(f).clone())
    }

    pub fn manifest(&self) -> String {
        let p = &self.preprocess;
        let means: Vec<String> = p.channel_means.iter().map(|m| m.to_string()).collect();
        let layers: Vec<String> = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Conv(n) => format!("conv:{n}"),
                Layer::Relu => "relu".into(),
                Layer::MaxPool => "pool".into(),
            })
            .collect();
        format!(
            "# feature net manifest\ninput_gain={}\ninput_offset={}\nchannel_means={}\nlayers={}\n",
            p.gain,
            p.offset,
            means.join(" "),
            layers.join(" ")
        )
    }

    /// Tensor block (checkpoint format) followed by `MNFT`, a u32 length and
    /// the UTF-8 manifest.
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = checkpoint::encode(&self.weights)?;
        let manifest = self.manifest();
        out.extend_from_slice(MANIFEST_MAGIC);
        out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
        out.extend_from_slice(manifest.as_bytes());
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let (weights, used) = checkpoint::decode_prefix(bytes)?;
        let rest = &bytes[used..];
        let err = |pos: usize, msg: &str| Error::Format {
            what: "feature net",
            pos,
            msg: msg.into(),
        };
        if rest.len() < 8 || &rest[..4] != MANIFEST_MAGIC {
            return Err(err(used, "missing MNFT manifest section"));
        }
        let len = u32::from_le_bytes(rest[4..8].try_into().expect("4 bytes")) as usize;
        if rest.len() != 8 + len {
            return Err(err(used + 4, "manifest length does not match file size"));
        }
        let text = std::str::from_utf8(&rest[8..]).map_err(|_| err(used + 8, "manifest is not UTF-8"))?;
        let (layers, preprocess) = parse_manifest(text)?;
        Self::new(layers, weights, preprocess)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }
}

fn parse_manifest(text: &str) -> Result<(Vec<Layer>, Preprocess)> {
    let mut gain = None;
    let mut offset = None;
    let mut means = None;
    let mut layers = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: String| Error::Config { line: i + 1, msg };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("expected key=value, got `{line}`")))?;
        let float = |s: &str| s.parse::<f32>().map_err(|_| bad(format!("`{s}` is not a number")));
        match key.trim() {
            "input_gain" => gain = Some(float(value.trim())?),
            "input_offset" => offset = Some(float(value.trim())?),
            "channel_means" => means = Some(value.split_whitespace().map(float).collect::<Result<Vec<_>>>()?),
            "layers" => {
                layers = Some(
                    value
                        .split_whitespace()
                        .map(|tok| match tok {
                            "relu" => Ok(Layer::Relu),
                            "pool" => Ok(Layer::MaxPool),
                            t => t
                                .strip_prefix("conv:")
                                .filter(|n| !n.is_empty())
                                .map(|n| Layer::Conv(n.to_string()))
                                .ok_or_else(|| bad(format!("unknown layer `{t}`"))),
                        })
                        .collect::<Result<Vec<_>>>()?,
                )
            }
            other => return Err(bad(format!("unknown manifest key `{other}`"))),
        }
    }
    let missing = |k: &str| Error::invalid(format!("feature net manifest lacks `{k}`"));
    Ok((
        layers.ok_or_else(|| missing("layers"))?,
        Preprocess {
            gain: gain.ok_or_else(|| missing("input_gain"))?,
            offset: offset.ok_or_else(|| missing("input_offset"))?,
            channel_means: means.ok_or_else(|| missing("channel_means"))?,
        },
    ))
}

pub fn load_feature_net(path: impl AsRef<Path>) -> Result<FeatureNet> {
    let path = path.as_ref();
    FeatureNet::decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Feature-space MSE between `pred` and `gt` (`gt` should be a constant).
pub fn perceptual_loss(g: &mut Graph, pred: Var, gt: Var, fnet: &FeatureNet) -> Result<Var> {
    if g.value(pred).shape() != g.value(gt).shape() {
        return Err(Error::shape(
            "perceptual_loss",
            format!("{:?} vs {:?}", g.value(pred).shape(), g.value(gt).shape()),
        ));
    }
    let fp = fnet.features(g, pred)?;
    let fg = fnet.features(g, gt)?;
    g.mse_reduce(fp, fg)
}

/// Pixel-space MSE in normalized units.
pub fn pixel_mse_loss(g: &mut Graph, pred: Var, gt: Var) -> Result<Var> {
    g.mse_reduce(pred, gt)
}

/// Which objective drives training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Perceptual,
    PixelMse,
}

impl std::str::FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "perceptual" => Ok(Self::Perceptual),
            "pixel_mse" => Ok(Self::PixelMse),
            _ => Err(Error::invalid(format!("unknown loss kind `{s}`"))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Perceptual => "perceptual",
            Self::PixelMse => "pixel_mse",
        })
    }
}
