use std::collections::BTreeMap;

use super::kernels::{self, ConvGeom, Padding};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeom,
    },
    Dense {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Unary(Var, Activation),
    Prelu {
        input: Var,
        slope: Var,
    },
    Upsample2x(Var),
    MaxPool2x2 {
        input: Var,
        argmax: Vec<u32>,
    },
    GlobalAvgPool(Var),
    ChannelScale {
        input: Var,
        gains: Var,
    },
    Add(Var, Var),
    Scale(Var, f32),
    AffineExpand {
        input: Var,
        gain: f32,
    },
    Sum(Var),
    MseReduce(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only computation record with reverse-mode differentiation.
///
/// Nodes are stored in creation order, which is already a topological order,
/// so `backward` is a single reverse sweep.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every trainable leaf of a graph.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: BTreeMap<Var, Tensor>,
}

impl Gradients {
    /// Gradient for a trainable leaf; `None` for constants and interior nodes.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(&var)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.remove(&var)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a constant: no gradient is ever accumulated for it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records a trainable leaf whose gradient `backward` reports.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn hwc(&self, op: &'static str, var: Var) -> Result<(usize, usize, usize)> {
        self.value(var)
            .hwc()
            .map_err(|_| Error::shape(op, format!("expected [H, W, C], got {:?}", self.value(var).shape())))
    }

    /// Cross-correlation of `[H, W, Cin]` with a `[k, k, Cin, Cout]` kernel plus bias.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize, padding: Padding) -> Result<Var> {
        let (h, w, cin) = self.hwc("conv2d", input)?;
        let (k, kcin, cout) = match *self.value(kernel).shape() {
            [k1, k2, ci, co] if k1 == k2 => (k1, ci, co),
            ref s => {
                return Err(Error::shape(
                    "conv2d",
                    format!("kernel must be [k, k, Cin, Cout], got {s:?}"),
                ))
            }
        };
        if k % 2 == 0 {
            return Err(Error::shape("conv2d", format!("kernel size {k} is even")));
        }
        if kcin != cin {
            return Err(Error::shape(
                "conv2d",
                format!("input has {cin} channels but kernel expects Cin = {kcin}"),
            ));
        }
        if self.value(bias).shape() != [cout] {
            return Err(Error::shape(
                "conv2d",
                format!("bias {:?} does not match Cout = {cout}", self.value(bias).shape()),
            ));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d stride must be at least 1"));
        }
        if padding == Padding::Valid && (h < k || w < k) {
            return Err(Error::shape(
                "conv2d",
                format!("valid padding needs input ≥ {k}×{k}, got {h}×{w}"),
            ));
        }
        let geom = ConvGeom {
            h,
            w,
            cin,
            cout,
            k,
            stride,
            padding,
        };
        let (oh, ow) = geom.out_dims();
        let out = kernels::conv2d_forward(
            &geom,
            self.value(input).data(),
            self.value(kernel).data(),
            self.value(bias).data(),
        );
        let value = Tensor::new([oh, ow, cout], out)?;
        let rg = self.needs(&[input, kernel, bias]);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            },
            rg,
        ))
    }

    /// Affine map `x·W + b` for `x: [Cin]`, `W: [Cin, Cout]`, `b: [Cout]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let n = match *self.value(input).shape() {
            [n] => n,
            ref s => return Err(Error::shape("dense", format!("input must be a vector, got {s:?}"))),
        };
        let cout = match *self.value(weight).shape() {
            [ci, co] if ci == n => co,
            ref s => {
                return Err(Error::shape(
                    "dense",
                    format!("weight {s:?} does not accept an input of length {n}"),
                ))
            }
        };
        if self.value(bias).shape() != [cout] {
            return Err(Error::shape(
                "dense",
                format!("bias {:?} does not match Cout = {cout}", self.value(bias).shape()),
            ));
        }
        let out = kernels::dense_forward(
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
        );
        let rg = self.needs(&[input, weight, bias]);
        Ok(self.push(Tensor::new([cout], out)?, Op::Dense { input, weight, bias }, rg))
    }

    fn unary(&mut self, input: Var, act: Activation) -> Var {
        let value = match act {
            Activation::Relu => self.value(input).map(|v| v.max(0.0)),
            Activation::Sigmoid => self.value(input).map(|v| 1.0 / (1.0 + (-v).exp())),
            Activation::Tanh => self.value(input).map(f32::tanh),
        };
        let rg = self.needs(&[input]);
        self.push(value, Op::Unary(input, act), rg)
    }

    pub fn relu(&mut self, input: Var) -> Var {
        self.unary(input, Activation::Relu)
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        self.unary(input, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, input: Var) -> Var {
        self.unary(input, Activation::Tanh)
    }

    /// Parametric ReLU with one slope per channel (last dimension).
    pub fn prelu(&mut self, input: Var, slope: Var) -> Result<Var> {
        let c = *self.value(input).shape().last().expect("non-empty shape");
        if self.value(slope).shape() != [c] {
            return Err(Error::shape(
                "prelu",
                format!("slope {:?} does not match {c} channels", self.value(slope).shape()),
            ));
        }
        let a = self.value(slope).data();
        let x = self.value(input);
        let data = x
            .data()
            .chunks_exact(c)
            .flat_map(|px| px.iter().zip(a).map(|(&v, &s)| if v >= 0.0 { v } else { s * v }))
            .collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.needs(&[input, slope]);
        Ok(self.push(value, Op::Prelu { input, slope }, rg))
    }

    /// Nearest-neighbour 2× spatial upsampling.
    pub fn upsample_nn2x(&mut self, input: Var) -> Result<Var> {
        let (h, w, c) = self.hwc("upsample_nn2x", input)?;
        let x = self.value(input).data();
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![0.0f32; oh * ow * c];
        for oy in 0..oh {
            for ox in 0..ow {
                let src = ((oy / 2) * w + ox / 2) * c;
                let dst = (oy * ow + ox) * c;
                out[dst..dst + c].copy_from_slice(&x[src..src + c]);
            }
        }
        let rg = self.needs(&[input]);
        Ok(self.push(Tensor::new([oh, ow, c], out)?, Op::Upsample2x(input), rg))
    }

    /// 2×2 max pooling, stride 2. Ties resolve to the first row-major position.
    pub fn maxpool2x2(&mut self, input: Var) -> Result<Var> {
        let (h, w, c) = self.hwc("maxpool2x2", input)?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape("maxpool2x2", format!("spatial size {h}×{w} is not even")));
        }
        let x = self.value(input).data();
        let (oh, ow) = (h / 2, w / 2);
        let mut out = vec![0.0f32; oh * ow * c];
        let mut argmax = vec![0u32; oh * ow * c];
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let idx = ((2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                    let o = (oy * ow + ox) * c + ch;
                    out[o] = best;
                    argmax[o] = best_idx as u32;
                }
            }
        }
        let rg = self.needs(&[input]);
        Ok(self.push(Tensor::new([oh, ow, c], out)?, Op::MaxPool2x2 { input, argmax }, rg))
    }

    /// Per-channel spatial mean: `[H, W, C] -> [C]`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let (h, w, c) = self.hwc("global_avg_pool", input)?;
        let mut acc = vec![0.0f64; c];
        for px in self.value(input).data().chunks_exact(c) {
            for (a, &v) in acc.iter_mut().zip(px) {
                *a += v as f64;
            }
        }
        let n = (h * w) as f64;
        let out = acc.into_iter().map(|a| (a / n) as f32).collect();
        let rg = self.needs(&[input]);
        Ok(self.push(Tensor::new([c], out)?, Op::GlobalAvgPool(input), rg))
    }

    /// Multiplies every pixel of channel `c` by `gains[c]`.
    pub fn channel_scale(&mut self, input: Var, gains: Var) -> Result<Var> {
        let (h, w, c) = self.hwc("channel_scale", input)?;
        if self.value(gains).shape() != [c] {
            return Err(Error::shape(
                "channel_scale",
                format!("gains {:?} do not match {c} channels", self.value(gains).shape()),
            ));
        }
        let g = self.value(gains).data();
        let out = self
            .value(input)
            .data()
            .chunks_exact(c)
            .flat_map(|px| px.iter().zip(g).map(|(v, s)| v * s))
            .collect();
        let rg = self.needs(&[input, gains]);
        Ok(self.push(Tensor::new([h, w, c], out)?, Op::ChannelScale { input, gains }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    /// Multiplies by a fixed scalar.
    pub fn scale(&mut self, input: Var, factor: f32) -> Var {
        let value = self.value(input).map(|v| v * factor);
        let rg = self.needs(&[input]);
        self.push(value, Op::Scale(input, factor), rg)
    }

    /// Maps a single-channel `[H, W, 1]` tensor to `[H, W, C]` with
    /// `out[.., c] = x·gain + offsets[c]`.
    pub fn affine_expand(&mut self, input: Var, gain: f32, offsets: &[f32]) -> Result<Var> {
        let (h, w, c) = self.hwc("affine_expand", input)?;
        if c != 1 {
            return Err(Error::shape(
                "affine_expand",
                format!("expected a single-channel input, got {c} channels"),
            ));
        }
        if offsets.is_empty() {
            return Err(Error::invalid("affine_expand needs at least one output channel"));
        }
        let out = self
            .value(input)
            .data()
            .iter()
            .flat_map(|&v| offsets.iter().map(move |&o| v * gain + o))
            .collect();
        let rg = self.needs(&[input]);
        Ok(self.push(
            Tensor::new([h, w, offsets.len()], out)?,
            Op::AffineExpand { input, gain },
            rg,
        ))
    }

    /// Sum of all elements as a one-element tensor.
    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).sum() as f32;
        let rg = self.needs(&[input]);
        self.push(Tensor::scalar(s), Op::Sum(input), rg)
    }

    /// Mean of squared differences over all elements.
    pub fn mse_reduce(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mse_reduce", self.value(a), self.value(b))?;
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let sq: f64 = x
            .iter()
            .zip(y)
            .map(|(&p, &q)| {
                let d = p as f64 - q as f64;
                d * d
            })
            .sum();
        let value = Tensor::scalar((sq / x.len() as f64) as f32);
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::MseReduce(a, b), rg))
    }

    /// Reverse sweep from a one-element `loss`.
    ///
    /// Every trainable leaf appears in the result; leaves the loss does not
    /// depend on receive a zero tensor.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be a scalar, got shape {:?}", lv.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(lv.shape().to_vec(), vec![1.0])?);

        let mut leaves = BTreeMap::new();
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            if let Op::Leaf = node.op {
                leaves.insert(Var(idx), upstream);
                continue;
            }
            for (var, g) in self.local_grads(node, &upstream) {
                if !self.nodes[var.0].requires_grad {
                    continue;
                }
                match &mut grads[var.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) {
                leaves
                    .entry(Var(i))
                    .or_insert_with(|| Tensor::zeros(node.value.shape().to_vec()));
            }
        }
        Ok(Gradients { grads: leaves })
    }

    fn local_grads(&self, node: &Node, up: &Tensor) -> Vec<(Var, Tensor)> {
        let like = |v: Var, data: Vec<f32>| {
            Tensor::new(self.value(v).shape().to_vec(), data).expect("gradient matches value shape")
        };
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        let dy = up.data();
        match node.op {
            Op::Leaf => Vec::new(),
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            } => {
                let g = kernels::conv2d_backward(
                    &geom,
                    self.value(input).data(),
                    self.value(kernel).data(),
                    dy,
                    [rg(input), rg(kernel), rg(bias)],
                );
                let mut out = Vec::new();
                if let Some(d) = g.input {
                    out.push((input, like(input, d)));
                }
                if let Some(d) = g.kernel {
                    out.push((kernel, like(kernel, d)));
                }
                if let Some(d) = g.bias {
                    out.push((bias, like(bias, d)));
                }
                out
            }
            Op::Dense { input, weight, bias } => {
                let x = self.value(input).data();
                let w = self.value(weight).data();
                let cout = dy.len();
                let mut out = vec![(bias, like(bias, dy.to_vec()))];
                if rg(weight) {
                    let dw = x.iter().flat_map(|&xi| dy.iter().map(move |&g| xi * g)).collect();
                    out.push((weight, like(weight, dw)));
                }
                if rg(input) {
                    let dx = w
                        .chunks_exact(cout)
                        .map(|row| row.iter().zip(dy).map(|(a, b)| a * b).sum())
                        .collect();
                    out.push((input, like(input, dx)));
                }
                out
            }
            Op::Unary(input, act) => {
                let y = node.value.data();
                let d = match act {
                    Activation::Relu => self
                        .value(input)
                        .data()
                        .iter()
                        .zip(dy)
                        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                        .collect(),
                    Activation::Sigmoid => y.iter().zip(dy).map(|(&s, &g)| g * s * (1.0 - s)).collect(),
                    Activation::Tanh => y.iter().zip(dy).map(|(&t, &g)| g * (1.0 - t * t)).collect(),
                };
                vec![(input, like(input, d))]
            }
            Op::Prelu { input, slope } => {
                let x = self.value(input).data();
                let a = self.value(slope).data();
                let c = a.len();
                let mut dx = vec![0.0f32; x.len()];
                let mut da = vec![0.0f32; c];
                for (i, (&v, &g)) in x.iter().zip(dy).enumerate() {
                    let ch = i % c;
                    if v >= 0.0 {
                        dx[i] = g;
                    } else {
                        dx[i] = a[ch] * g;
                        da[ch] += v * g;
                    }
                }
                vec![(input, like(input, dx)), (slope, like(slope, da))]
            }
            Op::Upsample2x(input) => {
                let (h, w, c) = self.value(input).hwc().expect("rank 3");
                let ow = 2 * w;
                let mut dx = vec![0.0f32; h * w * c];
                for oy in 0..2 * h {
                    for ox in 0..ow {
                        let dst = ((oy / 2) * w + ox / 2) * c;
                        let src = (oy * ow + ox) * c;
                        for ch in 0..c {
                            dx[dst + ch] += dy[src + ch];
                        }
                    }
                }
                vec![(input, like(input, dx))]
            }
            Op::MaxPool2x2 { input, ref argmax } => {
                let mut dx = vec![0.0f32; self.value(input).len()];
                for (&idx, &g) in argmax.iter().zip(dy) {
                    dx[idx as usize] += g;
                }
                vec![(input, like(input, dx))]
            }
            Op::GlobalAvgPool(input) => {
                let (h, w, c) = self.value(input).hwc().expect("rank 3");
                let inv = 1.0 / (h * w) as f32;
                let per: Vec<f32> = dy.iter().map(|g| g * inv).collect();
                let dx = (0..h * w * c).map(|i| per[i % c]).collect();
                vec![(input, like(input, dx))]
            }
            Op::ChannelScale { input, gains } => {
                let x = self.value(input).data();
                let s = self.value(gains).data();
                let c = s.len();
                let mut out = Vec::new();
                if rg(input) {
                    let dx = dy.iter().enumerate().map(|(i, g)| g * s[i % c]).collect();
                    out.push((input, like(input, dx)));
                }
                if rg(gains) {
                    let mut ds = vec![0.0f64; c];
                    for (i, (&v, &g)) in x.iter().zip(dy).enumerate() {
                        ds[i % c] += (v * g) as f64;
                    }
                    out.push((gains, like(gains, ds.into_iter().map(|v| v as f32).collect())));
                }
                out
            }
            Op::Add(a, b) => vec![(a, up.clone()), (b, up.clone())],
            Op::Scale(input, f) => vec![(input, up.map(|g| g * f))],
            Op::AffineExpand { input, gain } => {
                let c = node.value.shape()[2];
                let dx = dy.chunks_exact(c).map(|px| gain * px.iter().sum::<f32>()).collect();
                vec![(input, like(input, dx))]
            }
            Op::Sum(input) => {
                let g = dy[0];
                vec![(input, Tensor::full(self.value(input).shape().to_vec(), g))]
            }
            Op::MseReduce(a, b) => {
                let (x, y) = (self.value(a).data(), self.value(b).data());
                let k = 2.0 * dy[0] / x.len() as f32;
                let da: Vec<f32> = x.iter().zip(y).map(|(p, q)| k * (p - q)).collect();
                let db = da.iter().map(|v| -v).collect();
                vec![(a, like(a, da)), (b, like(b, db))]
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn unit_kernel_doubles_values() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 3, 1], &[1., -2., 3., 0.5, 5., -6.]));
        let k = g.constant(t(&[1, 1, 1, 1], &[2.0]));
        let b = g.constant(t(&[1], &[0.0]));
        let y = g.conv2d(x, k, b, 1, Padding::SameReplicate).unwrap();
        assert_eq!(g.value(y).data(), &[2., -4., 6., 1., 10., -12.]);
    }

    #[test]
    fn replicate_padding_sums_all_nine_taps() {
        let mut g = Graph::new();
        let c = 1.25f32;
        let x = g.constant(Tensor::full([5, 4, 1], c));
        let k = g.constant(Tensor::full([3, 3, 1, 1], 1.0));
        let b = g.constant(t(&[1], &[0.0]));
        let y = g.conv2d(x, k, b, 1, Padding::SameReplicate).unwrap();
        assert_eq!(g.value(y).shape(), &[5, 4, 1]);
        assert!(g.value(y).data().iter().all(|&v| v == 9.0 * c));
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros([4, 4, 3]));
        let k = g.constant(Tensor::zeros([3, 3, 2, 5]));
        let b = g.constant(Tensor::zeros([5]));
        let err = g.conv2d(x, k, b, 1, Padding::SameReplicate).unwrap_err();
        assert!(err.to_string().contains("3 channels"), "{err}");
    }

    #[test]
    fn dense_identity_and_bias_only() {
        let mut g = Graph::new();
        let x = g.constant(t(&[3], &[1., 2., 3.]));
        let eye = g.constant(t(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]));
        let zb = g.constant(Tensor::zeros([3]));
        let y = g.dense(x, eye, zb).unwrap();
        assert_eq!(g.value(y).data(), &[1., 2., 3.]);

        let zw = g.constant(Tensor::zeros([3, 2]));
        let b = g.constant(t(&[2], &[0.5, -7.0]));
        let y = g.dense(x, zw, b).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, -7.0]);

        let bad = g.constant(Tensor::zeros([4, 2]));
        assert!(g.dense(x, bad, b).is_err());
    }

    #[test]
    fn activation_fixed_points() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::zeros([1]));
        let th = g.tanh(z);
        let sg = g.sigmoid(z);
        assert_eq!(g.value(th).data(), &[0.0]);
        assert_eq!(g.value(sg).data(), &[0.5]);

        let neg = g.constant(t(&[4], &[-1., -0.5, -3., -1e-3]));
        let r = g.relu(neg);
        assert!(g.value(r).data().iter().all(|&v| v == 0.0));

        let x = g.constant(t(&[1, 1, 1], &[-4.0]));
        let a = g.constant(t(&[1], &[0.25]));
        let p = g.prelu(x, a).unwrap();
        assert_eq!(g.value(p).data(), &[-1.0]);
        let wrong = g.constant(t(&[2], &[0.25, 0.25]));
        assert!(g.prelu(x, wrong).is_err());
    }

    #[test]
    fn upsample_replicates_blocks() {
        let mut g = Graph::new();
        let x = g.param(t(&[2, 2, 1], &[1., 2., 3., 4.]));
        let y = g.upsample_nn2x(x).unwrap();
        #[rustfmt::skip]
        let want = [
            1., 1., 2., 2.,
            1., 1., 2., 2.,
            3., 3., 4., 4.,
            3., 3., 4., 4.,
        ];
        assert_eq!(g.value(y).shape(), &[4, 4, 1]);
        assert_eq!(g.value(y).data(), &want);
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert!(grads.get(x).unwrap().data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn maxpool_values_and_tie_rule() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 2, 1], &[1., 2., 3., 4.]));
        let y = g.maxpool2x2(x).unwrap();
        assert_eq!(g.value(y).data(), &[4.0]);

        let tie = g.param(t(&[2, 2, 1], &[5., 5., 5., 5.]));
        let y = g.maxpool2x2(tie).unwrap();
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(tie).unwrap().data(), &[1., 0., 0., 0.]);

        let odd = g.constant(Tensor::zeros([3, 2, 1]));
        assert!(g.maxpool2x2(odd).is_err());
    }

    #[test]
    fn pooling_and_channel_scale() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 2, 1], &[1., 2., 3., 4.]));
        let m = g.global_avg_pool(x).unwrap();
        assert_eq!(g.value(m).data(), &[2.5]);

        let img = g.constant(t(&[1, 2, 2], &[1., 2., 3., 4.]));
        let ones = g.constant(Tensor::full([2], 1.0));
        let zeros = g.constant(Tensor::zeros([2]));
        let id = g.channel_scale(img, ones).unwrap();
        assert_eq!(g.value(id).data(), &[1., 2., 3., 4.]);
        let z = g.channel_scale(img, zeros).unwrap();
        assert!(g.value(z).data().iter().all(|&v| v == 0.0));
        let three = g.constant(Tensor::zeros([3]));
        assert!(g.channel_scale(img, three).is_err());
    }

    #[test]
    fn mse_reduce_cases() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2], &[0., 0.]));
        let b = g.constant(t(&[2], &[2., 0.]));
        let m = g.mse_reduce(a, b).unwrap();
        assert_eq!(g.value(m).item(), Some(2.0));
        let same = g.mse_reduce(b, b).unwrap();
        assert_eq!(g.value(same).item(), Some(0.0));
        let z = g.constant(Tensor::zeros([3, 3, 1]));
        let o = g.constant(Tensor::full([3, 3, 1], 1.0));
        let m = g.mse_reduce(z, o).unwrap();
        assert_eq!(g.value(m).item(), Some(1.0));
        assert!(g.mse_reduce(a, z).is_err());
        assert!(g.add(a, z).is_err());
    }

    #[test]
    fn backward_closed_form_and_unreachable_params() {
        let mut g = Graph::new();
        let p = g.param(t(&[4], &[1., -2., 0.5, 3.]));
        let q = g.param(t(&[2], &[7., 8.]));
        let target = g.constant(t(&[4], &[0., 1., 1., -1.]));
        let loss = g.mse_reduce(p, target).unwrap();
        let grads = g.backward(loss).unwrap();
        let want: Vec<f32> = [1. - 0., -2. - 1., 0.5 - 1., 3. + 1.]
            .iter()
            .map(|d| 2.0 * d / 4.0)
            .collect();
        assert_eq!(grads.get(p).unwrap().data(), want.as_slice());
        assert_eq!(grads.get(q).unwrap().data(), &[0.0, 0.0]);
        assert!(grads.get(target).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let p = g.param(Tensor::zeros([3]));
        assert!(g.backward(p).is_err());
    }
}
