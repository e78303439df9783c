//! Shared test oracles: a float64 straight-line re-implementation of every
//! network operation and a central-difference gradient checker built on it.
#![allow(dead_code)]

use std::collections::BTreeMap;

pub mod ops;

use pamsr::model::ModelConfig;
use pamsr::tensor::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Reference tensor in f64.
#[derive(Debug, Clone, PartialEq)]
pub struct R {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl R {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::new(shape, vec![0.0; n])
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        Self::new(t.shape().to_vec(), t.data().iter().map(|&v| v as f64).collect())
    }

    fn hwc(&self) -> (usize, usize, usize) {
        match self.shape[..] {
            [h, w, c] => (h, w, c),
            ref s => panic!("expected rank 3, got {s:?}"),
        }
    }

    fn at(&self, y: usize, x: usize, c: usize) -> f64 {
        let (_, w, ch) = self.hwc();
        self.data[(y * w + x) * ch + c]
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::new(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values in `[lo, hi]` bounded away from zero by `gap` (random sign).
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f32, hi: f32) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(gap..hi);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Cross-correlation; `same` replicates edges by `(k-1)/2`, otherwise valid.
/// Output keeps every `stride`-th row and column of the dense result.
pub fn conv2d(x: &R, k: &R, b: &R, stride: usize, same: bool) -> R {
    let (h, w, cin) = x.hwc();
    let (ks, cout) = (k.shape[0], k.shape[3]);
    assert_eq!(k.shape[2], cin);
    let pad = if same { (ks - 1) / 2 } else { 0 };
    let (dh, dw) = if same { (h, w) } else { (h + 1 - ks, w + 1 - ks) };
    let (oh, ow) = (dh.div_ceil(stride), dw.div_ceil(stride));
    let mut out = R::zeros(vec![oh, ow, cout]);
    let mut acc = vec![0.0f64; cout];
    for oy in 0..oh {
        for ox in 0..ow {
            acc.copy_from_slice(&b.data);
            for dy in 0..ks {
                let iy = ((oy * stride + dy) as isize - pad as isize).clamp(0, h as isize - 1) as usize;
                for dx in 0..ks {
                    let ix = ((ox * stride + dx) as isize - pad as isize).clamp(0, w as isize - 1) as usize;
                    let px = &x.data[(iy * w + ix) * cin..][..cin];
                    for (ci, &xv) in px.iter().enumerate() {
                        let krow = &k.data[((dy * ks + dx) * cin + ci) * cout..][..cout];
                        for (a, &kv) in acc.iter_mut().zip(krow) {
                            *a += xv * kv;
                        }
                    }
                }
            }
            out.data[(oy * ow + ox) * cout..][..cout].copy_from_slice(&acc);
        }
    }
    out
}

pub fn dense(x: &R, w: &R, b: &R) -> R {
    let (n, m) = (w.shape[0], w.shape[1]);
    assert_eq!(x.data.len(), n);
    let data = (0..m)
        .map(|j| b.data[j] + (0..n).map(|i| x.data[i] * w.data[i * m + j]).sum::<f64>())
        .collect();
    R::new(vec![m], data)
}

pub fn relu(x: &R) -> R {
    x.map(|v| v.max(0.0))
}

pub fn sigmoid(x: &R) -> R {
    x.map(|v| 1.0 / (1.0 + (-v).exp()))
}

pub fn tanh(x: &R) -> R {
    x.map(f64::tanh)
}

pub fn prelu(x: &R, a: &R) -> R {
    let c = *x.shape.last().unwrap();
    let data = x
        .data
        .iter()
        .enumerate()
        .map(|(i, &v)| if v >= 0.0 { v } else { a.data[i % c] * v })
        .collect();
    R::new(x.shape.clone(), data)
}

pub fn upsample2x(x: &R) -> R {
    let (h, w, c) = x.hwc();
    let mut out = R::zeros(vec![2 * h, 2 * w, c]);
    for y in 0..2 * h {
        for xx in 0..2 * w {
            for ch in 0..c {
                out.data[(y * 2 * w + xx) * c + ch] = x.at(y / 2, xx / 2, ch);
            }
        }
    }
    out
}

pub fn maxpool2x2(x: &R) -> R {
    let (h, w, c) = x.hwc();
    let mut out = R::zeros(vec![h / 2, w / 2, c]);
    for y in 0..h / 2 {
        for xx in 0..w / 2 {
            for ch in 0..c {
                let m = [(0, 0), (0, 1), (1, 0), (1, 1)]
                    .iter()
                    .map(|&(dy, dx)| x.at(2 * y + dy, 2 * xx + dx, ch))
                    .fold(f64::NEG_INFINITY, f64::max);
                out.data[(y * (w / 2) + xx) * c + ch] = m;
            }
        }
    }
    out
}

pub fn global_avg_pool(x: &R) -> R {
    let (h, w, c) = x.hwc();
    let data = (0..c)
        .map(|ch| {
            let mut s = 0.0;
            for y in 0..h {
                for xx in 0..w {
                    s += x.at(y, xx, ch);
                }
            }
            s / (h * w) as f64
        })
        .collect();
    R::new(vec![c], data)
}

pub fn channel_scale(x: &R, s: &R) -> R {
    let c = s.data.len();
    let data = x.data.iter().enumerate().map(|(i, v)| v * s.data[i % c]).collect();
    R::new(x.shape.clone(), data)
}

pub fn add(a: &R, b: &R) -> R {
    assert_eq!(a.shape, b.shape);
    R::new(
        a.shape.clone(),
        a.data.iter().zip(&b.data).map(|(p, q)| p + q).collect(),
    )
}

pub fn scale(x: &R, f: f64) -> R {
    x.map(|v| v * f)
}

pub fn affine_expand(x: &R, gain: f64, offsets: &[f64]) -> R {
    let (h, w, _) = x.hwc();
    let data = x
        .data
        .iter()
        .flat_map(|&v| offsets.iter().map(move |&o| v * gain + o))
        .collect();
    R::new(vec![h, w, offsets.len()], data)
}

pub fn sum(x: &R) -> R {
    R::new(vec![1], vec![x.data.iter().sum()])
}

pub fn mse(a: &R, b: &R) -> f64 {
    assert_eq!(a.shape, b.shape);
    a.data.iter().zip(&b.data).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / a.data.len() as f64
}

pub fn se_block(x: &R, fc1w: &R, fc1b: &R, fc2w: &R, fc2b: &R) -> R {
    let z = relu(&dense(&global_avg_pool(x), fc1w, fc1b));
    let s = sigmoid(&dense(&z, fc2w, fc2b));
    channel_scale(x, &s)
}

/// Independent forward pass of the restoration network, written from the
/// topology description rather than from the library's builder.
pub fn model_forward(cfg: &ModelConfig, p: &BTreeMap<String, R>, x: &R) -> R {
    let conv = |name: &str, x: &R| conv2d(x, &p[&format!("{name}.weight")], &p[&format!("{name}.bias")], 1, true);
    let head = prelu(&conv("head.conv", x), &p["head.prelu"]);
    let mut h = head.clone();
    let every = cfg.n_residual_blocks.checked_div(cfg.n_se_blocks).unwrap_or(0);
    for i in 0..cfg.n_residual_blocks {
        let r = prelu(&conv(&format!("res{i}.conv1"), &h), &p[&format!("res{i}.prelu")]);
        let r = conv(&format!("res{i}.conv2"), &r);
        h = add(&h, &r);
        if every > 0 && (i + 1) % every == 0 {
            let j = (i + 1) / every - 1;
            let q = |s: &str| &p[&format!("se{j}.{s}")];
            h = se_block(&h, q("fc1.weight"), q("fc1.bias"), q("fc2.weight"), q("fc2.bias"));
        }
    }
    let mut h = add(&conv("trunk_tail.conv", &h), &head);
    for i in 0..cfg.scale.trailing_zeros() {
        h = upsample2x(&h);
        h = prelu(&conv(&format!("up{i}.conv"), &h), &p[&format!("up{i}.prelu")]);
    }
    tanh(&conv("tail.conv", &h))
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub checked: usize,
    /// Coordinates whose gradient exceeds the absolute floor, judged relatively.
    pub relative: usize,
    pub worst_rel: f64,
    pub failures: Vec<String>,
}

impl GradReport {
    fn new() -> Self {
        Self {
            checked: 0,
            relative: 0,
            worst_rel: 0.0,
            failures: Vec::new(),
        }
    }

    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }

    /// Relative error when either gradient is above `ABS_TOL`, absolute error
    /// when both are near zero. Returns the reason on failure.
    fn judge(&mut self, analytic: f64, numeric: f64) -> Option<String> {
        self.checked += 1;
        let err = (analytic - numeric).abs();
        let scale = analytic.abs().max(numeric.abs());
        if scale <= ABS_TOL {
            return (err > ABS_TOL).then(|| format!("abs {err:.2e}"));
        }
        self.relative += 1;
        let rel = err / scale;
        self.worst_rel = self.worst_rel.max(rel);
        (rel > REL_TOL).then(|| format!("rel {rel:.2e}"))
    }
}

pub const REL_TOL: f64 = 1e-3;
pub const ABS_TOL: f64 = 1e-5;
const FD_STEP: f64 = 1e-6;

/// Compares analytic gradients of `loss = mse(op(inputs), target)` against
/// central differences of the f64 reference. Inputs with index in
/// `constants` are not differentiated. At most `max_coords` coordinates per
/// input are probed (evenly spread, always including the first and last).
pub fn gradcheck(
    label: &str,
    inputs: &[Tensor],
    constants: &[usize],
    build: impl Fn(&mut Graph, &[Var]) -> Var,
    reference: impl Fn(&[R]) -> R,
    max_coords: usize,
    seed: u64,
) -> GradReport {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if constants.contains(&i) {
                g.constant(t.clone())
            } else {
                g.param(t.clone())
            }
        })
        .collect();
    let out = build(&mut g, &vars);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = random_tensor(&mut rng, g.value(out).shape(), -0.5, 0.5);
    let tv = g.constant(target.clone());
    let loss = g.mse_reduce(out, tv).unwrap();
    let grads = g.backward(loss).unwrap();

    let target = R::from_tensor(&target);
    let base: Vec<R> = inputs.iter().map(R::from_tensor).collect();
    let f = |xs: &[R]| mse(&reference(xs), &target);

    let mut report = GradReport::new();
    for (i, t) in inputs.iter().enumerate() {
        if constants.contains(&i) {
            continue;
        }
        let analytic = grads.get(vars[i]).expect("gradient for parameter");
        let n = t.len();
        let coords: Vec<usize> = if n <= max_coords {
            (0..n).collect()
        } else {
            (0..max_coords).map(|j| j * (n - 1) / (max_coords - 1)).collect()
        };
        for c in coords {
            let mut xs = base.clone();
            let x0 = xs[i].data[c];
            xs[i].data[c] = x0 + FD_STEP;
            let up = f(&xs);
            xs[i].data[c] = x0 - FD_STEP;
            let down = f(&xs);
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic.data()[c] as f64;
            if let Some(why) = report.judge(a, numeric) {
                report.failures.push(format!(
                    "{label}: input {i} coord {c}: analytic {a:.6e} vs numeric {numeric:.6e} ({why})"
                ));
            }
        }
    }
    report
}

pub fn to_ref_map(params: &BTreeMap<String, Tensor>) -> BTreeMap<String, R> {
    params.iter().map(|(k, v)| (k.clone(), R::from_tensor(v))).collect()
}

/// Central differences of `f` over named f64 tensors against `analytic`.
pub fn check_named(
    label: &str,
    analytic: &BTreeMap<String, Tensor>,
    base: &BTreeMap<String, R>,
    f: impl Fn(&BTreeMap<String, R>) -> f64,
    max_coords: usize,
) -> GradReport {
    let mut report = GradReport::new();
    let mut xs = base.clone();
    for (name, grad) in analytic {
        let n = grad.len();
        let coords: Vec<usize> = if n <= max_coords {
            (0..n).collect()
        } else {
            (0..max_coords).map(|j| j * (n - 1) / (max_coords - 1)).collect()
        };
        for c in coords {
            let x0 = base[name].data[c];
            xs.get_mut(name).unwrap().data[c] = x0 + FD_STEP;
            let up = f(&xs);
            xs.get_mut(name).unwrap().data[c] = x0 - FD_STEP;
            let down = f(&xs);
            xs.get_mut(name).unwrap().data[c] = x0;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = grad.data()[c] as f64;
            if let Some(why) = report.judge(a, numeric) {
                report.failures.push(format!(
                    "{label}: {name}[{c}]: analytic {a:.6e} vs numeric {numeric:.6e} ({why})"
                ));
            }
        }
    }
    report
}

/// Miniature network with every parameter moved off its initial value, so
/// biases, slopes, zero-initialized weights and SE weights all carry
/// non-trivial gradients.
pub fn perturbed_model(cfg: ModelConfig, seed: u64) -> pamsr::model::Model {
    let mut model = pamsr::model::Model::build(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for (name, t) in model.params_mut().iter_mut() {
        if name.ends_with(".bias") {
            t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.1..0.1));
        } else if name.ends_with(".prelu") {
            t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(0.1..0.4));
        } else if t.data().iter().all(|&v| v == 0.0) {
            t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.05..0.05));
        }
    }
    model
}

/// Gradient check of the whole network under `mse(forward(x), target)`.
pub fn model_gradcheck(cfg: ModelConfig, lr_side: usize, max_coords: usize, seed: u64) -> GradReport {
    let model = perturbed_model(cfg, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let x = random_tensor(&mut rng, &[lr_side, lr_side, 1], -1.0, 1.0);
    let hr = lr_side * cfg.scale;
    let target = random_tensor(&mut rng, &[hr, hr, 1], -0.9, 0.9);

    let mut g = Graph::new();
    let bound = model.bind(&mut g, true);
    let xv = g.constant(x.clone());
    let tv = g.constant(target.clone());
    let y = model.forward(&mut g, &bound, xv).unwrap();
    let loss = g.mse_reduce(y, tv).unwrap();
    let mut grads = g.backward(loss).unwrap();
    let analytic: BTreeMap<String, Tensor> = bound
        .iter()
        .map(|(n, v)| (n.to_string(), grads.take(v).unwrap()))
        .collect();

    let (xr, tr) = (R::from_tensor(&x), R::from_tensor(&target));
    check_named(
        "model",
        &analytic,
        &to_ref_map(model.params()),
        |p| mse(&model_forward(&cfg, p, &xr), &tr),
        max_coords,
    )
}
