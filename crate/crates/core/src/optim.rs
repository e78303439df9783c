//! Adam with bias correction.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if self.epsilon.is_nan() || self.epsilon < 0.0 {
            return Err(Error::invalid(format!(
                "epsilon must be non-negative, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// First and second moments per parameter, plus the step counter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One Adam update of every parameter that has a gradient in `grads`.
///
/// Gradients must name existing parameters and match their shapes; the whole
/// step is validated before anything is mutated.
pub fn adam_step(
    params: &mut BTreeMap<String, Tensor>,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    for (name, g) in grads {
        let p = params.get(name).ok_or_else(|| Error::Tensor {
            name: name.clone(),
            msg: "gradient for unknown parameter".into(),
        })?;
        if p.shape() != g.shape() {
            return Err(Error::Tensor {
                name: name.clone(),
                msg: format!(
                    "gradient shape {:?} does not match parameter {:?}",
                    g.shape(),
                    p.shape()
                ),
            });
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (cfg.beta1 as f64, cfg.beta2 as f64);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let (lr, eps) = (cfg.learning_rate as f64, cfg.epsilon as f64);
    for (name, g) in grads {
        let p = params.get_mut(name).expect("checked above");
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
        let it = p
            .data_mut()
            .iter_mut()
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
            .zip(g.data());
        for ((pi, (mi, vi)), &gi) in it {
            let gi = gi as f64;
            let mn = b1 * *mi as f64 + (1.0 - b1) * gi;
            let vn = b2 * *vi as f64 + (1.0 - b2) * gi * gi;
            *mi = mn as f32;
            *vi = vn as f32;
            let mhat = *mi as f64 / c1;
            let vhat = *vi as f64 / c2;
            *pi = (*pi as f64 - lr * mhat / (vhat.sqrt() + eps)) as f32;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(name: &str, v: Vec<f32>) -> BTreeMap<String, Tensor> {
        let n = v.len();
        BTreeMap::from([(name.to_string(), Tensor::new([n], v).unwrap())])
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = one("w", vec![1.0, -2.0]);
        let before = p.clone();
        let mut s = AdamState::new();
        adam_step(&mut p, &one("w", vec![0.0, 0.0]), &mut s, &AdamConfig::default()).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = one("w", vec![0.5, 0.5, 0.5]);
        let cfg = AdamConfig::default();
        adam_step(&mut p, &one("w", vec![3.0, -0.01, 0.0]), &mut AdamState::new(), &cfg).unwrap();
        let d: Vec<f32> = p["w"].data().iter().map(|x| x - 0.5).collect();
        assert!((d[0] + cfg.learning_rate).abs() < 1e-7);
        assert!((d[1] - cfg.learning_rate).abs() < 1e-7);
        assert_eq!(d[2], 0.0);
    }

    #[test]
    fn rejects_mismatch_without_mutating() {
        let mut p = one("w", vec![1.0]);
        let mut s = AdamState::new();
        let cfg = AdamConfig::default();
        assert!(adam_step(&mut p, &one("w", vec![1.0, 2.0]), &mut s, &cfg).is_err());
        assert!(adam_step(&mut p, &one("x", vec![1.0]), &mut s, &cfg).is_err());
        assert_eq!(s.t, 0);
        assert_eq!(p["w"].data(), &[1.0]);
    }

    #[test]
    fn config_validation() {
        assert!(AdamConfig::default().validate().is_ok());
        let bad = AdamConfig {
            beta1: 1.0,
            ..AdamConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = AdamConfig {
            learning_rate: 0.0,
            ..AdamConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
