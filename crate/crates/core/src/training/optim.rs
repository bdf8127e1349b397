use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::{ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    /// Heavy-ball SGD.
    Sgd,
    /// Adaptive moments with bias correction.
    Adam,
}

impl FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sgd" | "sgd-momentum" => Ok(OptimizerKind::Sgd),
            "adam" | "adamw" | "adaptive-moment" => Ok(OptimizerKind::Adam),
            other => Err(format!("unknown optimizer `{other}` (expected sgd or adam)")),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled: applied as `p ← p − lr·wd·p` independently of the gradient.
    pub weight_decay: f64,
}

impl OptimizerConfig {
    pub fn new(kind: OptimizerKind, weight_decay: f64) -> Self {
        OptimizerConfig { kind, momentum: 0.9, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay }
    }
}

/// Optimizer with per-parameter moment buffers keyed by parameter name.
#[derive(Debug, Clone)]
pub struct Optimizer<T: Scalar> {
    pub config: OptimizerConfig,
    pub steps: u64,
    first: BTreeMap<String, Vec<T>>,
    second: BTreeMap<String, Vec<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(config: OptimizerConfig) -> Self {
        Optimizer { config, steps: 0, first: BTreeMap::new(), second: BTreeMap::new() }
    }

    /// Updates every entry of `store` from its stored gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        self.steps += 1;
        let c = self.config;
        let t = self.steps as i32;
        let decay = T::lit(1.0 - lr * c.weight_decay);
        let lr_t = T::lit(lr);
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let correction1 = T::lit(1.0 - c.beta1.powi(t));
        let correction2 = T::lit(1.0 - c.beta2.powi(t));
        let eps = T::lit(c.eps);
        let mu = T::lit(c.momentum);
        for (name, p) in store.iter_mut() {
            let grad = p.grad.take().ok_or_else(|| TensorError::Missing(format!("gradient of {name}")))?;
            let n = grad.len();
            let first = self.first.entry(name.to_string()).or_insert_with(|| vec![T::zero(); n]);
            match c.kind {
                OptimizerKind::Sgd => {
                    for ((w, g), buf) in p.data_mut().iter_mut().zip(&grad).zip(first.iter_mut()) {
                        *buf = if t == 1 { *g } else { mu * *buf + *g };
                        *w = *w * decay - lr_t * *buf;
                    }
                }
                OptimizerKind::Adam => {
                    let second = self.second.entry(name.to_string()).or_insert_with(|| vec![T::zero(); n]);
                    for (((w, g), m), v) in p.data_mut().iter_mut().zip(&grad).zip(first.iter_mut()).zip(second.iter_mut()) {
                        *m = b1 * *m + (T::one() - b1) * *g;
                        *v = b2 * *v + (T::one() - b2) * *g * *g;
                        let update = (*m / correction1) / ((*v / correction2).sqrt() + eps);
                        *w = *w * decay - lr_t * update;
                    }
                }
            }
        }
        Ok(())
    }

    /// Moment buffers and the step counter as a checkpointable store.
    pub fn state(&self) -> ParamStore<T> {
        let mut out = ParamStore::new();
        for (prefix, map) in [("first", &self.first), ("second", &self.second)] {
            for (name, buf) in map {
                out.insert(format!("{prefix}/{name}"), Tensor::new(vec![buf.len()], buf.clone()).expect("1-d")).expect("unique");
            }
        }
        out.insert("steps", Tensor::from_f64(vec![1], &[self.steps as f64]).expect("scalar")).expect("unique");
        out
    }

    pub fn load_state(&mut self, state: &ParamStore<T>) -> Result<()> {
        self.steps = state.get("steps")?.data()[0].to_u64().ok_or_else(|| TensorError::Missing("steps".into()))?;
        self.first.clear();
        self.second.clear();
        for (name, t) in state.iter() {
            if let Some(n) = name.strip_prefix("first/") {
                self.first.insert(n.to_string(), t.data().to_vec());
            } else if let Some(n) = name.strip_prefix("second/") {
                self.second.insert(n.to_string(), t.data().to_vec());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(w: f64, g: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let mut t = Tensor::from_f64(vec![1], &[w]).unwrap();
        t.grad = Some(vec![g]);
        s.insert("w", t).unwrap();
        s
    }

    #[test]
    fn zero_grad_without_decay_is_a_no_op() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut s = store(0.7, 0.0);
            Optimizer::new(OptimizerConfig::new(kind, 0.0)).step(&mut s, 0.1).unwrap();
            assert_eq!(s.get("w").unwrap().data(), &[0.7]);
        }
    }

    #[test]
    fn sgd_first_step() {
        let mut s = store(1.0, 1.0);
        Optimizer::new(OptimizerConfig::new(OptimizerKind::Sgd, 0.0)).step(&mut s, 0.1).unwrap();
        assert!((s.get("w").unwrap().data()[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn sgd_momentum_accumulates() {
        let mut s = store(0.0, 1.0);
        let mut opt = Optimizer::new(OptimizerConfig::new(OptimizerKind::Sgd, 0.0));
        opt.step(&mut s, 1.0).unwrap();
        s.get_mut("w").unwrap().grad = Some(vec![1.0]);
        opt.step(&mut s, 1.0).unwrap();
        assert!((s.get("w").unwrap().data()[0] + 2.9).abs() < 1e-12);
    }

    #[test]
    fn decoupled_decay_shrinks_weights() {
        let mut s = store(2.0, 0.0);
        Optimizer::new(OptimizerConfig::new(OptimizerKind::Adam, 0.5)).step(&mut s, 0.1).unwrap();
        assert!((s.get("w").unwrap().data()[0] - 1.9).abs() < 1e-12);
    }

    #[test]
    fn adam_minimises_a_quadratic_bowl() {
        let mut s = store(1.0, 0.0);
        let mut opt = Optimizer::new(OptimizerConfig::new(OptimizerKind::Adam, 0.0));
        for _ in 0..200 {
            let w = s.get("w").unwrap().data()[0];
            s.get_mut("w").unwrap().grad = Some(vec![2.0 * w]);
            opt.step(&mut s, 0.05).unwrap();
        }
        assert!(s.get("w").unwrap().data()[0].abs() < 1e-3, "{}", s.get("w").unwrap().data()[0]);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut s = store(1.0, 0.0);
        s.get_mut("w").unwrap().grad = None;
        assert!(Optimizer::new(OptimizerConfig::new(OptimizerKind::Sgd, 0.0)).step(&mut s, 0.1).is_err());
    }

    #[test]
    fn state_round_trip() {
        let mut s = store(1.0, 0.5);
        let mut opt = Optimizer::new(OptimizerConfig::new(OptimizerKind::Adam, 0.0));
        opt.step(&mut s, 0.1).unwrap();
        let mut other = Optimizer::new(opt.config);
        other.load_state(&opt.state()).unwrap();
        for o in [&mut opt, &mut other] {
            let mut s2 = s.clone();
            s2.get_mut("w").unwrap().grad = Some(vec![0.25]);
            o.step(&mut s2, 0.1).unwrap();
        }
        assert_eq!(opt.state().get("first/w").unwrap(), other.state().get("first/w").unwrap());
        assert_eq!(opt.steps, other.steps);
    }
}
