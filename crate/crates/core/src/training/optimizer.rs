use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::network::NetworkParams;

/// Geometric learning-rate decay from `lr_start` to `lr_end` across
/// `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub lr_start: f64,
    pub lr_end: f64,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn at(&self, step: usize) -> f64 {
        if self.total_steps <= 1 {
            return self.lr_start;
        }
        let t = step.min(self.total_steps - 1) as f64 / (self.total_steps - 1) as f64;
        self.lr_start * (self.lr_end / self.lr_start).powf(t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub momentum: f64,
    pub velocity: BTreeMap<String, Vec<f64>>,
}

impl OptimizerState {
    pub fn new(params: &NetworkParams, momentum: f64) -> Self {
        OptimizerState {
            momentum,
            velocity: params
                .tensors()
                .iter()
                .map(|(k, t)| (k.clone(), vec![0.0; t.numel()]))
                .collect(),
        }
    }
}

/// `v ← μv − lr·g; p ← p + v` for every parameter. Nothing is modified if
/// any gradient is non-finite.
pub fn sgd_momentum_step(
    params: &mut NetworkParams,
    grads: &BTreeMap<String, Vec<f64>>,
    state: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    for (name, g) in grads {
        let p = params
            .get(name)
            .ok_or_else(|| Error::contract(format!("gradient for unknown parameter {name}")))?;
        if g.len() != p.numel() {
            return Err(Error::Shape {
                op: "sgd_momentum_step",
                left: p.shape().to_vec(),
                right: vec![g.len()],
            });
        }
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {name}[{i}] = {}", g[i])));
        }
    }
    let mu = state.momentum;
    for (name, g) in grads {
        let v = state
            .velocity
            .get_mut(name)
            .ok_or_else(|| Error::contract(format!("no velocity buffer for {name}")))?;
        let p = params.get_mut(name).expect("checked above").data_mut();
        for ((pi, vi), gi) in p.iter_mut().zip(v.iter_mut()).zip(g) {
            *vi = mu * *vi - lr * gi;
            *pi += *vi;
        }
    }
    Ok(())
}
