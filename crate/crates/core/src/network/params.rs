use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::{LayerSpec, NetworkConfig};
use crate::error::{Error, Result};
use crate::tensor::{load_checkpoint, save_checkpoint, Gradients, Tape, Tensor, Var};

pub const XCORR_BIAS: &str = "xcorr.bias";

pub fn conv_weight_name(i: usize) -> String {
    format!("backbone.conv{i}.weight")
}

pub fn conv_bias_name(i: usize) -> String {
    format!("backbone.conv{i}.bias")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Sot,
    Aff,
}

impl Task {
    fn prefix(self) -> &'static str {
        match self {
            Task::Sot => "tsa.sot",
            Task::Aff => "tsa.aff",
        }
    }

    pub fn w1(self) -> String {
        format!("{}.w1", self.prefix())
    }

    pub fn w2(self) -> String {
        format!("{}.w2", self.prefix())
    }
}

/// Expected name → shape table for a configuration.
pub fn param_shapes(cfg: &NetworkConfig) -> BTreeMap<String, Vec<usize>> {
    let mut m = BTreeMap::new();
    let mut cin = 3;
    let mut conv = 0;
    for layer in &cfg.backbone {
        if let LayerSpec::Conv { kernel, channels, .. } = *layer {
            m.insert(conv_weight_name(conv), vec![kernel, kernel, cin, channels]);
            m.insert(conv_bias_name(conv), vec![channels]);
            cin = channels;
            conv += 1;
        }
    }
    let c = cfg.embed_dim();
    let r = cfg.tsa_hidden();
    m.insert(XCORR_BIAS.to_string(), vec![1]);
    for task in [Task::Sot, Task::Aff] {
        m.insert(task.w1(), vec![r, c]);
        m.insert(task.w2(), vec![c, r]);
    }
    m.insert("iden.fc1.weight".into(), vec![cfg.id_hidden, c]);
    m.insert("iden.fc1.bias".into(), vec![cfg.id_hidden]);
    m.insert("iden.fc2.weight".into(), vec![cfg.num_identities, cfg.id_hidden]);
    m.insert("iden.fc2.bias".into(), vec![cfg.num_identities]);
    m
}

/// All learnable tensors keyed by layer name.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    tensors: BTreeMap<String, Tensor>,
}

impl NetworkParams {
    /// He (fan-in) normal initialization for weights; zero biases.
    pub fn init<R: Rng>(cfg: &NetworkConfig, rng: &mut R) -> Self {
        let mut tensors = BTreeMap::new();
        for (name, shape) in param_shapes(cfg) {
            let n: usize = shape.iter().product();
            let data = if name.ends_with("bias") {
                vec![0.0; n]
            } else {
                // conv: k·k·cin; affine: din (last axis)
                let fan_in = if shape.len() == 4 {
                    shape[0] * shape[1] * shape[2]
                } else {
                    shape[1]
                };
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                (0..n).map(|_| normal.sample(rng)).collect()
            };
            tensors.insert(name, Tensor::new(&shape, data).expect("shape table"));
        }
        NetworkParams { tensors }
    }

    /// Wraps a tensor map after checking it against the configuration.
    pub fn from_tensors(cfg: &NetworkConfig, tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        let expected = param_shapes(cfg);
        let mut problems = Vec::new();
        for (name, shape) in &expected {
            match tensors.get(name) {
                None => problems.push(format!("{name}: missing (expected {shape:?})")),
                Some(t) if t.shape() != shape.as_slice() => {
                    problems.push(format!("{name}: shape {:?}, expected {shape:?}", t.shape()))
                }
                _ => {}
            }
        }
        for name in tensors.keys().filter(|n| !expected.contains_key(*n)) {
            problems.push(format!("{name}: unexpected tensor"));
        }
        if !problems.is_empty() {
            return Err(Error::Checkpoint(format!(
                "checkpoint incompatible with configuration:\n  {}",
                problems.join("\n  ")
            )));
        }
        Ok(NetworkParams { tensors })
    }

    pub fn load(cfg: &NetworkConfig, path: impl AsRef<Path>) -> Result<Self> {
        Self::from_tensors(cfg, load_checkpoint(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_checkpoint(path, &self.tensors)
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Records every tensor on `tape`, as a differentiable leaf when
    /// `trainable`, otherwise as a constant.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> Bound<'t> {
        let vars = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let v = if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                };
                (name.clone(), v)
            })
            .collect();
        Bound { vars }
    }
}

/// Parameters recorded on one tape.
pub struct Bound<'t> {
    vars: BTreeMap<String, Var<'t>>,
}

impl<'t> Bound<'t> {
    /// Pairs already-recorded vars with parameter names in sorted-name
    /// order (the order of [`NetworkParams::tensors`]).
    pub fn from_vars(params: &NetworkParams, vars: &[Var<'t>]) -> Result<Self> {
        if vars.len() != params.tensors.len() {
            return Err(Error::contract(format!(
                "{} vars for {} parameters",
                vars.len(),
                params.tensors.len()
            )));
        }
        Ok(Bound {
            vars: params.tensors.keys().cloned().zip(vars.iter().copied()).collect(),
        })
    }

    pub fn var(&self, name: &str) -> Result<Var<'t>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::contract(format!("no parameter named `{name}`")))
    }

    /// Gradient buffers per parameter; parameters the loss never reached
    /// get zeros.
    pub fn grads(&self, g: &Gradients) -> BTreeMap<String, Vec<f64>> {
        self.vars
            .iter()
            .map(|(name, v)| {
                let buf = g.get(*v).map_or_else(|| vec![0.0; v.numel()], <[f64]>::to_vec);
                (name.clone(), buf)
            })
            .collect()
    }
}
