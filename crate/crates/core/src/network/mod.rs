//! The triplet network: shared backbone, task-specific channel attention,
//! correlation head for tracking, embedding and identity heads for affinity.
//!
//! Everything here is a pure function of its inputs and the parameters bound
//! on a tape.

mod config;
mod params;

pub use config::{format_backbone, parse_backbone, LayerSpec, NetworkConfig};
pub use params::{conv_bias_name, conv_weight_name, param_shapes, Bound, NetworkParams, Task, XCORR_BIAS};

use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

/// Continuous rectangle in feature coordinates; cell `(r, c)` covers
/// `[c, c+1) × [r, r+1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl FeatureBox {
    pub fn centered(cx: f64, cy: f64, side: f64) -> Self {
        FeatureBox {
            x0: cx - side / 2.0,
            y0: cy - side / 2.0,
            x1: cx + side / 2.0,
            y1: cy + side / 2.0,
        }
    }
}

/// Correlation scores over instance positions, `Hv×Wv`.
pub struct ResponseMap<'t> {
    pub v: Var<'t>,
    pub stride: usize,
}

impl ResponseMap<'_> {
    pub fn side(&self) -> usize {
        self.v.shape()[0]
    }
}

pub fn backbone_forward<'t>(cfg: &NetworkConfig, p: &Bound<'t>, patch: Var<'t>) -> Result<Var<'t>> {
    let s = patch.shape();
    let sizes = [cfg.exemplar_size, cfg.instance_size_train, cfg.instance_size_track];
    if s.len() != 3 || s[0] != s[1] || s[2] != 3 || !sizes.contains(&s[0]) {
        return Err(Error::Shape {
            op: "backbone",
            left: s,
            right: sizes.to_vec(),
        });
    }
    let n_conv = cfg
        .backbone
        .iter()
        .filter(|l| matches!(l, LayerSpec::Conv { .. }))
        .count();
    let mut x = patch;
    let mut conv = 0;
    for layer in &cfg.backbone {
        match *layer {
            LayerSpec::Conv { stride, .. } => {
                let w = p.var(&conv_weight_name(conv))?;
                let b = p.var(&conv_bias_name(conv))?;
                x = x.conv2d(w, b, stride)?;
                conv += 1;
                if conv < n_conv {
                    x = x.relu();
                }
            }
            LayerSpec::Pool { window, stride } => x = x.max_pool2d(window, stride)?,
        }
    }
    Ok(x)
}

/// Slides `f_z` over `f_x` as one kernel summing all channels, then adds `b`.
pub fn cross_correlation<'t>(f_x: Var<'t>, f_z: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    let (xs, zs) = (f_x.shape(), f_z.shape());
    if xs.len() != 3 || zs.len() != 3 || xs[2] != zs[2] || zs[0] != zs[1] {
        return Err(Error::Shape {
            op: "cross_correlation",
            left: xs,
            right: zs,
        });
    }
    if zs[0] > xs[0] || zs[0] > xs[1] {
        return Err(Error::dim(
            "cross_correlation",
            format!("exemplar feature {zs:?} larger than instance feature {xs:?}"),
        ));
    }
    let kernel = f_z.reshape(&[zs[0], zs[1], zs[2], 1])?;
    let zero = f_x.tape().constant(Tensor::zeros(&[1]));
    let v = f_x.conv2d(kernel, zero, 1)?;
    let side = (xs[0] - zs[0] + 1, xs[1] - zs[1] + 1);
    v.reshape(&[side.0, side.1])?.add_scalar(b)
}

/// Tracking response `scale · (f_x ∗ f_z) + b` on SOT-attended features.
pub fn response<'t>(
    cfg: &NetworkConfig,
    p: &Bound<'t>,
    f_x_sot: Var<'t>,
    f_z_sot: Var<'t>,
) -> Result<ResponseMap<'t>> {
    let zero = f_x_sot.tape().constant(Tensor::scalar(0.0));
    let raw = cross_correlation(f_x_sot, f_z_sot, zero)?;
    let b = p.var(XCORR_BIAS)?;
    let v = raw.scale(cfg.response_scale).add_scalar(b)?;
    Ok(ResponseMap {
        v,
        stride: cfg.total_stride(),
    })
}

/// Squeeze-excitation gating: `a = σ(W₂·relu(W₁·GAP(f)))`, channel `l`
/// scaled by `a_l`.
pub fn tsa_attention<'t>(f: Var<'t>, task: Task, p: &Bound<'t>) -> Result<Var<'t>> {
    let gates = tsa_gates(f, task, p)?;
    f.scale_channels(gates)
}

pub fn tsa_gates<'t>(f: Var<'t>, task: Task, p: &Bound<'t>) -> Result<Var<'t>> {
    let s = f.global_avg_pool()?;
    let h = s.linear(p.var(&task.w1())?, None)?.relu();
    Ok(h.linear(p.var(&task.w2())?, None)?.sigmoid())
}

pub fn roi_align<'t>(f: Var<'t>, b: &FeatureBox, out_side: usize) -> Result<Var<'t>> {
    f.roi_align(b.x0, b.y0, b.x1, b.y1, out_side)
}

/// ROI of exemplar-feature size centered on a patch pixel position.
pub fn instance_roi(cfg: &NetworkConfig, center_px: (f64, f64)) -> Result<FeatureBox> {
    let side = cfg.exemplar_feature_side()? as f64;
    Ok(FeatureBox::centered(
        cfg.feature_coord(center_px.0),
        cfg.feature_coord(center_px.1),
        side,
    ))
}

/// GAP followed by L2 normalization.
pub fn embed(f_aligned: Var<'_>) -> Result<Var<'_>> {
    f_aligned.global_avg_pool()?.l2_normalize()
}

pub fn identity_logits<'t>(w: Var<'t>, p: &Bound<'t>) -> Result<Var<'t>> {
    let h = w
        .fully_connected(p.var("iden.fc1.weight")?, p.var("iden.fc1.bias")?)?
        .relu();
    h.fully_connected(p.var("iden.fc2.weight")?, p.var("iden.fc2.bias")?)
}

pub fn affinity<'t>(w_a: Var<'t>, w_b: Var<'t>) -> Result<Var<'t>> {
    w_a.dot(w_b)
}

/// Affinity of two plain embedding vectors.
pub fn affinity_values(w_a: &[f64], w_b: &[f64]) -> f64 {
    w_a.iter().zip(w_b).map(|(a, b)| a * b).sum()
}
