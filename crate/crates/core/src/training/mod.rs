//! Pair sampling, momentum SGD, and the end-to-end training loop.

mod dataset;
mod optimizer;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use dataset::{sample_batch, sample_identities, IdentityTrack, TrainDataset, TrainSample};
pub use optimizer::{sgd_momentum_step, LrSchedule, OptimizerState};

use crate::error::{Error, Result};
use crate::losses::{iden_loss, make_label_map, npair_loss, sot_loss, total_loss, triplet_loss, LossConfig, MetricLoss};
use crate::network::{
    backbone_forward, embed, identity_logits, instance_roi, response, roi_align, tsa_attention, Bound,
    NetworkConfig, NetworkParams, Task,
};
use crate::patch::CropGeometry;
use crate::tensor::{Tape, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub momentum: f64,
    pub max_frame_gap: u32,
    /// Identities need at least this many visible frames to be used.
    pub min_track_frames: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batches_per_epoch: 200,
            batch_size: 8,
            lr_start: 1e-2,
            lr_end: 1e-4,
            momentum: 0.9,
            max_frame_gap: 50,
            min_track_frames: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("train.batch_size must be ≥ 2".into()));
        }
        if !(self.lr_start > 0.0 && self.lr_end > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("train.momentum must lie in [0, 1)".into()));
        }
        if self.batches_per_epoch == 0 {
            return Err(Error::Config("train.batches_per_epoch must be ≥ 1".into()));
        }
        Ok(())
    }
}

pub struct BatchLoss<'t> {
    pub sot: Var<'t>,
    pub metric: Var<'t>,
    pub iden: Var<'t>,
    pub total: Var<'t>,
}

/// All loss terms for one batch on a single tape.
pub fn batch_loss<'t>(
    cfg: &NetworkConfig,
    loss: &LossConfig,
    p: &Bound<'t>,
    tape: &'t Tape,
    samples: &[TrainSample],
) -> Result<BatchLoss<'t>> {
    let mut sots = Vec::with_capacity(samples.len());
    let mut wz = Vec::with_capacity(samples.len());
    let mut wx = Vec::with_capacity(samples.len());
    let mut lz = Vec::with_capacity(samples.len());
    let mut lx = Vec::with_capacity(samples.len());
    let mut labels = Vec::with_capacity(samples.len());
    let center = cfg.instance_size_train as f64 / 2.0;
    let roi = instance_roi(cfg, (center, center))?;
    let side = cfg.exemplar_feature_side()?;
    let mut label_map = None;
    for s in samples {
        let f_z = backbone_forward(cfg, p, tape.constant(s.exemplar.clone()))?;
        let f_x = backbone_forward(cfg, p, tape.constant(s.instance.clone()))?;
        let v = response(cfg, p, tsa_attention(f_x, Task::Sot, p)?, tsa_attention(f_z, Task::Sot, p)?)?;
        let y = label_map.get_or_insert_with(|| make_label_map(v.side(), v.stride, loss.label_radius));
        sots.push(sot_loss(v.v, y)?);
        let a_z = tsa_attention(f_z, Task::Aff, p)?;
        let a_x = tsa_attention(f_x, Task::Aff, p)?;
        let w_z = embed(a_z)?;
        let w_x = embed(roi_align(a_x, &roi, side)?)?;
        lz.push(identity_logits(w_z, p)?);
        lx.push(identity_logits(w_x, p)?);
        wz.push(w_z);
        wx.push(w_x);
        labels.push(s.identity);
    }
    let sot = tape.stack(&sots)?.mean();
    let metric = match loss.metric {
        MetricLoss::NPair => npair_loss(&wz, &wx)?,
        MetricLoss::Triplet => triplet_loss(&wz, &wx, loss.margin)?,
    };
    let iden = iden_loss(&lz, &lx, &labels)?;
    let total = total_loss(sot, metric, iden, loss)?;
    Ok(BatchLoss {
        sot,
        metric,
        iden,
        total,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub step: usize,
    pub sot: f64,
    pub metric: f64,
    pub iden: f64,
    pub total: f64,
}

pub const LOSS_CSV_HEADER: &str = "epoch,step,L_sot,L_npair,L_iden,L_total";

pub fn loss_csv(log: &[LossRecord]) -> String {
    let mut s = String::from(LOSS_CSV_HEADER);
    s.push('\n');
    for r in log {
        writeln!(s, "{},{},{:.9},{:.9},{:.9},{:.9}", r.epoch, r.step, r.sot, r.metric, r.iden, r.total).unwrap();
    }
    s
}

/// Mean total loss per epoch.
pub fn epoch_means(log: &[LossRecord]) -> Vec<f64> {
    let epochs = log.iter().map(|r| r.epoch).max().map_or(0, |e| e + 1);
    (0..epochs)
        .map(|e| {
            let v: Vec<f64> = log.iter().filter(|r| r.epoch == e).map(|r| r.total).collect();
            v.iter().sum::<f64>() / v.len().max(1) as f64
        })
        .collect()
}

pub struct TrainOutcome {
    pub params: NetworkParams,
    pub log: Vec<LossRecord>,
    pub checkpoints: Vec<PathBuf>,
}

/// Initial parameters for a run, derived from the run seed alone.
pub fn init_params(cfg: &NetworkConfig, seed: u64) -> NetworkParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    NetworkParams::init(cfg, &mut rng)
}

/// One forward/backward pass; returns the loss record values and grads.
pub fn loss_and_grads(
    cfg: &NetworkConfig,
    loss: &LossConfig,
    params: &NetworkParams,
    samples: &[TrainSample],
) -> Result<(LossRecord, std::collections::BTreeMap<String, Vec<f64>>)> {
    let tape = Tape::new();
    let bound = params.bind(&tape, true);
    let l = batch_loss(cfg, loss, &bound, &tape, samples)?;
    let g = tape.backward(l.total)?;
    let rec = LossRecord {
        epoch: 0,
        step: 0,
        sot: l.sot.item(),
        metric: l.metric.item(),
        iden: l.iden.item(),
        total: l.total.item(),
    };
    Ok((rec, bound.grads(&g)))
}

/// Trains from the seed-derived initialization. With a checkpoint directory,
/// `epoch_NNN.uma` is written after every epoch.
pub fn train(
    data: &TrainDataset,
    cfg: &NetworkConfig,
    loss: &LossConfig,
    tc: &TrainConfig,
    geom: &CropGeometry,
    seed: u64,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    loss.validate()?;
    tc.validate()?;
    if data.num_identities() > cfg.num_identities {
        return Err(Error::Config(format!(
            "dataset has {} identities but the identity head has {}",
            data.num_identities(),
            cfg.num_identities
        )));
    }
    let mut params = init_params(cfg, seed);
    let mut state = OptimizerState::new(&params, tc.momentum);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let schedule = LrSchedule {
        lr_start: tc.lr_start,
        lr_end: tc.lr_end,
        total_steps: tc.epochs * tc.batches_per_epoch,
    };
    if let Some(d) = checkpoint_dir {
        fs::create_dir_all(d)?;
    }
    let mut log = Vec::with_capacity(schedule.total_steps);
    let mut checkpoints = Vec::new();
    let mut step = 0;
    for epoch in 0..tc.epochs {
        let t0 = Instant::now();
        for _ in 0..tc.batches_per_epoch {
            let batch = sample_batch(data, cfg, geom, tc.batch_size, tc.max_frame_gap, &mut rng)?;
            let (mut rec, grads) = loss_and_grads(cfg, loss, &params, &batch).map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("epoch {epoch} step {step}: {m}")),
                other => other,
            })?;
            sgd_momentum_step(&mut params, &grads, &mut state, schedule.at(step)).map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("epoch {epoch} step {step}: {m}")),
                other => other,
            })?;
            rec.epoch = epoch;
            rec.step = step;
            log.push(rec);
            step += 1;
        }
        let mean = epoch_means(&log[log.len() - tc.batches_per_epoch..])[epoch];
        log::info!(
            "epoch {epoch}: mean loss {mean:.4}, lr {:.2e}, {:.1}s",
            schedule.at(step.saturating_sub(1)),
            t0.elapsed().as_secs_f64()
        );
        if let Some(d) = checkpoint_dir {
            let path = d.join(format!("epoch_{epoch:03}.uma"));
            params.save(&path)?;
            checkpoints.push(path);
        }
    }
    Ok(TrainOutcome {
        params,
        log,
        checkpoints,
    })
}
