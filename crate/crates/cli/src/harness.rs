//! Synthetic experiments shared by `verify e2e` and the acceptance tests:
//! the toy training set, held-out affinity separation, and the staged
//! occlusion sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use uma_core::losses::LossConfig;
use uma_core::metrics::{evaluate, MetricsReport};
use uma_core::mot_io::{
    eval_gt, DetectionRow, OcclusionEvent, RandomIdentities, Sequence, SyntheticSpec,
};
use uma_core::network::{affinity_values, NetworkConfig, NetworkParams};
use uma_core::patch::CropGeometry;
use uma_core::tracker::{exemplar_features, roi_embedding, track_sequence, TrackerConfig, TrackerStats};
use uma_core::training::{loss_and_grads, sample_batch, TrainDataset};
use uma_core::Result;

pub const SCENE_W: usize = 320;
pub const SCENE_H: usize = 240;

/// 20 bouncing identities over 200 frames; identity looks are keyed by
/// `seed`.
pub fn training_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec::empty("train", SCENE_W, SCENE_H, 200, seed).with_random_identities(&RandomIdentities {
        count: 20,
        ..Default::default()
    })
}

/// Same identity looks as [`training_spec`], new motion, background and
/// noise.
pub fn heldout_spec(seed: u64) -> SyntheticSpec {
    let mut s = SyntheticSpec::empty("heldout", SCENE_W, SCENE_H, 200, seed ^ 0x5eed_0001).with_random_identities(
        &RandomIdentities {
            count: 20,
            ..Default::default()
        },
    );
    s.appearance_seed = seed;
    s
}

pub const OCCLUDED_ID: u32 = 2;
pub const OCCLUSION_START: u32 = 40;
pub const OCCLUSION_FRAMES: u32 = 10;

/// Four training-set looks in a new 100-frame scene; identity 2 vanishes
/// for 10 frames. Detections carry jitter, drops and false positives.
pub fn occlusion_spec(seed: u64) -> SyntheticSpec {
    let mut s = SyntheticSpec::empty("occlusion", SCENE_W, SCENE_H, 100, seed ^ 0x0cc1_0002).with_random_identities(
        &RandomIdentities {
            count: 4,
            ..Default::default()
        },
    );
    s.appearance_seed = seed;
    s.occlusions.push(OcclusionEvent {
        id: OCCLUDED_ID,
        start: OCCLUSION_START,
        duration: OCCLUSION_FRAMES,
    });
    s.det_jitter = 1.0;
    s.drop_prob = 0.02;
    s.fp_rate = 0.3;
    s
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Separation {
    pub same: f64,
    pub different: f64,
    pub same_pairs: usize,
    pub different_pairs: usize,
}

impl Separation {
    pub fn gap(&self) -> f64 {
        self.same - self.different
    }
}

/// Mean exemplar-vs-instance affinity over same-identity and
/// different-identity pairs, embedded exactly as the tracker does. Each
/// identity contributes `per_identity` exemplar/instance frame pairs spaced
/// through its track.
pub fn affinity_separation(
    cfg: &NetworkConfig,
    params: &NetworkParams,
    geom: &CropGeometry,
    seq: &Sequence,
    per_identity: usize,
) -> Result<Separation> {
    let data = TrainDataset::from_sequences(vec![seq.clone()], 2);
    let roi = uma_core::network::instance_roi(
        cfg,
        (cfg.instance_size_train as f64 / 2.0, cfg.instance_size_train as f64 / 2.0),
    )?;
    let mut z = Vec::new();
    let mut x = Vec::new();
    for (id, track) in data.tracks.iter().enumerate() {
        let n = track.boxes.len();
        for k in 0..per_identity {
            let a = k * (n - 1) / per_identity;
            let b = (a + (n / (2 * per_identity)).max(1)).min(n - 1);
            let s = data.make_sample(cfg, geom, id, a, b);
            let (fz, bz) = track.boxes[a];
            let img = &seq.frames[fz as usize - 1];
            z.push((id, exemplar_features(cfg, params, geom, img, &bz, img.mean_color())?.embedding));
            let tape = uma_core::tensor::Tape::new();
            let p = params.bind(&tape, false);
            let f = uma_core::network::backbone_forward(cfg, &p, tape.constant(s.instance))?;
            let aff = uma_core::network::tsa_attention(f, uma_core::network::Task::Aff, &p)?.value();
            let w = roi_embedding(cfg, &aff, &roi)?.expect("centered ROI lies on the grid");
            x.push((id, w));
        }
    }
    let mut sep = Separation {
        same: 0.0,
        different: 0.0,
        same_pairs: 0,
        different_pairs: 0,
    };
    for (i, (zi, wz)) in z.iter().enumerate() {
        for (j, (xj, wx)) in x.iter().enumerate() {
            let c = affinity_values(wz, wx);
            if zi == xj {
                if i == j {
                    sep.same += c;
                    sep.same_pairs += 1;
                }
            } else if i % per_identity == j % per_identity {
                sep.different += c;
                sep.different_pairs += 1;
            }
        }
    }
    sep.same /= sep.same_pairs.max(1) as f64;
    sep.different /= sep.different_pairs.max(1) as f64;
    Ok(sep)
}

/// Mean total loss over `batches` fixed batches drawn with `seed`.
pub fn frozen_batch_loss(
    cfg: &NetworkConfig,
    loss: &LossConfig,
    params: &NetworkParams,
    data: &TrainDataset,
    geom: &CropGeometry,
    batch_size: usize,
    batches: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    for _ in 0..batches {
        let b = sample_batch(data, cfg, geom, batch_size, 50, &mut rng)?;
        sum += loss_and_grads(cfg, loss, params, &b)?.0.total;
    }
    Ok(sum / batches as f64)
}

#[derive(Debug, Clone)]
pub struct TrackRun {
    pub rows: Vec<DetectionRow>,
    pub report: MetricsReport,
    pub stats: TrackerStats,
    /// Hypothesis ids matched to the occluded target before and after the
    /// occlusion.
    pub ids_before: Vec<i64>,
    pub ids_after: Vec<i64>,
    /// Identity switches counted on the occluded target alone.
    pub target_ids_switches: usize,
}

impl TrackRun {
    pub fn recovered(&self) -> bool {
        self.ids_before.len() == 1 && self.ids_after == self.ids_before && self.target_ids_switches == 0
    }
}

/// Tracks `seq` and evaluates it, following gt identity `target` through the
/// per-frame best-IOU hypothesis.
pub fn run_tracking(
    cfg: &NetworkConfig,
    params: &NetworkParams,
    tc: &TrackerConfig,
    seq: &Sequence,
    target: i64,
    occlusion_start: u32,
    iou: f64,
) -> Result<TrackRun> {
    let (rows, stats) = track_sequence(cfg, params, tc, seq)?;
    let gt = eval_gt(&seq.gt);
    let report = evaluate(&seq.meta.name, &gt, &rows, iou)?;
    let mut before = Vec::new();
    let mut after = Vec::new();
    let mut switches = 0;
    let mut last: Option<i64> = None;
    for g in gt.iter().filter(|r| r.id == target) {
        let best = rows
            .iter()
            .filter(|h| h.frame == g.frame)
            .map(|h| (h.bbox.iou(&g.bbox), h.id))
            .filter(|&(v, _)| v >= iou)
            .max_by(|a, b| a.0.total_cmp(&b.0));
        if let Some((_, id)) = best {
            if last.is_some_and(|l| l != id) {
                switches += 1;
            }
            last = Some(id);
            let set = if g.frame < occlusion_start { &mut before } else { &mut after };
            if !set.contains(&id) {
                set.push(id);
            }
        }
    }
    Ok(TrackRun {
        rows,
        report,
        stats,
        ids_before: before,
        ids_after: after,
        target_ids_switches: switches,
    })
}
