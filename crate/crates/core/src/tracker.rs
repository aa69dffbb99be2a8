//! Online multi-target tracking: per-target SOT with affinity-based occlusion
//! detection, detection refinement, and recovery of occluded identities.

use std::collections::VecDeque;

use crate::association::associate;
use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::mot_io::{DetectionRow, Image, Sequence};
use crate::network::{
    affinity_values, backbone_forward, embed, instance_roi, response, roi_align, tsa_attention, FeatureBox,
    NetworkConfig, NetworkParams, Task,
};
use crate::patch::CropGeometry;
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    /// Affinity threshold for occlusion and for accepting an association.
    pub alpha: f64,
    /// Historic mean-IOU threshold.
    pub beta: f64,
    /// Candidate / refinement IOU threshold.
    pub gamma: f64,
    pub terminate_after: u32,
    pub iou_window: usize,
    pub search_scale: f64,
    /// Tracklet samples per affinity.
    pub k_samples: usize,
    /// A tentative birth is confirmed after `confirm_hits` re-detections
    /// within the next `confirm_window` frames.
    pub confirm_hits: usize,
    pub confirm_window: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            alpha: 0.6,
            beta: 0.5,
            gamma: 0.5,
            terminate_after: 30,
            iou_window: 5,
            search_scale: 4.0,
            k_samples: 5,
            confirm_hits: 2,
            confirm_window: 3,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        // alpha may leave [0, 1]: -1 disables occlusion, +inf disables association
        if self.alpha.is_nan() {
            return Err(Error::Config("tracker.alpha must be a number".into()));
        }
        for (k, v) in [("tracker.beta", self.beta), ("tracker.gamma", self.gamma)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{k} must lie in [0, 1], got {v}")));
            }
        }
        if self.terminate_after < 1 || self.iou_window < 1 || self.k_samples < 1 {
            return Err(Error::Config(
                "tracker.terminate_after, tracker.iou_window and tracker.k_samples must be ≥ 1".into(),
            ));
        }
        if !(self.search_scale > 0.0) {
            return Err(Error::Config("tracker.search_scale must be positive".into()));
        }
        if self.confirm_hits < 1 || self.confirm_hits > self.confirm_window {
            return Err(Error::Config(
                "tracker.confirm_hits must lie in 1..=tracker.confirm_window".into(),
            ));
        }
        Ok(())
    }

    pub fn geometry(&self) -> CropGeometry {
        CropGeometry {
            search_scale: self.search_scale,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Tracked,
    Occluded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackletEntry {
    pub frame: u32,
    pub bbox: BBox,
    pub embedding: Vec<f64>,
}

/// Exemplar-branch outputs cached at birth.
#[derive(Debug, Clone, PartialEq)]
pub struct Exemplar {
    pub sot_features: Tensor,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetState {
    pub id: u64,
    pub status: Status,
    pub exemplar: Exemplar,
    pub bbox: BBox,
    pub tracklet: Vec<TrackletEntry>,
    pub occluded_frames: u32,
    pub iou_history: VecDeque<f64>,
    /// Latest affinity; reported as the row confidence.
    pub affinity: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct Tentative {
    exemplar: Exemplar,
    bbox: BBox,
    seen: usize,
    hits: usize,
    entries: Vec<TrackletEntry>,
}

/// Result of one SOT localization.
#[derive(Debug, Clone, PartialEq)]
pub struct SotResult {
    pub bbox: BBox,
    pub response: Tensor,
    pub peak: (usize, usize),
    /// AFF-attended search features.
    pub aff_features: Tensor,
    /// ROI of the located target on `aff_features`.
    pub roi: FeatureBox,
}

/// Argmax of a response map; ties go to the cell nearest the center, then
/// to the lowest row-major index.
pub fn response_peak(v: &Tensor) -> (usize, usize) {
    let (h, w) = (v.shape()[0], v.shape()[1]);
    let (ch, cw) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut best = (0, 0);
    let mut best_key = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for i in 0..h {
        for j in 0..w {
            let d2 = (i as f64 - ch).powi(2) + (j as f64 - cw).powi(2);
            let key = (v.data()[i * w + j], -d2);
            if key.0 > best_key.0 || (key.0 == best_key.0 && key.1 > best_key.1) {
                best = (i, j);
                best_key = key;
            }
        }
    }
    best
}

/// Backbone on an exemplar crop of `b`: SOT-attended features and the
/// AFF embedding.
pub fn exemplar_features(
    cfg: &NetworkConfig,
    params: &NetworkParams,
    geom: &CropGeometry,
    img: &Image,
    b: &BBox,
    pad: [f64; 3],
) -> Result<Exemplar> {
    let tape = Tape::new();
    let p = params.bind(&tape, false);
    let f_z = backbone_forward(cfg, &p, tape.constant(geom.exemplar(cfg, img, b, pad)))?;
    let sot = tsa_attention(f_z, Task::Sot, &p)?.value();
    let w = embed(tsa_attention(f_z, Task::Aff, &p)?)?.data();
    Ok(Exemplar {
        sot_features: sot,
        embedding: w,
    })
}

/// Localizes a target in a search region centered on its previous box.
/// The box size is carried over.
pub fn sot_locate(
    cfg: &NetworkConfig,
    params: &NetworkParams,
    geom: &CropGeometry,
    exemplar: &Exemplar,
    prev: &BBox,
    img: &Image,
    pad: [f64; 3],
) -> Result<SotResult> {
    let tape = Tape::new();
    let p = params.bind(&tape, false);
    let center = prev.center();
    let x = geom.search(cfg, img, center, prev, pad);
    let f_x = backbone_forward(cfg, &p, tape.constant(x))?;
    let f_z = tape.constant(exemplar.sot_features.clone());
    let v = response(cfg, &p, tsa_attention(f_x, Task::Sot, &p)?, f_z)?;
    let resp = v.v.value();
    let peak = response_peak(&resp);
    let side = resp.shape()[0] as f64;
    let stride = v.stride as f64;
    let dy = (peak.0 as f64 - (side - 1.0) / 2.0) * stride;
    let dx = (peak.1 as f64 - (resp.shape()[1] as f64 - 1.0) / 2.0) * stride;
    let ratio = geom.ratio(cfg, prev);
    let half = cfg.instance_size_track as f64 / 2.0;
    let roi = instance_roi(cfg, (half + dx, half + dy))?;
    Ok(SotResult {
        bbox: BBox {
            x: prev.x + dx * ratio,
            y: prev.y + dy * ratio,
            ..*prev
        },
        response: resp,
        peak,
        aff_features: tsa_attention(f_x, Task::Aff, &p)?.value(),
        roi,
    })
}

/// Embedding of the ROI on AFF-attended features; `None` when the ROI
/// misses the feature grid.
pub fn roi_embedding(cfg: &NetworkConfig, aff_features: &Tensor, roi: &FeatureBox) -> Result<Option<Vec<f64>>> {
    let (h, w) = (aff_features.shape()[0] as f64, aff_features.shape()[1] as f64);
    if roi.x1 <= 0.0 || roi.y1 <= 0.0 || roi.x0 >= w || roi.y0 >= h {
        return Ok(None);
    }
    let tape = Tape::new();
    let f = tape.constant(aff_features.clone());
    let side = cfg.exemplar_feature_side()?;
    Ok(Some(embed(roi_align(f, roi, side)?)?.data()))
}

/// Affinity between the exemplar embedding and the ROI embedding; a ROI
/// off the grid counts as certain occlusion (−1).
pub fn measure_affinity(cfg: &NetworkConfig, aff_features: &Tensor, roi: &FeatureBox, w_z: &[f64]) -> Result<f64> {
    Ok(roi_embedding(cfg, aff_features, roi)?.map_or(-1.0, |w_x| affinity_values(w_z, &w_x)))
}

/// Occluded iff `c < alpha` or the mean of a non-empty IOU history is below
/// `beta`.
pub fn detect_occlusion(c: f64, iou_history: &VecDeque<f64>, cfg: &TrackerConfig) -> Status {
    if c < cfg.alpha {
        return Status::Occluded;
    }
    if !iou_history.is_empty() {
        let mean = iou_history.iter().sum::<f64>() / iou_history.len() as f64;
        if mean < cfg.beta {
            return Status::Occluded;
        }
    }
    Status::Tracked
}

/// Greedy refinement of several track boxes: pairs are taken in descending
/// IOU, each detection used once; a pair at or above `gamma` replaces the
/// track box with the coordinate-wise mean. Returns the refined boxes and
/// the detection used by each.
pub fn refine_bboxes(tracks: &[BBox], dets: &[BBox], gamma: f64) -> (Vec<BBox>, Vec<Option<usize>>) {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(tracks.len() * dets.len());
    for (t, tb) in tracks.iter().enumerate() {
        for (d, db) in dets.iter().enumerate() {
            pairs.push((tb.iou(db), t, d));
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut out = tracks.to_vec();
    let mut used_by: Vec<Option<usize>> = vec![None; tracks.len()];
    let mut det_used = vec![false; dets.len()];
    for (iou, t, d) in pairs {
        if iou < gamma {
            break;
        }
        if used_by[t].is_none() && !det_used[d] {
            used_by[t] = Some(d);
            det_used[d] = true;
            out[t] = tracks[t].average(&dets[d]);
        }
    }
    (out, used_by)
}

pub fn refine_bbox(track: &BBox, dets: &[BBox], gamma: f64) -> BBox {
    refine_bboxes(std::slice::from_ref(track), dets, gamma).0[0]
}

/// Indices of detections whose IOU with every tracked box is below `gamma`.
pub fn candidate_detections(dets: &[BBox], tracked: &[BBox], gamma: f64) -> Vec<usize> {
    (0..dets.len())
        .filter(|&d| tracked.iter().all(|t| t.iou(&dets[d]) < gamma))
        .collect()
}

/// Advances occlusion counters and drops targets occluded for more than
/// `terminate_after` frames or whose box has left the image. Returns the
/// identities terminated.
pub fn manage_trajectories(targets: &mut Vec<TargetState>, cfg: &TrackerConfig, width: f64, height: f64) -> Vec<u64> {
    let mut gone = Vec::new();
    targets.retain_mut(|t| {
        if t.status == Status::Occluded {
            t.occluded_frames += 1;
        }
        let keep = t.occluded_frames <= cfg.terminate_after && !t.bbox.is_outside(width, height);
        if !keep {
            gone.push(t.id);
        }
        keep
    });
    gone
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrackerStats {
    pub association_calls: usize,
    pub recoveries: usize,
    pub confirmed: usize,
    pub terminated: usize,
    pub occlusions: usize,
}

pub struct Tracker<'a> {
    net: &'a NetworkConfig,
    params: &'a NetworkParams,
    cfg: TrackerConfig,
    width: f64,
    height: f64,
    targets: Vec<TargetState>,
    tentatives: Vec<Tentative>,
    next_id: u64,
    last_frame: Option<u32>,
    stats: TrackerStats,
}

impl<'a> Tracker<'a> {
    pub fn new(
        net: &'a NetworkConfig,
        params: &'a NetworkParams,
        cfg: TrackerConfig,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        net.validate()?;
        cfg.validate()?;
        Ok(Tracker {
            net,
            params,
            cfg,
            width: width as f64,
            height: height as f64,
            targets: Vec::new(),
            tentatives: Vec::new(),
            next_id: 1,
            last_frame: None,
            stats: TrackerStats::default(),
        })
    }

    pub fn targets(&self) -> &[TargetState] {
        &self.targets
    }

    pub fn stats(&self) -> TrackerStats {
        self.stats
    }

    /// Processes frame `frame` (1-based, strictly increasing) and returns
    /// one row per tracked target.
    pub fn step_frame(&mut self, frame: u32, img: &Image, dets: &[BBox]) -> Result<Vec<DetectionRow>> {
        if let Some(last) = self.last_frame {
            if frame <= last {
                return Err(Error::contract(format!(
                    "frame {frame} processed after frame {last}; frames must strictly increase"
                )));
            }
        }
        if img.width() as f64 != self.width || img.height() as f64 != self.height {
            return Err(Error::contract(format!(
                "frame {frame} is {}×{}, tracker expects {}×{}",
                img.width(),
                img.height(),
                self.width,
                self.height
            )));
        }
        self.last_frame = Some(frame);
        let geom = self.cfg.geometry();
        let pad = img.mean_color();

        // SOT, affinity, and occlusion test for tracked targets
        let mut located: Vec<(usize, Vec<f64>)> = Vec::new();
        for (ti, t) in self.targets.iter_mut().enumerate() {
            if t.status != Status::Tracked {
                continue;
            }
            let sot = sot_locate(self.net, self.params, &geom, &t.exemplar, &t.bbox, img, pad)?;
            let w_x = roi_embedding(self.net, &sot.aff_features, &sot.roi)?;
            let c = w_x.as_ref().map_or(-1.0, |w| affinity_values(&t.exemplar.embedding, w));
            let near = dets.iter().map(|d| d.iou(&sot.bbox)).fold(0.0, f64::max);
            t.iou_history.push_back(near);
            while t.iou_history.len() > self.cfg.iou_window {
                t.iou_history.pop_front();
            }
            t.affinity = c;
            if sot.bbox.is_outside(self.width, self.height) {
                t.bbox = sot.bbox;
                continue;
            }
            match (detect_occlusion(c, &t.iou_history, &self.cfg), w_x) {
                (Status::Tracked, Some(w)) => {
                    t.bbox = sot.bbox;
                    located.push((ti, w));
                }
                _ => {
                    t.status = Status::Occluded;
                    t.occluded_frames = 0;
                    self.stats.occlusions += 1;
                }
            }
        }

        let tracked_boxes: Vec<BBox> = located.iter().map(|(ti, _)| self.targets[*ti].bbox).collect();
        let (refined, _) = refine_bboxes(&tracked_boxes, dets, self.cfg.gamma);
        for ((ti, w), b) in located.into_iter().zip(&refined) {
            let t = &mut self.targets[ti];
            t.bbox = *b;
            t.tracklet.push(TrackletEntry {
                frame,
                bbox: *b,
                embedding: w,
            });
        }

        let mut candidates = candidate_detections(dets, &refined, self.cfg.gamma);
        let mut cand_exemplars = Vec::with_capacity(candidates.len());
        for &d in &candidates {
            cand_exemplars.push(exemplar_features(self.net, self.params, &geom, img, &dets[d], pad)?);
        }

        // recover occluded identities
        let occluded: Vec<usize> = (0..self.targets.len())
            .filter(|&i| self.targets[i].status == Status::Occluded)
            .collect();
        let mut consumed = vec![false; candidates.len()];
        if !occluded.is_empty() && !candidates.is_empty() {
            self.stats.association_calls += 1;
            let embeddings: Vec<Vec<f64>> = cand_exemplars.iter().map(|e| e.embedding.clone()).collect();
            let tracklets: Vec<Vec<Vec<f64>>> = occluded
                .iter()
                .map(|&i| self.targets[i].tracklet.iter().map(|e| e.embedding.clone()).collect())
                .collect();
            let refs: Vec<&[Vec<f64>]> = tracklets.iter().map(Vec::as_slice).collect();
            let a = associate(&embeddings, &refs, self.cfg.alpha, self.cfg.k_samples)?;
            for (ci, oi) in a.recovered {
                let b = dets[candidates[ci]];
                let t = &mut self.targets[occluded[oi]];
                let c = crate::association::tracklet_affinity(refs[oi], &embeddings[ci], self.cfg.k_samples)?;
                t.status = Status::Tracked;
                t.occluded_frames = 0;
                t.iou_history.clear();
                t.bbox = b;
                t.affinity = c;
                t.tracklet.push(TrackletEntry {
                    frame,
                    bbox: b,
                    embedding: embeddings[ci].clone(),
                });
                consumed[ci] = true;
                self.stats.recoveries += 1;
            }
        }

        // tentative births claim re-detections, leftovers start new ones
        let mut still_tentative = Vec::with_capacity(self.tentatives.len());
        for mut tent in std::mem::take(&mut self.tentatives) {
            tent.seen += 1;
            let best = (0..candidates.len())
                .filter(|&ci| !consumed[ci])
                .map(|ci| (dets[candidates[ci]].iou(&tent.bbox), ci))
                .filter(|&(iou, _)| iou >= self.cfg.gamma)
                .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
            if let Some((_, ci)) = best {
                consumed[ci] = true;
                tent.hits += 1;
                tent.bbox = dets[candidates[ci]];
                tent.entries.push(TrackletEntry {
                    frame,
                    bbox: tent.bbox,
                    embedding: cand_exemplars[ci].embedding.clone(),
                });
            }
            if tent.hits >= self.cfg.confirm_hits {
                self.targets.push(TargetState {
                    id: self.next_id,
                    status: Status::Tracked,
                    exemplar: tent.exemplar,
                    bbox: tent.bbox,
                    tracklet: tent.entries,
                    occluded_frames: 0,
                    iou_history: VecDeque::new(),
                    affinity: 1.0,
                });
                self.next_id += 1;
                self.stats.confirmed += 1;
            } else if tent.seen < self.cfg.confirm_window {
                still_tentative.push(tent);
            }
        }
        for (ci, ex) in cand_exemplars.into_iter().enumerate() {
            if consumed[ci] {
                continue;
            }
            let b = dets[candidates[ci]];
            let embedding = ex.embedding.clone();
            still_tentative.push(Tentative {
                exemplar: ex,
                bbox: b,
                seen: 0,
                hits: 0,
                entries: vec![TrackletEntry { frame, bbox: b, embedding }],
            });
        }
        candidates.clear();
        self.tentatives = still_tentative;

        self.stats.terminated += manage_trajectories(&mut self.targets, &self.cfg, self.width, self.height).len();

        let mut rows: Vec<DetectionRow> = self
            .targets
            .iter()
            .filter(|t| t.status == Status::Tracked)
            .map(|t| DetectionRow::new(frame, t.id as i64, t.bbox, t.affinity))
            .collect();
        rows.sort_by_key(|r| r.id);
        Ok(rows)
    }
}

/// Runs the tracker over every frame of a loaded sequence with its public
/// detections.
pub fn track_sequence(
    net: &NetworkConfig,
    params: &NetworkParams,
    cfg: &TrackerConfig,
    seq: &Sequence,
) -> Result<(Vec<DetectionRow>, TrackerStats)> {
    let mut tracker = Tracker::new(net, params, cfg.clone(), seq.meta.width, seq.meta.height)?;
    let mut rows = Vec::new();
    for k in 1..=seq.frames.len() as u32 {
        let dets: Vec<BBox> = seq.det_in_frame(k).iter().map(|r| r.bbox).collect();
        rows.extend(tracker.step_frame(k, seq.frame(k), &dets)?);
    }
    Ok((rows, tracker.stats()))
}

fn id_color(id: i64) -> [u8; 3] {
    const PALETTE: [[u8; 3]; 8] = [
        [230, 25, 75],
        [60, 180, 75],
        [255, 225, 25],
        [0, 130, 200],
        [245, 130, 48],
        [145, 30, 180],
        [70, 240, 240],
        [240, 50, 230],
    ];
    PALETTE[id.rem_euclid(PALETTE.len() as i64) as usize]
}

/// Frame copy with each row's box and identity drawn on it.
pub fn overlay(img: &Image, rows: &[DetectionRow]) -> Image {
    let mut out = img.clone();
    for r in rows {
        let c = id_color(r.id);
        out.draw_rect(&r.bbox, c);
        out.draw_label(r.bbox.x.round() as i64 + 2, r.bbox.y.round() as i64 + 2, r.id.max(0) as u64, c);
    }
    out
}
