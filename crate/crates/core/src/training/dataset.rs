use rand::seq::index;
use rand::Rng;

use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::mot_io::Sequence;
use crate::network::NetworkConfig;
use crate::patch::CropGeometry;
use crate::tensor::Tensor;

/// Every visible frame of one ground-truth identity.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityTrack {
    pub sequence: usize,
    pub gt_id: i64,
    /// `(frame, box)`, ascending by frame.
    pub boxes: Vec<(u32, BBox)>,
}

/// Identity-annotated sequences; identity labels are indices into `tracks`.
pub struct TrainDataset {
    pub sequences: Vec<Sequence>,
    pub tracks: Vec<IdentityTrack>,
    /// Per-sequence, per-frame mean color used to pad crops.
    means: Vec<Vec<[f64; 3]>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub exemplar: Tensor,
    pub instance: Tensor,
    pub identity: usize,
    pub frame_gap: i64,
}

impl TrainDataset {
    /// Identities with fewer than `min_frames` visible frames are skipped.
    pub fn from_sequences(sequences: Vec<Sequence>, min_frames: usize) -> Self {
        let mut tracks = Vec::new();
        for (si, seq) in sequences.iter().enumerate() {
            let mut ids: Vec<i64> = seq.gt.iter().filter(|r| r.confidence != 0.0).map(|r| r.id).collect();
            ids.sort_unstable();
            ids.dedup();
            for id in ids {
                let mut boxes: Vec<(u32, BBox)> = seq
                    .gt
                    .iter()
                    .filter(|r| r.id == id && r.confidence != 0.0)
                    .map(|r| (r.frame, r.bbox))
                    .collect();
                boxes.sort_by_key(|b| b.0);
                if boxes.len() >= min_frames.max(1) {
                    tracks.push(IdentityTrack {
                        sequence: si,
                        gt_id: id,
                        boxes,
                    });
                }
            }
        }
        let means = sequences
            .iter()
            .map(|s| s.frames.iter().map(|f| f.mean_color()).collect())
            .collect();
        TrainDataset {
            sequences,
            tracks,
            means,
        }
    }

    pub fn num_identities(&self) -> usize {
        self.tracks.len()
    }

    /// Crops the exemplar/instance pair for identity `identity` between two
    /// of its entries.
    pub fn make_sample(
        &self,
        cfg: &NetworkConfig,
        geom: &CropGeometry,
        identity: usize,
        z_entry: usize,
        x_entry: usize,
    ) -> TrainSample {
        let t = &self.tracks[identity];
        let seq = &self.sequences[t.sequence];
        let (fz, bz) = t.boxes[z_entry];
        let (fx, bx) = t.boxes[x_entry];
        let means = &self.means[t.sequence];
        TrainSample {
            exemplar: geom.exemplar(cfg, seq.frame(fz), &bz, means[fz as usize - 1]),
            instance: geom.train_instance(cfg, seq.frame(fx), &bx, means[fx as usize - 1]),
            identity,
            frame_gap: fx as i64 - fz as i64,
        }
    }
}

/// `n` distinct identities out of `num`, uniformly.
pub fn sample_identities<R: Rng>(num: usize, n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if num < n {
        return Err(Error::contract(format!(
            "batch of {n} distinct identities requested from {num}"
        )));
    }
    Ok(index::sample(rng, num, n).into_vec())
}

/// `n` pairs with pairwise-distinct identities; each positive lies within
/// `max_gap` frames of its exemplar and differs from it when possible.
pub fn sample_batch<R: Rng>(
    data: &TrainDataset,
    cfg: &NetworkConfig,
    geom: &CropGeometry,
    n: usize,
    max_gap: u32,
    rng: &mut R,
) -> Result<Vec<TrainSample>> {
    let ids = sample_identities(data.num_identities(), n, rng)?;
    let mut out = Vec::with_capacity(n);
    for id in ids {
        let boxes = &data.tracks[id].boxes;
        let z = rng.random_range(0..boxes.len());
        let fz = boxes[z].0;
        let near: Vec<usize> = (0..boxes.len())
            .filter(|&k| k != z && boxes[k].0.abs_diff(fz) <= max_gap)
            .collect();
        let x = if near.is_empty() {
            z
        } else {
            near[rng.random_range(0..near.len())]
        };
        out.push(data.make_sample(cfg, geom, id, z, x));
    }
    Ok(out)
}
