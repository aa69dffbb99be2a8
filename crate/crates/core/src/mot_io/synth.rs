use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::det::DetectionRow;
use super::image::Image;
use super::seqinfo::SequenceMeta;
use super::Sequence;
use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::kv::{parse_list, parse_value, KvFile};

// rng streams derived from the two seeds
const STREAM_MOTION: u64 = 1;
const STREAM_BACKGROUND: u64 = 2;
const STREAM_DETECTIONS: u64 = 3;
const STREAM_NOISE: u64 = 4;
const TEXTURE_CELLS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct IdentitySpec {
    /// Center at the first frame of the identity's life.
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    /// Pixels per frame.
    pub vx: f64,
    pub vy: f64,
    pub jitter_amp: f64,
    pub jitter_period: f64,
    pub jitter_phase: f64,
    /// Reflect off the image border instead of leaving the view.
    pub bounce: bool,
    pub first_frame: u32,
    /// Inclusive; `None` lives to the end of the sequence.
    pub last_frame: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OcclusionEvent {
    /// 1-based identity.
    pub id: u32,
    pub start: u32,
    pub duration: u32,
}

impl OcclusionEvent {
    pub fn covers(&self, id: u32, frame: u32) -> bool {
        self.id == id && frame >= self.start && frame < self.start + self.duration
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub frames: u32,
    pub frame_rate: f64,
    pub identities: Vec<IdentitySpec>,
    pub occlusions: Vec<OcclusionEvent>,
    /// Std-dev of detection center jitter in pixels.
    pub det_jitter: f64,
    pub drop_prob: f64,
    /// Expected false positives per frame.
    pub fp_rate: f64,
    /// Amplitude of per-frame background pixel noise.
    pub frame_noise: f64,
    pub seed: u64,
    /// Identity `i` looks the same in every sequence sharing this seed.
    pub appearance_seed: u64,
}

/// Knobs for randomly drawn identities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomIdentities {
    pub count: usize,
    pub min_size: f64,
    pub max_size: f64,
    pub max_speed: f64,
    pub jitter_amp: f64,
}

impl Default for RandomIdentities {
    fn default() -> Self {
        RandomIdentities {
            count: 4,
            min_size: 24.0,
            max_size: 40.0,
            max_speed: 2.0,
            jitter_amp: 2.0,
        }
    }
}

impl SyntheticSpec {
    pub fn empty(name: &str, width: usize, height: usize, frames: u32, seed: u64) -> Self {
        SyntheticSpec {
            name: name.to_string(),
            width,
            height,
            frames,
            frame_rate: 30.0,
            identities: Vec::new(),
            occlusions: Vec::new(),
            det_jitter: 0.0,
            drop_prob: 0.0,
            fp_rate: 0.0,
            frame_noise: 6.0,
            seed,
            appearance_seed: seed,
        }
    }

    /// Adds `r.count` bouncing identities drawn from the motion stream.
    pub fn with_random_identities(mut self, r: &RandomIdentities) -> Self {
        let mut rng = stream(self.seed, STREAM_MOTION);
        for _ in 0..r.count {
            let w = rng.random_range(r.min_size..=r.max_size);
            let h = (w * rng.random_range(1.0..1.6)).min(self.height as f64 * 0.8);
            let speed = rng.random_range(0.0..=r.max_speed);
            let dir = rng.random_range(0.0..2.0 * PI);
            self.identities.push(IdentitySpec {
                cx: rng.random_range(w / 2.0..self.width as f64 - w / 2.0),
                cy: rng.random_range(h / 2.0..self.height as f64 - h / 2.0),
                w,
                h,
                vx: speed * dir.cos(),
                vy: speed * dir.sin(),
                jitter_amp: r.jitter_amp,
                jitter_period: rng.random_range(20.0..60.0),
                jitter_phase: rng.random_range(0.0..2.0 * PI),
                bounce: true,
                first_frame: 1,
                last_frame: None,
            });
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.width < 8 || self.height < 8 || self.frames == 0 {
            return bad("width/height must be ≥ 8 and frames ≥ 1".into());
        }
        for (k, p) in [("drop_prob", self.drop_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{k} must lie in [0, 1], got {p}"));
            }
        }
        if !(self.fp_rate >= 0.0 && self.det_jitter >= 0.0 && self.frame_noise >= 0.0) {
            return bad("fp_rate, det_jitter and frame_noise must be non-negative".into());
        }
        for (i, t) in self.identities.iter().enumerate() {
            if !(t.w > 0.0 && t.h > 0.0) || t.first_frame < 1 || t.first_frame > self.frames {
                return bad(format!("target {} has invalid size or first frame", i + 1));
            }
            if !(t.jitter_period > 0.0) {
                return bad(format!("target {} jitter period must be positive", i + 1));
            }
        }
        for o in &self.occlusions {
            if o.id == 0 || o.id as usize > self.identities.len() {
                return bad(format!("occlusion names unknown identity {}", o.id));
            }
            if o.start < 1 || o.duration == 0 || o.start + o.duration - 1 > self.frames {
                return bad(format!(
                    "occlusion of id {} at {}+{} exceeds the sequence",
                    o.id, o.start, o.duration
                ));
            }
        }
        Ok(())
    }

    /// Unclipped box of identity `idx` (0-based) at `frame`, if alive.
    pub fn raw_box(&self, idx: usize, frame: u32) -> Option<BBox> {
        let t = &self.identities[idx];
        if frame < t.first_frame || t.last_frame.is_some_and(|l| frame > l) {
            return None;
        }
        let s = (frame - t.first_frame) as f64;
        let ph = 2.0 * PI * s / t.jitter_period + t.jitter_phase;
        let mut cx = t.cx + t.vx * s + t.jitter_amp * ph.sin();
        let mut cy = t.cy + t.vy * s + t.jitter_amp * ph.cos();
        if t.bounce {
            cx = reflect(cx, t.w / 2.0, self.width as f64 - t.w / 2.0);
            cy = reflect(cy, t.h / 2.0, self.height as f64 - t.h / 2.0);
        }
        Some(BBox::from_center(cx, cy, t.w, t.h))
    }

    /// Ground-truth box: clipped to the image; `None` when dead, occluded,
    /// or less than a quarter of it remains visible.
    pub fn gt_box(&self, idx: usize, frame: u32) -> Option<BBox> {
        let id = idx as u32 + 1;
        if self.occlusions.iter().any(|o| o.covers(id, frame)) {
            return None;
        }
        let raw = self.raw_box(idx, frame)?;
        let clipped = raw.clip(self.width as f64, self.height as f64)?;
        (clipped.area() >= 0.25 * raw.area()).then_some(clipped)
    }

    pub fn meta(&self) -> SequenceMeta {
        SequenceMeta {
            name: self.name.clone(),
            width: self.width,
            height: self.height,
            length: self.frames as usize,
            frame_rate: self.frame_rate,
            im_dir: "img1".into(),
            im_ext: ".ppm".into(),
        }
    }

    /// Reads a spec file. Keys: `name width height frames frame_rate seed
    /// appearance_seed det_jitter drop_prob fp_rate frame_noise`, random
    /// identities via `identities min_size max_size max_speed jitter_amp`,
    /// explicit ones via repeated `target = cx cy w h vx vy [first [last]]`,
    /// and repeated `occlusion = id start duration`.
    pub fn from_kv(f: &KvFile) -> Result<Self> {
        let mut spec = SyntheticSpec::empty("synthetic", 320, 240, 100, 0);
        let mut random = RandomIdentities {
            count: 0,
            ..Default::default()
        };
        let mut appearance = None;
        let mut targets = Vec::new();
        for e in &f.entries {
            let (k, v) = (e.key.as_str(), e.value.as_str());
            let wrap = |r: Result<()>| r.map_err(|err| f.error(e, err.to_string()));
            wrap((|| {
                match k {
                    "name" => spec.name = v.to_string(),
                    "width" => spec.width = parse_value(k, v)?,
                    "height" => spec.height = parse_value(k, v)?,
                    "frames" => spec.frames = parse_value(k, v)?,
                    "frame_rate" => spec.frame_rate = parse_value(k, v)?,
                    "seed" => spec.seed = parse_value(k, v)?,
                    "appearance_seed" => appearance = Some(parse_value(k, v)?),
                    "det_jitter" => spec.det_jitter = parse_value(k, v)?,
                    "drop_prob" => spec.drop_prob = parse_value(k, v)?,
                    "fp_rate" => spec.fp_rate = parse_value(k, v)?,
                    "frame_noise" => spec.frame_noise = parse_value(k, v)?,
                    "identities" => random.count = parse_value(k, v)?,
                    "min_size" => random.min_size = parse_value(k, v)?,
                    "max_size" => random.max_size = parse_value(k, v)?,
                    "max_speed" => random.max_speed = parse_value(k, v)?,
                    "jitter_amp" => random.jitter_amp = parse_value(k, v)?,
                    "target" => {
                        let n: Vec<f64> = parse_list(k, v)?;
                        if !(6..=8).contains(&n.len()) {
                            return Err(Error::Config("expected cx cy w h vx vy [first [last]]".into()));
                        }
                        targets.push(IdentitySpec {
                            cx: n[0],
                            cy: n[1],
                            w: n[2],
                            h: n[3],
                            vx: n[4],
                            vy: n[5],
                            jitter_amp: 0.0,
                            jitter_period: 1.0,
                            jitter_phase: 0.0,
                            bounce: false,
                            first_frame: n.get(6).map_or(1, |&x| x as u32),
                            last_frame: n.get(7).map(|&x| x as u32),
                        });
                    }
                    "occlusion" => {
                        let n: Vec<u32> = parse_list(k, v)?;
                        if n.len() != 3 {
                            return Err(Error::Config("expected id start duration".into()));
                        }
                        spec.occlusions.push(OcclusionEvent {
                            id: n[0],
                            start: n[1],
                            duration: n[2],
                        });
                    }
                    _ => return Err(Error::Config("unknown key".into())),
                }
                Ok(())
            })())?;
        }
        spec.appearance_seed = appearance.unwrap_or(spec.seed);
        spec.identities = targets;
        if random.count > 0 {
            if !(random.min_size > 0.0 && random.max_size >= random.min_size) {
                return Err(Error::Config("min_size/max_size must satisfy 0 < min ≤ max".into()));
            }
            spec = spec.with_random_identities(&random);
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

/// Folds `v` into `[lo, hi]` as if bouncing between the walls.
fn reflect(v: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    if span <= 0.0 {
        return (lo + hi) / 2.0;
    }
    let m = (v - lo).rem_euclid(2.0 * span);
    lo + if m > span { 2.0 * span - m } else { m }
}

/// Base color and texture multipliers for an identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Appearance {
    pub color: [f64; 3],
    pub cells: Vec<[f64; 3]>,
}

pub fn appearance(appearance_seed: u64, idx: usize) -> Appearance {
    let mut r = stream(appearance_seed, 1000 + idx as u64);
    let hue: f64 = r.random_range(0.0..6.0);
    let sat = r.random_range(0.5..1.0);
    let val = r.random_range(120.0..255.0);
    let f = hue - hue.floor();
    let (p, q, t) = (val * (1.0 - sat), val * (1.0 - sat * f), val * (1.0 - sat * (1.0 - f)));
    let color = match hue as u32 {
        0 => [val, t, p],
        1 => [q, val, p],
        2 => [p, val, t],
        3 => [p, q, val],
        4 => [t, p, val],
        _ => [val, p, q],
    };
    let cells = (0..TEXTURE_CELLS * TEXTURE_CELLS)
        .map(|_| {
            let base = r.random_range(0.35..1.25);
            [0, 1, 2].map(|_| base * r.random_range(0.8..1.2))
        })
        .collect();
    Appearance { color, cells }
}

/// A rendered sequence held in memory.
pub fn gen_synthetic_sequence(spec: &SyntheticSpec) -> Result<Sequence> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let mut bg_rng = stream(spec.seed, STREAM_BACKGROUND);
    let background: Vec<f64> = (0..w * h * 3).map(|_| bg_rng.random_range(70.0..150.0)).collect();
    let looks: Vec<Appearance> = (0..spec.identities.len())
        .map(|i| appearance(spec.appearance_seed, i))
        .collect();
    let mut noise_rng = stream(spec.seed, STREAM_NOISE);
    let mut det_rng = stream(spec.seed, STREAM_DETECTIONS);
    let jitter = Normal::new(0.0, spec.det_jitter.max(1e-300)).expect("finite std");

    let mut frames = Vec::with_capacity(spec.frames as usize);
    let mut gt = Vec::new();
    let mut det = Vec::new();
    for frame in 1..=spec.frames {
        let mut px: Vec<f64> = background
            .iter()
            .map(|&b| b + spec.frame_noise * noise_rng.random_range(-1.0..1.0))
            .collect();
        let mut visible = Vec::new();
        for (idx, look) in looks.iter().enumerate() {
            let Some(clipped) = spec.gt_box(idx, frame) else {
                continue;
            };
            let raw = spec.raw_box(idx, frame).expect("alive");
            paint(&mut px, w, &raw, &clipped, look);
            visible.push((idx, clipped));
        }
        frames.push(Image::from_raw(
            w,
            h,
            px.iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect(),
        )?);
        for &(idx, b) in &visible {
            let mut row = DetectionRow::new(frame, idx as i64 + 1, b, 1.0);
            row.rest = vec!["1".into(), "1".into(), "1".into()];
            gt.push(row);
        }
        for &(_, b) in &visible {
            // draws happen unconditionally so the stream stays aligned
            let keep = det_rng.random::<f64>() >= spec.drop_prob;
            let (dx, dy) = if spec.det_jitter > 0.0 {
                (jitter.sample(&mut det_rng), jitter.sample(&mut det_rng))
            } else {
                (0.0, 0.0)
            };
            if !keep {
                continue;
            }
            let moved = BBox { x: b.x + dx, y: b.y + dy, ..b };
            if let Some(c) = moved.clip(w as f64, h as f64) {
                det.push(DetectionRow::new(frame, -1, c, 1.0));
            }
        }
        let whole = spec.fp_rate.floor() as usize;
        let extra = usize::from(det_rng.random::<f64>() < spec.fp_rate.fract());
        for _ in 0..whole + extra {
            let bw = det_rng.random_range(12.0..40.0_f64).min(w as f64 - 1.0);
            let bh = det_rng.random_range(12.0..50.0_f64).min(h as f64 - 1.0);
            let x = det_rng.random_range(0.0..w as f64 - bw);
            let y = det_rng.random_range(0.0..h as f64 - bh);
            det.push(DetectionRow::new(frame, -1, BBox { x, y, w: bw, h: bh }, 0.5));
        }
    }
    Ok(Sequence {
        meta: spec.meta(),
        frames,
        gt,
        det,
    })
}

fn paint(px: &mut [f64], width: usize, raw: &BBox, clipped: &BBox, look: &Appearance) {
    let x0 = clipped.x.round() as usize;
    let y0 = clipped.y.round() as usize;
    let x1 = (clipped.right().round() as usize).min(width);
    let height = px.len() / (3 * width);
    let y1 = (clipped.bottom().round() as usize).min(height);
    for y in y0..y1 {
        let v = ((y as f64 + 0.5 - raw.y) / raw.h).clamp(0.0, 0.999);
        let cy = (v * TEXTURE_CELLS as f64) as usize;
        for x in x0..x1 {
            let u = ((x as f64 + 0.5 - raw.x) / raw.w).clamp(0.0, 0.999);
            let cx = (u * TEXTURE_CELLS as f64) as usize;
            let m = look.cells[cy * TEXTURE_CELLS + cx];
            let i = (y * width + x) * 3;
            for c in 0..3 {
                px[i + c] = look.color[c] * m[c];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_target() -> SyntheticSpec {
        let mut s = SyntheticSpec::empty("t", 100, 80, 20, 5);
        s.identities.push(IdentitySpec {
            cx: 30.0,
            cy: 40.0,
            w: 16.0,
            h: 24.0,
            vx: 1.0,
            vy: 0.0,
            jitter_amp: 0.0,
            jitter_period: 1.0,
            jitter_phase: 0.0,
            bounce: false,
            first_frame: 1,
            last_frame: None,
        });
        s
    }

    #[test]
    fn noiseless_dets_equal_gt() {
        let seq = gen_synthetic_sequence(&one_target()).unwrap();
        assert_eq!(seq.gt.len(), 20);
        assert_eq!(seq.det.len(), 20);
        for (g, d) in seq.gt.iter().zip(&seq.det) {
            assert_eq!((g.frame, g.bbox), (d.frame, d.bbox));
            assert_eq!(d.confidence, 1.0);
            assert_eq!(d.id, -1);
        }
    }

    #[test]
    fn occluded_frames_have_no_rows() {
        let mut s = one_target();
        s.occlusions.push(OcclusionEvent { id: 1, start: 5, duration: 4 });
        let seq = gen_synthetic_sequence(&s).unwrap();
        assert!(seq.gt.iter().all(|r| !(5..9).contains(&r.frame)));
        assert!(seq.det.iter().all(|r| !(5..9).contains(&r.frame)));
        assert_eq!(seq.gt.len(), 16);
        // not painted either: the target region matches the empty scene
        let mut bare = s.clone();
        bare.identities[0].first_frame = 20;
        let empty = gen_synthetic_sequence(&bare).unwrap();
        assert_eq!(seq.frames[5], empty.frames[5]);
        assert_ne!(seq.frames[3], empty.frames[3]);
    }

    #[test]
    fn leaving_target_is_clipped_then_dropped() {
        let mut s = one_target();
        s.identities[0].cx = 90.0;
        s.identities[0].vx = 2.0;
        let seq = gen_synthetic_sequence(&s).unwrap();
        for r in &seq.gt {
            assert!(r.bbox.x >= 0.0 && r.bbox.right() <= 100.0 + 1e-9);
            assert!(r.bbox.area() >= 0.25 * 16.0 * 24.0);
        }
        // visible area drops under a quarter once cx > 100 + 8 - 4
        let last = seq.gt.last().unwrap().frame;
        assert!(last < 20);
    }

    #[test]
    fn reproducible() {
        let s = SyntheticSpec {
            det_jitter: 1.5,
            drop_prob: 0.2,
            fp_rate: 0.7,
            ..SyntheticSpec::empty("r", 120, 90, 15, 11)
        }
        .with_random_identities(&RandomIdentities::default());
        let a = gen_synthetic_sequence(&s).unwrap();
        let b = gen_synthetic_sequence(&s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bouncing_stays_inside() {
        let s = SyntheticSpec::empty("b", 120, 90, 300, 2).with_random_identities(&RandomIdentities {
            count: 5,
            max_speed: 4.0,
            ..Default::default()
        });
        for idx in 0..5 {
            for f in 1..=300 {
                let b = s.raw_box(idx, f).unwrap();
                assert!(b.x >= -1e-9 && b.right() <= 120.0 + 1e-9);
                assert!(b.y >= -1e-9 && b.bottom() <= 90.0 + 1e-9);
            }
        }
    }

    #[test]
    fn appearance_depends_on_seed_and_index_only() {
        assert_eq!(appearance(3, 2), appearance(3, 2));
        assert_ne!(appearance(3, 2), appearance(3, 1));
        assert_ne!(appearance(3, 2), appearance(4, 2));
    }

    #[test]
    fn spec_file() {
        let text = "name = demo\nwidth = 64\nheight = 48\nframes = 10\nseed = 3\n\
                    target = 20 20 10 12 1 0\nocclusion = 1 3 2\n";
        let s = SyntheticSpec::from_kv(&KvFile::parse(text, "spec").unwrap()).unwrap();
        assert_eq!(s.identities.len(), 1);
        assert_eq!(s.occlusions[0], OcclusionEvent { id: 1, start: 3, duration: 2 });
        let e = SyntheticSpec::from_kv(&KvFile::parse("frames = 5\nbogus = 1\n", "spec").unwrap());
        assert!(e.unwrap_err().to_string().contains("bogus"));
        let e = SyntheticSpec::from_kv(&KvFile::parse("drop_prob = 1.5\n", "spec").unwrap());
        assert!(e.unwrap_err().to_string().contains("drop_prob"));
    }
}
