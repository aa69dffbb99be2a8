//! Merged run configuration: built-in defaults, then a `key = value` file,
//! then `--set key=value` overrides.

use std::fmt::Write as _;
use std::path::Path;

use uma_core::kv::{parse_value, KvFile};
use uma_core::losses::LossConfig;
use uma_core::network::{format_backbone, parse_backbone, NetworkConfig};
use uma_core::tracker::TrackerConfig;
use uma_core::training::TrainConfig;
use uma_core::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub tracker: TrackerConfig,
    pub eval_iou: f64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let network = NetworkConfig::toy();
        RunConfig {
            loss: LossConfig {
                label_radius: network.total_stride() as f64,
                ..Default::default()
            },
            network,
            train: TrainConfig::default(),
            tracker: TrackerConfig::default(),
            eval_iou: 0.5,
            seed: 0,
        }
    }
}

pub struct KeyInfo {
    pub key: &'static str,
    pub help: &'static str,
    /// Published reference value, where one exists.
    pub published: Option<&'static str>,
}

const fn key(key: &'static str, help: &'static str, published: Option<&'static str>) -> KeyInfo {
    KeyInfo { key, help, published }
}

pub const KEYS: &[KeyInfo] = &[
    key("seed", "seed for every random stream of a run", None),
    key("network.backbone", "layer list, e.g. conv(3,2,16) pool(2,2) ...", Some("5-layer AlexNet-style")),
    key("network.exemplar_size", "exemplar patch side (px)", Some("127")),
    key("network.instance_size_train", "training instance patch side (px)", Some("239")),
    key("network.instance_size_track", "tracking search patch side (px)", None),
    key("network.tsa_reduction", "channel reduction inside the attention gates", Some("4")),
    key("network.num_identities", "identity classifier outputs", Some("439")),
    key("network.id_hidden", "identity head hidden width", Some("512")),
    key("network.response_scale", "multiplier on the raw correlation", None),
    key("loss.metric", "metric-learning term: npair | triplet", Some("npair")),
    key("loss.lambda1", "weight of the metric term", Some("0.1")),
    key("loss.lambda2", "weight of the identification term", Some("0.1")),
    key("loss.margin", "triplet margin", None),
    key("loss.label_radius", "positive radius of the response label (instance px)", None),
    key("train.epochs", "training epochs", None),
    key("train.batches_per_epoch", "sampled batches per epoch", None),
    key("train.batch_size", "pairs per batch, all identities distinct", Some("8")),
    key("train.lr_start", "initial learning rate", None),
    key("train.lr_end", "final learning rate (geometric decay)", None),
    key("train.momentum", "SGD momentum", None),
    key("train.max_frame_gap", "max frames between exemplar and positive", None),
    key("train.min_track_frames", "identities need this many visible frames", None),
    key("tracker.alpha", "affinity threshold for occlusion and association", Some("0.6")),
    key("tracker.beta", "historic mean-IOU threshold", Some("0.5")),
    key("tracker.gamma", "candidate / refinement IOU threshold", Some("0.5")),
    key("tracker.terminate_after", "frames an occluded target survives", Some("30")),
    key("tracker.iou_window", "frames in the historic IOU average", None),
    key("tracker.search_scale", "search side as a multiple of target size", None),
    key("tracker.k_samples", "tracklet samples per association affinity", None),
    key("tracker.confirm_hits", "re-detections needed to confirm a birth", None),
    key("tracker.confirm_window", "frames after a birth in which hits count", None),
    key("eval.iou_threshold", "gt/hypothesis match threshold", None),
];

impl RunConfig {
    /// Current value of `key` as it would be written in a config file.
    pub fn get(&self, key: &str) -> Result<String> {
        let n = &self.network;
        let l = &self.loss;
        let t = &self.train;
        let k = &self.tracker;
        Ok(match key {
            "seed" => self.seed.to_string(),
            "network.backbone" => format_backbone(&n.backbone),
            "network.exemplar_size" => n.exemplar_size.to_string(),
            "network.instance_size_train" => n.instance_size_train.to_string(),
            "network.instance_size_track" => n.instance_size_track.to_string(),
            "network.tsa_reduction" => n.tsa_reduction.to_string(),
            "network.num_identities" => n.num_identities.to_string(),
            "network.id_hidden" => n.id_hidden.to_string(),
            "network.response_scale" => n.response_scale.to_string(),
            "loss.metric" => l.metric.to_string(),
            "loss.lambda1" => l.lambda1.to_string(),
            "loss.lambda2" => l.lambda2.to_string(),
            "loss.margin" => l.margin.to_string(),
            "loss.label_radius" => l.label_radius.to_string(),
            "train.epochs" => t.epochs.to_string(),
            "train.batches_per_epoch" => t.batches_per_epoch.to_string(),
            "train.batch_size" => t.batch_size.to_string(),
            "train.lr_start" => t.lr_start.to_string(),
            "train.lr_end" => t.lr_end.to_string(),
            "train.momentum" => t.momentum.to_string(),
            "train.max_frame_gap" => t.max_frame_gap.to_string(),
            "train.min_track_frames" => t.min_track_frames.to_string(),
            "tracker.alpha" => k.alpha.to_string(),
            "tracker.beta" => k.beta.to_string(),
            "tracker.gamma" => k.gamma.to_string(),
            "tracker.terminate_after" => k.terminate_after.to_string(),
            "tracker.iou_window" => k.iou_window.to_string(),
            "tracker.search_scale" => k.search_scale.to_string(),
            "tracker.k_samples" => k.k_samples.to_string(),
            "tracker.confirm_hits" => k.confirm_hits.to_string(),
            "tracker.confirm_window" => k.confirm_window.to_string(),
            "eval.iou_threshold" => self.eval_iou.to_string(),
            _ => return Err(unknown(key)),
        })
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let n = &mut self.network;
        let l = &mut self.loss;
        let t = &mut self.train;
        let k = &mut self.tracker;
        match key {
            "seed" => self.seed = parse_value(key, v)?,
            "network.backbone" => n.backbone = parse_backbone(v)?,
            "network.exemplar_size" => n.exemplar_size = parse_value(key, v)?,
            "network.instance_size_train" => n.instance_size_train = parse_value(key, v)?,
            "network.instance_size_track" => n.instance_size_track = parse_value(key, v)?,
            "network.tsa_reduction" => n.tsa_reduction = parse_value(key, v)?,
            "network.num_identities" => n.num_identities = parse_value(key, v)?,
            "network.id_hidden" => n.id_hidden = parse_value(key, v)?,
            "network.response_scale" => n.response_scale = parse_value(key, v)?,
            "loss.metric" => l.metric = v.parse()?,
            "loss.lambda1" => l.lambda1 = parse_value(key, v)?,
            "loss.lambda2" => l.lambda2 = parse_value(key, v)?,
            "loss.margin" => l.margin = parse_value(key, v)?,
            "loss.label_radius" => l.label_radius = parse_value(key, v)?,
            "train.epochs" => t.epochs = parse_value(key, v)?,
            "train.batches_per_epoch" => t.batches_per_epoch = parse_value(key, v)?,
            "train.batch_size" => t.batch_size = parse_value(key, v)?,
            "train.lr_start" => t.lr_start = parse_value(key, v)?,
            "train.lr_end" => t.lr_end = parse_value(key, v)?,
            "train.momentum" => t.momentum = parse_value(key, v)?,
            "train.max_frame_gap" => t.max_frame_gap = parse_value(key, v)?,
            "train.min_track_frames" => t.min_track_frames = parse_value(key, v)?,
            "tracker.alpha" => k.alpha = parse_value(key, v)?,
            "tracker.beta" => k.beta = parse_value(key, v)?,
            "tracker.gamma" => k.gamma = parse_value(key, v)?,
            "tracker.terminate_after" => k.terminate_after = parse_value(key, v)?,
            "tracker.iou_window" => k.iou_window = parse_value(key, v)?,
            "tracker.search_scale" => k.search_scale = parse_value(key, v)?,
            "tracker.k_samples" => k.k_samples = parse_value(key, v)?,
            "tracker.confirm_hits" => k.confirm_hits = parse_value(key, v)?,
            "tracker.confirm_window" => k.confirm_window = parse_value(key, v)?,
            "eval.iou_threshold" => self.eval_iou = parse_value(key, v)?,
            _ => return Err(unknown(key)),
        }
        Ok(())
    }

    pub fn apply_file(&mut self, f: &KvFile) -> Result<()> {
        for e in &f.entries {
            self.set(&e.key, &e.value).map_err(|err| f.error(e, err.to_string()))?;
        }
        Ok(())
    }

    /// `KEY=VALUE` override from the command line.
    pub fn apply_override(&mut self, s: &str) -> Result<()> {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{s}` is not KEY=VALUE")))?;
        self.set(k.trim(), v.trim())
    }

    /// Defaults, then the optional file, then overrides, then `seed`.
    pub fn load(file: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(path) = file {
            cfg.apply_file(&KvFile::read(path)?)?;
        }
        for o in overrides {
            cfg.apply_override(o)?;
        }
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        self.tracker.validate()?;
        if !(self.eval_iou > 0.0 && self.eval_iou <= 1.0) {
            return Err(Error::Config("eval.iou_threshold must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Every key with its value, in file syntax.
    pub fn to_file_text(&self) -> String {
        let mut s = String::new();
        for k in KEYS {
            writeln!(s, "{} = {}", k.key, self.get(k.key).expect("listed key")).unwrap();
        }
        s
    }
}

fn unknown(key: &str) -> Error {
    Error::Config(format!("unknown config key `{key}` (see --help for the list)"))
}

/// Help section listing every key, its default, and the published value.
pub fn keys_help() -> String {
    let d = RunConfig::default();
    let mut s = String::from("Config keys (default; published value where one exists):\n");
    for k in KEYS {
        let published = k.published.map(|p| format!("; published: {p}")).unwrap_or_default();
        writeln!(s, "  {:<28} {} [{}{}]", k.key, k.help, d.get(k.key).expect("listed key"), published).unwrap();
    }
    s
}
