use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Conv {
        kernel: usize,
        stride: usize,
        channels: usize,
    },
    Pool {
        window: usize,
        stride: usize,
    },
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv {
                kernel,
                stride,
                channels,
            } => write!(f, "conv({kernel},{stride},{channels})"),
            LayerSpec::Pool { window, stride } => write!(f, "pool({window},{stride})"),
        }
    }
}

/// Parses a whitespace-separated layer list such as
/// `conv(3,2,16) pool(2,2) conv(3,1,32)`.
pub fn parse_backbone(s: &str) -> Result<Vec<LayerSpec>> {
    let mut layers = Vec::new();
    for tok in s.split_whitespace() {
        let bad = || Error::Config(format!("bad backbone layer `{tok}`"));
        let (kind, rest) = tok.split_once('(').ok_or_else(bad)?;
        let args = rest.strip_suffix(')').ok_or_else(bad)?;
        let nums: Vec<usize> = args
            .split(',')
            .map(|a| a.trim().parse::<usize>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        if nums.contains(&0) {
            return Err(bad());
        }
        layers.push(match (kind, nums.as_slice()) {
            ("conv", &[kernel, stride, channels]) => LayerSpec::Conv {
                kernel,
                stride,
                channels,
            },
            ("pool", &[window, stride]) => LayerSpec::Pool { window, stride },
            _ => return Err(bad()),
        });
    }
    Ok(layers)
}

pub fn format_backbone(layers: &[LayerSpec]) -> String {
    layers.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
}

/// Architecture and patch geometry of the triplet network.
///
/// Every conv layer except the last is followed by a ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub backbone: Vec<LayerSpec>,
    pub exemplar_size: usize,
    pub instance_size_train: usize,
    pub instance_size_track: usize,
    pub tsa_reduction: usize,
    pub num_identities: usize,
    pub id_hidden: usize,
    /// Multiplier on the raw correlation before the bias is added.
    pub response_scale: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl NetworkConfig {
    /// Three convs (16/32/32 channels) with one 2×2 pool; 41 px exemplars map
    /// to 6×6 features, 57 px training instances to 10×10.
    pub fn toy() -> Self {
        let mut cfg = NetworkConfig {
            backbone: vec![
                LayerSpec::Conv { kernel: 3, stride: 2, channels: 16 },
                LayerSpec::Pool { window: 2, stride: 2 },
                LayerSpec::Conv { kernel: 3, stride: 1, channels: 32 },
                LayerSpec::Conv { kernel: 3, stride: 1, channels: 32 },
            ],
            exemplar_size: 41,
            instance_size_train: 57,
            instance_size_track: 0,
            tsa_reduction: 4,
            num_identities: 20,
            id_hidden: 512,
            response_scale: 0.01,
        };
        cfg.instance_size_track = cfg.derive_track_size().expect("toy geometry");
        cfg
    }

    /// AlexNet-style five-conv backbone: 127 → 6×6×256, 239 → 20×20×256,
    /// 255 → 22×22×256.
    pub fn full_scale() -> Self {
        let mut cfg = NetworkConfig {
            backbone: vec![
                LayerSpec::Conv { kernel: 11, stride: 2, channels: 96 },
                LayerSpec::Pool { window: 3, stride: 2 },
                LayerSpec::Conv { kernel: 5, stride: 1, channels: 256 },
                LayerSpec::Pool { window: 3, stride: 2 },
                LayerSpec::Conv { kernel: 3, stride: 1, channels: 384 },
                LayerSpec::Conv { kernel: 3, stride: 1, channels: 384 },
                LayerSpec::Conv { kernel: 3, stride: 1, channels: 256 },
            ],
            exemplar_size: 127,
            instance_size_train: 239,
            instance_size_track: 0,
            tsa_reduction: 4,
            num_identities: 439,
            id_hidden: 512,
            response_scale: 1e-3,
        };
        cfg.instance_size_track = cfg.derive_track_size().expect("full-scale geometry");
        cfg
    }

    pub fn embed_dim(&self) -> usize {
        self.backbone
            .iter()
            .rev()
            .find_map(|l| match l {
                LayerSpec::Conv { channels, .. } => Some(*channels),
                LayerSpec::Pool { .. } => None,
            })
            .unwrap_or(3)
    }

    pub fn tsa_hidden(&self) -> usize {
        self.embed_dim() / self.tsa_reduction
    }

    /// Effective stride of the backbone in input pixels.
    pub fn total_stride(&self) -> usize {
        self.backbone
            .iter()
            .map(|l| match l {
                LayerSpec::Conv { stride, .. } | LayerSpec::Pool { stride, .. } => *stride,
            })
            .product()
    }

    pub fn receptive_field(&self) -> usize {
        let (mut rf, mut jump) = (1, 1);
        for l in &self.backbone {
            let (k, s) = match l {
                LayerSpec::Conv { kernel, stride, .. } => (*kernel, *stride),
                LayerSpec::Pool { window, stride } => (*window, *stride),
            };
            rf += (k - 1) * jump;
            jump *= s;
        }
        rf
    }

    /// Output side of the valid-convolution recurrence for an `input` px patch.
    pub fn feature_side(&self, input: usize) -> Result<usize> {
        let mut side = input;
        for l in &self.backbone {
            let (k, s) = match l {
                LayerSpec::Conv { kernel, stride, .. } => (*kernel, *stride),
                LayerSpec::Pool { window, stride } => (*window, *stride),
            };
            if side < k {
                return Err(Error::dim(
                    "backbone",
                    format!("{input} px input shrinks below layer {l}"),
                ));
            }
            side = (side - k) / s + 1;
        }
        Ok(side)
    }

    pub fn exemplar_feature_side(&self) -> Result<usize> {
        self.feature_side(self.exemplar_size)
    }

    /// Smallest patch whose feature side is the exemplar feature side + 16.
    pub fn derive_track_size(&self) -> Result<usize> {
        let target = self.exemplar_feature_side()? + 16;
        let mut s = self.exemplar_size;
        loop {
            let side = self.feature_side(s)?;
            if side == target {
                return Ok(s);
            }
            if side > target {
                return Err(Error::Config(format!(
                    "no patch size yields a {target}-cell tracking feature"
                )));
            }
            s += 1;
        }
    }

    /// Maps a patch pixel coordinate to continuous feature coordinates (cell
    /// `j` spans `[j, j+1)`).
    pub fn feature_coord(&self, px: f64) -> f64 {
        (px - self.receptive_field() as f64 / 2.0) / self.total_stride() as f64 + 0.5
    }

    pub fn validate(&self) -> Result<()> {
        if self.backbone.is_empty() || !matches!(self.backbone[0], LayerSpec::Conv { .. }) {
            return Err(Error::Config("backbone must start with a conv layer".into()));
        }
        let c = self.embed_dim();
        if self.tsa_reduction == 0 || !c.is_multiple_of(self.tsa_reduction) {
            return Err(Error::Config(format!(
                "tsa_reduction {} must divide embed_dim {c}",
                self.tsa_reduction
            )));
        }
        if self.num_identities == 0 || self.id_hidden == 0 {
            return Err(Error::Config("identity head sizes must be positive".into()));
        }
        if !(self.response_scale > 0.0 && self.response_scale.is_finite()) {
            return Err(Error::Config("response_scale must be positive".into()));
        }
        let z = self.exemplar_feature_side()?;
        for (name, size) in [
            ("instance_size_train", self.instance_size_train),
            ("instance_size_track", self.instance_size_track),
        ] {
            if self.feature_side(size)? < z {
                return Err(Error::Config(format!(
                    "{name} {size} yields a feature smaller than the exemplar's"
                )));
            }
        }
        Ok(())
    }
}
