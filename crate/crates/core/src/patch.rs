//! Square, resampled crops of a frame as network input tensors.

use crate::bbox::BBox;
use crate::mot_io::Image;
use crate::network::NetworkConfig;
use crate::tensor::Tensor;

/// Maps raw 8-bit intensity to network input range.
pub fn normalize_pixel(v: f64) -> f64 {
    v / 255.0 - 0.5
}

/// Bilinear crop of side `side` image pixels centered at `(cx, cy)`,
/// resampled to `out × out`. Samples outside the frame read `pad`
/// (per-channel intensity, usually the frame mean).
pub fn crop(img: &Image, cx: f64, cy: f64, side: f64, out: usize, pad: [f64; 3]) -> Tensor {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let raw = img.raw();
    let scale = side / out as f64;
    let x0 = cx - side / 2.0;
    let y0 = cy - side / 2.0;
    let tap = |x: i64, y: i64, c: usize| -> f64 {
        if x < 0 || y < 0 || x >= w || y >= h {
            pad[c]
        } else {
            raw[((y * w + x) * 3) as usize + c] as f64
        }
    };
    let mut data = Vec::with_capacity(out * out * 3);
    for i in 0..out {
        // pixel k has its center at k + 0.5
        let sy = y0 + (i as f64 + 0.5) * scale - 0.5;
        let fy = sy.floor();
        let ty = sy - fy;
        let ry = fy as i64;
        for j in 0..out {
            let sx = x0 + (j as f64 + 0.5) * scale - 0.5;
            let fx = sx.floor();
            let tx = sx - fx;
            let rx = fx as i64;
            for c in 0..3 {
                let v = (1.0 - ty) * ((1.0 - tx) * tap(rx, ry, c) + tx * tap(rx + 1, ry, c))
                    + ty * ((1.0 - tx) * tap(rx, ry + 1, c) + tx * tap(rx + 1, ry + 1, c));
                data.push(normalize_pixel(v));
            }
        }
    }
    Tensor::new(&[out, out, 3], data).expect("crop shape")
}

/// Crop geometry around a target: the search region spans `search_scale`
/// target sizes and maps to the tracking instance size; exemplar and
/// training-instance crops keep the same pixels-per-input ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropGeometry {
    pub search_scale: f64,
}

impl CropGeometry {
    /// Image pixels covered by the tracking search patch.
    pub fn search_side(&self, b: &BBox) -> f64 {
        self.search_scale * b.size()
    }

    /// Image pixels per patch pixel.
    pub fn ratio(&self, cfg: &NetworkConfig, b: &BBox) -> f64 {
        self.search_side(b) / cfg.instance_size_track as f64
    }

    pub fn exemplar(&self, cfg: &NetworkConfig, img: &Image, b: &BBox, pad: [f64; 3]) -> Tensor {
        let (cx, cy) = b.center();
        let side = self.ratio(cfg, b) * cfg.exemplar_size as f64;
        crop(img, cx, cy, side, cfg.exemplar_size, pad)
    }

    pub fn train_instance(&self, cfg: &NetworkConfig, img: &Image, b: &BBox, pad: [f64; 3]) -> Tensor {
        let (cx, cy) = b.center();
        let side = self.ratio(cfg, b) * cfg.instance_size_train as f64;
        crop(img, cx, cy, side, cfg.instance_size_train, pad)
    }

    /// Search patch centered on `center` scaled by the target box `b`.
    pub fn search(&self, cfg: &NetworkConfig, img: &Image, center: (f64, f64), b: &BBox, pad: [f64; 3]) -> Tensor {
        crop(img, center.0, center.1, self.search_side(b), cfg.instance_size_track, pad)
    }
}
