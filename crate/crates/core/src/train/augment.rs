use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::tensor::Tensor;

/// Spatial and photometric perturbations, applied in list order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentOp {
    Hflip,
    Rotate,
    CropResize,
    Brightness,
}

impl AugmentOp {
    pub const ALL: [AugmentOp; 4] = [
        AugmentOp::Hflip,
        AugmentOp::Rotate,
        AugmentOp::CropResize,
        AugmentOp::Brightness,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AugmentOp::Hflip => "hflip",
            AugmentOp::Rotate => "rotate",
            AugmentOp::CropResize => "crop_resize",
            AugmentOp::Brightness => "brightness",
        }
    }
}

impl fmt::Display for AugmentOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AugmentOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AugmentOp::ALL
            .into_iter()
            .find(|op| op.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown augmentation {s:?}")))
    }
}

/// Parses a comma-separated op list; the empty string gives no ops.
pub fn parse_ops(list: &str) -> Result<Vec<AugmentOp>> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect()
}

/// Augmentation strengths.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Augmenter {
    pub flip_p: f64,
    pub max_rotation_deg: f64,
    pub min_crop_scale: f64,
    pub max_brightness: f64,
}

impl Default for Augmenter {
    fn default() -> Self {
        Augmenter {
            flip_p: 0.5,
            max_rotation_deg: 10.0,
            min_crop_scale: 0.9,
            max_brightness: 0.1,
        }
    }
}

/// Bilinear sample with coordinates clamped to the border.
fn sample(plane: &[f32], h: usize, w: usize, y: f64, x: f64) -> f32 {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = ((y - y0 as f64) as f32, (x - x0 as f64) as f32);
    let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
    let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
    top * (1.0 - fy) + bot * fy
}

/// Resamples every channel through `map(y, x) -> (src_y, src_x)`.
fn remap(
    data: &[f32],
    c: usize,
    h: usize,
    w: usize,
    map: impl Fn(f64, f64) -> (f64, f64),
) -> Vec<f32> {
    let mut out = vec![0f32; data.len()];
    for ch in 0..c {
        let plane = &data[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = map(y as f64, x as f64);
                out[ch * h * w + y * w + x] = sample(plane, h, w, sy, sx);
            }
        }
    }
    out
}

impl Augmenter {
    pub fn apply(&self, image: &Tensor, ops: &[AugmentOp], stream: &mut Stream) -> Result<Tensor> {
        let &[c, h, w] = image.shape() else {
            return Err(Error::InvalidShape(format!(
                "augment expects [c, h, w], got {:?}",
                image.shape()
            )));
        };
        let mut d = image.to_vec();
        for op in ops {
            match op {
                AugmentOp::Hflip => {
                    if stream.bernoulli(self.flip_p) {
                        for row in d.chunks_mut(w) {
                            row.reverse();
                        }
                    }
                }
                AugmentOp::Rotate => {
                    let theta = stream
                        .uniform(-self.max_rotation_deg, self.max_rotation_deg)
                        .to_radians();
                    let (sin, cos) = theta.sin_cos();
                    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
                    d = remap(&d, c, h, w, |y, x| {
                        let (dy, dx) = (y - cy, x - cx);
                        (cy + sin * dx + cos * dy, cx + cos * dx - sin * dy)
                    });
                }
                AugmentOp::CropResize => {
                    let s = stream.uniform(self.min_crop_scale, 1.0);
                    let oy = stream.uniform(0.0, (1.0 - s) * h as f64);
                    let ox = stream.uniform(0.0, (1.0 - s) * w as f64);
                    d = remap(&d, c, h, w, |y, x| {
                        (oy + (y + 0.5) * s - 0.5, ox + (x + 0.5) * s - 0.5)
                    });
                }
                AugmentOp::Brightness => {
                    let b = stream.uniform(-self.max_brightness, self.max_brightness) as f32;
                    d.iter_mut().for_each(|v| *v += b);
                }
            }
        }
        d.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
        Tensor::from_vec(d, &[c, h, w])
    }
}

/// [`Augmenter::apply`] with default strengths.
pub fn augment(image: &Tensor, ops: &[AugmentOp], stream: &mut Stream) -> Result<Tensor> {
    Augmenter::default().apply(image, ops, stream)
}
