use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::image::encode_image;
use super::manifest::{DatasetManifest, Entry, Eye, Label};
use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::tensor::Tensor;

/// File name of the manifest written next to generated images.
pub const MANIFEST_FILE: &str = "manifest.jsonl";

const ANGLE_BINS: usize = 48;

struct EyeParams {
    eye: Eye,
    skin: [f64; 3],
    center: (f64, f64),
    half_width: f64,
    half_height: f64,
    iris: (f64, f64),
    iris_r: f64,
    pupil_r: f64,
    iris_rgb: [f64; 3],
    ring_freq: f64,
    ring_phase: f64,
    radial: [f64; ANGLE_BINS],
    glint: (f64, f64),
}

impl EyeParams {
    fn draw(s: &mut Stream, eye: Eye) -> Self {
        let tone = s.uniform(0.45, 0.8);
        let skin = [
            tone,
            tone * s.uniform(0.72, 0.82),
            tone * s.uniform(0.6, 0.7),
        ];
        let center = (s.uniform(0.45, 0.55), s.uniform(0.48, 0.56));
        let half_width = s.uniform(0.36, 0.42);
        let half_height = s.uniform(0.17, 0.23);
        let iris_r = s.uniform(0.15, 0.2);
        let iris = (
            center.0 + s.uniform(-0.06, 0.06),
            center.1 + s.uniform(-0.03, 0.03),
        );
        let pupil_r = iris_r * s.uniform(0.3, 0.5);
        let iris_rgb = match s.below(3) {
            0 => [
                s.uniform(0.35, 0.5),
                s.uniform(0.2, 0.3),
                s.uniform(0.1, 0.18),
            ],
            1 => [
                s.uniform(0.25, 0.35),
                s.uniform(0.4, 0.5),
                s.uniform(0.55, 0.7),
            ],
            _ => [
                s.uniform(0.3, 0.4),
                s.uniform(0.45, 0.55),
                s.uniform(0.25, 0.35),
            ],
        };
        let mut radial = [0.0; ANGLE_BINS];
        for r in radial.iter_mut() {
            *r = s.normal(0.0, 0.12);
        }
        let glint = (
            iris.0 + iris_r * s.uniform(-0.5, 0.5),
            iris.1 - iris_r * s.uniform(0.2, 0.6),
        );
        EyeParams {
            eye,
            skin,
            center,
            half_width,
            half_height,
            iris,
            iris_r,
            pupil_r,
            iris_rgb,
            ring_freq: s.uniform(40.0, 90.0),
            ring_phase: s.uniform(0.0, 2.0 * PI),
            radial,
            glint,
        }
    }

    /// Colour in `[0, 1]` at normalized coordinates `(x, y)`.
    fn shade(&self, x: f64, y: f64, noise: f64) -> [f64; 3] {
        // inner corner sits toward the nose
        let inner = match self.eye {
            Eye::Left => 1.0,
            Eye::Right => -1.0,
            Eye::Unknown => 0.0,
        };
        let shadow = 1.0 - 0.25 * (1.0 - y) * (1.0 - y);
        let mut px = self.skin.map(|c| c * shadow + noise);

        // brow band above the eye
        let brow = (-((y - (self.center.1 - 0.33)) / 0.05).powi(2)).exp();
        px = px.map(|c| c * (1.0 - 0.55 * brow));

        let dx = (x - self.center.0) / self.half_width;
        let dy = (y - self.center.1) / self.half_height;
        // almond: lids are two arcs meeting at the corners
        let lid = 1.0 - dx * dx;
        if lid <= 0.0 || dy.abs() >= lid.sqrt() * (1.0 - 0.15 * dx * inner) {
            return px;
        }
        let corner = ((dx * inner - 0.8) / 0.2).clamp(0.0, 1.0);
        let sclera = 0.92 - 0.25 * dx * dx - 0.1 * dy.max(0.0);
        px = [sclera, sclera * 0.97, sclera * 0.95];
        px = [
            px[0] * (1.0 - corner) + 0.8 * corner,
            px[1] * (1.0 - corner) + 0.45 * corner,
            px[2] * (1.0 - corner) + 0.45 * corner,
        ];

        let (ix, iy) = (x - self.iris.0, y - self.iris.1);
        let r = (ix * ix + iy * iy).sqrt();
        if r < self.iris_r {
            let theta = iy.atan2(ix) + PI;
            let bin = ((theta / (2.0 * PI)) * ANGLE_BINS as f64) as usize % ANGLE_BINS;
            let rings = 0.5 + 0.5 * (r * self.ring_freq + self.ring_phase).sin();
            let t = r / self.iris_r;
            let gain = (0.75 + 0.3 * rings + self.radial[bin] * t) * (1.0 - 0.35 * t * t);
            px = self.iris_rgb.map(|c| c * gain + noise);
            if r < self.pupil_r {
                px = [0.04 + noise; 3];
            }
        }
        let (gx, gy) = (x - self.glint.0, y - self.glint.1);
        if gx * gx + gy * gy < (0.18 * self.iris_r).powi(2) {
            px = [0.97; 3];
        }
        px
    }
}

/// Renders one procedural periocular image as `[3, res, res]` in `[-1, 1]`.
pub fn toy_image(seed: u64, index: u64, eye: Eye, res: usize) -> Result<Tensor> {
    let mut s = Stream::derive(seed, "toy-image", index);
    let p = EyeParams::draw(&mut s, eye);
    let plane = res * res;
    let mut data = vec![0f32; 3 * plane];
    for yy in 0..res {
        for xx in 0..res {
            let x = (xx as f64 + 0.5) / res as f64;
            let y = (yy as f64 + 0.5) / res as f64;
            let rgb = p.shade(x, y, s.normal(0.0, 0.02));
            for (ch, v) in rgb.iter().enumerate() {
                data[ch * plane + yy * res + xx] = (v.clamp(0.0, 1.0) * 2.0 - 1.0) as f32;
            }
        }
    }
    Tensor::from_vec(data, &[3, res, res])
}

/// Writes `count` bona fide toy images and `manifest.jsonl` into `out_dir`.
/// Eyes alternate left, right.
pub fn gen_toy_corpus(
    count: usize,
    res: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    if count == 0 {
        return Err(Error::InvalidArgument(
            "toy corpus needs at least one image".into(),
        ));
    }
    if res < 4 {
        return Err(Error::InvalidArgument(format!(
            "resolution {res} is too small"
        )));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let entries = (0..count)
        .into_par_iter()
        .map(|i| {
            let eye = if i % 2 == 0 { Eye::Left } else { Eye::Right };
            let name = format!("toy_{i:05}.png");
            encode_image(&toy_image(seed, i as u64, eye, res)?, &out_dir.join(&name))?;
            let mut e = Entry::new(name, Label::BonaFide);
            e.eye = eye;
            e.subset = Some("toy".into());
            e.root = out_dir.to_path_buf();
            Ok(e)
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest::new(entries)?;
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
