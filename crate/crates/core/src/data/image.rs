use std::path::Path;

use image::imageops::{self, FilterType};
use image::{DynamicImage, ImageBuffer, ImageFormat, Luma, Rgb};

use crate::error::{Error, Result};
use crate::models::ImageShape;
use crate::tensor::Tensor;

fn decode_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Decode {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Loads an 8-bit gray or RGB PNG as a `[c, h, w]` tensor in `[-1, 1]`.
///
/// Pixels map as `p / 127.5 - 1`. Alpha is dropped. Gray is replicated to
/// three channels and RGB reduced to luma for one channel. Images of another
/// size are resized bilinearly.
pub fn decode_image(path: &Path, target: ImageShape) -> Result<Tensor> {
    if target.channels != 1 && target.channels != 3 {
        return Err(Error::InvalidArgument(format!(
            "images have 1 or 3 channels, not {}",
            target.channels
        )));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory_with_format(&bytes, ImageFormat::Png)
        .map_err(|e| decode_err(path, e.to_string()))?;
    let img = match img {
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) => {
            DynamicImage::ImageLuma8(img.to_luma8())
        }
        DynamicImage::ImageRgb8(_) | DynamicImage::ImageRgba8(_) => {
            DynamicImage::ImageRgb8(img.to_rgb8())
        }
        other => {
            return Err(decode_err(
                path,
                format!("unsupported pixel format {:?}", other.color()),
            ));
        }
    };
    let img = match target.channels {
        1 => DynamicImage::ImageLuma8(img.to_luma8()),
        _ => DynamicImage::ImageRgb8(img.to_rgb8()),
    };
    let (h, w) = (target.height, target.width);
    let c = target.channels;
    let hwc: Vec<f32> = if img.width() as usize == w && img.height() as usize == h {
        img.as_bytes()
            .iter()
            .map(|&p| p as f32 / 127.5 - 1.0)
            .collect()
    } else {
        let resized = imageops::resize(&img.to_rgb32f(), w as u32, h as u32, FilterType::Triangle);
        let rgb: Vec<f32> = resized.into_raw();
        if c == 3 {
            rgb.iter()
                .map(|&v| (v * 2.0 - 1.0).clamp(-1.0, 1.0))
                .collect()
        } else {
            // channels were equal before resizing
            rgb.chunks(3)
                .map(|px| (px[0] * 2.0 - 1.0).clamp(-1.0, 1.0))
                .collect()
        }
    };
    let mut chw = vec![0f32; c * h * w];
    for (i, px) in hwc.chunks(c).enumerate() {
        for (ch, &v) in px.iter().enumerate() {
            chw[ch * h * w + i] = v;
        }
    }
    Tensor::from_vec(chw, &[c, h, w])
}

/// Inverse of the decode mapping: `round((v + 1) · 127.5)` after clamping.
pub fn to_pixel(v: f32) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

/// Writes a `[1|3, h, w]` tensor as an 8-bit PNG.
pub fn encode_image(t: &Tensor, path: &Path) -> Result<()> {
    let &[c, h, w] = t.shape() else {
        return Err(Error::InvalidShape(format!(
            "expected [c, h, w], got {:?}",
            t.shape()
        )));
    };
    let d = t.data();
    let plane = h * w;
    let (wu, hu) = (w as u32, h as u32);
    let result = match c {
        1 => {
            let px: Vec<u8> = d.iter().map(|&v| to_pixel(v)).collect();
            ImageBuffer::<Luma<u8>, _>::from_raw(wu, hu, px)
                .expect("buffer size")
                .save_with_format(path, ImageFormat::Png)
        }
        3 => {
            let mut px = Vec::with_capacity(3 * plane);
            for i in 0..plane {
                for ch in 0..3 {
                    px.push(to_pixel(d[ch * plane + i]));
                }
            }
            ImageBuffer::<Rgb<u8>, _>::from_raw(wu, hu, px)
                .expect("buffer size")
                .save_with_format(path, ImageFormat::Png)
        }
        _ => {
            return Err(Error::InvalidShape(format!(
                "images have 1 or 3 channels, not {c}"
            )))
        }
    };
    result.map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(other.to_string())),
    })
}

/// Decodes every entry in manifest order.
pub fn decode_manifest(m: &super::DatasetManifest, target: ImageShape) -> Result<Vec<Tensor>> {
    use rayon::prelude::*;
    m.entries
        .par_iter()
        .map(|e| decode_image(&e.file(), target))
        .collect()
}
